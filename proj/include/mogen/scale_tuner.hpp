#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <vector>

#include "mogen/guided_sampler.hpp"
#include "mogen/pareto_select.hpp"
#include "mogen/task_oracle.hpp"

namespace mogen {

struct ScaleBounds {
    Regime regime = Regime::kEfficient;
    double acc_lo = 1000.0, acc_hi = 5000.0;
    double sec_lo = 100.0, sec_hi = 500.0;

    static ScaleBounds for_regime(Regime r) {
        if (r == Regime::kEfficient) return {Regime::kEfficient, 1000.0, 5000.0, 100.0, 500.0};
        return {Regime::kAccurate, 10000.0, 50000.0, 10.0, 50.0};
    }
    bool contains(const GuidanceScales& s) const {
        const auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
        return in(s.k_acc, acc_lo, acc_hi) && in(s.k_params, sec_lo, sec_hi) &&
               in(s.k_macs, sec_lo, sec_hi) && in(s.k_lat, sec_lo, sec_hi);
    }
    GuidanceScales sample(Rng& rng) const {
        return {rng.log_uniform(acc_lo, acc_hi), rng.log_uniform(sec_lo, sec_hi),
                rng.log_uniform(sec_lo, sec_hi), rng.log_uniform(sec_lo, sec_hi)};
    }
};

struct TunerConfig {
    std::size_t budget = 30;
    std::size_t rung0_chains = 32;
    int rung0_steps = 50;
    std::size_t rung1_chains = 128;
    int rung1_steps = 0;  // 0 means the schedule's own step count
    std::uint64_t seed = 0;
    double max_guidance_step = kDefaultMaxGuidanceStep;
};

struct TuneTrial {
    std::size_t trial_id = 0;
    int rung = 0;
    GuidanceScales scales;
    double objective = 0.0;
    std::size_t chains = 0;
    int steps = 0;
};

struct TuneResult {
    GuidanceScales best;
    double best_objective = 0.0;
    std::vector<TuneTrial> log;

    std::vector<double> best_so_far() const {
        std::vector<double> curve;
        double best = -1e300;
        for (const TuneTrial& t : log) {
            best = std::max(best, t.objective);
            curve.push_back(best);
        }
        return curve;
    }
};

// objective(scales, chains, steps, rng) -> score to maximize
using TuneObjective =
    std::function<double(const GuidanceScales&, std::size_t chains, int steps, Rng&)>;

// Budgeted random search with one round of successive halving: every trial is
// scored at the cheap rung, the top third re-scored at full budget, and the
// best full-budget trial wins. The log keeps one entry per trial; promotion
// overwrites the entry with the full-budget result.
inline TuneResult tune_scales_with(const TuneObjective& objective, const ScaleBounds& bounds,
                                   const TunerConfig& cfg) {
    if (cfg.budget < 1) throw std::invalid_argument("tune_scales: budget must be >= 1");
    if (!objective) throw std::invalid_argument("tune_scales: objective required");
    const Rng root(splitmix64(cfg.seed ^ 0x7C9E57ULL));
    TuneResult result;
    std::vector<std::pair<double, std::size_t>> rung0;  // objective, trial id
    std::vector<GuidanceScales> trial_scales(cfg.budget);
    for (std::size_t i = 0; i < cfg.budget; ++i) {
        Rng draw = root.fork(2 * i);
        trial_scales[i] = bounds.sample(draw);
        Rng eval = root.fork(2 * i + 1);
        const double obj =
            objective(trial_scales[i], cfg.rung0_chains, cfg.rung0_steps, eval);
        result.log.push_back({i, 0, trial_scales[i], obj, cfg.rung0_chains, cfg.rung0_steps});
        rung0.push_back({obj, i});
    }
    // promote exactly ceil(n/3), ties toward the earlier trial
    const std::size_t promote = (cfg.budget + 2) / 3;
    std::stable_sort(rung0.begin(), rung0.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    const int rung1_steps = cfg.rung1_steps;
    double best_obj = -1e300;
    std::size_t best_id = rung0[0].second;
    for (std::size_t p = 0; p < promote && p < rung0.size(); ++p) {
        const std::size_t id = rung0[p].second;
        Rng eval = root.fork(0xF0000000ULL + id);
        const double obj = objective(trial_scales[id], cfg.rung1_chains, rung1_steps, eval);
        result.log[id] = {id, 1, trial_scales[id], obj, cfg.rung1_chains, rung1_steps};
        if (obj > best_obj || (obj == best_obj && id < best_id)) {
            best_obj = obj;
            best_id = id;
        }
    }
    result.best = trial_scales[best_id];
    result.best_objective = best_obj;
    return result;
}

// Real objective: mean predicted accuracy of the union Pareto front (all three
// secondary metrics, deduplicated) averaged over the tuning tasks.
inline TuneObjective front_accuracy_objective(const ScoreNet& net, const PredictorSet& preds,
                                              const std::vector<TaskDescriptor>& tasks,
                                              double max_guidance_step,
                                              const LatencyProtocol& proto = {}) {
    if (tasks.empty()) throw std::invalid_argument("tune_scales: tasks required");
    std::vector<Tensor> dembs;
    for (const TaskDescriptor& t : tasks) dembs.push_back(encode_dataset(t));
    return [&net, &preds, dembs, max_guidance_step, proto](const GuidanceScales& scales,
                                                           std::size_t chains, int steps,
                                                           Rng& rng) {
        SdeSchedule sde = net.sde();
        if (steps > 0) sde.steps = steps;
        double total = 0.0;
        for (std::size_t ti = 0; ti < dembs.size(); ++ti) {
            const std::vector<GeneratedSample> batch =
                generate_batch(net, &preds, &dembs[ti], scales, chains, rng.fork(ti), &sde, 0,
                               max_guidance_step);
            const std::vector<ScoredArch> scored =
                score_batch(preds, dembs[ti], batch, proto);
            std::set<std::string> on_union;
            double acc_sum = 0.0;
            std::size_t n = 0;
            for (SecondaryMetric m : kAllMetrics) {
                for (const ScoredArch& s : pareto_front(scored, m)) {
                    if (on_union.insert(s.hash).second) {
                        acc_sum += s.predicted_acc;
                        ++n;
                    }
                }
            }
            total += acc_sum / static_cast<double>(n);
        }
        return total / static_cast<double>(dembs.size());
    };
}

inline TuneResult tune_scales(const ScoreNet& net, const PredictorSet& preds,
                              const std::vector<TaskDescriptor>& tasks,
                              const ScaleBounds& bounds, const TunerConfig& cfg,
                              const LatencyProtocol& proto = {}) {
    return tune_scales_with(
        front_accuracy_objective(net, preds, tasks, cfg.max_guidance_step, proto), bounds, cfg);
}

} // namespace mogen
