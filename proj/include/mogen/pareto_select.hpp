#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogen/cost_model.hpp"
#include "mogen/guided_sampler.hpp"
#include "mogen/predictors.hpp"

namespace mogen {

enum class SecondaryMetric { kParams, kMacs, kLatency };

constexpr std::array<SecondaryMetric, 3> kAllMetrics = {
    SecondaryMetric::kParams, SecondaryMetric::kMacs, SecondaryMetric::kLatency};

inline std::string metric_name(SecondaryMetric m) {
    switch (m) {
        case SecondaryMetric::kParams: return "params";
        case SecondaryMetric::kMacs: return "macs";
        case SecondaryMetric::kLatency: return "latency";
    }
    throw std::invalid_argument("metric_name: unknown metric");
}

inline SecondaryMetric metric_from_name(const std::string& name) {
    for (SecondaryMetric m : kAllMetrics)
        if (metric_name(m) == name) return m;
    throw std::invalid_argument("unknown secondary metric: " + name);
}

struct ScoredArch {
    Architecture arch;
    std::string hash;
    double predicted_acc = 0.0;  // acc_denoised head on the clean one-hot
    double params = 0.0;
    double macs = 0.0;
    double latency_ms = 0.0;
    int phase = 0;
};

inline double metric_of(const ScoredArch& s, SecondaryMetric m) {
    switch (m) {
        case SecondaryMetric::kParams: return s.params;
        case SecondaryMetric::kMacs: return s.macs;
        case SecondaryMetric::kLatency: return s.latency_ms;
    }
    throw std::invalid_argument("metric_of: unknown metric");
}

// True analytic costs are recomputed here; generation output is never trusted
// for them. Accuracy comes from the denoised predictor head.
inline std::vector<ScoredArch> score_batch(const PredictorSet& preds, const Tensor& demb,
                                           const std::vector<GeneratedSample>& batch,
                                           const LatencyProtocol& proto = {},
                                           const LatencyModel& model = {}) {
    std::vector<ScoredArch> out;
    out.reserve(batch.size());
    for (const GeneratedSample& g : batch) {
        ScoredArch s;
        s.arch = g.arch;
        s.hash = arch_hash(g.arch);
        s.predicted_acc =
            preds.predict(PredHead::kAccDenoised, to_continuous(g.arch), 0.0, demb);
        const CostReport cost = cost_report(g.arch, proto, model);
        s.params = cost.params;
        s.macs = cost.macs;
        s.latency_ms = cost.latency_ms;
        s.phase = g.phase;
        out.push_back(std::move(s));
    }
    return out;
}

// Non-dominated subset in (predicted_acc up, metric down), duplicates (by
// arch hash) collapsed first, result ordered by metric ascending.
inline std::vector<ScoredArch> pareto_front(const std::vector<ScoredArch>& points,
                                            SecondaryMetric metric) {
    if (points.empty()) throw std::invalid_argument("pareto_front: empty input");
    std::vector<ScoredArch> pts;
    {
        std::set<std::string> seen;
        for (const ScoredArch& p : points)
            if (seen.insert(p.hash).second) pts.push_back(p);
    }
    std::stable_sort(pts.begin(), pts.end(), [&](const ScoredArch& a, const ScoredArch& b) {
        return metric_of(a, metric) < metric_of(b, metric);
    });
    std::vector<ScoredArch> front;
    double best_acc = -1.0;
    std::size_t i = 0;
    while (i < pts.size()) {
        std::size_t j = i;
        double group_max = -1.0;
        while (j < pts.size() && metric_of(pts[j], metric) == metric_of(pts[i], metric)) {
            group_max = std::max(group_max, pts[j].predicted_acc);
            ++j;
        }
        if (group_max > best_acc) {
            for (std::size_t k = i; k < j; ++k)
                if (pts[k].predicted_acc == group_max) front.push_back(pts[k]);
            best_acc = group_max;
        }
        i = j;
    }
    return front;
}

struct FrontPicks {
    ScoredArch acc;  // highest predicted accuracy
    ScoredArch bal;  // highest predicted_acc / metric ratio
    ScoredArch eff;  // lowest metric
};

namespace detail {

// tie chain: primary objective, then smaller metric, then lexicographic hash
inline bool pick_better(double obj_a, const ScoredArch& a, double obj_b, const ScoredArch& b,
                        SecondaryMetric metric) {
    if (obj_a != obj_b) return obj_a > obj_b;
    if (metric_of(a, metric) != metric_of(b, metric))
        return metric_of(a, metric) < metric_of(b, metric);
    return a.hash < b.hash;
}

} // namespace detail

inline FrontPicks select_configs(const std::vector<ScoredArch>& front, SecondaryMetric metric) {
    if (front.empty()) throw std::invalid_argument("select_configs: empty front");
    FrontPicks picks{front[0], front[0], front[0]};
    for (const ScoredArch& s : front) {
        if (detail::pick_better(s.predicted_acc, s, picks.acc.predicted_acc, picks.acc, metric))
            picks.acc = s;
        const double ratio = s.predicted_acc / metric_of(s, metric);
        const double best_ratio = picks.bal.predicted_acc / metric_of(picks.bal, metric);
        if (detail::pick_better(ratio, s, best_ratio, picks.bal, metric)) picks.bal = s;
        if (detail::pick_better(-metric_of(s, metric), s, -metric_of(picks.eff, metric),
                                picks.eff, metric))
            picks.eff = s;
    }
    return picks;
}

struct FrontSelection {
    SecondaryMetric metric = SecondaryMetric::kParams;
    std::vector<ScoredArch> front;
    FrontPicks picks;
};

inline FrontSelection build_front_selection(const std::vector<ScoredArch>& scored,
                                            SecondaryMetric metric) {
    FrontSelection sel;
    sel.metric = metric;
    sel.front = pareto_front(scored, metric);
    sel.picks = select_configs(sel.front, metric);
    return sel;
}

struct GenerationMetrics {
    double validity = 0.0;    // % strictly valid before quantization
    double uniqueness = 0.0;  // % distinct hashes among valid
    double novelty = 0.0;     // % of distinct hashes outside the training set
};

inline GenerationMetrics generation_metrics(const std::vector<GeneratedSample>& batch,
                                            const std::set<std::string>& training_hashes) {
    if (batch.empty()) throw std::invalid_argument("generation_metrics: empty batch");
    std::size_t valid = 0;
    std::set<std::string> distinct;
    for (const GeneratedSample& g : batch) {
        if (!g.strict) continue;
        ++valid;
        distinct.insert(arch_hash(g.arch));
    }
    GenerationMetrics m;
    m.validity = 100.0 * static_cast<double>(valid) / static_cast<double>(batch.size());
    if (valid > 0)
        m.uniqueness = 100.0 * static_cast<double>(distinct.size()) / static_cast<double>(valid);
    if (!distinct.empty()) {
        std::size_t novel = 0;
        for (const std::string& h : distinct)
            if (training_hashes.find(h) == training_hashes.end()) ++novel;
        m.novelty = 100.0 * static_cast<double>(novel) / static_cast<double>(distinct.size());
    }
    return m;
}

// CSV rows for every scored arch; front membership and picks refer to `sel`.
inline std::string front_csv(const std::vector<ScoredArch>& scored, const FrontSelection& sel,
                             const std::map<std::string, double>& oracle_acc = {}) {
    std::set<std::string> on_front;
    for (const ScoredArch& s : sel.front) on_front.insert(s.hash);
    const auto pick_tag = [&](const std::string& hash) {
        std::string tag;
        if (sel.picks.acc.hash == hash) tag += "Acc";
        if (sel.picks.bal.hash == hash) tag += tag.empty() ? "Bal" : ";Bal";
        if (sel.picks.eff.hash == hash) tag += tag.empty() ? "Eff" : ";Eff";
        return tag;
    };
    std::ostringstream os;
    os << "arch_hash,predicted_acc,oracle_acc,params,macs,latency_ms,phase,on_front,pick\n";
    os.precision(10);
    for (const ScoredArch& s : scored) {
        os << s.hash << ',' << s.predicted_acc << ',';
        auto it = oracle_acc.find(s.hash);
        if (it != oracle_acc.end()) os << it->second;
        os << ',' << s.params << ',' << s.macs << ',' << s.latency_ms << ',' << s.phase << ','
           << (on_front.count(s.hash) ? 1 : 0) << ',' << pick_tag(s.hash) << '\n';
    }
    return os.str();
}

} // namespace mogen
