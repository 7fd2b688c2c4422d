#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogen/predictors.hpp"
#include "mogen/score_network.hpp"

namespace mogen {

struct GuidanceScales {
    double k_acc = 0.0;
    double k_params = 0.0;
    double k_macs = 0.0;
    double k_lat = 0.0;

    void check() const {
        if (k_acc < 0.0 || k_params < 0.0 || k_macs < 0.0 || k_lat < 0.0)
            throw std::invalid_argument("guidance scales must be non-negative");
    }
    bool any() const { return k_acc > 0.0 || k_params > 0.0 || k_macs > 0.0 || k_lat > 0.0; }
};

enum class Regime { kEfficient, kAccurate };

inline std::string regime_name(Regime r) {
    return r == Regime::kEfficient ? "efficient" : "accurate";
}

inline Regime regime_from_name(const std::string& name) {
    if (name == "efficient") return Regime::kEfficient;
    if (name == "accurate") return Regime::kAccurate;
    throw std::invalid_argument("unknown regime: " + name);
}

struct PhasePreset {
    Regime regime = Regime::kEfficient;
    GuidanceScales scales;
};

// published two-phase presets
inline PhasePreset efficient_preset(Space space) {
    if (space == Space::NB201) return {Regime::kEfficient, {4732.0, 482.0, 421.0, 368.0}};
    return {Regime::kEfficient, {4987.0, 494.0, 478.0, 481.0}};
}
inline PhasePreset accurate_preset(Space space) {
    if (space == Space::NB201) return {Regime::kAccurate, {24943.0, 12.0, 26.0, 13.0}};
    return {Regime::kAccurate, {48321.0, 21.0, 16.0, 39.0}};
}
inline GuidanceScales baseline_scales() { return {10000.0, 0.0, 0.0, 0.0}; }

struct ReverseChainState {
    ContinuousArch x;
    double t = 0.0;
    Rng rng{0};
    std::uint64_t stream_id = 0;
};

constexpr double kDefaultMaxGuidanceStep = 1.0;
constexpr double kGuidanceLogFloor = 1e-12;

// drop-in guidance drift sum_h k_h grad_x log f_h for a given (x, t)
using GuidanceFn = std::function<Tensor(const Tensor& x, double t)>;

// One reverse-diffusion integrator with parameters bound once: every step
// rebuilds only the small per-step graph and rolls the tapes back, so long
// chains avoid re-copying weights.
class ChainStepper {
public:
    ChainStepper(const ScoreNet& net, const SdeSchedule& sde, const PredictorSet* preds,
                 const Tensor* demb, GuidanceScales scales,
                 double max_guidance_step = kDefaultMaxGuidanceStep)
        : net_(net), sde_(sde), preds_(preds), scales_(scales),
          max_guidance_step_(max_guidance_step) {
        sde_.check();
        scales_.check();
        if (scales_.any()) {
            if (preds_ == nullptr || demb == nullptr)
                throw std::invalid_argument(
                    "guided sampling needs predictors and a dataset embedding");
            if (preds_->space() != net_.space())
                throw std::invalid_argument("score net and predictors disagree on space");
            demb_ = *demb;
            std::vector<PredHead> active;
            for (PredHead h : kNoisyHeads)
                if (head_scale(h) > 0.0) active.push_back(h);
            auto bound = preds_->bind_heads(guide_tape_, active, false);
            for (PredHead h : active) guide_heads_.emplace_back(h, std::move(bound.at(h)));
        }
        score_params_ = trunk::bind(score_tape_, net_.params(), false);
        score_base_ = score_tape_.size();
        guide_base_ = guide_tape_.size();
    }

    // guidance supplied directly, bypassing the predictor heads
    ChainStepper(const ScoreNet& net, const SdeSchedule& sde, GuidanceFn guidance,
                 double max_guidance_step = kDefaultMaxGuidanceStep)
        : net_(net), sde_(sde), preds_(nullptr), max_guidance_step_(max_guidance_step),
          custom_guidance_(std::move(guidance)) {
        sde_.check();
        score_params_ = trunk::bind(score_tape_, net_.params(), false);
        score_base_ = score_tape_.size();
        guide_base_ = guide_tape_.size();
    }

    const SdeSchedule& sde() const { return sde_; }

    // Euler-Maruyama reverse update:
    //   x <- x + g^2 (s_theta + sum_h k_h grad log f_h) dt + g sqrt(dt) eps
    // The guidance part of the drift is clamped per entry to avoid blow-ups at
    // large published scales; the score part is never clamped.
    void step(ReverseChainState& state) {
        if (!(state.t > 0.0)) throw std::invalid_argument("guided_reverse_step: t must be > 0");
        if (state.x.space != net_.space())
            throw std::invalid_argument("guided_reverse_step: wrong space");
        const double t = state.t;
        const double dt = sde_.dt();
        const double g = sde_.g(t);
        const double g2dt = g * g * dt;
        const double noise_scale = g * std::sqrt(dt);

        try {
            const Tensor score = eval_score(state.x.values, t);
            Tensor guide = Tensor::zeros(state.x.values.shape());
            if (custom_guidance_) {
                guide = custom_guidance_(state.x.values, t);
                if (!guide.same_shape(state.x.values))
                    throw std::invalid_argument("guidance drift has the wrong shape");
            } else if (!guide_heads_.empty()) {
                guide = eval_guidance(state.x.values, t);
            }

            std::vector<double> next(state.x.values.data());
            for (std::size_t i = 0; i < next.size(); ++i) {
                double gstep = g2dt * guide.data()[i];
                if (gstep > max_guidance_step_) gstep = max_guidance_step_;
                if (gstep < -max_guidance_step_) gstep = -max_guidance_step_;
                next[i] += g2dt * score.data()[i] + gstep + noise_scale * state.rng.normal();
                if (!std::isfinite(next[i])) throw std::runtime_error("non-finite update");
            }
            state.x.values = Tensor(state.x.values.shape(), std::move(next));
        } catch (const std::exception& e) {
            throw std::runtime_error("reverse chain aborted at t = " + std::to_string(t) +
                                     " (stream " + std::to_string(state.stream_id) +
                                     "): " + e.what());
        }
        state.t = t - dt > 1e-12 ? t - dt : 0.0;
    }

    ContinuousArch run_chain(ReverseChainState state) {
        while (state.t > 0.0) step(state);
        return state.x;
    }

    ReverseChainState init_chain(Rng stream, std::uint64_t stream_id) const {
        const std::size_t R = ops_rows(net_.space()), C = ops_cols(net_.space());
        std::vector<double> x(R * C);
        for (double& v : x) v = sde_.sigma_max * stream.normal();
        return ReverseChainState{{net_.space(), Tensor({R, C}, std::move(x))}, sde_.T,
                                 stream, stream_id};
    }

private:
    double head_scale(PredHead h) const {
        switch (h) {
            case PredHead::kAcc: return scales_.k_acc;
            case PredHead::kParams: return scales_.k_params;
            case PredHead::kMacs: return scales_.k_macs;
            case PredHead::kLatency: return scales_.k_lat;
            default: return 0.0;
        }
    }

    Tensor eval_score(const Tensor& x, double t) {
        score_tape_.truncate(score_base_);
        Var xv = score_tape_.constant(x);
        Var s = net_.forward_tape(score_tape_, score_params_, xv, t);
        return score_tape_.value(s);
    }

    // sum_h k_h grad_x log max(f_h, floor), one backward for all heads; with a
    // shared trunk the hidden states are computed once and reused per head
    Tensor eval_guidance(const Tensor& x, double t) {
        guide_tape_.truncate(guide_base_);
        Var xv = guide_tape_.input(x);
        Var shared_hidden{};
        if (preds_->shared_trunk())
            shared_hidden =
                preds_->trunk_hidden(guide_tape_, guide_heads_.front().second.trunk, xv, t,
                                     demb_);
        Var total{};
        bool first = true;
        for (const auto& [h, b] : guide_heads_) {
            Var f = preds_->shared_trunk()
                        ? preds_->head_output(guide_tape_, b.out, shared_hidden)
                        : preds_->forward_tape(guide_tape_, b, h, xv, t, demb_);
            Var floored = add(relu(sub(f, guide_tape_.constant(Tensor::full({1, 1},
                                                                            kGuidanceLogFloor)))),
                              guide_tape_.constant(Tensor::full({1, 1}, kGuidanceLogFloor)));
            Var term = scale(log(floored), head_scale(h));
            total = first ? term : add(total, term);
            first = false;
        }
        guide_tape_.backward(total);
        return guide_tape_.grad(xv);
    }

    const ScoreNet& net_;
    SdeSchedule sde_;
    const PredictorSet* preds_;
    GuidanceScales scales_;
    double max_guidance_step_;
    GuidanceFn custom_guidance_;
    Tensor demb_;
    Tape score_tape_, guide_tape_;
    BoundParams score_params_;
    std::vector<std::pair<PredHead, PredictorSet::HeadBinding>> guide_heads_;
    std::size_t score_base_ = 0, guide_base_ = 0;
};

// single step on throwaway tapes, for tests and spot checks
inline ReverseChainState guided_reverse_step(const ReverseChainState& state, const ScoreNet& net,
                                             const PredictorSet* preds, const Tensor* demb,
                                             const GuidanceScales& scales,
                                             const SdeSchedule& sde,
                                             double max_guidance_step = kDefaultMaxGuidanceStep) {
    ChainStepper stepper(net, sde, preds, demb, scales, max_guidance_step);
    ReverseChainState next = state;
    stepper.step(next);
    return next;
}

struct GeneratedSample {
    ContinuousArch raw;
    Architecture arch;
    bool strict = false;
    std::uint64_t stream_id = 0;
    int phase = 0;  // 0 single batch, 1 efficient, 2 accurate
};

// Independent chains from x_T ~ N(0, sigma_max^2); stream c comes from
// rng.fork(c), so chain outputs do not depend on evaluation order.
inline std::vector<GeneratedSample> generate_batch(
    const ScoreNet& net, const PredictorSet* preds, const Tensor* demb,
    const GuidanceScales& scales, std::size_t batch_size, const Rng& rng,
    const SdeSchedule* sde_override = nullptr, int phase_tag = 0,
    double max_guidance_step = kDefaultMaxGuidanceStep) {
    if (batch_size < 1) throw std::invalid_argument("generate_batch: batch_size must be >= 1");
    const SdeSchedule sde = sde_override != nullptr ? *sde_override : net.sde();
    ChainStepper stepper(net, sde, preds, demb, scales, max_guidance_step);
    std::vector<GeneratedSample> out;
    out.reserve(batch_size);
    for (std::size_t c = 0; c < batch_size; ++c) {
        ReverseChainState state = stepper.init_chain(rng.fork(c), c);
        GeneratedSample s;
        s.raw = stepper.run_chain(std::move(state));
        s.strict = strict_valid(s.raw);
        s.arch = quantize(s.raw);
        s.stream_id = c;
        s.phase = phase_tag;
        out.push_back(std::move(s));
    }
    return out;
}

// two-phase Pareto Front Stretching batch: efficient scales then accurate
// scales, independent noise streams, union tagged by phase
inline std::vector<GeneratedSample> generate_stretched(
    const ScoreNet& net, const PredictorSet& preds, const Tensor& demb,
    const PhasePreset& efficient, const PhasePreset& accurate, const Rng& rng,
    std::size_t per_phase = 128, const SdeSchedule* sde_override = nullptr,
    double max_guidance_step = kDefaultMaxGuidanceStep) {
    if (efficient.regime != Regime::kEfficient || accurate.regime != Regime::kAccurate)
        throw std::invalid_argument("generate_stretched: presets must cover both regimes");
    std::vector<GeneratedSample> out =
        generate_batch(net, &preds, &demb, efficient.scales, per_phase, rng.fork(1),
                       sde_override, 1, max_guidance_step);
    std::vector<GeneratedSample> acc =
        generate_batch(net, &preds, &demb, accurate.scales, per_phase, rng.fork(2),
                       sde_override, 2, max_guidance_step);
    out.insert(out.end(), std::make_move_iterator(acc.begin()),
               std::make_move_iterator(acc.end()));
    return out;
}

} // namespace mogen
