#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogen/meta_dataset.hpp"
#include "mogen/score_network.hpp"
#include "mogen/stats.hpp"
#include "mogen/task_oracle.hpp"

namespace mogen {

constexpr std::size_t kDEmbed = 64;

// Frozen-random two-layer pooler: mean prototype through relu MLP. The
// weights come from a fixed seed, so the embedding is a pure function of the
// task and identical across processes.
inline Tensor encode_dataset(const TaskDescriptor& task, std::size_t d_embed = kDEmbed) {
    const std::size_t d_in = task.prototypes.cols();
    const std::size_t rows = task.prototypes.rows();
    if (rows == 0) throw std::invalid_argument("encode_dataset: empty prototype set");
    std::vector<double> pooled(d_in, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d_in; ++c) pooled[c] += task.prototypes.at(r, c);
    for (double& v : pooled) v /= static_cast<double>(rows);

    Rng rng(0xE2C0DE5EULL);
    const Tensor w1 = trunk::glorot(rng, d_in, d_embed);
    const Tensor w2 = trunk::glorot(rng, d_embed, d_embed);
    std::vector<double> h(d_embed, 0.0);
    for (std::size_t j = 0; j < d_embed; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d_in; ++c) acc += pooled[c] * w1.at(c, j);
        h[j] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> out(d_embed, 0.0);
    for (std::size_t j = 0; j < d_embed; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d_embed; ++k) acc += h[k] * w2.at(k, j);
        out[j] = acc;
    }
    return Tensor({1, d_embed}, std::move(out));
}

enum class PredHead { kAcc = 0, kParams, kMacs, kLatency, kAccDenoised };

constexpr std::array<PredHead, 5> kAllHeads = {PredHead::kAcc, PredHead::kParams,
                                               PredHead::kMacs, PredHead::kLatency,
                                               PredHead::kAccDenoised};
constexpr std::array<PredHead, 4> kNoisyHeads = {PredHead::kAcc, PredHead::kParams,
                                                 PredHead::kMacs, PredHead::kLatency};

inline std::string head_name(PredHead h) {
    switch (h) {
        case PredHead::kAcc: return "acc";
        case PredHead::kParams: return "params";
        case PredHead::kMacs: return "macs";
        case PredHead::kLatency: return "latency";
        case PredHead::kAccDenoised: return "acc_denoised";
    }
    throw std::invalid_argument("head_name: unknown head");
}

inline PredHead head_from_name(const std::string& name) {
    for (PredHead h : kAllHeads)
        if (head_name(h) == name) return h;
    throw std::invalid_argument("unknown predictor head: " + name);
}

// Target the heads regress toward: probability the architecture satisfies the
// metric. Accuracy is already such a probability; cost metrics invert their
// population rank so cheaper means better-satisfied.
inline double satisfaction_target(PredHead head, double value,
                                  const std::vector<double>& population) {
    if (head == PredHead::kAcc || head == PredHead::kAccDenoised) return value;
    return 1.0 - normalize_metric(value, population);
}

inline double satisfaction_from_grid(PredHead head, double value,
                                     const std::vector<double>& sorted_grid) {
    if (head == PredHead::kAcc || head == PredHead::kAccDenoised) return value;
    return 1.0 - rank_normalize(value, sorted_grid);
}

struct PredictorTrainConfig {
    std::size_t steps = 600;
    std::size_t batch = 32;
    double lr = 1e-3;
    double lr_min = 1e-5;
    double weight_decay = 5e-3;
    double t_min = 1e-3;
    std::size_t holdout_every = 5;  // record i held out when i % holdout_every == last
    std::uint64_t seed = 0;
};

// Five satisfaction heads over the same token-trunk design as the score net
// (two blocks). With shared_trunk one trunk feeds five small output layers,
// which makes multi-head guidance roughly four times cheaper; without it each
// head is an independent network.
class PredictorSet {
public:
    PredictorSet(Space space, SdeSchedule sde, std::uint64_t init_seed, bool shared_trunk = true)
        : space_(space), sde_(sde), cfg_(TrunkConfig::for_space(space, /*blocks=*/2)),
          mask_(dag_attention_mask(space)), shared_(shared_trunk) {
        sde_.check();
        if (shared_) {
            Rng rng = Rng(init_seed).fork(0xF8EAD7ULL);
            init_trunk(trunk_, rng);
            for (PredHead h : kAllHeads) {
                Rng hr = Rng(init_seed).fork(0xF8EAD000ULL + static_cast<std::uint64_t>(h));
                TensorMap p;
                init_out(p, hr);
                heads_.emplace(h, std::move(p));
            }
        } else {
            for (PredHead h : kAllHeads) {
                Rng rng = Rng(init_seed).fork(0xF8EAD000ULL + static_cast<std::uint64_t>(h));
                TensorMap p;
                init_trunk(p, rng);
                init_out(p, rng);
                heads_.emplace(h, std::move(p));
            }
        }
    }

    Space space() const { return space_; }
    const SdeSchedule& sde() const { return sde_; }
    const TrunkConfig& config() const { return cfg_; }
    bool shared_trunk() const { return shared_; }
    const std::map<std::string, double>& spearman_report() const { return report_; }
    void set_report(std::map<std::string, double> r) { report_ = std::move(r); }

    // parameter access for optimizers: the owning map of a head's trunk keys
    TensorMap& trunk_params_of(PredHead h) { return shared_ ? trunk_ : heads_.at(h); }
    const TensorMap& trunk_params_of(PredHead h) const { return shared_ ? trunk_ : heads_.at(h); }
    TensorMap& out_params_of(PredHead h) { return heads_.at(h); }
    const TensorMap& out_params_of(PredHead h) const { return heads_.at(h); }

    struct HeadBinding {
        BoundParams trunk;  // trunk + conditioning
        BoundParams out;    // pooled output layer
    };

    // Bind the requested heads' parameters onto a tape. In shared mode the
    // trunk tensors are materialized once and every binding reuses the same
    // handles.
    std::map<PredHead, HeadBinding> bind_heads(Tape& tape, const std::vector<PredHead>& which,
                                               bool trainable) const {
        std::map<PredHead, HeadBinding> bound;
        BoundParams shared_trunk_vars;
        if (shared_) shared_trunk_vars = trunk::bind(tape, trunk_, trainable);
        for (PredHead h : which) {
            HeadBinding b;
            if (shared_) {
                b.trunk = shared_trunk_vars;  // handle copies, same tape nodes
                b.out = trunk::bind(tape, heads_.at(h), trainable);
            } else {
                b.trunk = trunk::bind(tape, heads_.at(h), trainable);
                b.out = b.trunk;  // one map per head holds trunk and out keys
            }
            bound.emplace(h, std::move(b));
        }
        return bound;
    }

    HeadBinding bind_head(Tape& tape, PredHead h, bool trainable) const {
        return std::move(bind_heads(tape, {h}, trainable).at(h));
    }

    // tokens -> conditioned trunk -> hidden states (tokens x d_model)
    Var trunk_hidden(Tape& tape, const BoundParams& p, Var x, double t,
                     const Tensor& demb) const {
        if (demb.ndim() != 2 || demb.rows() != 1 || demb.cols() != kDEmbed)
            throw std::invalid_argument("predict: dataset embedding must be 1x" +
                                        std::to_string(kDEmbed));
        if (!(t >= 0.0 && t <= sde_.T))
            throw std::invalid_argument("predict: t outside [0, T]");
        Var tok = trunk::embed_tokens(tape, p, "", cfg_, x, t, sde_.T);
        Var cond =
            add(matmul(tape.constant(demb), trunk::at(p, "cond/w")), trunk::at(p, "cond/b"));
        tok = add_rowwise(tok, cond);
        return trunk::forward(tape, p, "", cfg_, tok, tape.constant(mask_));
    }

    // hidden -> mean pool -> layer norm -> affine -> sigmoid, strictly (0,1)
    Var head_output(Tape& tape, const BoundParams& out, Var hidden) const {
        (void)tape;
        Var pooled = mean_rows(hidden);
        Var hn = layer_norm(pooled, trunk::at(out, "out/ln/g"), trunk::at(out, "out/ln/b"));
        Var z = add(matmul(hn, trunk::at(out, "out/w")), trunk::at(out, "out/b"));
        return sigmoid(z);
    }

    // scalar prediction; t is ignored by the denoised head, validated otherwise
    Var forward_tape(Tape& tape, const HeadBinding& b, PredHead h, Var x, double t,
                     const Tensor& demb) const {
        const double t_eff = h == PredHead::kAccDenoised ? 0.0 : t;
        return head_output(tape, b.out, trunk_hidden(tape, b.trunk, x, t_eff, demb));
    }

    double predict(PredHead h, const ContinuousArch& x, double t, const Tensor& demb) const {
        if (x.space != space_) throw std::invalid_argument("predict: wrong space");
        Tape tape;
        const HeadBinding b = bind_head(tape, h, false);
        return tape.value(forward_tape(tape, b, h, tape.constant(x.values), t, demb))
            .scalar_value();
    }

    struct HeadEval {
        double value = 0.0;
        Tensor input_grad;
    };

    HeadEval predict_with_input_grad(PredHead h, const ContinuousArch& x, double t,
                                     const Tensor& demb) const {
        if (x.space != space_) throw std::invalid_argument("predict: wrong space");
        Tape tape;
        const HeadBinding b = bind_head(tape, h, false);
        Var xv = tape.input(x.values);
        Var y = forward_tape(tape, b, h, xv, t, demb);
        const double value = tape.value(y).scalar_value();
        tape.backward(y);
        return HeadEval{value, tape.grad(xv)};
    }

    // Each head's checkpoint is self-contained: trunk plus its output layer.
    void save(const std::string& prefix) const {
        for (PredHead h : kAllHeads) {
            TensorMap out;
            const TensorMap& trunk_src = shared_ ? trunk_ : heads_.at(h);
            for (const auto& [name, t] : trunk_src)
                if (name.rfind("out/", 0) != 0) out.emplace(name, t);
            for (const auto& [name, t] : heads_.at(h))
                if (name.rfind("out/", 0) == 0) out.emplace(name, t);
            put_meta(out, "space", space_ == Space::NB201 ? 0.0 : 1.0);
            put_meta(out, "sde.sigma_min", sde_.sigma_min);
            put_meta(out, "sde.sigma_max", sde_.sigma_max);
            put_meta(out, "sde.T", sde_.T);
            put_meta(out, "sde.steps", static_cast<double>(sde_.steps));
            put_meta(out, "model.d_model", static_cast<double>(cfg_.d_model));
            put_meta(out, "model.shared_trunk", shared_ ? 1.0 : 0.0);
            put_meta(out, "head", static_cast<double>(h));
            const std::string rep_key = "report." + head_name(h);
            auto it = report_.find(head_name(h));
            if (it != report_.end()) put_meta(out, rep_key, it->second);
            save_checkpoint(prefix + head_name(h) + ".bin", out);
        }
    }

    static PredictorSet load(const std::string& prefix) {
        TensorMap first = load_checkpoint(prefix + "acc.bin");
        const Space space = get_meta(first, "space") == 0.0 ? Space::NB201 : Space::MBV3;
        SdeSchedule sde;
        sde.sigma_min = get_meta(first, "sde.sigma_min");
        sde.sigma_max = get_meta(first, "sde.sigma_max");
        sde.T = get_meta(first, "sde.T");
        sde.steps = static_cast<int>(get_meta(first, "sde.steps"));
        const bool shared = has_meta(first, "model.shared_trunk") &&
                            get_meta(first, "model.shared_trunk") != 0.0;
        PredictorSet set(space, sde, 0, shared);
        std::map<std::string, double> report;
        for (PredHead h : kAllHeads) {
            TensorMap in = load_checkpoint(prefix + head_name(h) + ".bin");
            const std::string rep_key = "report." + head_name(h);
            if (has_meta(in, rep_key)) report[head_name(h)] = get_meta(in, rep_key);
            for (auto& [name, t] : in) {
                if (name.rfind("meta/", 0) == 0) continue;
                TensorMap& dst = name.rfind("out/", 0) == 0 ? set.heads_.at(h)
                                 : shared                   ? set.trunk_
                                                            : set.heads_.at(h);
                auto it = dst.find(name);
                if (it == dst.end())
                    throw std::runtime_error("predictor load: unexpected tensor " + name);
                if (!it->second.same_shape(t))
                    throw std::runtime_error("predictor load: shape mismatch for " + name);
                it->second = std::move(t);
            }
        }
        set.report_ = std::move(report);
        return set;
    }

private:
    void init_trunk(TensorMap& p, Rng& rng) const {
        trunk::init_params(p, "", cfg_, rng);
        p.emplace("cond/w", trunk::glorot(rng, kDEmbed, cfg_.d_model));
        p.emplace("cond/b", Tensor::zeros({1, cfg_.d_model}));
    }
    void init_out(TensorMap& p, Rng& rng) const {
        const std::size_t d = cfg_.d_model;
        p.emplace("out/ln/g", Tensor::full({1, d}, 1.0));
        p.emplace("out/ln/b", Tensor::zeros({1, d}));
        p.emplace("out/w", trunk::glorot(rng, d, 1));
        p.emplace("out/b", Tensor::zeros({1, 1}));
    }

    Space space_;
    SdeSchedule sde_;
    TrunkConfig cfg_;
    Tensor mask_;
    bool shared_;
    TensorMap trunk_;                      // shared mode only
    std::map<PredHead, TensorMap> heads_;  // separate: full nets; shared: out layers
    std::map<std::string, double> report_;
};

namespace detail {

struct PredictorSamples {
    std::vector<std::size_t> train_idx, holdout_idx;
    std::vector<Tensor> demb;                   // per record
    std::vector<std::array<double, 4>> target;  // acc, params, macs, latency satisfaction
};

inline PredictorSamples predictor_samples(const MetaDataset& meta,
                                          const PredictorTrainConfig& cfg) {
    PredictorSamples s;
    s.demb.reserve(meta.records.size());
    s.target.reserve(meta.records.size());
    for (std::size_t i = 0; i < meta.records.size(); ++i) {
        const MetaRecord& r = meta.records[i];
        if (cfg.holdout_every >= 2 && i % cfg.holdout_every == cfg.holdout_every - 1)
            s.holdout_idx.push_back(i);
        else
            s.train_idx.push_back(i);
        s.demb.push_back(encode_dataset(task_from_seed(r.task_seed)));
        s.target.push_back({r.obj.y,
                            satisfaction_from_grid(PredHead::kParams, r.obj.p,
                                                   meta.norm.params),
                            satisfaction_from_grid(PredHead::kMacs, r.obj.m, meta.norm.macs),
                            satisfaction_from_grid(PredHead::kLatency, r.obj.l,
                                                   meta.norm.latency)});
    }
    if (s.train_idx.empty()) throw std::invalid_argument("train_predictors: empty train split");
    return s;
}

inline double head_target(PredHead h, const std::array<double, 4>& t) {
    switch (h) {
        case PredHead::kAcc: return t[0];
        case PredHead::kAccDenoised: return t[0];
        case PredHead::kParams: return t[1];
        case PredHead::kMacs: return t[2];
        case PredHead::kLatency: return t[3];
    }
    throw std::invalid_argument("head_target: unknown head");
}

inline void collect_grads(Tape& tape, const BoundParams& p, const std::string& prefix,
                          TensorMap& grads) {
    for (const auto& [name, v] : p) grads.emplace(prefix + name, tape.grad(v));
}

} // namespace detail

// Squared-error regression of each head onto its satisfaction target. Noisy
// heads see perturbed inputs at log-uniform t; the denoised head always sees
// the clean one-hot at t = 0. AdamW with decoupled decay and cosine schedule.
// Shared mode trains one trunk jointly on all five losses; separate mode
// trains five independent networks from independent seeds.
inline PredictorSet train_predictors(const MetaDataset& meta, const SdeSchedule& sde,
                                     const PredictorTrainConfig& cfg, bool shared_trunk = true) {
    if (meta.records.empty()) throw std::invalid_argument("train_predictors: empty meta-dataset");
    PredictorSet set(meta.space, sde, cfg.seed, shared_trunk);
    const detail::PredictorSamples samples = detail::predictor_samples(meta, cfg);
    const std::vector<PredHead> all(kAllHeads.begin(), kAllHeads.end());

    if (shared_trunk) {
        AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
        const Rng base(splitmix64(cfg.seed ^ 0x9D1C704ULL));
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            Rng rs = base.fork(step);
            Tape tape;
            const auto bound = set.bind_heads(tape, all, /*trainable=*/true);
            Var loss{};
            bool first = true;
            for (std::size_t b = 0; b < cfg.batch; ++b) {
                const std::size_t idx =
                    samples.train_idx[rs.uniform_index(samples.train_idx.size())];
                const MetaRecord& r = meta.records[idx];
                const double t = rs.log_uniform(cfg.t_min, sde.T);
                const Tensor x_noisy = perturb(r.arch, t, rs, sde).x_t;
                const Tensor x_clean = ops_matrix(r.arch);
                Var h_noisy = set.trunk_hidden(tape, bound.at(PredHead::kAcc).trunk,
                                               tape.constant(x_noisy), t, samples.demb[idx]);
                Var h_clean = set.trunk_hidden(tape, bound.at(PredHead::kAcc).trunk,
                                               tape.constant(x_clean), 0.0, samples.demb[idx]);
                for (PredHead h : kAllHeads) {
                    Var y = set.head_output(
                        tape, bound.at(h).out,
                        h == PredHead::kAccDenoised ? h_clean : h_noisy);
                    Var diff = sub(y, tape.constant(Tensor::full(
                                          {1, 1},
                                          detail::head_target(h, samples.target[idx]))));
                    Var term = mul(diff, diff);
                    loss = first ? term : add(loss, term);
                    first = false;
                }
            }
            loss = scale(sum_all(loss), 1.0 / static_cast<double>(cfg.batch * 5));
            const double loss_v = tape.value(loss).scalar_value();
            if (!std::isfinite(loss_v))
                throw std::runtime_error("train_predictors: divergence at step " +
                                         std::to_string(step));
            tape.backward(loss);
            // five heads reuse the same out/* key names, so the merged
            // optimizer map prefixes each head's keys with its name
            TensorMap grads, merged;
            detail::collect_grads(tape, bound.at(PredHead::kAcc).trunk, "", grads);
            for (auto& [name, t] : set.trunk_params_of(PredHead::kAcc)) merged.emplace(name, t);
            for (PredHead h : kAllHeads) {
                const std::string prefix = head_name(h) + "/";
                detail::collect_grads(tape, bound.at(h).out, prefix, grads);
                for (auto& [name, t] : set.out_params_of(h)) merged.emplace(prefix + name, t);
            }
            opt.step(merged, grads, cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min));
            for (auto& [name, t] : set.trunk_params_of(PredHead::kAcc)) t = merged.at(name);
            for (PredHead h : kAllHeads) {
                const std::string prefix = head_name(h) + "/";
                for (auto& [name, t] : set.out_params_of(h)) t = merged.at(prefix + name);
            }
        }
    } else {
        for (PredHead h : kAllHeads) {
            const bool denoised = h == PredHead::kAccDenoised;
            AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
            const Rng base(
                splitmix64(cfg.seed ^ (0x9D1C704ULL + static_cast<std::uint64_t>(h))));
            for (std::size_t step = 0; step < cfg.steps; ++step) {
                Rng rs = base.fork(step);
                Tape tape;
                const PredictorSet::HeadBinding b = set.bind_head(tape, h, /*trainable=*/true);
                Var loss{};
                for (std::size_t i = 0; i < cfg.batch; ++i) {
                    const std::size_t idx =
                        samples.train_idx[rs.uniform_index(samples.train_idx.size())];
                    const MetaRecord& r = meta.records[idx];
                    double t = 0.0;
                    Tensor x = ops_matrix(r.arch);
                    if (!denoised) {
                        t = rs.log_uniform(cfg.t_min, sde.T);
                        x = perturb(r.arch, t, rs, sde).x_t;
                    }
                    Var y =
                        set.forward_tape(tape, b, h, tape.constant(x), t, samples.demb[idx]);
                    Var diff = sub(y, tape.constant(Tensor::full(
                                          {1, 1},
                                          detail::head_target(h, samples.target[idx]))));
                    Var term = mul(diff, diff);
                    loss = i == 0 ? term : add(loss, term);
                }
                loss = scale(sum_all(loss), 1.0 / static_cast<double>(cfg.batch));
                const double loss_v = tape.value(loss).scalar_value();
                if (!std::isfinite(loss_v))
                    throw std::runtime_error("train_predictors: divergence on head " +
                                             head_name(h) + " at step " +
                                             std::to_string(step));
                tape.backward(loss);
                TensorMap grads;
                detail::collect_grads(tape, b.trunk, "", grads);  // holds trunk and out keys
                opt.step(set.out_params_of(h), grads,
                         cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min));
            }
        }
    }

    // held-out ranking quality per head; noisy heads are probed near t = 0 on
    // lightly perturbed inputs, the denoised head on clean one-hots
    std::map<std::string, double> report;
    if (!samples.holdout_idx.empty()) {
        Rng re(splitmix64(cfg.seed ^ 0x3EA177ULL));
        for (PredHead h : kAllHeads) {
            std::vector<double> pred, want;
            for (const std::size_t idx : samples.holdout_idx) {
                const MetaRecord& r = meta.records[idx];
                double t = 0.0;
                Tensor x = ops_matrix(r.arch);
                if (h != PredHead::kAccDenoised) {
                    t = cfg.t_min;
                    x = perturb(r.arch, t, re, sde).x_t;
                }
                pred.push_back(set.predict(h, {meta.space, x}, t, samples.demb[idx]));
                want.push_back(detail::head_target(h, samples.target[idx]));
            }
            report[head_name(h)] = spearman(pred, want);
        }
    }
    set.set_report(std::move(report));
    return set;
}

inline std::string spearman_report_json(const std::map<std::string, double>& report) {
    nlohmann::json j;
    for (const auto& [k, v] : report) j[k] = v;
    return j.dump(2);
}

} // namespace mogen
