#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogen/checkpoint.hpp"
#include "mogen/meta_dataset.hpp"
#include "mogen/optim.hpp"
#include "mogen/rng.hpp"
#include "mogen/search_space.hpp"
#include "mogen/tape.hpp"
#include "mogen/tensor.hpp"

namespace mogen {

// Variance-exploding SDE: zero drift, diffusion g(t), marginal noise std
// sigma(t) growing geometrically from sigma_min to sigma_max over [0, T].
struct SdeSchedule {
    double sigma_min = 0.1;
    double sigma_max = 5.0;
    double T = 1.0;
    int steps = 200;

    void check() const {
        if (!(0.0 < sigma_min && sigma_min < sigma_max))
            throw std::invalid_argument("sde: need 0 < sigma_min < sigma_max");
        if (steps < 1) throw std::invalid_argument("sde: steps must be >= 1");
    }
    double log_ratio() const { return std::log(sigma_max / sigma_min); }
    double sigma(double t) const { return sigma_min * std::exp(log_ratio() * t); }
    double g(double t) const { return sigma(t) * std::sqrt(2.0 * log_ratio()); }
    double dt() const { return T / static_cast<double>(steps); }
};

// ---- token trunk shared by the score network and the predictors ----

struct TrunkConfig {
    std::size_t tokens = 8;     // ops-matrix rows
    std::size_t in_cols = 7;    // ops-matrix cols
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t blocks = 3;
    std::size_t time_dim = 64;  // sinusoidal feature count
    std::size_t head_dim() const {
        if (d_model % heads != 0) throw std::invalid_argument("trunk: d_model % heads != 0");
        return d_model / heads;
    }
    static TrunkConfig for_space(Space s, std::size_t blocks_ = 3) {
        TrunkConfig c;
        c.tokens = ops_rows(s);
        c.in_cols = ops_cols(s);
        c.blocks = blocks_;
        return c;
    }
};

// Additive attention mask: 0 where token i may attend to token j (itself or
// a topological ancestor), -1e9 elsewhere. NB201 uses the transitive closure
// of the fixed token DAG; MBv3's width-flag-plus-chain is plain causal.
inline Tensor dag_attention_mask(Space space) {
    const std::size_t n = ops_rows(space);
    std::vector<double> m(n * n, -1e9);
    if (space == Space::MBV3) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 0.0;
        return Tensor({n, n}, std::move(m));
    }
    const Tensor& adj = nb201_adjacency();
    // reachability closure
    std::vector<int> reach(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) reach[i * n + i] = 1;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (adj.at(i, j) == 1.0) reach[i * n + j] = 1;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (reach[i * n + k] && reach[k * n + j]) reach[i * n + j] = 1;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (reach[j * n + i]) m[i * n + j] = 0.0;  // j is an ancestor of i (or i itself)
    return Tensor({n, n}, std::move(m));
}

// Sinusoidal features of diffusion time, host-side (t carries no gradient).
inline Tensor time_features(double t, std::size_t time_dim) {
    const std::size_t half = time_dim / 2;
    std::vector<double> f(time_dim, 0.0);
    const double pos = t * 1000.0;
    for (std::size_t k = 0; k < half; ++k) {
        const double w = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                  static_cast<double>(half > 1 ? half - 1 : 1));
        f[2 * k] = std::sin(pos * w);
        f[2 * k + 1] = std::cos(pos * w);
    }
    return Tensor({1, time_dim}, std::move(f));
}

using BoundParams = std::map<std::string, Var>;

namespace trunk {

inline Tensor glorot(Rng& rng, std::size_t rows, std::size_t cols) {
    const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::vector<double> w(rows * cols);
    for (double& v : w) v = rng.uniform(-lim, lim);
    return Tensor({rows, cols}, std::move(w));
}

// Creation order is fixed, so a given seed always yields the same weights.
inline void init_params(TensorMap& p, const std::string& prefix, const TrunkConfig& cfg,
                        Rng& rng) {
    const std::size_t d = cfg.d_model;
    p.emplace(prefix + "emb/ops", glorot(rng, cfg.in_cols, d));
    p.emplace(prefix + "emb/pos", glorot(rng, cfg.tokens, d));
    p.emplace(prefix + "emb/time_w", glorot(rng, cfg.time_dim, d));
    p.emplace(prefix + "emb/time_b", Tensor::zeros({1, d}));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string bp = prefix + "blocks/" + std::to_string(b) + "/";
        p.emplace(bp + "ln1/g", Tensor::full({1, d}, 1.0));
        p.emplace(bp + "ln1/b", Tensor::zeros({1, d}));
        p.emplace(bp + "attn/wq", glorot(rng, d, d));
        p.emplace(bp + "attn/wk", glorot(rng, d, d));
        p.emplace(bp + "attn/wv", glorot(rng, d, d));
        p.emplace(bp + "attn/wo", glorot(rng, d, d));
        p.emplace(bp + "ln2/g", Tensor::full({1, d}, 1.0));
        p.emplace(bp + "ln2/b", Tensor::zeros({1, d}));
        p.emplace(bp + "mlp/w1", glorot(rng, d, 4 * d));
        p.emplace(bp + "mlp/b1", Tensor::zeros({1, 4 * d}));
        p.emplace(bp + "mlp/w2", glorot(rng, 4 * d, d));
        p.emplace(bp + "mlp/b2", Tensor::zeros({1, d}));
    }
}

inline BoundParams bind(Tape& tape, const TensorMap& params, bool trainable) {
    BoundParams b;
    for (const auto& [name, t] : params) {
        b.emplace(name, trainable ? tape.param(t) : tape.constant(t));
    }
    return b;
}

inline Var at(const BoundParams& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw std::logic_error("trunk: missing parameter " + name);
    return it->second;
}

// tokens = x * Emb_ops + Emb_pos + time_map(t), one token per ops-matrix row
inline Var embed_tokens(Tape& tape, const BoundParams& p, const std::string& prefix,
                        const TrunkConfig& cfg, Var x, double t, double t_max) {
    if (!(t >= 0.0 && t <= t_max))
        throw std::invalid_argument("embed_tokens: t outside [0, T]");
    Var tf = tape.constant(time_features(t, cfg.time_dim));
    Var time_row = add(matmul(tf, at(p, prefix + "emb/time_w")), at(p, prefix + "emb/time_b"));
    Var tok = add(matmul(x, at(p, prefix + "emb/ops")), at(p, prefix + "emb/pos"));
    return add_rowwise(tok, time_row);
}

inline Var attention(Tape& tape, const BoundParams& p, const std::string& bp,
                     const TrunkConfig& cfg, Var h, Var mask) {
    Var q = matmul(h, at(p, bp + "attn/wq"));
    Var k = matmul(h, at(p, bp + "attn/wk"));
    Var v = matmul(h, at(p, bp + "attn/wv"));
    const std::size_t dh = cfg.head_dim();
    std::vector<Var> heads;
    for (std::size_t i = 0; i < cfg.heads; ++i) {
        Var qh = slice_cols(q, i * dh, (i + 1) * dh);
        Var kh = slice_cols(k, i * dh, (i + 1) * dh);
        Var vh = slice_cols(v, i * dh, (i + 1) * dh);
        heads.push_back(masked_attention(qh, kh, vh, mask));
    }
    return matmul(tape.concat_cols(heads), at(p, bp + "attn/wo"));
}

// pre-LN transformer stack; returns tokens x d_model hidden states
inline Var forward(Tape& tape, const BoundParams& p, const std::string& prefix,
                   const TrunkConfig& cfg, Var tokens, Var mask) {
    Var h = tokens;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string bp = prefix + "blocks/" + std::to_string(b) + "/";
        Var hn = layer_norm(h, at(p, bp + "ln1/g"), at(p, bp + "ln1/b"));
        h = add(h, attention(tape, p, bp, cfg, hn, mask));
        Var hm = layer_norm(h, at(p, bp + "ln2/g"), at(p, bp + "ln2/b"));
        Var m1 = relu(add_rowwise(matmul(hm, at(p, bp + "mlp/w1")), at(p, bp + "mlp/b1")));
        h = add(h, add_rowwise(matmul(m1, at(p, bp + "mlp/w2")), at(p, bp + "mlp/b2")));
    }
    return h;
}

} // namespace trunk

// ---- forward diffusion ----

struct Perturbed {
    Tensor x_t;         // one-hot(a) + sigma(t) * eps
    Tensor true_score;  // -(x_t - one-hot(a)) / sigma(t)^2
    double sigma = 0.0;
};

inline Perturbed perturb(const Architecture& a, double t, Rng& rng, const SdeSchedule& sde) {
    if (!(t > 0.0)) throw std::invalid_argument("perturb: score undefined at t = 0");
    if (t > sde.T) throw std::invalid_argument("perturb: t beyond terminal time");
    const Tensor x0 = ops_matrix(a);
    const double sigma = sde.sigma(t);
    std::vector<double> xt(x0.data());
    std::vector<double> score(x0.numel());
    for (std::size_t i = 0; i < xt.size(); ++i) {
        const double eps = rng.normal();
        xt[i] += sigma * eps;
        score[i] = -eps / sigma;
    }
    return Perturbed{Tensor(x0.shape(), std::move(xt)), Tensor(x0.shape(), std::move(score)),
                     sigma};
}

// one batch term of the DSM objective: sigma^2 * ||s - true_score||^2
inline double dsm_term(const Tensor& s, const Tensor& true_score, double sigma) {
    if (!s.same_shape(true_score)) throw std::invalid_argument("dsm_term: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < s.numel(); ++i) {
        const double d = s.data()[i] - true_score.data()[i];
        acc += d * d;
    }
    return sigma * sigma * acc;
}

// ---- the score network ----

struct ScoreTrainConfig {
    std::size_t steps = 1500;
    std::size_t batch = 64;
    double lr = 1e-3;
    double lr_min = 1e-5;
    double t_min = 1e-3;  // log-uniform time sampling floor
    std::uint64_t seed = 0;
};

class ScoreNet {
public:
    ScoreNet(Space space, SdeSchedule sde, std::uint64_t init_seed,
             TrunkConfig cfg = TrunkConfig{})
        : space_(space), sde_(sde), cfg_(TrunkConfig::for_space(space, cfg.blocks)),
          mask_(dag_attention_mask(space)) {
        sde_.check();
        cfg_.d_model = cfg.d_model;
        cfg_.heads = cfg.heads;
        cfg_.time_dim = cfg.time_dim;
        Rng rng = Rng(init_seed).fork(0x5C03EULL);
        trunk::init_params(params_, "", cfg_, rng);
        const std::size_t d = cfg_.d_model;
        params_.emplace("head/ln/g", Tensor::full({1, d}, 1.0));
        params_.emplace("head/ln/b", Tensor::zeros({1, d}));
        params_.emplace("head/w", trunk::glorot(rng, d, cfg_.in_cols));
        params_.emplace("head/b", Tensor::zeros({1, cfg_.in_cols}));
    }

    Space space() const { return space_; }
    const SdeSchedule& sde() const { return sde_; }
    const TrunkConfig& config() const { return cfg_; }
    const TensorMap& params() const { return params_; }
    TensorMap& mutable_params() { return params_; }
    const std::vector<double>& loss_trace() const { return loss_trace_; }

    // s_theta on an existing tape; the trunk output estimates -eps, so the
    // score is trunk_out / sigma(t)
    Var forward_tape(Tape& tape, const BoundParams& p, Var x, double t) const {
        Var tok = trunk::embed_tokens(tape, p, "", cfg_, x, t, sde_.T);
        Var mask = tape.constant(mask_);
        Var h = trunk::forward(tape, p, "", cfg_, tok, mask);
        Var hn = layer_norm(h, trunk::at(p, "head/ln/g"), trunk::at(p, "head/ln/b"));
        Var out = add_rowwise(matmul(hn, trunk::at(p, "head/w")), trunk::at(p, "head/b"));
        return scale(out, 1.0 / sde_.sigma(t));
    }

    Tensor score(const ContinuousArch& x, double t) const {
        if (x.space != space_) throw std::invalid_argument("score: wrong space");
        Tape tape;
        const BoundParams p = trunk::bind(tape, params_, /*trainable=*/false);
        Var xv = tape.constant(x.values);
        // values pass through Tensor construction at every op, so any
        // non-finite intermediate throws rather than propagating
        return tape.value(forward_tape(tape, p, xv, t));
    }

    // exposed for tests: the embedding stage on a scratch tape
    Tensor embed_tokens_value(const ContinuousArch& x, double t) const {
        Tape tape;
        const BoundParams p = trunk::bind(tape, params_, false);
        Var xv = tape.constant(x.values);
        return tape.value(trunk::embed_tokens(tape, p, "", cfg_, xv, t, sde_.T));
    }

    void save(const std::string& path) const {
        TensorMap out = params_;
        put_meta(out, "space", space_ == Space::NB201 ? 0.0 : 1.0);
        put_meta(out, "sde.sigma_min", sde_.sigma_min);
        put_meta(out, "sde.sigma_max", sde_.sigma_max);
        put_meta(out, "sde.T", sde_.T);
        put_meta(out, "sde.steps", static_cast<double>(sde_.steps));
        put_meta(out, "model.d_model", static_cast<double>(cfg_.d_model));
        put_meta(out, "model.heads", static_cast<double>(cfg_.heads));
        put_meta(out, "model.blocks", static_cast<double>(cfg_.blocks));
        put_meta(out, "model.time_dim", static_cast<double>(cfg_.time_dim));
        save_checkpoint(path, out);
    }

    static ScoreNet load(const std::string& path) {
        TensorMap in = load_checkpoint(path);
        const Space space = get_meta(in, "space") == 0.0 ? Space::NB201 : Space::MBV3;
        SdeSchedule sde;
        sde.sigma_min = get_meta(in, "sde.sigma_min");
        sde.sigma_max = get_meta(in, "sde.sigma_max");
        sde.T = get_meta(in, "sde.T");
        sde.steps = static_cast<int>(get_meta(in, "sde.steps"));
        TrunkConfig cfg;
        cfg.d_model = static_cast<std::size_t>(get_meta(in, "model.d_model"));
        cfg.heads = static_cast<std::size_t>(get_meta(in, "model.heads"));
        cfg.blocks = static_cast<std::size_t>(get_meta(in, "model.blocks"));
        cfg.time_dim = static_cast<std::size_t>(get_meta(in, "model.time_dim"));
        ScoreNet net(space, sde, 0, cfg);
        for (auto& [name, t] : in) {
            if (name.rfind("meta/", 0) == 0) continue;
            auto it = net.params_.find(name);
            if (it == net.params_.end())
                throw std::runtime_error("score load: unexpected tensor " + name);
            if (!it->second.same_shape(t))
                throw std::runtime_error("score load: shape mismatch for " + name);
            it->second = std::move(t);
        }
        return net;
    }

    void append_loss(double v) { loss_trace_.push_back(v); }

private:
    Space space_;
    SdeSchedule sde_;
    TrunkConfig cfg_;
    Tensor mask_;
    TensorMap params_;
    std::vector<double> loss_trace_;
};

// Monte-Carlo DSM loss of the current network over a batch (evaluation only).
inline double dsm_loss(const ScoreNet& net, const std::vector<Architecture>& batch,
                       const std::vector<double>& ts, Rng& rng) {
    if (batch.empty() || batch.size() != ts.size())
        throw std::invalid_argument("dsm_loss: empty or mismatched batch");
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Perturbed pb = perturb(batch[i], ts[i], rng, net.sde());
        const Tensor s = net.score({net.space(), pb.x_t}, ts[i]);
        total += dsm_term(s, pb.true_score, pb.sigma);
    }
    return total / static_cast<double>(batch.size());
}

// Denoising-score-matching training. One tape evaluates the whole batch so
// parameters are bound once per step; gradients flow into a single AdamW
// (zero weight decay = plain Adam) with a cosine-annealed rate.
inline ScoreNet train_score(const std::vector<Architecture>& archs, Space space,
                            const SdeSchedule& sde, const ScoreTrainConfig& cfg) {
    if (archs.empty()) throw std::invalid_argument("train_score: empty training set");
    ScoreNet net(space, sde, cfg.seed);
    AdamW opt({.lr = cfg.lr});
    const Rng base(splitmix64(cfg.seed ^ 0x7241175C02EULL));
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Rng rs = base.fork(step);
        Tape tape;
        const BoundParams p = trunk::bind(tape, net.params(), /*trainable=*/true);
        Var loss{};
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const Architecture& a = archs[rs.uniform_index(archs.size())];
            const double t = rs.log_uniform(cfg.t_min, sde.T);
            const Perturbed pb = perturb(a, t, rs, sde);
            Var s = net.forward_tape(tape, p, tape.constant(pb.x_t), t);
            Var diff = sub(s, tape.constant(pb.true_score));
            Var term = scale(sum_all(mul(diff, diff)), pb.sigma * pb.sigma);
            loss = b == 0 ? term : add(loss, term);
        }
        loss = scale(loss, 1.0 / static_cast<double>(cfg.batch));
        const double loss_v = tape.value(loss).scalar_value();
        if (!std::isfinite(loss_v))
            throw std::runtime_error("train_score: divergence (non-finite loss) at step " +
                                     std::to_string(step));
        net.append_loss(loss_v);
        tape.backward(loss);
        TensorMap grads;
        for (const auto& [name, v] : p) grads.emplace(name, tape.grad(v));
        opt.step(net.mutable_params(), grads, cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min));
    }
    return net;
}

inline ScoreNet train_score_from_meta(const MetaDataset& meta, const SdeSchedule& sde,
                                      const ScoreTrainConfig& cfg) {
    std::vector<Architecture> archs;
    archs.reserve(meta.records.size());
    for (const MetaRecord& r : meta.records) archs.push_back(r.arch);
    return train_score(archs, meta.space, sde, cfg);
}

} // namespace mogen
