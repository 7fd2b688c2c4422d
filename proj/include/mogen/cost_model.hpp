#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mogen/rng.hpp"
#include "mogen/search_space.hpp"
#include "mogen/stats.hpp"

namespace mogen {

// Analytic parameter/MAC counting plus the trimmed-latency protocol over a
// deterministic surrogate. All per-layer formulas are tabulated in
// docs/cost_model.md, which is the single source of truth; the code mirrors
// that table line by line.

inline constexpr int kNumClasses = 20;
inline constexpr std::size_t kNb201InputHw = 32;
inline constexpr std::size_t kMbv3InputHw = 224;

struct CostReport {
    double params = 0.0;      // raw counts
    double macs = 0.0;
    double latency_ms = 0.0;
    double params_m() const { return params / 1e6; }
    double macs_m() const { return macs / 1e6; }
};

// ---- shared layer formulas (no conv bias anywhere; BN adds 2*C) ----

namespace layers {

inline double conv_params(double cin, double cout, double k, bool bn = true) {
    return cin * cout * k * k + (bn ? 2.0 * cout : 0.0);
}
inline double conv_macs(double cin, double cout, double k, double hw) {
    return cin * cout * k * k * hw * hw;
}
inline double dwconv_params(double c, double k, bool bn = true) {
    return c * k * k + (bn ? 2.0 * c : 0.0);
}
inline double dwconv_macs(double c, double k, double hw) { return c * k * k * hw * hw; }
inline double pool_macs(double c, double k, double hw) { return c * k * k * hw * hw; }

} // namespace layers

// ---- NB201 ----

inline double nb201_edge_params(int op, double c) {
    switch (op) {
    case kZeroise:
    case kSkip:
    case kAvgPool3x3: return 0.0;
    case kConv1x1: return layers::conv_params(c, c, 1);
    case kConv3x3: return layers::conv_params(c, c, 3);
    default: throw std::invalid_argument("nb201_edge_params: bad op");
    }
}

inline double nb201_edge_macs(int op, double c, double hw) {
    switch (op) {
    case kZeroise:
    case kSkip: return 0.0;
    case kAvgPool3x3: return layers::pool_macs(c, 3, hw);
    case kConv1x1: return layers::conv_macs(c, c, 1, hw);
    case kConv3x3: return layers::conv_macs(c, c, 3, hw);
    default: throw std::invalid_argument("nb201_edge_macs: bad op");
    }
}

namespace detail {

// residual reduction block: two 3x3 convs (stride 2 then 1) + 1x1 shortcut
inline double nb201_reduction_params(double cin, double cout) {
    return layers::conv_params(cin, cout, 3) + layers::conv_params(cout, cout, 3) +
           layers::conv_params(cin, cout, 1, /*bn=*/false);
}

inline double nb201_reduction_macs(double cin, double cout, double hw_out) {
    return layers::conv_macs(cin, cout, 3, hw_out) + layers::conv_macs(cout, cout, 3, hw_out) +
           layers::conv_macs(cin, cout, 1, hw_out) + layers::pool_macs(cin, 2, hw_out);
}

} // namespace detail

inline double count_params_nb201(const Architecture& a) {
    double total = layers::conv_params(3, 16, 3);  // stem
    for (int s = 0; s < 3; ++s) {
        const double c = 16.0 * std::pow(2.0, s);
        double cell = 0.0;
        for (int op : a.nb201.edge_ops) cell += nb201_edge_params(op, c);
        total += 5.0 * cell;
    }
    total += detail::nb201_reduction_params(16, 32) + detail::nb201_reduction_params(32, 64);
    total += 2.0 * 64.0;                      // final BN
    total += 64.0 * kNumClasses + kNumClasses;  // classifier (with bias)
    return total;
}

inline double count_macs_nb201(const Architecture& a, std::size_t input_hw) {
    const double h1 = static_cast<double>(input_hw);
    const double h2 = h1 / 2.0, h3 = h1 / 4.0;
    double total = layers::conv_macs(3, 16, 3, h1);  // stem
    const double hws[3] = {h1, h2, h3};
    for (int s = 0; s < 3; ++s) {
        const double c = 16.0 * std::pow(2.0, s);
        double cell = 0.0;
        for (int op : a.nb201.edge_ops) cell += nb201_edge_macs(op, c, hws[s]);
        total += 5.0 * cell;
    }
    total += detail::nb201_reduction_macs(16, 32, h2) + detail::nb201_reduction_macs(32, 64, h3);
    total += h3 * h3 * 64.0;         // global average pool
    total += 64.0 * kNumClasses;     // classifier
    return total;
}

// longest input->output path in the cell, counting compute edges (conv/pool);
// Zeroise breaks connectivity, Skip preserves it at zero depth
inline int nb201_cell_depth(const Nb201Cell& cell) {
    std::array<int, 4> best{0, -1, -1, -1};  // -1: unreachable
    for (std::size_t e = 0; e < kNb201Edges; ++e) {
        const auto [u, v] = kNb201EdgePairs[e];
        const int op = cell.edge_ops[e];
        if (op == kZeroise) continue;
        if (best[static_cast<std::size_t>(u)] < 0) continue;
        const int gain = op == kSkip ? 0 : 1;
        best[static_cast<std::size_t>(v)] =
            std::max(best[static_cast<std::size_t>(v)], best[static_cast<std::size_t>(u)] + gain);
    }
    return std::max(best[3], 0);
}

// ---- MBv3 ----

inline int make_divisible(double v, int divisor = 8) {
    int nv = std::max(divisor, (static_cast<int>(v) + divisor / 2) / divisor * divisor);
    if (static_cast<double>(nv) < 0.9 * v) nv += divisor;
    return nv;
}

struct Mbv3Widths {
    int stem, first;
    std::array<int, kMbv3Stages> stage;
    int final_expand, feature;
};

inline const Mbv3Widths& mbv3_widths(double width_mult) {
    static const Mbv3Widths w10{16, 16, {24, 40, 80, 112, 160}, 960, 1280};
    static const Mbv3Widths w12{24, 24, {32, 48, 96, 136, 192}, 1152, 1536};
    if (width_mult == 1.0) return w10;
    if (width_mult == 1.2) return w12;
    throw std::invalid_argument("mbv3_widths: width_mult must be 1.0 or 1.2");
}

inline constexpr std::array<int, kMbv3Stages> kMbv3StageStride = {2, 2, 2, 1, 2};
inline constexpr std::array<bool, kMbv3Stages> kMbv3StageSe = {false, true, false, true, true};

namespace detail {

struct BlockCost {
    double params = 0.0;
    double macs = 0.0;
};

inline BlockCost mbv3_block_cost(double cin, double cout, int expansion, int kernel, bool se,
                                 double hw_in, double hw_out) {
    const double cmid = make_divisible(cin * expansion);
    BlockCost r;
    r.params += layers::conv_params(cin, cmid, 1);          // expand
    r.macs += layers::conv_macs(cin, cmid, 1, hw_in);
    r.params += layers::dwconv_params(cmid, kernel);        // depthwise (stride here)
    r.macs += layers::dwconv_macs(cmid, kernel, hw_out);
    if (se) {
        const double red = make_divisible(cmid / 4.0);
        r.params += cmid * red + red + red * cmid + cmid;   // two 1x1 convs with bias
        r.macs += cmid * hw_out * hw_out + cmid * red + red * cmid;  // pool + convs
    }
    r.params += layers::conv_params(cmid, cout, 1);         // project
    r.macs += layers::conv_macs(cmid, cout, 1, hw_out);
    return r;
}

} // namespace detail

inline double count_params_mbv3(const Architecture& a) {
    const Mbv3Widths& w = mbv3_widths(a.mbv3.width_mult);
    double total = layers::conv_params(3, w.stem, 3);  // stem
    // fixed lead block: depthwise 3x3 + project, no expansion
    total += layers::dwconv_params(w.stem, 3) + layers::conv_params(w.stem, w.first, 1);
    int cin = w.first;
    for (std::size_t s = 0; s < kMbv3Stages; ++s) {
        const int cout = w.stage[s];
        for (int b = 0; b < a.mbv3.depth[s]; ++b) {
            const std::size_t block = s * kMbv3BlocksPerStage + static_cast<std::size_t>(b);
            const auto cost = detail::mbv3_block_cost(
                b == 0 ? cin : cout, cout, kMbv3Expansions[static_cast<std::size_t>(
                                         a.mbv3.expansion_idx[block])],
                kMbv3Kernels[static_cast<std::size_t>(a.mbv3.kernel_idx[block])],
                kMbv3StageSe[s], 1.0, 1.0);
            total += cost.params;
        }
        cin = cout;
    }
    total += layers::conv_params(cin, w.final_expand, 1);
    total += static_cast<double>(w.final_expand) * w.feature + w.feature;  // feature mix, bias
    total += static_cast<double>(w.feature) * kNumClasses + kNumClasses;   // classifier
    return total;
}

inline double count_macs_mbv3(const Architecture& a, std::size_t input_hw) {
    const Mbv3Widths& w = mbv3_widths(a.mbv3.width_mult);
    double hw = static_cast<double>(input_hw) / 2.0;  // stem stride 2
    double total = layers::conv_macs(3, w.stem, 3, hw);
    total += layers::dwconv_macs(w.stem, 3, hw) + layers::conv_macs(w.stem, w.first, 1, hw);
    int cin = w.first;
    for (std::size_t s = 0; s < kMbv3Stages; ++s) {
        const int cout = w.stage[s];
        const double hw_out = hw / kMbv3StageStride[s];
        for (int b = 0; b < a.mbv3.depth[s]; ++b) {
            const std::size_t block = s * kMbv3BlocksPerStage + static_cast<std::size_t>(b);
            const auto cost = detail::mbv3_block_cost(
                b == 0 ? cin : cout, cout, kMbv3Expansions[static_cast<std::size_t>(
                                         a.mbv3.expansion_idx[block])],
                kMbv3Kernels[static_cast<std::size_t>(a.mbv3.kernel_idx[block])],
                kMbv3StageSe[s], b == 0 ? hw : hw_out, hw_out);
            total += cost.macs;
        }
        cin = cout;
        hw = hw_out;
    }
    total += layers::conv_macs(cin, w.final_expand, 1, hw);
    total += static_cast<double>(w.final_expand) * hw * hw;           // global average pool
    total += static_cast<double>(w.final_expand) * w.feature;          // feature mix
    total += static_cast<double>(w.feature) * kNumClasses;             // classifier
    return total;
}

// ---- unified entry points ----

inline double count_params(const Architecture& a) {
    return a.space == Space::NB201 ? count_params_nb201(a) : count_params_mbv3(a);
}

inline std::size_t default_input_hw(Space s) {
    return s == Space::NB201 ? kNb201InputHw : kMbv3InputHw;
}

inline double count_macs(const Architecture& a, std::size_t input_hw) {
    return a.space == Space::NB201 ? count_macs_nb201(a, input_hw)
                                   : count_macs_mbv3(a, input_hw);
}

inline double count_macs(const Architecture& a) {
    return count_macs(a, default_input_hw(a.space));
}

inline int active_depth(const Architecture& a) {
    if (a.space == Space::NB201) return 4 + 15 * nb201_cell_depth(a.nb201);
    int d = 4;
    for (int s : a.mbv3.depth) d += s;
    return d;
}

// ---- latency surrogate + trimmed-measurement protocol ----

struct LatencyProtocol {
    int repetitions = 100;
    double ci_level = 0.90;
    std::uint64_t noise_seed = 0;
};

struct LatencyModel {
    double alpha = 0.012;      // ms per M-MAC
    double beta = 0.004;       // ms per M-param
    double gamma = 0.05;       // ms per active-depth unit
    double intercept = 0.5;    // ms
    double noise_sigma = 0.05; // lognormal scale; 0 disables noise
};

inline double latency_base_ms(const Architecture& a, const LatencyModel& lm = {}) {
    return lm.intercept + lm.alpha * count_macs(a) / 1e6 + lm.beta * count_params(a) / 1e6 +
           lm.gamma * static_cast<double>(active_depth(a));
}

// Discard samples outside the normal-theory ci_level interval around the
// sample mean, then average the survivors.
inline double trimmed_mean(const std::vector<double>& samples, double ci_level) {
    if (samples.size() < 2) throw std::invalid_argument("trimmed_mean: need at least 2 samples");
    if (!(ci_level > 0.0 && ci_level < 1.0))
        throw std::invalid_argument("trimmed_mean: ci_level outside (0,1)");
    const double m = mean_of(samples);
    const double s = sample_std(samples);
    const double z = normal_quantile(0.5 + ci_level / 2.0);
    double sum = 0.0;
    int kept = 0;
    for (double x : samples) {
        if (std::abs(x - m) <= z * s) {
            sum += x;
            ++kept;
        }
    }
    if (kept == 0) throw std::logic_error("trimmed_mean: all samples discarded");
    return sum / kept;
}

inline double measure_latency(const Architecture& a, const LatencyProtocol& proto,
                              const LatencyModel& lm = {}) {
    if (proto.repetitions < 2) throw std::invalid_argument("latency: repetitions must be >= 2");
    if (!(proto.ci_level > 0.0 && proto.ci_level < 1.0))
        throw std::invalid_argument("latency: ci_level outside (0,1)");
    const double base = latency_base_ms(a, lm);
    if (lm.noise_sigma == 0.0) return base;
    Rng rng = Rng(proto.noise_seed).fork(hash64(arch_hash(a)));
    std::vector<double> samples(static_cast<std::size_t>(proto.repetitions));
    for (double& x : samples) x = base * std::exp(lm.noise_sigma * rng.normal());
    return trimmed_mean(samples, proto.ci_level);
}

inline CostReport cost_report(const Architecture& a, const LatencyProtocol& proto,
                              const LatencyModel& lm = {}) {
    return CostReport{count_params(a), count_macs(a), measure_latency(a, proto, lm)};
}

// empirical-CDF position of a value within a metric population
inline double normalize_metric(double value, std::vector<double> population) {
    if (population.empty()) throw std::invalid_argument("normalize_metric: empty population");
    std::sort(population.begin(), population.end());
    return rank_normalize(value, population);
}

} // namespace mogen
