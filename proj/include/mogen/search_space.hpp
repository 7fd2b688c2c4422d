#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mogen/rng.hpp"
#include "mogen/tensor.hpp"

namespace mogen {

// Two architecture spaces share one interchange format: a binary operations
// matrix plus a fixed or derived adjacency. Everything downstream (diffusion,
// predictors, costs) consumes the matrix form; the structured form here is
// the canonical value type.

enum class Space { NB201, MBV3 };

inline std::string space_name(Space s) { return s == Space::NB201 ? "nb201" : "mbv3"; }

inline Space space_from_name(const std::string& s) {
    if (s == "nb201") return Space::NB201;
    if (s == "mbv3") return Space::MBV3;
    throw std::invalid_argument("unknown space: " + s);
}

// ---- NB201: 4-node cell, 6 edges, 5 candidate ops per edge ----

enum Nb201Op : int { kZeroise = 0, kSkip = 1, kConv1x1 = 2, kConv3x3 = 3, kAvgPool3x3 = 4 };

inline constexpr std::size_t kNb201Edges = 6;
inline constexpr std::size_t kNb201OpCount = 5;
inline constexpr std::size_t kNb201Rows = 8;   // input, 6 edges, output
inline constexpr std::size_t kNb201Cols = 7;   // input slot, 5 ops, output slot
inline constexpr std::size_t kNb201Count = 15625;  // 5^6

inline const char* nb201_op_name(int op) {
    static const char* names[] = {"zeroise", "skip", "conv1x1", "conv3x3", "avgpool3x3"};
    if (op < 0 || op >= static_cast<int>(kNb201OpCount)) throw std::invalid_argument("bad op id");
    return names[op];
}

// Edge order follows the node-pair order (0,1), (0,2), (1,2), (0,3), (1,3), (2,3).
inline constexpr std::array<std::pair<int, int>, kNb201Edges> kNb201EdgePairs = {
    {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

struct Nb201Cell {
    std::array<int, kNb201Edges> edge_ops{};  // each in [0, 5)
    bool operator==(const Nb201Cell&) const = default;
};

// ---- MBv3: 5 stages x 4 blocks, prefix-active, 3x3 op grid per block ----

inline constexpr std::size_t kMbv3Stages = 5;
inline constexpr std::size_t kMbv3BlocksPerStage = 4;
inline constexpr std::size_t kMbv3Blocks = 20;
inline constexpr std::size_t kMbv3Rows = 21;   // width flag row + 20 block rows
inline constexpr std::size_t kMbv3Cols = 9;    // expansion {3,4,6} x kernel {3,5,7}

inline constexpr std::array<int, 3> kMbv3Expansions = {3, 4, 6};
inline constexpr std::array<int, 3> kMbv3Kernels = {3, 5, 7};

struct Mbv3Net {
    double width_mult = 1.0;                        // 1.0 or 1.2
    std::array<int, kMbv3Stages> depth{};           // each in {2,3,4}
    std::array<int, kMbv3Blocks> expansion_idx{};   // 0..2; only active blocks meaningful
    std::array<int, kMbv3Blocks> kernel_idx{};      // 0..2
    bool block_active(std::size_t block) const {
        return static_cast<int>(block % kMbv3BlocksPerStage) <
               depth[block / kMbv3BlocksPerStage];
    }
    bool operator==(const Mbv3Net&) const = default;
};

struct Architecture {
    Space space = Space::NB201;
    Nb201Cell nb201{};
    Mbv3Net mbv3{};
    bool operator==(const Architecture& o) const {
        if (space != o.space) return false;
        return space == Space::NB201 ? nb201 == o.nb201 : mbv3 == o.mbv3;
    }
};

// Continuous relaxation of the ops matrix; adjacency is never diffused.
struct ContinuousArch {
    Space space = Space::NB201;
    Tensor values;  // same shape as the discrete ops matrix
};

inline std::size_t ops_rows(Space s) { return s == Space::NB201 ? kNb201Rows : kMbv3Rows; }
inline std::size_t ops_cols(Space s) { return s == Space::NB201 ? kNb201Cols : kMbv3Cols; }

// ---- matrix form ----

inline Tensor ops_matrix(const Architecture& a) {
    if (a.space == Space::NB201) {
        std::vector<double> m(kNb201Rows * kNb201Cols, 0.0);
        m[0 * kNb201Cols + 0] = 1.0;  // input placeholder
        for (std::size_t e = 0; e < kNb201Edges; ++e) {
            m[(e + 1) * kNb201Cols + 1 + static_cast<std::size_t>(a.nb201.edge_ops[e])] = 1.0;
        }
        m[7 * kNb201Cols + 6] = 1.0;  // output placeholder
        return Tensor({kNb201Rows, kNb201Cols}, std::move(m));
    }
    std::vector<double> m(kMbv3Rows * kMbv3Cols, 0.0);
    if (a.mbv3.width_mult == 1.2) {
        for (std::size_t c = 0; c < kMbv3Cols; ++c) m[c] = 1.0;
    }
    for (std::size_t b = 0; b < kMbv3Blocks; ++b) {
        if (!a.mbv3.block_active(b)) continue;
        const std::size_t col = static_cast<std::size_t>(a.mbv3.expansion_idx[b]) * 3 +
                                static_cast<std::size_t>(a.mbv3.kernel_idx[b]);
        m[(b + 1) * kMbv3Cols + col] = 1.0;
    }
    return Tensor({kMbv3Rows, kMbv3Cols}, std::move(m));
}

// Fixed NB201 token adjacency: token i feeds token j. Tokens are the matrix
// rows: input, the 6 edges in kNb201EdgePairs order, output. An edge token
// (u,v) is fed by whatever produces node u and feeds the consumers of node v.
inline const Tensor& nb201_adjacency() {
    static const Tensor adj = [] {
        std::vector<double> m(kNb201Rows * kNb201Rows, 0.0);
        auto producers_of_node = [](int node) {
            std::vector<std::size_t> rows;
            if (node == 0) rows.push_back(0);  // input token
            for (std::size_t e = 0; e < kNb201Edges; ++e)
                if (kNb201EdgePairs[e].second == node) rows.push_back(e + 1);
            return rows;
        };
        for (std::size_t e = 0; e < kNb201Edges; ++e) {
            for (std::size_t src : producers_of_node(kNb201EdgePairs[e].first)) {
                m[src * kNb201Rows + (e + 1)] = 1.0;
            }
        }
        for (std::size_t src : producers_of_node(3)) m[src * kNb201Rows + 7] = 1.0;
        return Tensor({kNb201Rows, kNb201Rows}, std::move(m));
    }();
    return adj;
}

// Chain over active blocks (20x20, block indices 0..19). The width row is a
// global flag, not a graph node, so it does not appear here.
inline Tensor mbv3_adjacency(const Mbv3Net& net) {
    std::vector<double> m(kMbv3Blocks * kMbv3Blocks, 0.0);
    int prev = -1;
    for (std::size_t b = 0; b < kMbv3Blocks; ++b) {
        if (!net.block_active(b)) continue;
        if (prev >= 0) m[static_cast<std::size_t>(prev) * kMbv3Blocks + b] = 1.0;
        prev = static_cast<int>(b);
    }
    return Tensor({kMbv3Blocks, kMbv3Blocks}, std::move(m));
}

// ---- validation ----

inline std::vector<std::string> validate_ops(Space space, const Tensor& ops) {
    if (ops.ndim() != 2 || ops.rows() != ops_rows(space) || ops.cols() != ops_cols(space)) {
        throw std::invalid_argument("validate: wrong ops shape " + ops.shape_str() + " for " +
                                    space_name(space));
    }
    std::vector<std::string> bad;
    auto is_binary = [&] {
        for (double v : ops.data())
            if (v != 0.0 && v != 1.0) return false;
        return true;
    };
    if (!is_binary()) {
        bad.push_back("matrix has entries outside {0,1}");
        return bad;
    }
    auto row_ones = [&](std::size_t r, std::size_t c0, std::size_t c1) {
        int n = 0;
        for (std::size_t c = c0; c < c1; ++c) n += ops.at(r, c) == 1.0 ? 1 : 0;
        return n;
    };
    if (space == Space::NB201) {
        if (ops.at(0, 0) != 1.0 || row_ones(0, 0, kNb201Cols) != 1)
            bad.push_back("input row is not one-hot on the input slot");
        for (std::size_t e = 0; e < kNb201Edges; ++e) {
            const std::size_t r = e + 1;
            if (row_ones(r, 1, 6) != 1 || ops.at(r, 0) != 0.0 || ops.at(r, 6) != 0.0)
                bad.push_back("edge row " + std::to_string(r) + " is not one-hot over the 5 ops");
        }
        if (ops.at(7, 6) != 1.0 || row_ones(7, 0, kNb201Cols) != 1)
            bad.push_back("output row is not one-hot on the output slot");
        return bad;
    }
    const int flag = row_ones(0, 0, kMbv3Cols);
    if (flag != 0 && flag != static_cast<int>(kMbv3Cols))
        bad.push_back("width row must be all-zeros (1.0) or all-ones (1.2)");
    for (std::size_t s = 0; s < kMbv3Stages; ++s) {
        int depth = 0;
        bool prefix = true;
        bool seen_inactive = false;
        for (std::size_t b = 0; b < kMbv3BlocksPerStage; ++b) {
            const std::size_t r = 1 + s * kMbv3BlocksPerStage + b;
            const int ones = row_ones(r, 0, kMbv3Cols);
            if (ones > 1) bad.push_back("block row " + std::to_string(r) + " is multi-hot");
            const bool active = ones >= 1;
            if (active) {
                if (seen_inactive) prefix = false;
                ++depth;
            } else {
                seen_inactive = true;
            }
        }
        if (!prefix) bad.push_back("stage " + std::to_string(s) + " active blocks are not a prefix");
        if (depth < 2 || depth > 4)
            bad.push_back("stage " + std::to_string(s) + " depth " + std::to_string(depth) +
                          " outside {2,3,4}");
    }
    return bad;
}

inline std::vector<std::string> validate(const Architecture& a) {
    return validate_ops(a.space, ops_matrix(a));
}

inline bool is_valid(const Architecture& a) { return validate(a).empty(); }

// ---- structured <- matrix ----

inline Architecture decode_ops(Space space, const Tensor& ops) {
    const auto bad = validate_ops(space, ops);
    if (!bad.empty()) throw std::invalid_argument("decode: invalid encoding: " + bad.front());
    Architecture a;
    a.space = space;
    if (space == Space::NB201) {
        for (std::size_t e = 0; e < kNb201Edges; ++e)
            for (std::size_t c = 0; c < kNb201OpCount; ++c)
                if (ops.at(e + 1, c + 1) == 1.0) a.nb201.edge_ops[e] = static_cast<int>(c);
        return a;
    }
    a.mbv3.width_mult = ops.at(0, 0) == 1.0 ? 1.2 : 1.0;
    for (std::size_t s = 0; s < kMbv3Stages; ++s) {
        int depth = 0;
        for (std::size_t b = 0; b < kMbv3BlocksPerStage; ++b) {
            const std::size_t block = s * kMbv3BlocksPerStage + b;
            bool active = false;
            for (std::size_t c = 0; c < kMbv3Cols; ++c) {
                if (ops.at(block + 1, c) == 1.0) {
                    a.mbv3.expansion_idx[block] = static_cast<int>(c / 3);
                    a.mbv3.kernel_idx[block] = static_cast<int>(c % 3);
                    active = true;
                }
            }
            if (active) ++depth;
        }
        a.mbv3.depth[s] = depth;
    }
    return a;
}

// ---- enumeration & sampling ----

inline Architecture nb201_from_index(std::size_t idx) {
    if (idx >= kNb201Count) throw std::out_of_range("nb201 index");
    Architecture a;
    a.space = Space::NB201;
    for (std::size_t e = 0; e < kNb201Edges; ++e) {
        a.nb201.edge_ops[e] = static_cast<int>(idx % kNb201OpCount);
        idx /= kNb201OpCount;
    }
    return a;
}

inline std::size_t nb201_to_index(const Architecture& a) {
    std::size_t idx = 0;
    for (std::size_t e = kNb201Edges; e-- > 0;)
        idx = idx * kNb201OpCount + static_cast<std::size_t>(a.nb201.edge_ops[e]);
    return idx;
}

// Biased sampling: with probability `bias` draw uniformly from the curated
// top set, otherwise uniformly over the whole space.
inline Architecture sample_nb201(Rng& rng, const std::vector<Architecture>& top_set, double bias) {
    if (bias < 0.0 || bias > 1.0) throw std::invalid_argument("sample_nb201: bias outside [0,1]");
    if (bias > 0.0 && top_set.empty())
        throw std::invalid_argument("sample_nb201: empty top_set with positive bias");
    if (bias > 0.0 && rng.bernoulli(bias)) return top_set[rng.uniform_index(top_set.size())];
    return nb201_from_index(rng.uniform_index(kNb201Count));
}

inline Architecture sample_mbv3(Rng& rng) {
    Architecture a;
    a.space = Space::MBV3;
    a.mbv3.width_mult = rng.bernoulli(0.5) ? 1.2 : 1.0;
    for (std::size_t s = 0; s < kMbv3Stages; ++s)
        a.mbv3.depth[s] = 2 + static_cast<int>(rng.uniform_index(3));
    for (std::size_t b = 0; b < kMbv3Blocks; ++b) {
        if (!a.mbv3.block_active(b)) continue;
        a.mbv3.expansion_idx[b] = static_cast<int>(rng.uniform_index(3));
        a.mbv3.kernel_idx[b] = static_cast<int>(rng.uniform_index(3));
    }
    return a;
}

// Exact cardinalities. Per MBv3 stage: sum over depth d of 9^d choices.
inline constexpr unsigned long long kMbv3PerStageChoices = 81ULL + 729ULL + 6561ULL;  // 7371

inline long double mbv3_cardinality() {
    long double v = 2.0L;
    for (std::size_t s = 0; s < kMbv3Stages; ++s) v *= static_cast<long double>(kMbv3PerStageChoices);
    return v;
}

// ---- continuous <-> discrete ----

inline ContinuousArch to_continuous(const Architecture& a) {
    return ContinuousArch{a.space, ops_matrix(a)};
}

namespace detail {

inline std::size_t argmax_range(const Tensor& x, std::size_t row, std::size_t c0, std::size_t c1) {
    std::size_t best = c0;
    for (std::size_t c = c0 + 1; c < c1; ++c)
        if (x.at(row, c) > x.at(row, best)) best = c;
    return best;
}

} // namespace detail

// Total projection onto the discrete space. NB201 is a per-row argmax. MBv3
// first decides block activity per stage — a row is inactive when its max
// entry falls below half the mean of its stage's row maxima — then repairs
// each stage to the legal depth needing the fewest activity flips (ties to
// the smaller depth), then argmaxes the surviving rows.
inline Architecture quantize(const ContinuousArch& x) {
    if (x.values.ndim() != 2 || x.values.rows() != ops_rows(x.space) ||
        x.values.cols() != ops_cols(x.space)) {
        throw std::invalid_argument("quantize: wrong shape " + x.values.shape_str());
    }
    Architecture a;
    a.space = x.space;
    if (x.space == Space::NB201) {
        for (std::size_t e = 0; e < kNb201Edges; ++e)
            a.nb201.edge_ops[e] =
                static_cast<int>(detail::argmax_range(x.values, e + 1, 1, 6) - 1);
        return a;
    }
    double width_row_mean = 0.0;
    for (std::size_t c = 0; c < kMbv3Cols; ++c) width_row_mean += x.values.at(0, c);
    width_row_mean /= static_cast<double>(kMbv3Cols);
    a.mbv3.width_mult = width_row_mean >= 0.5 ? 1.2 : 1.0;

    for (std::size_t s = 0; s < kMbv3Stages; ++s) {
        std::array<double, kMbv3BlocksPerStage> rowmax{};
        double mean_max = 0.0;
        for (std::size_t b = 0; b < kMbv3BlocksPerStage; ++b) {
            const std::size_t r = 1 + s * kMbv3BlocksPerStage + b;
            double m = x.values.at(r, 0);
            for (std::size_t c = 1; c < kMbv3Cols; ++c) m = std::max(m, x.values.at(r, c));
            rowmax[b] = m;
            mean_max += m;
        }
        mean_max /= static_cast<double>(kMbv3BlocksPerStage);
        std::array<bool, kMbv3BlocksPerStage> active{};
        for (std::size_t b = 0; b < kMbv3BlocksPerStage; ++b)
            active[b] = rowmax[b] >= 0.5 * mean_max;

        int best_depth = 2, best_flips = 1 << 20;
        for (int d = 2; d <= 4; ++d) {
            int flips = 0;
            for (std::size_t b = 0; b < kMbv3BlocksPerStage; ++b)
                flips += (active[b] != (static_cast<int>(b) < d)) ? 1 : 0;
            if (flips < best_flips) {
                best_flips = flips;
                best_depth = d;
            }
        }
        a.mbv3.depth[s] = best_depth;
        for (std::size_t b = 0; b < static_cast<std::size_t>(best_depth); ++b) {
            const std::size_t r = 1 + s * kMbv3BlocksPerStage + b;
            const std::size_t col = detail::argmax_range(x.values, r, 0, kMbv3Cols);
            const std::size_t block = s * kMbv3BlocksPerStage + b;
            a.mbv3.expansion_idx[block] = static_cast<int>(col / 3);
            a.mbv3.kernel_idx[block] = static_cast<int>(col % 3);
        }
    }
    return a;
}

// True iff entrywise rounding at 0.5 already yields a valid encoding.
inline bool strict_valid(const ContinuousArch& x) {
    if (x.values.ndim() != 2 || x.values.rows() != ops_rows(x.space) ||
        x.values.cols() != ops_cols(x.space)) {
        return false;
    }
    std::vector<double> r(x.values.data());
    for (double& v : r) v = v >= 0.5 ? 1.0 : 0.0;
    return validate_ops(x.space, Tensor(x.values.shape(), std::move(r))).empty();
}

// ---- hashing & serialization ----

inline std::string arch_hash(const Architecture& a) {
    const auto bad = validate(a);
    if (!bad.empty()) throw std::invalid_argument("arch_hash: invalid architecture: " + bad.front());
    std::string h = space_name(a.space) + ":";
    if (a.space == Space::NB201) {
        for (std::size_t e = 0; e < kNb201Edges; ++e)
            h += static_cast<char>('0' + a.nb201.edge_ops[e]);
        return h;
    }
    h += a.mbv3.width_mult == 1.2 ? "w12:" : "w10:";
    for (std::size_t s = 0; s < kMbv3Stages; ++s) h += static_cast<char>('0' + a.mbv3.depth[s]);
    h += ":";
    for (std::size_t b = 0; b < kMbv3Blocks; ++b) {
        if (!a.mbv3.block_active(b)) {
            h += "--";
        } else {
            h += static_cast<char>('0' + a.mbv3.expansion_idx[b]);
            h += static_cast<char>('0' + a.mbv3.kernel_idx[b]);
        }
    }
    return h;
}

inline nlohmann::json arch_to_json(const Architecture& a) {
    const Tensor m = ops_matrix(a);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < m.cols(); ++c)
            row.push_back(static_cast<int>(m.at(r, c)));
        rows.push_back(std::move(row));
    }
    nlohmann::json j{{"space", space_name(a.space)}, {"ops", std::move(rows)}};
    if (a.space == Space::MBV3) j["width_mult"] = a.mbv3.width_mult;
    return j;
}

inline Architecture arch_from_json(const nlohmann::json& j) {
    const Space space = space_from_name(j.at("space").get<std::string>());
    const auto& rows = j.at("ops");
    std::vector<double> m;
    for (const auto& row : rows)
        for (const auto& v : row) m.push_back(v.get<double>());
    Architecture a = decode_ops(space, Tensor({ops_rows(space), ops_cols(space)}, std::move(m)));
    if (a.space == Space::MBV3 && j.contains("width_mult")) {
        if (j.at("width_mult").get<double>() != a.mbv3.width_mult)
            throw std::invalid_argument("arch_from_json: width_mult disagrees with width row");
    }
    return a;
}

// Operation histogram over the 6 NB201 edges (used by the task oracle).
inline std::array<int, kNb201OpCount> nb201_op_histogram(const Architecture& a) {
    std::array<int, kNb201OpCount> h{};
    for (int op : a.nb201.edge_ops) ++h[static_cast<std::size_t>(op)];
    return h;
}

} // namespace mogen
