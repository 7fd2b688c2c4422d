#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mogen/cost_model.hpp"
#include "mogen/rng.hpp"
#include "mogen/search_space.hpp"
#include "mogen/stats.hpp"
#include "mogen/tensor.hpp"

namespace mogen {

// Synthetic classification tasks and a hidden accuracy oracle. The oracle
// plays the role of "train the architecture on the task and measure test
// accuracy" at desk scale: deterministic, cheap, and learnable from the
// features a conditioned predictor can observe.

inline constexpr std::size_t kTaskClasses = 20;
inline constexpr std::size_t kTaskDim = 32;

struct TaskDescriptor {
    std::uint64_t task_id = 0;
    Tensor prototypes;          // kTaskClasses x d_task, unit-norm rows
    double difficulty = 0.5;    // in [0.2, 0.9]
};

namespace detail {

// Fixed unit direction coupling the difficulty latent into the prototypes,
// so that an encoder seeing only the prototype matrix can recover task
// difficulty. Shared by every task; independent of all user seeds.
inline std::vector<double> difficulty_direction(std::size_t d_task) {
    Rng r(0xD1FF1C5EULL);
    std::vector<double> dir(d_task);
    double norm = 0.0;
    for (double& v : dir) {
        v = r.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : dir) v /= norm;
    return dir;
}

} // namespace detail

inline TaskDescriptor sample_task(Rng& rng, std::size_t d_task = kTaskDim) {
    TaskDescriptor t;
    t.task_id = rng.next_u64();
    const double u = rng.uniform();
    t.difficulty = 0.2 + 0.7 * u;
    const auto& dir = detail::difficulty_direction(d_task);
    const double shift = 2.0 * (2.0 * u - 1.0);  // strength of the difficulty imprint
    std::vector<double> rows(kTaskClasses * d_task);
    for (std::size_t c = 0; c < kTaskClasses; ++c) {
        double norm = 0.0;
        for (std::size_t k = 0; k < d_task; ++k) {
            const double v = rng.normal() + shift * dir[k];
            rows[c * d_task + k] = v;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < d_task; ++k) rows[c * d_task + k] /= norm;
    }
    t.prototypes = Tensor({kTaskClasses, d_task}, std::move(rows));
    return t;
}

inline TaskDescriptor task_from_seed(std::uint64_t seed, std::size_t d_task = kTaskDim) {
    Rng rng(seed);
    TaskDescriptor t = sample_task(rng, d_task);
    t.task_id = seed;
    return t;
}

// Canonical prototype matrix: rows sorted by first coordinate, so any row
// permutation of the same prototype set encodes identically.
inline Tensor task_matrix(const TaskDescriptor& t) {
    const std::size_t n = t.prototypes.rows(), d = t.prototypes.cols();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return t.prototypes.at(a, 0) < t.prototypes.at(b, 0);
    });
    std::vector<double> rows(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) rows[i * d + k] = t.prototypes.at(order[i], k);
    return Tensor({n, d}, std::move(rows));
}

// Architecture features visible to the oracle: a 9-slot operation mix, a
// saturating capacity term, a MAC budget term, and a normalized depth.
struct ArchFeatures {
    std::array<double, 9> op_mix{};
    double capacity = 0.0;   // tanh of centered log10 params (diminishing returns)
    double mac_level = 0.0;  // tanh of centered log10 MACs
    double depth_norm = 0.0; // [0,1]
};

inline ArchFeatures arch_features(const Architecture& a) {
    ArchFeatures f;
    if (a.space == Space::NB201) {
        const auto hist = nb201_op_histogram(a);
        for (std::size_t i = 0; i < kNb201OpCount; ++i)
            f.op_mix[i] = static_cast<double>(hist[i]) / static_cast<double>(kNb201Edges);
        f.depth_norm = static_cast<double>(nb201_cell_depth(a.nb201)) / 3.0;
    } else {
        int active = 0;
        for (std::size_t b = 0; b < kMbv3Blocks; ++b) {
            if (!a.mbv3.block_active(b)) continue;
            ++active;
            const std::size_t slot = static_cast<std::size_t>(a.mbv3.expansion_idx[b]) * 3 +
                                     static_cast<std::size_t>(a.mbv3.kernel_idx[b]);
            f.op_mix[slot] += 1.0;
        }
        for (double& v : f.op_mix) v /= static_cast<double>(active);
        int total_depth = 0;
        for (int d : a.mbv3.depth) total_depth += d;
        f.depth_norm = (static_cast<double>(total_depth) - 10.0) / 10.0;
    }
    f.capacity = std::tanh((std::log10(count_params(a)) - 5.2) / 0.8);
    f.mac_level = std::tanh((std::log10(count_macs(a)) - 8.0) / 1.0);
    return f;
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Hidden accuracy function. Fixed once constructed; downstream models only
// ever see it through MetaRecords.
class TaskOracle {
public:
    explicit TaskOracle(std::uint64_t seed, std::size_t d_task = kTaskDim)
        : seed_(seed), d_task_(d_task) {
        Rng rng(splitmix64(seed ^ 0x0A0C1EULL));
        std::vector<double> b(9 * d_task);
        for (double& v : b) v = 0.3 * rng.normal();
        pref_ = Tensor({9, d_task}, std::move(b));
    }

    std::uint64_t seed() const { return seed_; }
    std::size_t d_task() const { return d_task_; }

    double accuracy(const Architecture& a, const TaskDescriptor& t) const {
        const ArchFeatures f = arch_features(a);
        // mean prototype, the task lever an encoder can observe
        std::vector<double> m(d_task_, 0.0);
        for (std::size_t c = 0; c < t.prototypes.rows(); ++c)
            for (std::size_t k = 0; k < d_task_; ++k) m[k] += t.prototypes.at(c, k);
        for (double& v : m) v /= static_cast<double>(t.prototypes.rows());
        // task-dependent operation preference: op_mix' * B * mean_prototype
        double pref = 0.0;
        for (std::size_t i = 0; i < 9; ++i) {
            double bi = 0.0;
            for (std::size_t k = 0; k < d_task_; ++k) bi += pref_.at(i, k) * m[k];
            pref += f.op_mix[i] * bi;
        }
        const double score = 1.2 * f.capacity + 0.4 * f.mac_level + 0.5 * f.depth_norm +
                             0.8 * pref + 0.3;
        // harder tasks flatten the response, lowering the achievable ceiling
        const double slope = 3.0 * (1.1 - t.difficulty);
        return stable_sigmoid(slope * (score - 0.25));
    }

private:
    std::uint64_t seed_;
    std::size_t d_task_;
    Tensor pref_;  // 9 x d_task
};

} // namespace mogen
