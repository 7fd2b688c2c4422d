#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mogen/tape.hpp"
#include "mogen/tensor.hpp"

namespace mogen {

// Central-difference check of tape gradients. The builder receives a fresh
// tape plus one Var per leaf tensor and must return a scalar output; it is
// re-invoked for every probe, so it must be a pure function of the leaves.

struct GradCheckLeaf {
    std::size_t leaf = 0;
    std::size_t element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<GradCheckLeaf> worst_per_leaf;  // one entry per leaf
    bool within(double tol) const { return max_rel_err <= tol; }
};

using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline GradCheckReport check_gradients(const GraphBuilder& build,
                                       const std::vector<Tensor>& leaves,
                                       double step = 1e-5) {
    auto eval = [&](const std::vector<Tensor>& ts) {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(ts.size());
        for (const Tensor& t : ts) vars.push_back(tape.param(t));
        Var out = build(tape, vars);
        return tape.value(out).scalar_value();
    };

    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(leaves.size());
        for (const Tensor& t : leaves) vars.push_back(tape.param(t));
        Var out = build(tape, vars);
        tape.backward(out);
        for (Var v : vars) analytic.push_back(tape.grad(v));
    }

    GradCheckReport report;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        GradCheckLeaf worst;
        worst.leaf = li;
        for (std::size_t i = 0; i < leaves[li].numel(); ++i) {
            std::vector<Tensor> probe = leaves;
            std::vector<double> lo(leaves[li].data()), hi(leaves[li].data());
            hi[i] += step;
            lo[i] -= step;
            probe[li] = Tensor(leaves[li].shape(), hi);
            const double fp = eval(probe);
            probe[li] = Tensor(leaves[li].shape(), lo);
            const double fm = eval(probe);
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[li].data()[i];
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel >= worst.rel_err) {
                worst.element = i;
                worst.analytic = a;
                worst.numeric = numeric;
                worst.rel_err = rel;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, worst.rel_err);
        report.worst_per_leaf.push_back(worst);
    }
    return report;
}

} // namespace mogen
