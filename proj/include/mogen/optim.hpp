#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogen/checkpoint.hpp"
#include "mogen/tensor.hpp"

namespace mogen {

// Cosine annealing from base_lr down to min_lr over total_steps.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr,
                        double min_lr = 0.0) {
    if (total_steps == 0) return base_lr;
    const double frac =
        static_cast<double>(step < total_steps ? step : total_steps) /
        static_cast<double>(total_steps);
    constexpr double pi = 3.14159265358979323846;
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(pi * frac));
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW); 0 gives plain Adam
};

// AdamW over a name -> Tensor parameter map. Parameters are replaced with
// fresh Tensors each step; first/second-moment state is keyed by name.
class AdamW {
public:
    explicit AdamW(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::int64_t steps_taken() const { return t_; }

    // lr_override < 0 means "use cfg.lr"; schedules pass the current rate.
    void step(TensorMap& params, const TensorMap& grads, double lr_override = -1.0) {
        const double lr = lr_override < 0.0 ? cfg_.lr : lr_override;
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, p] : params) {
            auto git = grads.find(name);
            if (git == grads.end()) throw std::invalid_argument("AdamW: missing grad for " + name);
            const Tensor& g = git->second;
            if (!g.same_shape(p)) throw std::invalid_argument("AdamW: grad shape mismatch for " + name);
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.empty()) {
                m.assign(p.numel(), 0.0);
                v.assign(p.numel(), 0.0);
            }
            std::vector<double> next(p.data());
            for (std::size_t i = 0; i < next.size(); ++i) {
                const double gi = g.data()[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                next[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * next[i]);
            }
            p = Tensor(p.shape(), std::move(next));
        }
    }

private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

} // namespace mogen
