#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mogen {

// Dense row-major f64 tensor. Values are immutable once constructed and every
// construction path rejects NaN/Inf, so a Tensor in hand is always finite.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel_of(shape_)) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape product " +
                                        std::to_string(numel_of(shape_)));
        }
        check_finite();
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        const std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        const std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    const std::vector<double>& data() const { return data_; }
    std::size_t numel() const { return data_.size(); }
    std::size_t ndim() const { return shape_.size(); }

    bool is_scalar() const { return data_.size() == 1; }
    double scalar_value() const {
        if (!is_scalar()) throw std::invalid_argument("Tensor: not a scalar");
        return data_[0];
    }

    // 2-D accessors; most of the engine works on matrices
    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : (shape_.empty() ? 0 : shape_[0]); }
    std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : 1; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

private:
    void check_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("Tensor: non-finite value encountered");
            }
        }
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && a.data() == b.data();
}

} // namespace mogen
