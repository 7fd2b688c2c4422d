#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogen/tensor.hpp"

namespace mogen {

// Reverse-mode tape. Ops append nodes in creation order, which is already a
// topological order, and backward() walks the tape once in reverse. Node
// values are Tensors (immutable, finite); gradients are plain buffers owned
// by the tape and live until the next backward() call.
//
// A Tape is confined to one thread. Independent tapes never share state.

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

namespace detail {

enum class OpKind {
    Leaf,
    Add,
    AddRowwise,
    Sub,
    Mul,
    Scale,
    Matmul,
    MatmulNT,
    RowSoftmax,
    LayerNorm,
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    SumAll,
    MeanAll,
    MeanRows,
    SliceCols,
    ConcatCols,
    Embedding,
};

struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<int> in;
    Tensor value;
    bool needs_grad = false;
    double aux = 0.0;                    // scale factor, ln eps, ...
    std::size_t c0 = 0, c1 = 0;          // slice bounds
    std::vector<std::size_t> indices;    // embedding rows
    std::vector<double> grad;            // filled by backward()
};

} // namespace detail

class Tape {
public:
    Var input(Tensor v) { return leaf(std::move(v), true); }
    Var param(Tensor v) { return leaf(std::move(v), true); }
    Var constant(Tensor v) { return leaf(std::move(v), false); }

    const Tensor& value(Var v) const { return node(v).value; }

    // Gradient of the last backward() output w.r.t. v, as a Tensor shaped
    // like value(v). Zero if v does not influence the output.
    Tensor grad(Var v) const {
        const auto& n = node(v);
        if (!backward_done_) throw std::logic_error("Tape::grad before backward");
        if (n.grad.empty()) return Tensor::zeros(n.value.shape());
        return Tensor(n.value.shape(), n.grad);
    }

    std::size_t size() const { return nodes_.size(); }

    // Roll the tape back to its first n nodes. Vars created after that point
    // become invalid; earlier Vars (typically bound parameters) stay usable,
    // which lets iterative samplers rebuild small per-step graphs on top of a
    // once-bound parameter set.
    void truncate(std::size_t n) {
        if (n > nodes_.size()) throw std::logic_error("truncate: beyond tape end");
        nodes_.resize(n);
        backward_done_ = false;
    }

    void backward(Var out) {
        const auto& o = node(out);
        if (!o.value.is_scalar()) {
            throw std::invalid_argument("backward: output must be scalar, got shape " +
                                        o.value.shape_str());
        }
        for (auto& n : nodes_) {
            n.grad.clear();
            if (n.needs_grad) n.grad.assign(n.value.numel(), 0.0);
        }
        if (!nodes_[static_cast<std::size_t>(out.id)].needs_grad) {
            // output does not depend on any differentiable leaf
            backward_done_ = true;
            return;
        }
        nodes_[static_cast<std::size_t>(out.id)].grad[0] = 1.0;
        for (int id = out.id; id >= 0; --id) {
            auto& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad || n.grad.empty()) continue;
            propagate(n);
        }
        backward_done_ = true;
    }

    // ---- op builders (free functions below forward here) ----

    Var add(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require_same_shape(ta, tb, "add");
        std::vector<double> out(ta.data());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb.data()[i];
        return push(detail::OpKind::Add, {a.id, b.id}, Tensor(ta.shape(), std::move(out)));
    }

    // (M x N) + (1 x N), broadcast over rows
    Var add_rowwise(Var a, Var row) {
        const Tensor& ta = value(a);
        const Tensor& tr = value(row);
        if (ta.ndim() != 2 || tr.ndim() != 2 || tr.rows() != 1 || tr.cols() != ta.cols()) {
            throw std::invalid_argument("add_rowwise: shapes " + ta.shape_str() + " and " +
                                        tr.shape_str());
        }
        std::vector<double> out(ta.data());
        const std::size_t R = ta.rows(), C = ta.cols();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) out[r * C + c] += tr.data()[c];
        return push(detail::OpKind::AddRowwise, {a.id, row.id}, Tensor(ta.shape(), std::move(out)));
    }

    Var sub(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require_same_shape(ta, tb, "sub");
        std::vector<double> out(ta.data());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tb.data()[i];
        return push(detail::OpKind::Sub, {a.id, b.id}, Tensor(ta.shape(), std::move(out)));
    }

    Var mul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require_same_shape(ta, tb, "mul");
        std::vector<double> out(ta.data());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb.data()[i];
        return push(detail::OpKind::Mul, {a.id, b.id}, Tensor(ta.shape(), std::move(out)));
    }

    Var scale(Var a, double s) {
        const Tensor& ta = value(a);
        std::vector<double> out(ta.data());
        for (double& v : out) v *= s;
        Var r = push(detail::OpKind::Scale, {a.id}, Tensor(ta.shape(), std::move(out)));
        nodes_.back().aux = s;
        return r;
    }

    Var matmul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows()) {
            throw std::invalid_argument("matmul: shapes " + A.shape_str() + " x " + B.shape_str());
        }
        const std::size_t M = A.rows(), K = A.cols(), N = B.cols();
        std::vector<double> out(M * N, 0.0);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                const double av = A.data()[i * K + k];
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < N; ++j) out[i * N + j] += av * B.data()[k * N + j];
            }
        return push(detail::OpKind::Matmul, {a.id, b.id}, Tensor({M, N}, std::move(out)));
    }

    // A (M x K) times B^T where B is (N x K); avoids materializing transposes
    Var matmul_nt(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.cols()) {
            throw std::invalid_argument("matmul_nt: shapes " + A.shape_str() + " x " +
                                        B.shape_str() + "^T");
        }
        const std::size_t M = A.rows(), K = A.cols(), N = B.rows();
        std::vector<double> out(M * N, 0.0);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < K; ++k) s += A.data()[i * K + k] * B.data()[j * K + k];
                out[i * N + j] = s;
            }
        return push(detail::OpKind::MatmulNT, {a.id, b.id}, Tensor({M, N}, std::move(out)));
    }

    Var row_softmax(Var a) {
        const Tensor& A = value(a);
        if (A.ndim() != 2) throw std::invalid_argument("row_softmax: need 2-D input");
        const std::size_t R = A.rows(), C = A.cols();
        std::vector<double> out(R * C);
        for (std::size_t r = 0; r < R; ++r) {
            double mx = A.data()[r * C];
            for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, A.data()[r * C + c]);
            double sum = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double e = std::exp(A.data()[r * C + c] - mx);
                out[r * C + c] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < C; ++c) out[r * C + c] /= sum;
        }
        return push(detail::OpKind::RowSoftmax, {a.id}, Tensor(A.shape(), std::move(out)));
    }

    // per-row normalization with affine gain/bias (1 x C each)
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
        const Tensor& X = value(x);
        const Tensor& G = value(gain);
        const Tensor& B = value(bias);
        if (X.ndim() != 2 || G.rows() != 1 || B.rows() != 1 || G.cols() != X.cols() ||
            B.cols() != X.cols()) {
            throw std::invalid_argument("layer_norm: shapes " + X.shape_str() + ", " +
                                        G.shape_str() + ", " + B.shape_str());
        }
        const std::size_t R = X.rows(), C = X.cols();
        std::vector<double> out(R * C);
        for (std::size_t r = 0; r < R; ++r) {
            double mean = 0.0;
            for (std::size_t c = 0; c < C; ++c) mean += X.data()[r * C + c];
            mean /= static_cast<double>(C);
            double var = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double d = X.data()[r * C + c] - mean;
                var += d * d;
            }
            var /= static_cast<double>(C);
            const double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t c = 0; c < C; ++c) {
                const double xh = (X.data()[r * C + c] - mean) * inv;
                out[r * C + c] = G.data()[c] * xh + B.data()[c];
            }
        }
        Var r = push(detail::OpKind::LayerNorm, {x.id, gain.id, bias.id},
                     Tensor(X.shape(), std::move(out)));
        nodes_.back().aux = eps;
        return r;
    }

    Var relu(Var a) { return unary(detail::OpKind::Relu, a, [](double v) { return v > 0.0 ? v : 0.0; }); }
    Var tanh(Var a) { return unary(detail::OpKind::Tanh, a, [](double v) { return std::tanh(v); }); }
    Var sigmoid(Var a) {
        return unary(detail::OpKind::Sigmoid, a, [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        });
    }
    Var exp(Var a) { return unary(detail::OpKind::Exp, a, [](double v) { return std::exp(v); }); }
    Var log(Var a) { return unary(detail::OpKind::Log, a, [](double v) { return std::log(v); }); }

    Var sum_all(Var a) {
        const Tensor& A = value(a);
        double s = 0.0;
        for (double v : A.data()) s += v;
        return push(detail::OpKind::SumAll, {a.id}, Tensor::scalar(s));
    }

    Var mean_all(Var a) {
        const Tensor& A = value(a);
        double s = 0.0;
        for (double v : A.data()) s += v;
        return push(detail::OpKind::MeanAll, {a.id},
                    Tensor::scalar(s / static_cast<double>(A.numel())));
    }

    // (N x C) -> (1 x C), column means
    Var mean_rows(Var a) {
        const Tensor& A = value(a);
        if (A.ndim() != 2) throw std::invalid_argument("mean_rows: need 2-D input");
        const std::size_t R = A.rows(), C = A.cols();
        std::vector<double> out(C, 0.0);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) out[c] += A.data()[r * C + c];
        for (double& v : out) v /= static_cast<double>(R);
        return push(detail::OpKind::MeanRows, {a.id}, Tensor({1, C}, std::move(out)));
    }

    Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
        const Tensor& A = value(a);
        if (A.ndim() != 2 || c0 >= c1 || c1 > A.cols()) {
            throw std::invalid_argument("slice_cols: bad bounds on " + A.shape_str());
        }
        const std::size_t R = A.rows(), C = A.cols(), W = c1 - c0;
        std::vector<double> out(R * W);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < W; ++c) out[r * W + c] = A.data()[r * C + c0 + c];
        Var v = push(detail::OpKind::SliceCols, {a.id}, Tensor({R, W}, std::move(out)));
        nodes_.back().c0 = c0;
        nodes_.back().c1 = c1;
        return v;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
        const std::size_t R = value(parts[0]).rows();
        std::size_t C = 0;
        std::vector<int> ins;
        for (Var p : parts) {
            const Tensor& t = value(p);
            if (t.ndim() != 2 || t.rows() != R) {
                throw std::invalid_argument("concat_cols: row mismatch");
            }
            C += t.cols();
            ins.push_back(p.id);
        }
        std::vector<double> out(R * C);
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor& t = value(p);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < t.cols(); ++c)
                    out[r * C + off + c] = t.data()[r * t.cols() + c];
            off += t.cols();
        }
        return push(detail::OpKind::ConcatCols, std::move(ins), Tensor({R, C}, std::move(out)));
    }

    // rows of `table` gathered by index; backward scatter-adds into the table
    Var embedding(Var table, std::vector<std::size_t> idx) {
        const Tensor& T = value(table);
        if (T.ndim() != 2) throw std::invalid_argument("embedding: table must be 2-D");
        const std::size_t D = T.cols();
        std::vector<double> out(idx.size() * D);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= T.rows()) throw std::invalid_argument("embedding: index out of range");
            for (std::size_t c = 0; c < D; ++c) out[i * D + c] = T.data()[idx[i] * D + c];
        }
        Var v = push(detail::OpKind::Embedding, {table.id}, Tensor({idx.size(), D}, std::move(out)));
        nodes_.back().indices = std::move(idx);
        return v;
    }

private:
    const detail::Node& node(Var v) const {
        if (!v.valid() || v.tape != this || static_cast<std::size_t>(v.id) >= nodes_.size()) {
            throw std::invalid_argument("Var does not belong to this tape");
        }
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    Var leaf(Tensor v, bool needs_grad) {
        Var r = push(detail::OpKind::Leaf, {}, std::move(v));
        nodes_.back().needs_grad = needs_grad;
        return r;
    }

    Var push(detail::OpKind kind, std::vector<int> in, Tensor value) {
        detail::Node n;
        n.kind = kind;
        n.in = std::move(in);
        n.value = std::move(value);
        if (kind != detail::OpKind::Leaf) {
            for (int i : n.in) n.needs_grad |= nodes_[static_cast<std::size_t>(i)].needs_grad;
        }
        nodes_.push_back(std::move(n));
        backward_done_ = false;
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    template <typename F>
    Var unary(detail::OpKind kind, Var a, F f) {
        const Tensor& A = value(a);
        std::vector<double> out(A.data());
        for (double& v : out) v = f(v);
        return push(kind, {a.id}, Tensor(A.shape(), std::move(out)));
    }

    static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (!a.same_shape(b)) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                        " vs " + b.shape_str());
        }
    }

    std::vector<double>* grad_buf(int id) {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return nullptr;
        return &n.grad;
    }

    void propagate(detail::Node& n) {
        using detail::OpKind;
        const std::vector<double>& g = n.grad;
        switch (n.kind) {
        case OpKind::Leaf:
            break;
        case OpKind::Add: {
            for (int s = 0; s < 2; ++s)
                if (auto* gi = grad_buf(n.in[static_cast<std::size_t>(s)]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
            break;
        }
        case OpKind::AddRowwise: {
            const std::size_t C = n.value.cols();
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
            if (auto* gr = grad_buf(n.in[1]))
                for (std::size_t i = 0; i < g.size(); ++i) (*gr)[i % C] += g[i];
            break;
        }
        case OpKind::Sub: {
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
            if (auto* gb = grad_buf(n.in[1]))
                for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
            break;
        }
        case OpKind::Mul: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].value;
            const Tensor& B = nodes_[static_cast<std::size_t>(n.in[1])].value;
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B.data()[i];
            if (auto* gb = grad_buf(n.in[1]))
                for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A.data()[i];
            break;
        }
        case OpKind::Scale: {
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.aux;
            break;
        }
        case OpKind::Matmul: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].value;
            const Tensor& B = nodes_[static_cast<std::size_t>(n.in[1])].value;
            const std::size_t M = A.rows(), K = A.cols(), N = B.cols();
            if (auto* ga = grad_buf(n.in[0])) {
                // dA = dC * B^T
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < N; ++j)
                            s += g[i * N + j] * B.data()[k * N + j];
                        (*ga)[i * K + k] += s;
                    }
            }
            if (auto* gb = grad_buf(n.in[1])) {
                // dB = A^T * dC
                for (std::size_t k = 0; k < K; ++k)
                    for (std::size_t i = 0; i < M; ++i) {
                        const double av = A.data()[i * K + k];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < N; ++j)
                            (*gb)[k * N + j] += av * g[i * N + j];
                    }
            }
            break;
        }
        case OpKind::MatmulNT: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].value;
            const Tensor& B = nodes_[static_cast<std::size_t>(n.in[1])].value;
            const std::size_t M = A.rows(), K = A.cols(), N = B.rows();
            if (auto* ga = grad_buf(n.in[0])) {
                // dA = dC * B
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < N; ++j) {
                        const double gv = g[i * N + j];
                        if (gv == 0.0) continue;
                        for (std::size_t k = 0; k < K; ++k)
                            (*ga)[i * K + k] += gv * B.data()[j * K + k];
                    }
            }
            if (auto* gb = grad_buf(n.in[1])) {
                // dB = dC^T * A
                for (std::size_t j = 0; j < N; ++j)
                    for (std::size_t i = 0; i < M; ++i) {
                        const double gv = g[i * N + j];
                        if (gv == 0.0) continue;
                        for (std::size_t k = 0; k < K; ++k)
                            (*gb)[j * K + k] += gv * A.data()[i * K + k];
                    }
            }
            break;
        }
        case OpKind::RowSoftmax: {
            if (auto* ga = grad_buf(n.in[0])) {
                const std::size_t R = n.value.rows(), C = n.value.cols();
                for (std::size_t r = 0; r < R; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        dot += g[r * C + c] * n.value.data()[r * C + c];
                    for (std::size_t c = 0; c < C; ++c)
                        (*ga)[r * C + c] +=
                            n.value.data()[r * C + c] * (g[r * C + c] - dot);
                }
            }
            break;
        }
        case OpKind::LayerNorm: {
            const Tensor& X = nodes_[static_cast<std::size_t>(n.in[0])].value;
            const Tensor& G = nodes_[static_cast<std::size_t>(n.in[1])].value;
            const std::size_t R = X.rows(), C = X.cols();
            const double eps = n.aux;
            auto* gx = grad_buf(n.in[0]);
            auto* gg = grad_buf(n.in[1]);
            auto* gb = grad_buf(n.in[2]);
            std::vector<double> xhat(C);
            for (std::size_t r = 0; r < R; ++r) {
                double mean = 0.0;
                for (std::size_t c = 0; c < C; ++c) mean += X.data()[r * C + c];
                mean /= static_cast<double>(C);
                double var = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double d = X.data()[r * C + c] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(C);
                const double inv = 1.0 / std::sqrt(var + eps);
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    xhat[c] = (X.data()[r * C + c] - mean) * inv;
                    const double dxh = g[r * C + c] * G.data()[c];
                    m1 += dxh;
                    m2 += dxh * xhat[c];
                }
                m1 /= static_cast<double>(C);
                m2 /= static_cast<double>(C);
                for (std::size_t c = 0; c < C; ++c) {
                    const double dxh = g[r * C + c] * G.data()[c];
                    if (gx) (*gx)[r * C + c] += inv * (dxh - m1 - xhat[c] * m2);
                    if (gg) (*gg)[c] += g[r * C + c] * xhat[c];
                    if (gb) (*gb)[c] += g[r * C + c];
                }
            }
            break;
        }
        case OpKind::Relu: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].value;
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (A.data()[i] > 0.0) (*ga)[i] += g[i];
            break;
        }
        case OpKind::Tanh: {
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value.data()[i];
                    (*ga)[i] += g[i] * (1.0 - y * y);
                }
            break;
        }
        case OpKind::Sigmoid: {
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value.data()[i];
                    (*ga)[i] += g[i] * y * (1.0 - y);
                }
            break;
        }
        case OpKind::Exp: {
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.value.data()[i];
            break;
        }
        case OpKind::Log: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].value;
            if (auto* ga = grad_buf(n.in[0]))
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / A.data()[i];
            break;
        }
        case OpKind::SumAll: {
            if (auto* ga = grad_buf(n.in[0]))
                for (double& v : *ga) v += g[0];
            break;
        }
        case OpKind::MeanAll: {
            if (auto* ga = grad_buf(n.in[0])) {
                const double s = g[0] / static_cast<double>(ga->size());
                for (double& v : *ga) v += s;
            }
            break;
        }
        case OpKind::MeanRows: {
            if (auto* ga = grad_buf(n.in[0])) {
                const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].value;
                const std::size_t R = A.rows(), C = A.cols();
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c)
                        (*ga)[r * C + c] += g[c] / static_cast<double>(R);
            }
            break;
        }
        case OpKind::SliceCols: {
            if (auto* ga = grad_buf(n.in[0])) {
                const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].value;
                const std::size_t R = A.rows(), C = A.cols(), W = n.c1 - n.c0;
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < W; ++c)
                        (*ga)[r * C + n.c0 + c] += g[r * W + c];
            }
            break;
        }
        case OpKind::ConcatCols: {
            const std::size_t R = n.value.rows(), C = n.value.cols();
            std::size_t off = 0;
            for (int src : n.in) {
                const Tensor& A = nodes_[static_cast<std::size_t>(src)].value;
                if (auto* ga = grad_buf(src)) {
                    for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t c = 0; c < A.cols(); ++c)
                            (*ga)[r * A.cols() + c] += g[r * C + off + c];
                }
                off += A.cols();
            }
            break;
        }
        case OpKind::Embedding: {
            if (auto* gt = grad_buf(n.in[0])) {
                const std::size_t D = n.value.cols();
                for (std::size_t i = 0; i < n.indices.size(); ++i)
                    for (std::size_t c = 0; c < D; ++c)
                        (*gt)[n.indices[i] * D + c] += g[i * D + c];
            }
            break;
        }
        }
    }

    std::vector<detail::Node> nodes_;
    bool backward_done_ = false;
};

// ---- free-function spellings ----

inline Var add(Var a, Var b) { return a.tape->add(a, b); }
inline Var add_rowwise(Var a, Var row) { return a.tape->add_rowwise(a, row); }
inline Var sub(Var a, Var b) { return a.tape->sub(a, b); }
inline Var mul(Var a, Var b) { return a.tape->mul(a, b); }
inline Var scale(Var a, double s) { return a.tape->scale(a, s); }
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }
inline Var matmul_nt(Var a, Var b) { return a.tape->matmul_nt(a, b); }
inline Var row_softmax(Var a) { return a.tape->row_softmax(a); }
inline Var layer_norm(Var x, Var g, Var b, double eps = 1e-5) { return x.tape->layer_norm(x, g, b, eps); }
inline Var relu(Var a) { return a.tape->relu(a); }
inline Var tanh(Var a) { return a.tape->tanh(a); }
inline Var sigmoid(Var a) { return a.tape->sigmoid(a); }
inline Var exp(Var a) { return a.tape->exp(a); }
inline Var log(Var a) { return a.tape->log(a); }
inline Var sum_all(Var a) { return a.tape->sum_all(a); }
inline Var mean_all(Var a) { return a.tape->mean_all(a); }
inline Var mean_rows(Var a) { return a.tape->mean_rows(a); }
inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) { return a.tape->slice_cols(a, c0, c1); }
inline Var concat_cols(const std::vector<Var>& parts) { return parts.at(0).tape->concat_cols(parts); }
inline Var embedding(Var table, std::vector<std::size_t> idx) { return table.tape->embedding(table, std::move(idx)); }

// Scaled dot-product attention with an additive mask (0 where allowed,
// a large negative value where blocked), applied before row-softmax.
inline Var masked_attention(Var q, Var k, Var v, Var additive_mask) {
    const double d = static_cast<double>(q.tape->value(q).cols());
    Var scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(d));
    Var masked = add(scores, additive_mask);
    return matmul(row_softmax(masked), v);
}

} // namespace mogen
