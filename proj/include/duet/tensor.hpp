#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "duet/common.hpp"

// Dense float32 tensors with tape-based reverse-mode differentiation.
// Tensors are cheap shared handles; data is treated as immutable once an op
// has produced it. Parameters are leaf tensors whose storage the optimizer
// updates between forward passes.

namespace duet {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

struct Node;

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<float>>(size_t(shape_numel(shape_)), 0.0f)) {
        check(shape_numel(shape_) >= 0, "Tensor: negative extent in " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, float value) {
        Tensor t(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor scalar(float value) { return full({1}, value); }

    static Tensor from(Shape shape, std::vector<float> values) {
        check(long(values.size()) == shape_numel(shape),
              "Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                  shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<float>>(std::move(values));
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f) {
        Tensor t(std::move(shape));
        for (float& v : t.data()) v = stddev * rng.normal();
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, float lo, float hi) {
        Tensor t(std::move(shape));
        for (float& v : t.data()) v = rng.uniform_range(lo, hi);
        return t;
    }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    long size() const { return data_ ? long(data_->size()) : 0; }
    int last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
    long outer_size() const { return last_dim() == 0 ? 0 : size() / last_dim(); }

    std::vector<float>& data() { return *data_; }
    const std::vector<float>& data() const { return *data_; }
    float* ptr() { return data_->data(); }
    const float* ptr() const { return data_->data(); }

    float item() const {
        check(size() == 1, "Tensor::item: tensor has shape " + shape_str(shape_));
        return (*data_)[0];
    }

    bool all_finite() const {
        for (float v : *data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // deep copy of the values; drops any autodiff history
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<float>>(*data_);
        return t;
    }

    // ---- autodiff state ----
    bool requires_grad() const { return grad_ != nullptr; }

    void set_requires_grad() {
        if (!grad_) grad_ = std::make_shared<std::vector<float>>(data_->size(), 0.0f);
    }

    std::vector<float>& grad() {
        check(grad_ != nullptr, "Tensor::grad: gradient not tracked");
        return *grad_;
    }
    const std::vector<float>& grad() const {
        check(grad_ != nullptr, "Tensor::grad: gradient not tracked");
        return *grad_;
    }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
    }

    std::shared_ptr<std::vector<float>> grad_handle() const { return grad_; }
    std::shared_ptr<Node> node() const { return node_; }
    void set_node(std::shared_ptr<Node> n) { node_ = std::move(n); }

private:
    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
    std::shared_ptr<std::vector<float>> grad_;
    std::shared_ptr<Node> node_;
};

// One recorded primitive. backprop captures shared handles to the output's
// data/grad buffers (not the output tensor itself, which would cycle).
struct Node {
    std::vector<Tensor> parents;
    std::function<void()> backprop;
};

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// RAII scope that disables tape recording (inference, finite differences).
class NoGrad {
public:
    NoGrad() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGrad() { detail::grad_mode() = prev_; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    bool prev_;
};

namespace detail {

inline bool track(const Tensor& a) { return grad_mode() && a.requires_grad(); }
inline bool track2(const Tensor& a, const Tensor& b) {
    return grad_mode() && (a.requires_grad() || b.requires_grad());
}

inline void attach(Tensor& out, std::vector<Tensor> parents,
                   std::function<void()> backprop) {
    out.set_requires_grad();
    auto node = std::make_shared<Node>();
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
    out.set_node(std::move(node));
}

// ---- raw GEMM kernels (row-major, accumulate into c) ----

inline void gemm_nn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        float* ci = c + size_t(i) * n;
        const float* ai = a + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            const float av = ai[p];
            const float* bp = b + size_t(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c += a * b^T, a: m x k, b: n x k; b is transposed into a scratch buffer so
// the inner loops run stride-1
inline void gemm_nt_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    thread_local std::vector<float> scratch;
    scratch.resize(size_t(k) * n);
    for (int j = 0; j < n; ++j)
        for (int p = 0; p < k; ++p) scratch[size_t(p) * n + j] = b[size_t(j) * k + p];
    gemm_nn_acc(a, scratch.data(), c, m, k, n);
}

// c += a^T * b, a: k x m, b: k x n
inline void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const float* ap = a + size_t(p) * m;
        const float* bp = b + size_t(p) * n;
        for (int i = 0; i < m; ++i) {
            const float av = ap[i];
            float* ci = c + size_t(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

inline void check_matrix(const Tensor& t, const char* op) {
    check(t.shape().size() == 2,
          std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

}  // namespace detail

// ----------------------------- primitive operations -----------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
    if (detail::track2(a, b)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a, pb = b;
        detail::attach(out, {a, b}, [pa, pb, og]() mutable {
            const auto& g = *og;
            if (pa.requires_grad()) {
                auto& ga = pa.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (pb.requires_grad()) {
                auto& gb = pb.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];
    if (detail::track2(a, b)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a, pb = b;
        detail::attach(out, {a, b}, [pa, pb, og]() mutable {
            const auto& g = *og;
            if (pa.requires_grad()) {
                auto& ga = pa.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (pb.requires_grad()) {
                auto& gb = pb.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
    if (detail::track2(a, b)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a, pb = b;
        detail::attach(out, {a, b}, [pa, pb, og]() mutable {
            const auto& g = *og;
            if (pa.requires_grad()) {
                auto& ga = pa.grad();
                const float* pbv = pb.ptr();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pbv[i];
            }
            if (pb.requires_grad()) {
                auto& gb = pb.grad();
                const float* pav = pa.ptr();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pav[i];
            }
        });
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] / b.ptr()[i];
    if (detail::track2(a, b)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a, pb = b;
        detail::attach(out, {a, b}, [pa, pb, og]() mutable {
            const auto& g = *og;
            const float* av = pa.ptr();
            const float* bv = pb.ptr();
            if (pa.requires_grad()) {
                auto& ga = pa.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
            }
            if (pb.requires_grad()) {
                auto& gb = pb.grad();
                for (size_t i = 0; i < g.size(); ++i)
                    gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
            }
        });
    }
    return out;
}

inline Tensor mul_scalar(const Tensor& a, float c) {
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * c;
    if (detail::track(a)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a;
        detail::attach(out, {a}, [pa, c, og]() mutable {
            const auto& g = *og;
            auto& ga = pa.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

inline Tensor add_scalar(const Tensor& a, float c) {
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + c;
    if (detail::track(a)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a;
        detail::attach(out, {a}, [pa, og]() mutable {
            const auto& g = *og;
            auto& ga = pa.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

// multiply by a scalar tensor (shape {1}), differentiable in both arguments
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
    check(s.size() == 1, "scale_by: scale must be a scalar tensor");
    const float sv = s.ptr()[0];
    Tensor out(a.shape());
    for (long i = 0; i < a.size(); ++i) out.ptr()[i] = a.ptr()[i] * sv;
    if (detail::track2(a, s)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a, ps = s;
        detail::attach(out, {a, s}, [pa, ps, og, sv]() mutable {
            const auto& g = *og;
            if (pa.requires_grad()) {
                auto& ga = pa.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
            }
            if (ps.requires_grad()) {
                double acc = 0.0;
                const float* av = pa.ptr();
                for (size_t i = 0; i < g.size(); ++i) acc += double(g[i]) * av[i];
                ps.grad()[0] += float(acc);
            }
        });
    }
    return out;
}

inline Tensor square(const Tensor& a) {
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * a.ptr()[i];
    if (detail::track(a)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a;
        detail::attach(out, {a}, [pa, og]() mutable {
            const auto& g = *og;
            auto& ga = pa.grad();
            const float* av = pa.ptr();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += 2.0f * av[i] * g[i];
        });
    }
    return out;
}

// elementwise square root; domain x >= 0
inline Tensor sqrt_t(const Tensor& a) {
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) {
        check(a.ptr()[i] >= 0.0f, "sqrt: negative input");
        out.ptr()[i] = std::sqrt(a.ptr()[i]);
    }
    if (detail::track(a)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        auto od = out;
        Tensor pa = a;
        detail::attach(out, {a}, [pa, od, og]() mutable {
            const auto& g = *og;
            auto& ga = pa.grad();
            const float* y = od.ptr();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += 0.5f * g[i] / y[i];
        });
    }
    return out;
}

namespace detail {

template <class F, class DF>
inline Tensor unary_op(const Tensor& a, F f, DF df) {
    Tensor out(a.shape());
    const long n = a.size();
    for (long i = 0; i < n; ++i) out.ptr()[i] = f(a.ptr()[i]);
    if (track(a)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a;
        attach(out, {a}, [pa, df, og]() mutable {
            const auto& g = *og;
            auto& ga = pa.grad();
            const float* av = pa.ptr();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(av[i]);
        });
    }
    return out;
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return x > 0.0f ? x : 0.0f; },
        [](float x) { return x > 0.0f ? 1.0f : 0.0f; });
}

inline Tensor tanh_t(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return std::tanh(x); },
        [](float x) {
            const float t = std::tanh(x);
            return 1.0f - t * t;
        });
}

inline Tensor gelu(const Tensor& a) {
    constexpr float inv_sqrt2 = 0.7071067811865475f;
    constexpr float inv_sqrt2pi = 0.3989422804014327f;
    return detail::unary_op(
        a,
        [](float x) { return 0.5f * x * (1.0f + std::erf(x * inv_sqrt2)); },
        [](float x) {
            const float phi = 0.5f * (1.0f + std::erf(x * inv_sqrt2));
            const float dens = inv_sqrt2pi * std::exp(-0.5f * x * x);
            return phi + x * dens;
        });
}

inline Tensor silu(const Tensor& a) {
    return detail::unary_op(
        a,
        [](float x) { return x / (1.0f + std::exp(-x)); },
        [](float x) {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f + x * (1.0f - s));
        });
}

inline Tensor exp_t(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return std::exp(x); },
        [](float x) { return std::exp(x); });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "matmul");
    detail::check_matrix(b, "matmul");
    check(a.shape()[1] == b.shape()[0],
          "matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n});
    detail::gemm_nn_acc(a.ptr(), b.ptr(), out.ptr(), m, k, n);
    if (detail::track2(a, b)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a, pb = b;
        detail::attach(out, {a, b}, [pa, pb, og, m, k, n]() mutable {
            const float* g = og->data();
            if (pa.requires_grad())  // dA += dC * B^T
                detail::gemm_nt_acc(g, pb.ptr(), pa.grad().data(), m, n, k);
            if (pb.requires_grad())  // dB += A^T * dC
                detail::gemm_tn_acc(pa.ptr(), g, pb.grad().data(), k, m, n);
        });
    }
    return out;
}

// a * b^T, a: m x k, b: n x k -> m x n
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "matmul_nt");
    detail::check_matrix(b, "matmul_nt");
    check(a.shape()[1] == b.shape()[1],
          "matmul_nt: inner dims differ, " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()) + "^T");
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    Tensor out({m, n});
    detail::gemm_nt_acc(a.ptr(), b.ptr(), out.ptr(), m, k, n);
    if (detail::track2(a, b)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a, pb = b;
        detail::attach(out, {a, b}, [pa, pb, og, m, k, n]() mutable {
            const float* g = og->data();
            if (pa.requires_grad())  // dA += dC * B
                detail::gemm_nn_acc(g, pb.ptr(), pa.grad().data(), m, n, k);
            if (pb.requires_grad())  // dB += dC^T * A
                detail::gemm_tn_acc(g, pa.ptr(), pb.grad().data(), n, m, k);
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    detail::check_matrix(a, "transpose");
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.ptr()[size_t(j) * m + i] = a.ptr()[size_t(i) * n + j];
    if (detail::track(a)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor pa = a;
        detail::attach(out, {a}, [pa, og, m, n]() mutable {
            auto& ga = pa.grad();
            const float* g = og->data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[size_t(i) * n + j] += g[size_t(j) * m + i];
        });
    }
    return out;
}

// broadcast add of a length-n vector over every row of an (...,n) tensor
inline Tensor add_row(const Tensor& x, const Tensor& v) {
    const int n = x.last_dim();
    check(v.size() == n, "add_row: vector size " + std::to_string(v.size()) +
                             " does not match last dim of " + shape_str(x.shape()));
    Tensor out(x.shape());
    const long rows = x.outer_size();
    for (long r = 0; r < rows; ++r) {
        const float* xr = x.ptr() + r * n;
        float* or_ = out.ptr() + r * n;
        for (int j = 0; j < n; ++j) or_[j] = xr[j] + v.ptr()[j];
    }
    if (detail::track2(x, v)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x, pv = v;
        detail::attach(out, {x, v}, [px, pv, og, rows, n]() mutable {
            const float* g = og->data();
            if (px.requires_grad()) {
                auto& gx = px.grad();
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
            }
            if (pv.requires_grad()) {
                auto& gv = pv.grad();
                for (long r = 0; r < rows; ++r)
                    for (int j = 0; j < n; ++j) gv[j] += g[r * n + j];
            }
        });
    }
    return out;
}

// broadcast multiply of a length-n vector over every row of an (...,n) tensor
inline Tensor mul_row(const Tensor& x, const Tensor& v) {
    const int n = x.last_dim();
    check(v.size() == n, "mul_row: vector size " + std::to_string(v.size()) +
                             " does not match last dim of " + shape_str(x.shape()));
    Tensor out(x.shape());
    const long rows = x.outer_size();
    for (long r = 0; r < rows; ++r) {
        const float* xr = x.ptr() + r * n;
        float* or_ = out.ptr() + r * n;
        for (int j = 0; j < n; ++j) or_[j] = xr[j] * v.ptr()[j];
    }
    if (detail::track2(x, v)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x, pv = v;
        detail::attach(out, {x, v}, [px, pv, og, rows, n]() mutable {
            const float* g = og->data();
            const float* xv = px.ptr();
            const float* vv = pv.ptr();
            if (px.requires_grad()) {
                auto& gx = px.grad();
                for (long r = 0; r < rows; ++r)
                    for (int j = 0; j < n; ++j) gx[r * n + j] += g[r * n + j] * vv[j];
            }
            if (pv.requires_grad()) {
                auto& gv = pv.grad();
                for (long r = 0; r < rows; ++r)
                    for (int j = 0; j < n; ++j) gv[j] += g[r * n + j] * xv[r * n + j];
            }
        });
    }
    return out;
}

// softmax over the last axis, max-subtracted for stability
inline Tensor softmax_last(const Tensor& x) {
    const int n = x.last_dim();
    check(n > 0, "softmax: empty last axis");
    Tensor out(x.shape());
    const long rows = x.outer_size();
    for (long r = 0; r < rows; ++r) {
        const float* xr = x.ptr() + r * n;
        float* yr = out.ptr() + r * n;
        float mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            denom += yr[j];
        }
        const float inv = float(1.0 / denom);
        for (int j = 0; j < n; ++j) yr[j] *= inv;
    }
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        Tensor oy = out;
        detail::attach(out, {x}, [px, oy, og, rows, n]() mutable {
            const float* g = og->data();
            const float* y = oy.ptr();
            auto& gx = px.grad();
            for (long r = 0; r < rows; ++r) {
                const float* gr = g + r * n;
                const float* yr = y + r * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += double(gr[j]) * yr[j];
                for (int j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - float(dot));
            }
        });
    }
    return out;
}

// layer normalization over the last axis, no affine; per row mean 0, var 1
inline Tensor layernorm_last(const Tensor& x, float eps = 1e-5f) {
    const int n = x.last_dim();
    check(n > 0, "layernorm: empty last axis");
    Tensor out(x.shape());
    std::vector<float> inv_std(size_t(x.outer_size()));
    const long rows = x.outer_size();
    for (long r = 0; r < rows; ++r) {
        const float* xr = x.ptr() + r * n;
        float* yr = out.ptr() + r * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += xr[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= n;
        const float is = float(1.0 / std::sqrt(var + eps));
        inv_std[size_t(r)] = is;
        for (int j = 0; j < n; ++j) yr[j] = float((xr[j] - mean)) * is;
    }
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        Tensor oy = out;
        auto istd = std::make_shared<std::vector<float>>(std::move(inv_std));
        detail::attach(out, {x}, [px, oy, og, istd, rows, n]() mutable {
            const float* g = og->data();
            const float* y = oy.ptr();
            auto& gx = px.grad();
            for (long r = 0; r < rows; ++r) {
                const float* gr = g + r * n;
                const float* yr = y + r * n;
                double gmean = 0.0, gymean = 0.0;
                for (int j = 0; j < n; ++j) {
                    gmean += gr[j];
                    gymean += double(gr[j]) * yr[j];
                }
                gmean /= n;
                gymean /= n;
                const float is = (*istd)[size_t(r)];
                for (int j = 0; j < n; ++j)
                    gx[r * n + j] += is * (gr[j] - float(gmean) - yr[j] * float(gymean));
            }
        });
    }
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    Tensor out = Tensor::scalar(float(acc));
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        detail::attach(out, {x}, [px, og]() mutable {
            const float g = (*og)[0];
            auto& gx = px.grad();
            for (float& v : gx) v += g;
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    check(x.size() > 0, "mean: empty tensor");
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    const long n = x.size();
    Tensor out = Tensor::scalar(float(acc / double(n)));
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        detail::attach(out, {x}, [px, og, n]() mutable {
            const float g = (*og)[0] / float(n);
            auto& gx = px.grad();
            for (float& v : gx) v += g;
        });
    }
    return out;
}

// sum over the last axis; shape (..., n) -> (...)
inline Tensor sum_last(const Tensor& x) {
    const int n = x.last_dim();
    check(x.shape().size() >= 1, "sum_last: scalar input");
    Shape os(x.shape().begin(), x.shape().end() - 1);
    if (os.empty()) os = {1};
    Tensor out(os);
    const long rows = x.outer_size();
    for (long r = 0; r < rows; ++r) {
        double acc = 0.0;
        const float* xr = x.ptr() + r * n;
        for (int j = 0; j < n; ++j) acc += xr[j];
        out.ptr()[r] = float(acc);
    }
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        detail::attach(out, {x}, [px, og, rows, n]() mutable {
            auto& gx = px.grad();
            for (long r = 0; r < rows; ++r) {
                const float g = (*og)[size_t(r)];
                for (int j = 0; j < n; ++j) gx[r * n + j] += g;
            }
        });
    }
    return out;
}

// log(sum(exp(row))) over the last axis, max-subtracted
inline Tensor logsumexp_last(const Tensor& x) {
    const int n = x.last_dim();
    Shape os(x.shape().begin(), x.shape().end() - 1);
    if (os.empty()) os = {1};
    Tensor out(os);
    const long rows = x.outer_size();
    for (long r = 0; r < rows; ++r) {
        const float* xr = x.ptr() + r * n;
        float mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += std::exp(double(xr[j]) - mx);
        out.ptr()[r] = float(mx + std::log(acc));
    }
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        Tensor oy = out;
        detail::attach(out, {x}, [px, oy, og, rows, n]() mutable {
            auto& gx = px.grad();
            const float* y = oy.ptr();
            for (long r = 0; r < rows; ++r) {
                const float g = (*og)[size_t(r)];
                const float* xr = px.ptr() + r * n;
                for (int j = 0; j < n; ++j)
                    gx[r * n + j] += g * std::exp(xr[j] - y[r]);
            }
        });
    }
    return out;
}

// mean of the main diagonal of a square matrix
inline Tensor diag_mean(const Tensor& x) {
    detail::check_matrix(x, "diag_mean");
    check(x.shape()[0] == x.shape()[1], "diag_mean: matrix not square " + shape_str(x.shape()));
    const int n = x.shape()[0];
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += x.ptr()[size_t(i) * n + i];
    Tensor out = Tensor::scalar(float(acc / n));
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        detail::attach(out, {x}, [px, og, n]() mutable {
            const float g = (*og)[0] / float(n);
            auto& gx = px.grad();
            for (int i = 0; i < n; ++i) gx[size_t(i) * n + i] += g;
        });
    }
    return out;
}

// slice [start, start+len) of the last axis
inline Tensor slice_last(const Tensor& x, int start, int len) {
    const int n = x.last_dim();
    check(start >= 0 && len > 0 && start + len <= n,
          "slice_last: [" + std::to_string(start) + ", " + std::to_string(start + len) +
              ") out of range for last dim " + std::to_string(n));
    Shape os = x.shape();
    os.back() = len;
    Tensor out(os);
    const long rows = x.outer_size();
    for (long r = 0; r < rows; ++r)
        std::copy_n(x.ptr() + r * n + start, len, out.ptr() + r * len);
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        detail::attach(out, {x}, [px, og, rows, n, start, len]() mutable {
            auto& gx = px.grad();
            const float* g = og->data();
            for (long r = 0; r < rows; ++r)
                for (int j = 0; j < len; ++j) gx[r * n + start + j] += g[r * len + j];
        });
    }
    return out;
}

// concatenate along the last axis
inline Tensor concat_last(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_last: no inputs");
    const long rows = parts[0].outer_size();
    int total = 0;
    for (const auto& p : parts) {
        check(p.outer_size() == rows, "concat_last: leading dims differ, " +
                                          shape_str(parts[0].shape()) + " vs " +
                                          shape_str(p.shape()));
        total += p.last_dim();
    }
    Shape os = parts[0].shape();
    os.back() = total;
    Tensor out(os);
    int off = 0;
    for (const auto& p : parts) {
        const int n = p.last_dim();
        for (long r = 0; r < rows; ++r)
            std::copy_n(p.ptr() + r * n, n, out.ptr() + r * total + off);
        off += n;
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (grad_enabled() && any) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        std::vector<Tensor> ps = parts;
        detail::attach(out, parts, [ps, og, rows, total]() mutable {
            const float* g = og->data();
            int off2 = 0;
            for (auto& p : ps) {
                const int n = p.last_dim();
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (long r = 0; r < rows; ++r)
                        for (int j = 0; j < n; ++j) gp[r * n + j] += g[r * total + off2 + j];
                }
                off2 += n;
            }
        });
    }
    return out;
}

// slice [start, start+len) rows of a 2-D tensor (axis 0)
inline Tensor slice_rows(const Tensor& x, int start, int len) {
    detail::check_matrix(x, "slice_rows");
    const int m = x.shape()[0], n = x.shape()[1];
    check(start >= 0 && len > 0 && start + len <= m,
          "slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + len) +
              ") out of range for " + std::to_string(m) + " rows");
    Tensor out({len, n});
    std::copy_n(x.ptr() + size_t(start) * n, size_t(len) * n, out.ptr());
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        detail::attach(out, {x}, [px, og, start, len, n]() mutable {
            auto& gx = px.grad();
            const float* g = og->data();
            for (long i = 0; i < long(len) * n; ++i) gx[size_t(start) * n + i] += g[i];
        });
    }
    return out;
}

// concatenate 2-D tensors along axis 0
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_rows: no inputs");
    const int n = parts[0].shape().size() == 2 ? parts[0].shape()[1] : -1;
    check(n > 0, "concat_rows: expected matrices");
    int m = 0;
    for (const auto& p : parts) {
        detail::check_matrix(p, "concat_rows");
        check(p.shape()[1] == n, "concat_rows: column counts differ");
        m += p.shape()[0];
    }
    Tensor out({m, n});
    long off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.ptr(), p.size(), out.ptr() + off);
        off += p.size();
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (grad_enabled() && any) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        std::vector<Tensor> ps = parts;
        detail::attach(out, parts, [ps, og]() mutable {
            const float* g = og->data();
            long off2 = 0;
            for (auto& p : ps) {
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (long i = 0; i < p.size(); ++i) gp[size_t(i)] += g[off2 + i];
                }
                off2 += p.size();
            }
        });
    }
    return out;
}

// view with identical element count; copies storage, gradient passes through
inline Tensor reshape(const Tensor& x, Shape shape) {
    check(shape_numel(shape) == x.size(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor out(std::move(shape));
    std::copy_n(x.ptr(), x.size(), out.ptr());
    if (detail::track(x)) {
        out.set_requires_grad();
        auto og = out.grad_handle();
        Tensor px = x;
        detail::attach(out, {x}, [px, og]() mutable {
            auto& gx = px.grad();
            const auto& g = *og;
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

// ----------------------------- backward pass -----------------------------

// Fills .grad() on every reachable tensor that tracks gradients. The loss
// must be scalar. Leaf gradients accumulate, so zero them beforehand when a
// fresh gradient is wanted.
inline void backward(const Tensor& loss) {
    check(loss.size() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
    check(loss.requires_grad(),
          "backward: loss does not track gradients (no recorded primitives)");
    // topological order via iterative DFS postorder
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    if (loss.node()) {
        visited.insert(loss.node().get());
        stack.push_back({loss.node().get(), 0});
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent].node().get();
            ++f.next_parent;
            if (p != nullptr && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    const_cast<Tensor&>(loss).grad()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backprop();
}

// Gradient of a scalar loss with respect to each parameter; parameters the
// loss does not depend on get exactly-zero gradients.
inline std::vector<Tensor> gradients(const Tensor& loss, const std::vector<Tensor>& params) {
    for (const auto& p : params) {
        check(p.requires_grad(), "gradients: parameter does not track gradients");
        const_cast<Tensor&>(p).zero_grad();
    }
    backward(loss);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        Tensor g;
        g = Tensor::from(p.shape(), p.grad());
        out.push_back(g);
    }
    return out;
}

// ----------------------------- finite differences -----------------------------

// Central-difference check of reverse-mode gradients. Returns the max over
// coordinates of |g_fd - g_ad| / max(1, |g_fd|, |g_ad|).
inline double finite_difference_check(const std::function<Tensor(const Tensor&)>& fn,
                                      const Tensor& x, double step) {
    check(step > 0.0, "finite_difference_check: step must be positive");
    Tensor xg = x.clone();
    xg.set_requires_grad();
    Tensor y = fn(xg);
    check(y.size() == 1, "finite_difference_check: fn must return a scalar");
    if (!std::isfinite(y.item())) fail("finite_difference_check: non-finite fn value");
    backward(y);
    const std::vector<float> g_ad = xg.grad();

    Tensor xp = x.clone();
    double max_err = 0.0;
    NoGrad guard;
    for (long i = 0; i < x.size(); ++i) {
        const float orig = xp.ptr()[i];
        const float plus = float(double(orig) + step);
        const float minus = float(double(orig) - step);
        xp.ptr()[i] = plus;
        const double f_plus = double(fn(xp).item());
        xp.ptr()[i] = minus;
        const double f_minus = double(fn(xp).item());
        xp.ptr()[i] = orig;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            fail("finite_difference_check: non-finite fn value");
        // divide by the step actually realized in float32
        const double g_fd = (f_plus - f_minus) / (double(plus) - double(minus));
        const double denom = std::max({1.0, std::abs(g_fd), std::abs(double(g_ad[size_t(i)]))});
        max_err = std::max(max_err, std::abs(g_fd - double(g_ad[size_t(i)])) / denom);
    }
    return max_err;
}

}  // namespace duet
