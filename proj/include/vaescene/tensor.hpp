#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vaescene/errors.hpp"
#include "vaescene/gemm.hpp"
#include "vaescene/rng.hpp"

namespace vaescene {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename S>
class GradientTapeT;

// Dense row-major tensor. Value and gradient live in a shared node so copies
// of a Tensor alias the same storage; the gradient buffer stays empty until
// backward first accumulates into it.
template <typename S>
class TensorT {
public:
    using Scalar = S;

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return TensorT(std::move(shape), requires_grad, S(0));
    }
    static TensorT full(Shape shape, S value, bool requires_grad = false) {
        return TensorT(std::move(shape), requires_grad, value);
    }
    static TensorT ones(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), S(1), requires_grad);
    }
    static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
        TensorT t;
        t.shape_ = std::move(shape);
        t.node_ = std::make_shared<Node>();
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }
    static TensorT scalar(S value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }
    static TensorT randn(Shape shape, Rng& rng, S stddev = S(1), bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->value) v = static_cast<S>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return node_ ? node_->value.size() : 0; }
    bool is_scalar() const { return numel() == 1; }

    std::span<const S> data() const { return node_->value; }
    std::span<S> data() { return node_->value; }
    S item() const {
        if (!is_scalar()) throw ShapeError("item: tensor " + shape_str(shape_) + " is not scalar");
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::span<const S> grad() const { return node_->grad; }
    void zero_grad() {
        if (node_) node_->grad.clear();
    }

    // Deep copy of values; gradient state is not copied.
    TensorT clone() const {
        return from_data(shape_, std::vector<S>(node_->value.begin(), node_->value.end()),
                         node_->requires_grad);
    }

    struct Node {
        std::vector<S> value;
        std::vector<S> grad;  // empty until first accumulation
        bool requires_grad = false;

        void accumulate(std::span<const S> g) {
            if (grad.empty()) grad.assign(value.size(), S(0));
            for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
        }
        std::vector<S>& grad_buffer() {
            if (grad.empty()) grad.assign(value.size(), S(0));
            return grad;
        }
    };

    std::shared_ptr<Node> node() const { return node_; }

    TensorT(Shape shape, std::shared_ptr<Node> node) : shape_(std::move(shape)), node_(std::move(node)) {}

private:
    TensorT(Shape shape, bool requires_grad, S fill) : shape_(std::move(shape)) {
        node_ = std::make_shared<Node>();
        node_->value.assign(shape_numel(shape_), fill);
        node_->requires_grad = requires_grad;
    }

    Shape shape_;
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

// Ordered record of executed differentiable ops. Constructing a tape makes it
// the active one for the current thread; ops record themselves while any of
// their inputs requires gradients. backward() replays the record once, in
// reverse, then the tape is consumed.
template <typename S>
class GradientTapeT {
public:
    GradientTapeT() : prev_(active_) { active_ = this; }
    ~GradientTapeT() { active_ = prev_; }
    GradientTapeT(const GradientTapeT&) = delete;
    GradientTapeT& operator=(const GradientTapeT&) = delete;

    static GradientTapeT* active() { return active_; }

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return ops_.size(); }
    bool consumed() const { return consumed_; }

    void backward(const TensorT<S>& loss) {
        if (consumed_) throw std::logic_error("backward: tape already consumed");
        if (ops_.empty()) throw std::logic_error("backward: tape is empty");
        if (!loss.is_scalar())
            throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        loss.node()->grad_buffer()[0] = S(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        consumed_ = true;
        ops_.clear();
    }

private:
    std::vector<std::function<void()>> ops_;
    bool consumed_ = false;
    GradientTapeT* prev_ = nullptr;
    static thread_local GradientTapeT* active_;
};

template <typename S>
thread_local GradientTapeT<S>* GradientTapeT<S>::active_ = nullptr;

using GradientTape = GradientTapeT<float>;

namespace detail {

template <typename S>
void check_finite(std::span<const S> values, const char* op) {
    for (S v : values) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string(op) + ": non-finite value in output");
    }
}

// Records the op if a tape is active and any input carries gradients; the
// output inherits requires_grad in that case.
template <typename S, typename Fn>
void maybe_record(TensorT<S>& out, std::initializer_list<const TensorT<S>*> inputs, Fn&& backward_fn) {
    auto* tape = GradientTapeT<S>::active();
    if (!tape) return;
    bool any = false;
    for (const auto* t : inputs) any = any || t->requires_grad();
    if (!any) return;
    out.set_requires_grad(true);
    tape->record(std::forward<Fn>(backward_fn));
}

// Right operand may be a trailing-suffix of the left shape (bias style);
// richer broadcasting is rejected.
template <typename S>
void check_binary_shapes(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) return;
    if (sb.size() < sa.size() &&
        std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size())))
        return;
    throw ShapeError(std::string(op) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                     " do not match (only trailing-suffix broadcast of the right operand is supported)");
}

}  // namespace detail

// ---- elementwise binary ops (right operand may trailing-broadcast) ----

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_binary_shapes(a, b, "add");
    auto out = TensorT<S>::zeros(a.shape());
    const std::size_t nb = b.numel();
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i % nb];
    detail::check_finite(std::span<const S>(ov), "add");
    detail::maybe_record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), nb] {
        if (on->grad.empty()) return;
        if (an->requires_grad) an->accumulate(on->grad);
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < on->grad.size(); ++i) gb[i % nb] += on->grad[i];
        }
    });
    return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_binary_shapes(a, b, "sub");
    auto out = TensorT<S>::zeros(a.shape());
    const std::size_t nb = b.numel();
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i % nb];
    detail::check_finite(std::span<const S>(ov), "sub");
    detail::maybe_record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), nb] {
        if (on->grad.empty()) return;
        if (an->requires_grad) an->accumulate(on->grad);
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < on->grad.size(); ++i) gb[i % nb] -= on->grad[i];
        }
    });
    return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_binary_shapes(a, b, "mul");
    auto out = TensorT<S>::zeros(a.shape());
    const std::size_t nb = b.numel();
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i % nb];
    detail::check_finite(std::span<const S>(ov), "mul");
    detail::maybe_record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), nb] {
        if (on->grad.empty()) return;
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                ga[i] += on->grad[i] * bn->value[i % nb];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                gb[i % nb] += on->grad[i] * an->value[i];
        }
    });
    return out;
}

// y = scale * x + shift, elementwise with scalar coefficients.
template <typename S>
TensorT<S> affine(const TensorT<S>& x, S scale, S shift) {
    auto out = TensorT<S>::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = scale * xv[i] + shift;
    detail::check_finite(std::span<const S>(ov), "affine");
    detail::maybe_record(out, {&x}, [xn = x.node(), on = out.node(), scale] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < on->grad.size(); ++i) gx[i] += scale * on->grad[i];
    });
    return out;
}

// ---- elementwise unary ops ----

namespace detail {

template <typename S, typename F, typename DF>
TensorT<S> unary_op(const TensorT<S>& x, const char* name, F f, DF df) {
    auto out = TensorT<S>::zeros(x.shape());
    auto xv = x.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(xv[i]);
    check_finite(std::span<const S>(ov), name);
    maybe_record(out, {&x}, [xn = x.node(), on = out.node(), df] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < on->grad.size(); ++i)
            gx[i] += on->grad[i] * df(xn->value[i], on->value[i]);
    });
    return out;
}

}  // namespace detail

template <typename S>
TensorT<S> exp(const TensorT<S>& x) {
    return detail::unary_op(
        x, "exp", [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
TensorT<S> log(const TensorT<S>& x) {
    return detail::unary_op(
        x, "log", [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
TensorT<S> square(const TensorT<S>& x) {
    return detail::unary_op(
        x, "square", [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    return detail::unary_op(
        x, "sigmoid",
        [](S v) {
            return v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                             : std::exp(v) / (S(1) + std::exp(v));
        },
        [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
TensorT<S> leaky_relu(const TensorT<S>& x, S slope = S(0.01)) {
    return detail::unary_op(
        x, "leaky_relu", [slope](S v) { return v >= S(0) ? v : slope * v; },
        [slope](S v, S) { return v >= S(0) ? S(1) : slope; });
}

// ---- reductions ----

template <typename S>
TensorT<S> sum(const TensorT<S>& x) {
    S acc = S(0);
    for (S v : x.data()) acc += v;
    auto out = TensorT<S>::scalar(acc);
    detail::check_finite(std::span<const S>(out.data()), "sum");
    detail::maybe_record(out, {&x}, [xn = x.node(), on = out.node()] {
        if (on->grad.empty() || !xn->requires_grad) return;
        const S g = on->grad[0];
        auto& gx = xn->grad_buffer();
        for (auto& v : gx) v += g;
    });
    return out;
}

template <typename S>
TensorT<S> mean(const TensorT<S>& x) {
    if (x.numel() == 0) throw ShapeError("mean: empty tensor");
    S acc = S(0);
    for (S v : x.data()) acc += v;
    const S inv = S(1) / static_cast<S>(x.numel());
    auto out = TensorT<S>::scalar(acc * inv);
    detail::check_finite(std::span<const S>(out.data()), "mean");
    detail::maybe_record(out, {&x}, [xn = x.node(), on = out.node(), inv] {
        if (on->grad.empty() || !xn->requires_grad) return;
        const S g = on->grad[0] * inv;
        auto& gx = xn->grad_buffer();
        for (auto& v : gx) v += g;
    });
    return out;
}

// ---- shape ops ----

template <typename S>
TensorT<S> reshape(const TensorT<S>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    auto out = TensorT<S>::from_data(std::move(new_shape),
                                     std::vector<S>(x.data().begin(), x.data().end()));
    detail::maybe_record(out, {&x}, [xn = x.node(), on = out.node()] {
        if (on->grad.empty() || !xn->requires_grad) return;
        xn->accumulate(on->grad);
    });
    return out;
}

template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
    Shape out_shape = s0;
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        const Shape& sp = p.shape();
        if (sp.size() != s0.size())
            throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(sp));
        for (std::size_t d = 0; d < sp.size(); ++d)
            if (d != axis && sp[d] != s0[d])
                throw ShapeError("concat: shape mismatch off-axis " + shape_str(s0) + " vs " +
                                 shape_str(sp));
        axis_total += sp[axis];
    }
    out_shape[axis] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    auto out = TensorT<S>::zeros(out_shape);
    auto ov = out.data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t rows = p.shape()[axis];
        auto pv = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * rows * inner), rows * inner,
                        ov.begin() + static_cast<std::ptrdiff_t>((o * axis_total + offset) * inner));
        offset += rows;
    }

    auto* tape = GradientTapeT<S>::active();
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (tape && any) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<typename TensorT<S>::Node>> nodes;
        std::vector<std::size_t> axis_sizes;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            axis_sizes.push_back(p.shape()[axis]);
        }
        tape->record([nodes, axis_sizes, on = out.node(), outer, inner, axis_total] {
            if (on->grad.empty()) return;
            std::size_t offset = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                const std::size_t rows = axis_sizes[k];
                if (nodes[k]->requires_grad) {
                    auto& g = nodes[k]->grad_buffer();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < rows * inner; ++j)
                            g[o * rows * inner + j] +=
                                on->grad[(o * axis_total + offset) * inner + j];
                }
                offset += rows;
            }
        });
    }
    return out;
}

// ---- 2-D linear algebra ----

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    auto out = TensorT<S>::zeros({m, n});
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data());
    detail::check_finite(std::span<const S>(out.data()), "matmul");
    detail::maybe_record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), m, n, k] {
        if (on->grad.empty()) return;
        if (an->requires_grad)  // dA = dY * B^T
            detail::gemm_nt(m, k, n, on->grad.data(), bn->value.data(), an->grad_buffer().data());
        if (bn->requires_grad)  // dB = A^T * dY
            detail::gemm_tn(k, n, m, an->value.data(), on->grad.data(), bn->grad_buffer().data());
    });
    return out;
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& x) {
    if (x.shape().size() != 2) throw ShapeError("transpose: expects 2-D, got " + shape_str(x.shape()));
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    auto out = TensorT<S>::zeros({c, r});
    auto xv = x.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = xv[i * c + j];
    detail::maybe_record(out, {&x}, [xn = x.node(), on = out.node(), r, c] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += on->grad[j * r + i];
    });
    return out;
}

template <typename S>
TensorT<S> diag(const TensorT<S>& x) {
    if (x.shape().size() != 2 || x.shape()[0] != x.shape()[1])
        throw ShapeError("diag: expects square 2-D, got " + shape_str(x.shape()));
    const std::size_t n = x.shape()[0];
    auto out = TensorT<S>::zeros({n});
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i * n + i];
    detail::maybe_record(out, {&x}, [xn = x.node(), on = out.node(), n] {
        if (on->grad.empty() || !xn->requires_grad) return;
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gx[i * n + i] += on->grad[i];
    });
    return out;
}

// ---- gradient checking ----

// Central finite differences against the recorded backward pass. Instantiate
// with double tensors: float32 lacks the headroom for the quoted tolerances.
// Returns max over elements of |analytic - numeric| / max(1e-8, |a| + |n|).
template <typename S, typename Fn>
double finite_difference_check(Fn&& fn, std::vector<TensorT<S>>& inputs, S epsilon = S(1e-4)) {
    if (!(epsilon > S(0))) throw std::invalid_argument("finite_difference_check: epsilon must be > 0");

    std::vector<std::vector<S>> analytic;
    {
        for (auto& in : inputs) in.zero_grad();
        GradientTapeT<S> tape;
        TensorT<S> loss = fn(inputs);
        tape.backward(loss);
        for (auto& in : inputs) {
            if (in.requires_grad() && in.has_grad())
                analytic.emplace_back(in.grad().begin(), in.grad().end());
            else
                analytic.emplace_back(in.numel(), S(0));
        }
    }

    double max_rel = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!inputs[t].requires_grad()) continue;
        auto values = inputs[t].data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const S saved = values[i];
            values[i] = saved + epsilon;
            const double f_plus = static_cast<double>(fn(inputs).item());
            values[i] = saved - epsilon;
            const double f_minus = static_cast<double>(fn(inputs).item());
            values[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(epsilon));
            const double a = static_cast<double>(analytic[t][i]);
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace vaescene
