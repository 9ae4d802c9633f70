#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vaescene/tensor.hpp"

namespace vaescene {

// Strided 2-D convolution layer. Weight layout [out_ch, in_ch, k, k];
// cross-correlation semantics (no kernel flip).
template <typename S>
struct Conv2dLayerT {
    TensorT<S> weight;
    TensorT<S> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    Conv2dLayerT() = default;
    // with_bias=false for blocks where BatchNorm follows: the mean subtraction
    // cancels a bias exactly, leaving it a dead parameter.
    Conv2dLayerT(std::size_t out_ch, std::size_t in_ch, std::size_t k, std::size_t stride_,
                 std::size_t padding_, Rng& rng, bool with_bias = true)
        : stride(stride_), padding(padding_) {
        const S std_dev = std::sqrt(S(2) / static_cast<S>(in_ch * k * k));
        weight = TensorT<S>::randn({out_ch, in_ch, k, k}, rng, std_dev, true);
        bias = TensorT<S>::zeros({out_ch}, with_bias);
    }

    std::size_t out_channels() const { return weight.shape()[0]; }
    std::size_t in_channels() const { return weight.shape()[1]; }
    std::size_t ksize() const { return weight.shape()[2]; }
};

// Transposed-convolution layer, the adjoint map of Conv2d. Weight layout
// [in_ch, out_ch, k, k]: dim 0 is this op's input channel count, so a Conv2d
// weight buffer reused here verbatim yields the exact adjoint.
template <typename S>
struct ConvTranspose2dLayerT {
    TensorT<S> weight;
    TensorT<S> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    ConvTranspose2dLayerT() = default;
    ConvTranspose2dLayerT(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride_,
                          std::size_t padding_, Rng& rng, bool with_bias = true)
        : stride(stride_), padding(padding_) {
        const S std_dev = std::sqrt(S(2) / static_cast<S>(in_ch * k * k));
        weight = TensorT<S>::randn({in_ch, out_ch, k, k}, rng, std_dev, true);
        bias = TensorT<S>::zeros({out_ch}, with_bias);
    }

    std::size_t in_channels() const { return weight.shape()[0]; }
    std::size_t out_channels() const { return weight.shape()[1]; }
    std::size_t ksize() const { return weight.shape()[2]; }
};

template <typename S>
struct BatchNorm2dLayerT {
    TensorT<S> gamma;
    TensorT<S> beta;
    std::vector<S> running_mean;
    std::vector<S> running_var;
    S momentum = S(0.1);
    S epsilon = S(1e-5);

    BatchNorm2dLayerT() = default;
    explicit BatchNorm2dLayerT(std::size_t channels) {
        gamma = TensorT<S>::ones({channels}, true);
        beta = TensorT<S>::zeros({channels}, true);
        running_mean.assign(channels, S(0));
        running_var.assign(channels, S(1));
    }

    std::size_t channels() const { return gamma.numel(); }
};

template <typename S>
struct LinearLayerT {
    TensorT<S> weight;  // [out, in]
    TensorT<S> bias;    // [out]

    LinearLayerT() = default;
    LinearLayerT(std::size_t out, std::size_t in, Rng& rng) {
        const S std_dev = std::sqrt(S(2) / static_cast<S>(in));
        weight = TensorT<S>::randn({out, in}, rng, std_dev, true);
        bias = TensorT<S>::zeros({out}, true);
    }
};

using Conv2dLayer = Conv2dLayerT<float>;
using ConvTranspose2dLayer = ConvTranspose2dLayerT<float>;
using BatchNorm2dLayer = BatchNorm2dLayerT<float>;
using LinearLayer = LinearLayerT<float>;

namespace detail {

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                                 std::size_t pad) {
    const std::ptrdiff_t num =
        static_cast<std::ptrdiff_t>(in + 2 * pad) - static_cast<std::ptrdiff_t>(k);
    if (num < 0) return 0;
    return static_cast<std::size_t>(num) / stride + 1;
}

}  // namespace detail

// x: [N, C, H, W] -> [N, out_ch, H', W'] with H' = floor((H + 2p - k)/s) + 1.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const Conv2dLayerT<S>& layer) {
    if (x.shape().size() != 4)
        throw ShapeError("conv2d: expects [N,C,H,W], got " + shape_str(x.shape()));
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (c != layer.in_channels())
        throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, layer expects " +
                         std::to_string(layer.in_channels()));
    const std::size_t k = layer.ksize(), s = layer.stride, p = layer.padding;
    const std::size_t oh = detail::conv_out_size(h, k, s, p);
    const std::size_t ow = detail::conv_out_size(w, k, s, p);
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: degenerate output for input " + shape_str(x.shape()) + " with k=" +
                         std::to_string(k) + " stride=" + std::to_string(s) + " pad=" + std::to_string(p));
    const std::size_t oc = layer.out_channels();
    const std::size_t patch = oh * ow;
    const std::size_t krows = c * k * k;

    // All batch items share one column matrix so each layer runs 3 big GEMMs.
    auto cols = std::make_shared<std::vector<S>>(krows * n * patch);
    for (std::size_t b = 0; b < n; ++b)
        detail::im2col(x.data().data() + b * c * h * w, c, h, w, k, s, p, oh, ow,
                       cols->data() + b * patch, n * patch);

    std::vector<S> ytmp(oc * n * patch, S(0));
    detail::gemm_nn(oc, n * patch, krows, layer.weight.data().data(), cols->data(), ytmp.data());

    auto out = TensorT<S>::zeros({n, oc, oh, ow});
    auto ov = out.data();
    auto bv = layer.bias.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < oc; ++o) {
            const S* src = ytmp.data() + o * n * patch + b * patch;
            S* dst = ov.data() + (b * oc + o) * patch;
            for (std::size_t i = 0; i < patch; ++i) dst[i] = src[i] + bv[o];
        }
    detail::check_finite(std::span<const S>(ov), "conv2d");

    detail::maybe_record(
        out, {&x, &layer.weight, &layer.bias},
        [xn = x.node(), wn = layer.weight.node(), bn = layer.bias.node(), on = out.node(), cols, n,
         c, h, w, k, s, p, oh, ow, oc, patch, krows] {
            if (on->grad.empty()) return;
            std::vector<S> gy(oc * n * patch);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t o = 0; o < oc; ++o)
                    std::copy_n(on->grad.data() + (b * oc + o) * patch, patch,
                                gy.data() + o * n * patch + b * patch);
            if (bn->requires_grad) {
                auto& gb = bn->grad_buffer();
                for (std::size_t o = 0; o < oc; ++o) {
                    S acc = S(0);
                    const S* row = gy.data() + o * n * patch;
                    for (std::size_t i = 0; i < n * patch; ++i) acc += row[i];
                    gb[o] += acc;
                }
            }
            if (wn->requires_grad)
                detail::gemm_nt(oc, krows, n * patch, gy.data(), cols->data(),
                                wn->grad_buffer().data());
            if (xn->requires_grad) {
                std::vector<S> gcols(krows * n * patch, S(0));
                detail::gemm_tn(krows, n * patch, oc, wn->value.data(), gy.data(), gcols.data());
                auto& gx = xn->grad_buffer();
                for (std::size_t b = 0; b < n; ++b)
                    detail::col2im(gcols.data() + b * patch, n * patch, c, h, w, k, s, p, oh, ow,
                                   gx.data() + b * c * h * w);
            }
        });
    return out;
}

// x: [N, in_ch, H, W] -> [N, out_ch, H2, W2] with H2 = (H-1)*s - 2p + k.
// Exact adjoint of conv2d over the same weight buffer (zero bias).
template <typename S>
TensorT<S> conv_transpose2d(const TensorT<S>& x, const ConvTranspose2dLayerT<S>& layer) {
    if (x.shape().size() != 4)
        throw ShapeError("conv_transpose2d: expects [N,C,H,W], got " + shape_str(x.shape()));
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (c != layer.in_channels())
        throw ShapeError("conv_transpose2d: input has " + std::to_string(c) +
                         " channels, layer expects " + std::to_string(layer.in_channels()));
    const std::size_t k = layer.ksize(), s = layer.stride, p = layer.padding;
    const std::ptrdiff_t oh_signed =
        static_cast<std::ptrdiff_t>((h - 1) * s + k) - 2 * static_cast<std::ptrdiff_t>(p);
    const std::ptrdiff_t ow_signed =
        static_cast<std::ptrdiff_t>((w - 1) * s + k) - 2 * static_cast<std::ptrdiff_t>(p);
    if (oh_signed < 1 || ow_signed < 1)
        throw ShapeError("conv_transpose2d: degenerate output for input " + shape_str(x.shape()));
    const std::size_t oh = static_cast<std::size_t>(oh_signed);
    const std::size_t ow = static_cast<std::size_t>(ow_signed);
    const std::size_t oc = layer.out_channels();
    const std::size_t patch = h * w;           // "conv-direction" output patch
    const std::size_t krows = oc * k * k;

    // Gather x into [c, n*patch] so the whole batch shares one GEMM, then
    // scatter columns into the upsampled output.
    std::vector<S> xtmp(c * n * patch);
    auto xv = x.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            std::copy_n(xv.data() + (b * c + ch) * patch, patch,
                        xtmp.data() + ch * n * patch + b * patch);

    std::vector<S> cols(krows * n * patch, S(0));
    detail::gemm_tn(krows, n * patch, c, layer.weight.data().data(), xtmp.data(), cols.data());

    auto out = TensorT<S>::zeros({n, oc, oh, ow});
    auto ov = out.data();
    for (std::size_t b = 0; b < n; ++b)
        detail::col2im(cols.data() + b * patch, n * patch, oc, oh, ow, k, s, p, h, w,
                       ov.data() + b * oc * oh * ow);
    auto bv = layer.bias.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < oc; ++o) {
            S* dst = ov.data() + (b * oc + o) * oh * ow;
            for (std::size_t i = 0; i < oh * ow; ++i) dst[i] += bv[o];
        }
    detail::check_finite(std::span<const S>(ov), "conv_transpose2d");

    detail::maybe_record(
        out, {&x, &layer.weight, &layer.bias},
        [xn = x.node(), wn = layer.weight.node(), bn = layer.bias.node(), on = out.node(), n, c, h,
         w, k, s, p, oh, ow, oc, patch, krows] {
            if (on->grad.empty()) return;
            if (bn->requires_grad) {
                auto& gb = bn->grad_buffer();
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t o = 0; o < oc; ++o) {
                        S acc = S(0);
                        const S* row = on->grad.data() + (b * oc + o) * oh * ow;
                        for (std::size_t i = 0; i < oh * ow; ++i) acc += row[i];
                        gb[o] += acc;
                    }
            }
            const bool need_x = xn->requires_grad;
            const bool need_w = wn->requires_grad;
            if (!need_x && !need_w) return;
            // im2col of the output gradient plays the conv-direction input.
            std::vector<S> gcols(krows * n * patch);
            for (std::size_t b = 0; b < n; ++b)
                detail::im2col(on->grad.data() + b * oc * oh * ow, oc, oh, ow, k, s, p, h, w,
                               gcols.data() + b * patch, n * patch);
            if (need_x) {
                std::vector<S> gxtmp(c * n * patch, S(0));
                detail::gemm_nn(c, n * patch, krows, wn->value.data(), gcols.data(), gxtmp.data());
                auto& gx = xn->grad_buffer();
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const S* src = gxtmp.data() + ch * n * patch + b * patch;
                        S* dst = gx.data() + (b * c + ch) * patch;
                        for (std::size_t i = 0; i < patch; ++i) dst[i] += src[i];
                    }
            }
            if (need_w) {
                std::vector<S> xtmp2(c * n * patch);
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        std::copy_n(xn->value.data() + (b * c + ch) * patch, patch,
                                    xtmp2.data() + ch * n * patch + b * patch);
                detail::gemm_nt(c, krows, n * patch, xtmp2.data(), gcols.data(),
                                wn->grad_buffer().data());
            }
        });
    return out;
}

// Train mode normalizes with batch statistics (biased variance) and updates
// the running buffers in place; eval mode is a pure function of x and the
// buffers. Batch size must be >= 2 in train mode.
template <typename S>
TensorT<S> batchnorm2d(const TensorT<S>& x, BatchNorm2dLayerT<S>& layer, bool training) {
    if (x.shape().size() != 4)
        throw ShapeError("batchnorm2d: expects [N,C,H,W], got " + shape_str(x.shape()));
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (c != layer.channels())
        throw ShapeError("batchnorm2d: input has " + std::to_string(c) + " channels, layer has " +
                         std::to_string(layer.channels()));
    if (training && n < 2) throw ShapeError("batchnorm2d: train mode needs batch size >= 2");

    const std::size_t plane = h * w;
    const std::size_t count = n * plane;
    auto xv = x.data();
    std::vector<S> mean_c(c), var_c(c);
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            S m = S(0);
            for (std::size_t b = 0; b < n; ++b) {
                const S* src = xv.data() + (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) m += src[i];
            }
            m /= static_cast<S>(count);
            S v = S(0);
            for (std::size_t b = 0; b < n; ++b) {
                const S* src = xv.data() + (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const S d = src[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<S>(count);
            mean_c[ch] = m;
            var_c[ch] = v;
            layer.running_mean[ch] = (S(1) - layer.momentum) * layer.running_mean[ch] + layer.momentum * m;
            layer.running_var[ch] = (S(1) - layer.momentum) * layer.running_var[ch] + layer.momentum * v;
        }
    } else {
        mean_c = layer.running_mean;
        var_c = layer.running_var;
    }

    auto out = TensorT<S>::zeros(x.shape());
    auto ov = out.data();
    auto gv = layer.gamma.data();
    auto bv = layer.beta.data();
    std::vector<S> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = S(1) / std::sqrt(var_c[ch] + layer.epsilon);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const S* src = xv.data() + (b * c + ch) * plane;
            S* dst = ov.data() + (b * c + ch) * plane;
            const S m = mean_c[ch], is = inv_std[ch], g = gv[ch], bb = bv[ch];
            for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - m) * is * g + bb;
        }
    detail::check_finite(std::span<const S>(ov), "batchnorm2d");

    detail::maybe_record(
        out, {&x, &layer.gamma, &layer.beta},
        [xn = x.node(), gn = layer.gamma.node(), bn = layer.beta.node(), on = out.node(), mean_c,
         inv_std, n, c, plane, count, training] {
            if (on->grad.empty()) return;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const S m = mean_c[ch], is = inv_std[ch];
                S sum_dy = S(0), sum_dy_xhat = S(0);
                for (std::size_t b = 0; b < n; ++b) {
                    const S* dy = on->grad.data() + (b * c + ch) * plane;
                    const S* xb = xn->value.data() + (b * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (xb[i] - m) * is;
                    }
                }
                if (gn->requires_grad) gn->grad_buffer()[ch] += sum_dy_xhat;
                if (bn->requires_grad) bn->grad_buffer()[ch] += sum_dy;
                if (xn->requires_grad) {
                    auto& gx = xn->grad_buffer();
                    const S g = gn->value[ch];
                    if (training) {
                        const S inv_count = S(1) / static_cast<S>(count);
                        for (std::size_t b = 0; b < n; ++b) {
                            const S* dy = on->grad.data() + (b * c + ch) * plane;
                            const S* xb = xn->value.data() + (b * c + ch) * plane;
                            S* dst = gx.data() + (b * c + ch) * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                                const S xhat = (xb[i] - m) * is;
                                dst[i] += g * is *
                                          (dy[i] - inv_count * (sum_dy + xhat * sum_dy_xhat));
                            }
                        }
                    } else {
                        for (std::size_t b = 0; b < n; ++b) {
                            const S* dy = on->grad.data() + (b * c + ch) * plane;
                            S* dst = gx.data() + (b * c + ch) * plane;
                            for (std::size_t i = 0; i < plane; ++i) dst[i] += g * is * dy[i];
                        }
                    }
                }
            }
        });
    return out;
}

// x: [N, in] -> [N, out] as x * W^T + b.
template <typename S>
TensorT<S> linear(const TensorT<S>& x, const LinearLayerT<S>& layer) {
    if (x.shape().size() != 2)
        throw ShapeError("linear: expects [N,in], got " + shape_str(x.shape()));
    const std::size_t n = x.shape()[0], in = x.shape()[1];
    const std::size_t out_dim = layer.weight.shape()[0];
    if (in != layer.weight.shape()[1])
        throw ShapeError("linear: input width " + std::to_string(in) + " != layer width " +
                         std::to_string(layer.weight.shape()[1]));
    auto out = TensorT<S>::zeros({n, out_dim});
    detail::gemm_nt(n, out_dim, in, x.data().data(), layer.weight.data().data(), out.data().data());
    auto ov = out.data();
    auto bv = layer.bias.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) ov[i * out_dim + j] += bv[j];
    detail::check_finite(std::span<const S>(ov), "linear");

    detail::maybe_record(
        out, {&x, &layer.weight, &layer.bias},
        [xn = x.node(), wn = layer.weight.node(), bn = layer.bias.node(), on = out.node(), n, in,
         out_dim] {
            if (on->grad.empty()) return;
            if (xn->requires_grad)  // dX = dY * W
                detail::gemm_nn(n, in, out_dim, on->grad.data(), wn->value.data(),
                                xn->grad_buffer().data());
            if (wn->requires_grad)  // dW = dY^T * X
                detail::gemm_tn(out_dim, in, n, on->grad.data(), xn->value.data(),
                                wn->grad_buffer().data());
            if (bn->requires_grad) {
                auto& gb = bn->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < out_dim; ++j) gb[j] += on->grad[i * out_dim + j];
            }
        });
    return out;
}

// z = mu + exp(0.5 * logvar) * eps. Gradients flow through mu and logvar;
// eps is treated as a constant draw.
template <typename S>
TensorT<S> reparameterize(const TensorT<S>& mu, const TensorT<S>& logvar, const TensorT<S>& eps) {
    if (mu.shape() != logvar.shape() || mu.shape() != eps.shape())
        throw ShapeError("reparameterize: shapes differ: mu " + shape_str(mu.shape()) + ", logvar " +
                         shape_str(logvar.shape()) + ", eps " + shape_str(eps.shape()));
    auto sigma = exp(affine(logvar, S(0.5), S(0)));
    return add(mul(sigma, eps), mu);
}

// Adam with bias correction; holds first/second moment state per parameter.
template <typename S>
class AdamT {
public:
    AdamT(std::vector<TensorT<S>> params, S lr, S beta1 = S(0.9), S beta2 = S(0.999),
          S epsilon = S(1e-8))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), S(0));
            v_.emplace_back(p.numel(), S(0));
        }
    }

    // Applies one update from the accumulated gradients, then clears them.
    void step() {
        ++t_;
        const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
        const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto pv = params_[i].data();
            auto g = params_[i].grad();
            for (std::size_t j = 0; j < pv.size(); ++j) {
                const S gj = g.empty() ? S(0) : g[j];
                m_[i][j] = beta1_ * m_[i][j] + (S(1) - beta1_) * gj;
                v_[i][j] = beta2_ * v_[i][j] + (S(1) - beta2_) * gj * gj;
                const S mhat = m_[i][j] / bc1;
                const S vhat = v_[i][j] / bc2;
                pv[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            params_[i].zero_grad();
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::size_t steps() const { return t_; }

private:
    std::vector<TensorT<S>> params_;
    S lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<S>> m_, v_;
};

using Adam = AdamT<float>;

}  // namespace vaescene
