#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vaescene/nn.hpp"
#include "vaescene/tensor.hpp"

namespace vaescene {

enum class VaeVariant { vanilla, dip };

struct VaeConfig {
    std::size_t image_size = 64;
    std::size_t latent_dim = 128;
    std::vector<std::size_t> channel_schedule;  // empty -> default for image_size
    VaeVariant variant = VaeVariant::dip;
    double lambda_d = 50.0;   // DIP diagonal weight
    double lambda_od = 5.0;   // DIP off-diagonal weight
    double recon_weight = 1.0;
    double leaky_slope = 0.01;

    // 5 stride-2 blocks for 64x64, one extra (same width) for 128x128 so the
    // flattened head stays 512*2*2.
    static std::vector<std::size_t> default_channels(std::size_t image_size) {
        if (image_size == 128) return {32, 64, 128, 256, 512, 512};
        return {32, 64, 128, 256, 512};
    }

    std::vector<std::size_t> channels() const {
        return channel_schedule.empty() ? default_channels(image_size) : channel_schedule;
    }

    void validate() const {
        if (latent_dim < 1) throw ShapeError("VaeConfig: latent_dim must be >= 1");
        const auto chans = channels();
        if (chans.empty()) throw ShapeError("VaeConfig: empty channel schedule");
        if (image_size == 0 || (image_size & (image_size - 1)) != 0)
            throw ShapeError("VaeConfig: image_size must be a power of two");
        if (image_size >> chans.size() == 0)
            throw ShapeError("VaeConfig: image_size " + std::to_string(image_size) +
                             " too small for " + std::to_string(chans.size()) + " stride-2 blocks");
    }
};

// Per-image latent triple; z is the 128-d global descriptor (z == mu at
// inference, no sampling).
struct LatentCode {
    std::vector<float> mu;
    std::vector<float> logvar;
    std::vector<float> z;
};

struct LossBreakdown {
    double recon = 0.0;
    double kl = 0.0;
    double dip = 0.0;
    double total = 0.0;
};

// Mean over the batch of 0.5 * sum_d(mu^2 + sigma^2 - 1 - logvar).
// Zero exactly when mu == 0 and logvar == 0.
template <typename S>
TensorT<S> kl_standard_normal(const TensorT<S>& mu, const TensorT<S>& logvar) {
    if (mu.shape() != logvar.shape())
        throw ShapeError("kl_standard_normal: mu " + shape_str(mu.shape()) + " vs logvar " +
                         shape_str(logvar.shape()));
    if (mu.shape().size() != 2) throw ShapeError("kl_standard_normal: expects [N,D]");
    const S n = static_cast<S>(mu.shape()[0]);
    auto terms = affine(sub(add(square(mu), exp(logvar)), logvar), S(1), S(-1));
    return affine(sum(terms), S(0.5) / n, S(0));
}

// DIP penalty over the batch covariance of mu (divide-by-N convention):
// lambda_od * sum_{i!=j} Cov_ij^2 + lambda_d * sum_i (Cov_ii - 1)^2.
template <typename S>
TensorT<S> dip_penalty(const TensorT<S>& mu, S lambda_d, S lambda_od) {
    if (mu.shape().size() != 2) throw ShapeError("dip_penalty: expects [N,D]");
    const std::size_t n = mu.shape()[0];
    if (n < 2) throw ShapeError("dip_penalty: batch size must be >= 2, got " + std::to_string(n));
    const std::size_t d = mu.shape()[1];
    const S inv_n = S(1) / static_cast<S>(n);

    auto ones_row = TensorT<S>::ones({1, n});
    auto mean_row = affine(matmul(ones_row, mu), inv_n, S(0));      // [1,D]
    auto centered = sub(mu, reshape(mean_row, {d}));                // broadcast over rows
    auto cov = affine(matmul(transpose(centered), centered), inv_n, S(0));  // [D,D]
    auto diag_cov = diag(cov);
    auto off_sq = sub(sum(square(cov)), sum(square(diag_cov)));
    auto diag_pen = sum(square(affine(diag_cov, S(1), S(-1))));
    return add(affine(off_sq, lambda_od, S(0)), affine(diag_pen, lambda_d, S(0)));
}

// Convolutional encoder/decoder pair. Encoder: stride-2 conv -> BatchNorm ->
// LeakyReLU blocks, then two linear heads for mu and logvar. Decoder mirrors
// with k=4 s=2 p=1 transposed convs and a final sigmoid.
template <typename S>
class VaeModelT {
public:
    VaeModelT(VaeConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(derive_seed(seed, "vae-init"));
        const auto chans = cfg_.channels();
        const std::size_t nblocks = chans.size();

        std::size_t in_ch = 3;
        for (std::size_t i = 0; i < nblocks; ++i) {
            // BatchNorm follows every encoder conv, so the convs carry no bias.
            enc_.push_back({Conv2dLayerT<S>(chans[i], in_ch, 3, 2, 1, rng, false),
                            BatchNorm2dLayerT<S>(chans[i])});
            in_ch = chans[i];
        }
        final_spatial_ = cfg_.image_size >> nblocks;
        flat_ = chans.back() * final_spatial_ * final_spatial_;
        fc_mu_ = LinearLayerT<S>(cfg_.latent_dim, flat_, rng);
        fc_logvar_ = LinearLayerT<S>(cfg_.latent_dim, flat_, rng);
        fc_dec_ = LinearLayerT<S>(flat_, cfg_.latent_dim, rng);
        for (std::size_t i = 0; i < nblocks; ++i) {
            const std::size_t cin = chans[nblocks - 1 - i];
            const bool last = (i + 1 == nblocks);
            const std::size_t cout = last ? 3 : chans[nblocks - 2 - i];
            DecBlock blk;
            // Only the final (sigmoid, no BatchNorm) block keeps a bias.
            blk.conv = ConvTranspose2dLayerT<S>(cin, cout, 4, 2, 1, rng, last);
            if (!last) blk.bn = BatchNorm2dLayerT<S>(cout);
            blk.final = last;
            dec_.push_back(std::move(blk));
        }
    }

    const VaeConfig& config() const { return cfg_; }
    std::size_t latent_dim() const { return cfg_.latent_dim; }
    std::size_t image_size() const { return cfg_.image_size; }

    // Graph-building pass over a batch [N,3,S,S]; records on the active tape.
    std::pair<TensorT<S>, TensorT<S>> encode_batch(const TensorT<S>& x, bool training) {
        check_batch(x);
        TensorT<S> h = x;
        for (auto& blk : enc_) {
            h = conv2d(h, blk.conv);
            h = batchnorm2d(h, blk.bn, training);
            h = leaky_relu(h, static_cast<S>(cfg_.leaky_slope));
        }
        h = reshape(h, {x.shape()[0], flat_});
        return {linear(h, fc_mu_), linear(h, fc_logvar_)};
    }

    TensorT<S> decode_batch(const TensorT<S>& z, bool training) {
        if (z.shape().size() != 2 || z.shape()[1] != cfg_.latent_dim)
            throw ShapeError("decode: expects [N," + std::to_string(cfg_.latent_dim) + "], got " +
                             shape_str(z.shape()));
        const std::size_t n = z.shape()[0];
        TensorT<S> h = linear(z, fc_dec_);
        h = reshape(h, {n, cfg_.channels().back(), final_spatial_, final_spatial_});
        for (auto& blk : dec_) {
            h = conv_transpose2d(h, blk.conv);
            if (blk.final) {
                h = sigmoid(h);
            } else {
                h = batchnorm2d(h, blk.bn, training);
                h = leaky_relu(h, static_cast<S>(cfg_.leaky_slope));
            }
        }
        return h;
    }

    // Inference-mode descriptor for one [3,S,S] image in [0,1]; z := mu.
    LatentCode encode(std::span<const float> image) {
        const std::size_t want = 3 * cfg_.image_size * cfg_.image_size;
        if (image.size() != want)
            throw ShapeError("encode: image has " + std::to_string(image.size()) +
                             " values, model expects " + std::to_string(want));
        for (float v : image) {
            if (!(v >= 0.0f && v <= 1.0f))
                throw NumericError("encode: pixel values must lie in [0,1]");
        }
        std::vector<S> buf(image.begin(), image.end());
        auto x = TensorT<S>::from_data({1, 3, cfg_.image_size, cfg_.image_size}, std::move(buf));
        auto [mu, logvar] = encode_batch(x, false);
        LatentCode code;
        code.mu.assign(mu.data().begin(), mu.data().end());
        code.logvar.assign(logvar.data().begin(), logvar.data().end());
        code.z = code.mu;
        return code;
    }

    // Decodes one latent vector to a [3,S,S] image in [0,1].
    std::vector<float> decode(std::span<const float> z) {
        if (z.size() != cfg_.latent_dim)
            throw ShapeError("decode: latent has " + std::to_string(z.size()) +
                             " values, model expects " + std::to_string(cfg_.latent_dim));
        std::vector<S> buf(z.begin(), z.end());
        auto zt = TensorT<S>::from_data({1, cfg_.latent_dim}, std::move(buf));
        auto img = decode_batch(zt, false);
        return std::vector<float>(img.data().begin(), img.data().end());
    }

    // Training objective on a batch: recon (pixel-summed MSE, batch-averaged)
    // + KL + optional DIP penalty on mu. In training mode the expected recon
    // is estimated with mc_samples reparameterized draws; eval mode is
    // deterministic (z = mu, no sampling).
    std::pair<TensorT<S>, LossBreakdown> loss(const TensorT<S>& x, Rng& rng, bool training,
                                              std::size_t mc_samples = 1) {
        check_batch(x);
        if (mc_samples < 1) throw ShapeError("loss: mc_samples must be >= 1");
        const std::size_t n = x.shape()[0];
        auto [mu, logvar] = encode_batch(x, training);

        TensorT<S> recon;
        if (training) {
            TensorT<S> sq_sum;
            for (std::size_t m = 0; m < mc_samples; ++m) {
                auto eps = TensorT<S>::randn({n, cfg_.latent_dim}, rng);
                auto z = reparameterize(mu, logvar, eps);
                auto xhat = decode_batch(z, training);
                auto term = sum(square(sub(x, xhat)));
                sq_sum = (m == 0) ? term : add(sq_sum, term);
            }
            recon = affine(sq_sum, S(1) / static_cast<S>(n * mc_samples), S(0));
        } else {
            auto xhat = decode_batch(mu, training);
            recon = affine(sum(square(sub(x, xhat))), S(1) / static_cast<S>(n), S(0));
        }
        auto kl = kl_standard_normal(mu, logvar);
        TensorT<S> total = add(affine(recon, static_cast<S>(cfg_.recon_weight), S(0)), kl);

        LossBreakdown bd;
        bd.recon = static_cast<double>(recon.item());
        bd.kl = static_cast<double>(kl.item());
        if (cfg_.variant == VaeVariant::dip && n >= 2) {
            auto dip = dip_penalty(mu, static_cast<S>(cfg_.lambda_d), static_cast<S>(cfg_.lambda_od));
            bd.dip = static_cast<double>(dip.item());
            total = add(total, dip);
        }
        bd.total = static_cast<double>(total.item());
        return {total, bd};
    }

    // Name -> tensor map covering trainable parameters (bias-free conv blocks
    // contribute only their weights).
    std::vector<std::pair<std::string, TensorT<S>>> named_parameters() {
        std::vector<std::pair<std::string, TensorT<S>>> out;
        for (std::size_t i = 0; i < enc_.size(); ++i) {
            const std::string p = "enc." + std::to_string(i) + ".";
            out.emplace_back(p + "conv.weight", enc_[i].conv.weight);
            out.emplace_back(p + "bn.gamma", enc_[i].bn.gamma);
            out.emplace_back(p + "bn.beta", enc_[i].bn.beta);
        }
        out.emplace_back("fc_mu.weight", fc_mu_.weight);
        out.emplace_back("fc_mu.bias", fc_mu_.bias);
        out.emplace_back("fc_logvar.weight", fc_logvar_.weight);
        out.emplace_back("fc_logvar.bias", fc_logvar_.bias);
        out.emplace_back("fc_dec.weight", fc_dec_.weight);
        out.emplace_back("fc_dec.bias", fc_dec_.bias);
        for (std::size_t i = 0; i < dec_.size(); ++i) {
            const std::string p = "dec." + std::to_string(i) + ".";
            out.emplace_back(p + "conv.weight", dec_[i].conv.weight);
            if (dec_[i].final) out.emplace_back(p + "conv.bias", dec_[i].conv.bias);
            if (!dec_[i].final) {
                out.emplace_back(p + "bn.gamma", dec_[i].bn.gamma);
                out.emplace_back(p + "bn.beta", dec_[i].bn.beta);
            }
        }
        return out;
    }

    // BatchNorm running statistics, serialized alongside the parameters.
    std::vector<std::pair<std::string, std::vector<S>*>> named_buffers() {
        std::vector<std::pair<std::string, std::vector<S>*>> out;
        for (std::size_t i = 0; i < enc_.size(); ++i) {
            const std::string p = "enc." + std::to_string(i) + ".bn.";
            out.emplace_back(p + "running_mean", &enc_[i].bn.running_mean);
            out.emplace_back(p + "running_var", &enc_[i].bn.running_var);
        }
        for (std::size_t i = 0; i < dec_.size(); ++i) {
            if (dec_[i].final) continue;
            const std::string p = "dec." + std::to_string(i) + ".bn.";
            out.emplace_back(p + "running_mean", &dec_[i].bn.running_mean);
            out.emplace_back(p + "running_var", &dec_[i].bn.running_var);
        }
        return out;
    }

private:
    void check_batch(const TensorT<S>& x) const {
        if (x.shape().size() != 4 || x.shape()[1] != 3 || x.shape()[2] != cfg_.image_size ||
            x.shape()[3] != cfg_.image_size)
            throw ShapeError("vae: expects [N,3," + std::to_string(cfg_.image_size) + "," +
                             std::to_string(cfg_.image_size) + "], got " + shape_str(x.shape()));
    }

    struct EncBlock {
        Conv2dLayerT<S> conv;
        BatchNorm2dLayerT<S> bn;
    };
    struct DecBlock {
        ConvTranspose2dLayerT<S> conv;
        BatchNorm2dLayerT<S> bn;
        bool final = false;
    };

    VaeConfig cfg_;
    std::vector<EncBlock> enc_;
    std::vector<DecBlock> dec_;
    LinearLayerT<S> fc_mu_, fc_logvar_, fc_dec_;
    std::size_t final_spatial_ = 0;
    std::size_t flat_ = 0;
};

using VaeModel = VaeModelT<float>;

// Horizontal strip of decodes of z with z[dim] swept over `values`.
struct ImageGrid {
    std::size_t tile_size = 0;
    std::size_t tiles = 0;
    std::vector<float> pixels;  // [3, tile_size, tile_size * tiles]
};

template <typename S>
ImageGrid latent_traverse(VaeModelT<S>& model, std::span<const float> z, std::size_t dim,
                          std::span<const float> values) {
    if (dim >= model.latent_dim())
        throw ShapeError("latent_traverse: dim " + std::to_string(dim) + " out of range for latent " +
                         std::to_string(model.latent_dim()));
    if (values.empty()) throw ShapeError("latent_traverse: no values");
    const std::size_t s = model.image_size();
    ImageGrid grid;
    grid.tile_size = s;
    grid.tiles = values.size();
    grid.pixels.assign(3 * s * s * values.size(), 0.0f);
    std::vector<float> zmod(z.begin(), z.end());
    for (std::size_t t = 0; t < values.size(); ++t) {
        zmod[dim] = values[t];
        const auto img = model.decode(zmod);
        const std::size_t row_w = s * values.size();
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x)
                    grid.pixels[(c * s + y) * row_w + t * s + x] = img[(c * s + y) * s + x];
    }
    return grid;
}

}  // namespace vaescene
