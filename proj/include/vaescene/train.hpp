#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "vaescene/vae.hpp"

namespace vaescene {

struct TrainConfig {
    double learning_rate = 0.005;
    std::size_t max_epochs = 500;
    std::size_t patience = 100;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::size_t mc_samples = 1;   // reparameterized draws per step
    double val_fraction = 0.1;    // held out of the training images, seed-fixed

    void validate() const {
        if (batch_size < 2) throw ShapeError("TrainConfig: batch_size must be >= 2");
        if (max_epochs < 1) throw ShapeError("TrainConfig: max_epochs must be >= 1");
        if (!(val_fraction > 0.0 && val_fraction < 1.0))
            throw ShapeError("TrainConfig: val_fraction must lie in (0,1)");
        if (!(learning_rate > 0.0)) throw ShapeError("TrainConfig: learning_rate must be > 0");
    }
};

// Patience-based stopper over a validation metric (lower is better).
// update() is called once per epoch, in order; it returns true when the
// metric has not improved for `patience` consecutive epochs, i.e. training
// halts at epoch best_epoch() + patience.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    bool update(double value) {
        ++epoch_;
        if (epoch_ == 1 || value < best_value_) {
            best_value_ = value;
            best_epoch_ = epoch_;
            since_best_ = 0;
            improved_ = true;
        } else {
            ++since_best_;
            improved_ = false;
        }
        return since_best_ >= patience_;
    }

    bool improved_last() const { return improved_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_value() const { return best_value_; }
    std::size_t epochs_seen() const { return epoch_; }

private:
    std::size_t patience_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    double best_value_ = 0.0;
    bool improved_ = false;
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    LossBreakdown train;
    LossBreakdown val;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::size_t epochs_run = 0;
    bool stopped_early = false;
};

namespace detail {

template <typename S>
TensorT<S> gather_batch(const std::vector<std::vector<float>>& images,
                        const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
                        std::size_t image_size) {
    const std::size_t px = 3 * image_size * image_size;
    std::vector<S> buf((hi - lo) * px);
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& img = images[idx[i]];
        if (img.size() != px)
            throw ShapeError("train_vae: image " + std::to_string(idx[i]) + " has " +
                             std::to_string(img.size()) + " values, expected " + std::to_string(px));
        std::copy(img.begin(), img.end(), buf.begin() + (i - lo) * px);
    }
    return TensorT<S>::from_data({hi - lo, 3, image_size, image_size}, std::move(buf));
}

}  // namespace detail

// Trains the model in place on `images` (each [3,S,S] flattened, values in
// [0,1]). A seed-fixed validation split drives early stopping; the model is
// left holding the best-validation parameters. Progress lines go to `log`
// when non-null.
template <typename S>
TrainResult train_vae(VaeModelT<S>& model, const std::vector<std::vector<float>>& images,
                      const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    const std::size_t n = images.size();
    if (n < 4) throw ShapeError("train_vae: need at least 4 images, got " + std::to_string(n));

    // Seed-fixed validation split, independent of the epoch shuffle stream.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(cfg.seed, "train-val-split"));
    split_rng.shuffle(order.begin(), order.end());
    std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 2);
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());

    auto val_x = detail::gather_batch<S>(images, val_idx, 0, n_val, model.image_size());

    auto named = model.named_parameters();
    std::vector<TensorT<S>> params;
    params.reserve(named.size());
    for (auto& [name, t] : named) params.push_back(t);
    AdamT<S> opt(params, static_cast<S>(cfg.learning_rate), static_cast<S>(cfg.beta1),
                 static_cast<S>(cfg.beta2), static_cast<S>(cfg.adam_epsilon));

    Rng shuffle_rng(derive_seed(cfg.seed, "train-shuffle"));
    Rng eps_rng(derive_seed(cfg.seed, "train-eps"));

    // Best-epoch snapshot: parameter values plus BatchNorm running buffers.
    auto buffers = model.named_buffers();
    std::vector<std::vector<S>> best_params, best_buffers;
    auto snapshot = [&] {
        best_params.clear();
        best_buffers.clear();
        for (auto& p : params) best_params.emplace_back(p.data().begin(), p.data().end());
        for (auto& [name, buf] : buffers) best_buffers.push_back(*buf);
    };
    auto restore = [&] {
        if (best_params.empty()) return;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto pv = params[i].data();
            std::copy(best_params[i].begin(), best_params[i].end(), pv.begin());
        }
        for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].second = best_buffers[i];
    };

    EarlyStopper stopper(cfg.patience);
    TrainResult result;
    Rng unused_rng(0);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(train_idx.begin(), train_idx.end());

        LossBreakdown train_acc;
        std::size_t seen = 0;
        std::size_t lo = 0;
        while (lo < train_idx.size()) {
            std::size_t hi = std::min(lo + cfg.batch_size, train_idx.size());
            // A singleton tail breaks train-mode BatchNorm; fold it into the
            // previous batch instead.
            if (train_idx.size() - hi == 1) hi = train_idx.size();
            auto x = detail::gather_batch<S>(images, train_idx, lo, hi, model.image_size());
            const std::size_t bsz = hi - lo;
            try {
                GradientTapeT<S> tape;
                auto [total, bd] = model.loss(x, eps_rng, true, cfg.mc_samples);
                tape.backward(total);
                opt.step();
                train_acc.recon += bd.recon * static_cast<double>(bsz);
                train_acc.kl += bd.kl * static_cast<double>(bsz);
                train_acc.dip += bd.dip * static_cast<double>(bsz);
                train_acc.total += bd.total * static_cast<double>(bsz);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                   ", batch starting at " + std::to_string(lo) + ")");
            }
            seen += bsz;
            lo = hi;
        }
        train_acc.recon /= static_cast<double>(seen);
        train_acc.kl /= static_cast<double>(seen);
        train_acc.dip /= static_cast<double>(seen);
        train_acc.total /= static_cast<double>(seen);

        auto [val_total, val_bd] = model.loss(val_x, unused_rng, false);
        (void)val_total;

        result.history.push_back({epoch, train_acc, val_bd});
        if (log)
            (*log) << "epoch " << epoch << " train_total " << train_acc.total << " val_total "
                   << val_bd.total << '\n';

        const bool stop = stopper.update(val_bd.total);
        if (stopper.improved_last()) snapshot();
        if (stop) {
            result.stopped_early = true;
            result.epochs_run = epoch;
            break;
        }
        result.epochs_run = epoch;
    }

    restore();
    result.best_epoch = stopper.best_epoch();
    result.best_val_loss = stopper.best_value();
    return result;
}

}  // namespace vaescene
