#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vaescene/descriptors.hpp"
#include "vaescene/nn.hpp"
#include "vaescene/tensor.hpp"

namespace vaescene {

// Mean softmax cross-entropy over a batch of logit rows, computed with
// max-subtraction so large logits cannot overflow the exponentials.
template <typename S>
TensorT<S> softmax_cross_entropy(const TensorT<S>& logits, std::span<const int> labels) {
    if (logits.shape().size() != 2)
        throw ShapeError("softmax_cross_entropy: expects [N,C] logits, got " +
                         shape_str(logits.shape()));
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
    if (labels.size() != n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
    for (int l : labels)
        if (l < 0 || l >= static_cast<int>(c))
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(l) +
                             " outside [0," + std::to_string(c) + ")");

    auto lv = logits.data();
    auto probs = std::make_shared<std::vector<S>>(n * c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const S* row = lv.data() + i * c;
        S m = row[0];
        for (std::size_t k = 1; k < c; ++k) m = std::max(m, row[k]);
        double denom = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            const double e = std::exp(static_cast<double>(row[k] - m));
            (*probs)[i * c + k] = static_cast<S>(e);
            denom += e;
        }
        for (std::size_t k = 0; k < c; ++k)
            (*probs)[i * c + k] = static_cast<S>(static_cast<double>((*probs)[i * c + k]) / denom);
        total += std::log(denom) -
                 static_cast<double>(row[static_cast<std::size_t>(labels[i])] - m);
    }
    auto out = TensorT<S>::scalar(static_cast<S>(total / static_cast<double>(n)));
    detail::check_finite(std::span<const S>(out.data()), "softmax_cross_entropy");

    detail::maybe_record(
        out, {&logits},
        [ln = logits.node(), on = out.node(), probs,
         lab = std::vector<int>(labels.begin(), labels.end()), n, c] {
            if (on->grad.empty() || !ln->requires_grad) return;
            const S go = on->grad[0];
            auto& gb = ln->grad_buffer();
            const S inv_n = S(1) / static_cast<S>(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < c; ++k) {
                    const S onehot = static_cast<std::size_t>(lab[i]) == k ? S(1) : S(0);
                    gb[i * c + k] += go * ((*probs)[i * c + k] - onehot) * inv_n;
                }
        });
    return out;
}

// Two stacked linear layers with no activation between them; the composition
// is a single affine map, kept as two layers to match the evaluated protocol.
template <typename S>
struct ProbeModelT {
    LinearLayerT<S> l1;  // [hidden, input_dim]
    LinearLayerT<S> l2;  // [3, hidden]

    ProbeModelT() = default;
    ProbeModelT(std::size_t input_dim, std::size_t hidden, Rng& rng)
        : l1(checked(hidden, "hidden"), checked(input_dim, "input_dim"), rng),
          l2(kProbeClasses, hidden, rng) {}

    static constexpr std::size_t kProbeClasses = 3;

    static std::size_t checked(std::size_t v, const char* what) {
        if (v < 1) throw ShapeError("ProbeModel: " + std::string(what) + " must be >= 1");
        return v;
    }

    std::size_t input_dim() const { return l1.weight.shape()[1]; }
    std::size_t hidden_dim() const { return l1.weight.shape()[0]; }

    TensorT<S> forward(const TensorT<S>& x) const { return linear(linear(x, l1), l2); }

    std::vector<std::pair<std::string, TensorT<S>>> named_parameters() {
        return {{"l1.weight", l1.weight},
                {"l1.bias", l1.bias},
                {"l2.weight", l2.weight},
                {"l2.bias", l2.bias}};
    }
};

using ProbeModel = ProbeModelT<float>;

struct Prediction {
    int cls = 0;
    std::array<float, 3> logits = {0.0f, 0.0f, 0.0f};
};

// Argmax of the affine map's logits; ties break toward the lowest class index.
Prediction predict(const ProbeModel& model, std::span<const float> descriptor);

struct ProbeTrainConfig {
    std::size_t epochs = 100;
    float lr = 0.01f;
    std::size_t hidden = 3;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ShapeError("ProbeTrainConfig: epochs must be >= 1");
        if (!(lr > 0.0f)) throw ShapeError("ProbeTrainConfig: lr must be positive");
        if (hidden < 1) throw ShapeError("ProbeTrainConfig: hidden must be >= 1");
    }
};

struct ProbeTrainResult {
    ProbeModel model;
    std::vector<float> loss_history;  // one mean cross-entropy per epoch
};

// Full-batch optimization of the softmax cross-entropy over the given
// descriptors; the descriptor producer (the backbone) is never touched.
ProbeTrainResult train_probe(const DescriptorSet& train, std::span<const int> labels,
                             const ProbeTrainConfig& cfg);

// Probe checkpoints reuse the tensor container with kind tag "probe".
void save_probe(const std::filesystem::path& path, ProbeModel& model);
ProbeModel load_probe(const std::filesystem::path& path);

}  // namespace vaescene
