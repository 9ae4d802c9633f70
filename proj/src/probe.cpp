#include "vaescene/probe.hpp"

#include <algorithm>

#include "vaescene/checkpoint.hpp"
#include "vaescene/rng.hpp"

namespace vaescene {

Prediction predict(const ProbeModel& model, std::span<const float> descriptor) {
    const std::size_t d = model.input_dim();
    if (descriptor.size() != d)
        throw ShapeError("predict: descriptor length " + std::to_string(descriptor.size()) +
                         " != probe input " + std::to_string(d));
    const std::size_t h = model.hidden_dim();
    auto w1 = model.l1.weight.data();
    auto b1 = model.l1.bias.data();
    auto w2 = model.l2.weight.data();
    auto b2 = model.l2.bias.data();

    std::vector<double> hid(h);
    for (std::size_t j = 0; j < h; ++j) {
        double acc = b1[j];
        for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(w1[j * d + k]) * descriptor[k];
        hid[j] = acc;
    }
    Prediction pred;
    for (std::size_t j = 0; j < ProbeModel::kProbeClasses; ++j) {
        double acc = b2[j];
        for (std::size_t k = 0; k < h; ++k) acc += static_cast<double>(w2[j * h + k]) * hid[k];
        pred.logits[j] = static_cast<float>(acc);
    }
    // max_element returns the first maximum, which is the tie rule: lowest
    // class index wins.
    pred.cls = static_cast<int>(
        std::max_element(pred.logits.begin(), pred.logits.end()) - pred.logits.begin());
    return pred;
}

ProbeTrainResult train_probe(const DescriptorSet& train, std::span<const int> labels,
                             const ProbeTrainConfig& cfg) {
    cfg.validate();
    const std::size_t n = train.count();
    if (n == 0) throw ShapeError("train_probe: empty descriptor set");
    if (train.dim < 1) throw ShapeError("train_probe: zero-dimensional descriptors");
    if (labels.size() != n)
        throw ShapeError("train_probe: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " descriptors");
    std::array<std::size_t, ProbeModel::kProbeClasses> per_class = {0, 0, 0};
    for (int l : labels) {
        if (l < 0 || l >= static_cast<int>(ProbeModel::kProbeClasses))
            throw ShapeError("train_probe: label " + std::to_string(l) + " outside [0,3)");
        ++per_class[static_cast<std::size_t>(l)];
    }
    for (std::size_t c = 0; c < per_class.size(); ++c)
        if (per_class[c] == 0)
            throw ShapeError("train_probe: no samples of class " + std::to_string(c));

    Rng rng(derive_seed(cfg.seed, "probe-init"));
    ProbeTrainResult result;
    result.model = ProbeModel(train.dim, cfg.hidden, rng);

    auto x = Tensor::from_data({n, train.dim}, train.values);
    std::vector<Tensor> params;
    for (auto& [name, p] : result.model.named_parameters()) params.push_back(p);
    Adam opt(params, cfg.lr);

    result.loss_history.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        GradientTape tape;
        auto logits = result.model.forward(x);
        auto loss = softmax_cross_entropy(logits, labels);
        result.loss_history.push_back(loss.item());
        tape.backward(loss);
        opt.step();
    }
    return result;
}

void save_probe(const std::filesystem::path& path, ProbeModel& model) {
    std::vector<NamedTensorData> tensors;
    for (auto& [name, p] : model.named_parameters()) {
        tensors.push_back({name, p.shape(), std::vector<float>(p.data().begin(), p.data().end())});
    }
    nlohmann::json config = {
        {"kind", "probe"},
        {"model",
         {{"input_dim", model.input_dim()}, {"hidden", model.hidden_dim()}, {"classes", 3}}}};
    save_checkpoint(path, tensors, config);
}

ProbeModel load_probe(const std::filesystem::path& path) {
    auto ckpt = load_checkpoint(path);
    if (!ckpt.config.contains("kind") || ckpt.config["kind"] != "probe")
        throw FormatError("load_probe: checkpoint at " + path.string() + " is not a probe");
    const auto& mj = ckpt.config.at("model");
    const auto input_dim = mj.at("input_dim").get<std::size_t>();
    const auto hidden = mj.at("hidden").get<std::size_t>();

    Rng rng(0);
    ProbeModel model(input_dim, hidden, rng);
    auto params = model.named_parameters();
    std::size_t used = 0;
    for (auto& [name, p] : params) {
        const NamedTensorData* found = nullptr;
        for (const auto& t : ckpt.tensors)
            if (t.name == name) found = &t;
        if (!found) throw FormatError("load_probe: missing tensor '" + name + "'");
        if (found->shape != p.shape())
            throw FormatError("load_probe: tensor '" + name + "' has shape " +
                              shape_str(found->shape) + ", expected " + shape_str(p.shape()));
        std::copy(found->data.begin(), found->data.end(), p.data().begin());
        ++used;
    }
    if (used != ckpt.tensors.size())
        throw FormatError("load_probe: checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model uses " + std::to_string(used));
    return model;
}

}  // namespace vaescene
