#include "vaescene/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "vaescene/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace vaescene {

namespace {

constexpr char kMagic[4] = {'V', 'A', 'E', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kMaxNdim = 8;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("checkpoint: truncated while reading " + what);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensorData>& tensors, const nlohmann::json& config) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open for writing: " + path.string());
    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > std::numeric_limits<std::uint16_t>::max())
            throw FormatError("checkpoint: tensor name too long: " + t.name.substr(0, 64));
        if (t.shape.size() > kMaxNdim)
            throw FormatError("checkpoint: tensor " + t.name + " has too many dims");
        if (shape_numel(t.shape) != t.data.size())
            throw ShapeError("checkpoint: tensor " + t.name + " shape " + shape_str(t.shape) +
                             " does not match " + std::to_string(t.data.size()) + " values");
        write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
        for (auto d : t.shape) {
            if (d > std::numeric_limits<std::uint32_t>::max())
                throw FormatError("checkpoint: dimension too large in tensor " + t.name);
            write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        }
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    const std::string blob = config.dump();
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    os.flush();
    if (!os) throw IoError("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open for reading: " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path.string() +
                          " (expected \"VAEC\"); not a checkpoint file or corrupted");
    const auto version = read_pod<std::uint32_t>(is, "version");
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = read_pod<std::uint32_t>(is, "tensor count");

    Checkpoint ckpt;
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint16_t>(is, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("checkpoint: truncated while reading tensor name");
        const auto ndim = read_pod<std::uint8_t>(is, "ndim of " + name);
        if (ndim > kMaxNdim)
            throw FormatError("checkpoint: tensor " + name + " claims " + std::to_string(ndim) +
                              " dims (max " + std::to_string(kMaxNdim) + ")");
        Shape shape(ndim);
        std::size_t numel = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            shape[d] = read_pod<std::uint32_t>(is, "dim of " + name);
            numel *= shape[d];
        }
        std::vector<float> data(numel);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!is) throw FormatError("checkpoint: truncated while reading data of " + name);
        ckpt.tensors.push_back({std::move(name), std::move(shape), std::move(data)});
    }

    std::ostringstream tail;
    tail << is.rdbuf();
    const std::string blob = tail.str();
    if (blob.empty()) {
        ckpt.config = nlohmann::json::object();
    } else {
        try {
            ckpt.config = nlohmann::json::parse(blob);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(std::string("checkpoint: invalid config JSON trailer: ") + e.what());
        }
    }
    return ckpt;
}

void to_json(nlohmann::json& j, const VaeConfig& cfg) {
    j = nlohmann::json{{"image_size", cfg.image_size},
                       {"latent_dim", cfg.latent_dim},
                       {"channel_schedule", cfg.channels()},
                       {"variant", cfg.variant == VaeVariant::dip ? "dip" : "vanilla"},
                       {"lambda_d", cfg.lambda_d},
                       {"lambda_od", cfg.lambda_od},
                       {"recon_weight", cfg.recon_weight},
                       {"leaky_slope", cfg.leaky_slope}};
}

void from_json(const nlohmann::json& j, VaeConfig& cfg) {
    cfg.image_size = j.at("image_size").get<std::size_t>();
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.channel_schedule = j.at("channel_schedule").get<std::vector<std::size_t>>();
    const auto variant = j.at("variant").get<std::string>();
    if (variant == "dip") {
        cfg.variant = VaeVariant::dip;
    } else if (variant == "vanilla") {
        cfg.variant = VaeVariant::vanilla;
    } else {
        throw FormatError("checkpoint: unknown variant \"" + variant + "\"");
    }
    cfg.lambda_d = j.at("lambda_d").get<double>();
    cfg.lambda_od = j.at("lambda_od").get<double>();
    cfg.recon_weight = j.value("recon_weight", 1.0);
    cfg.leaky_slope = j.value("leaky_slope", 0.01);
}

void save_vae(const std::filesystem::path& path, VaeModel& model) {
    std::vector<NamedTensorData> tensors;
    for (auto& [name, t] : model.named_parameters()) {
        auto v = t.data();
        tensors.push_back({name, t.shape(), std::vector<float>(v.begin(), v.end())});
    }
    for (auto& [name, buf] : model.named_buffers())
        tensors.push_back({name, Shape{buf->size()}, *buf});
    nlohmann::json config = nlohmann::json{{"kind", "vae"}, {"model", model.config()}};
    save_checkpoint(path, tensors, config);
}

VaeModel load_vae(const std::filesystem::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.config.value("kind", "") != "vae")
        throw FormatError("checkpoint: " + path.string() + " does not hold a model of kind \"vae\"");
    VaeConfig cfg = ckpt.config.at("model").get<VaeConfig>();
    VaeModel model(cfg, 0);

    std::unordered_map<std::string, NamedTensorData*> by_name;
    for (auto& t : ckpt.tensors) by_name[t.name] = &t;
    std::size_t used = 0;

    for (auto& [name, t] : model.named_parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError("checkpoint: missing tensor \"" + name + "\"");
        if (it->second->shape != t.shape())
            throw ShapeError("checkpoint: tensor \"" + name + "\" has shape " +
                             shape_str(it->second->shape) + ", model expects " +
                             shape_str(t.shape()));
        auto dst = t.data();
        std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
        ++used;
    }
    for (auto& [name, buf] : model.named_buffers()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError("checkpoint: missing buffer \"" + name + "\"");
        if (it->second->data.size() != buf->size())
            throw ShapeError("checkpoint: buffer \"" + name + "\" has " +
                             std::to_string(it->second->data.size()) + " values, model expects " +
                             std::to_string(buf->size()));
        *buf = it->second->data;
        ++used;
    }
    if (used != ckpt.tensors.size())
        throw FormatError("checkpoint: " + std::to_string(ckpt.tensors.size() - used) +
                          " unused tensor(s) in " + path.string());
    return model;
}

}  // namespace vaescene
