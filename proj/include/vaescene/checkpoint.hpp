#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "vaescene/vae.hpp"

namespace vaescene {

// One serialized tensor: name, dims, float32 payload.
struct NamedTensorData {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::vector<NamedTensorData> tensors;
    nlohmann::json config;
};

// Binary container: magic "VAEC", u32 version, u32 tensor count, then per
// tensor a u16-length UTF-8 name, u8 ndim, u32 dims, and raw float32
// little-endian data; a UTF-8 JSON config blob runs to end of file.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensorData>& tensors, const nlohmann::json& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const VaeConfig& cfg);
void from_json(const nlohmann::json& j, VaeConfig& cfg);

// Whole-model adapters (parameters + BatchNorm running buffers + config).
void save_vae(const std::filesystem::path& path, VaeModel& model);
VaeModel load_vae(const std::filesystem::path& path);

}  // namespace vaescene
