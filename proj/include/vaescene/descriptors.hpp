#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vaescene/errors.hpp"
#include "vaescene/rng.hpp"

namespace vaescene {

struct PhogConfig {
    std::size_t bins = 60;
    std::size_t levels = 3;
    int orientation_range = 360;  // degrees; 180 folds opposite gradients together

    void validate() const {
        if (bins < 1) throw ShapeError("PhogConfig: bins must be >= 1");
        if (levels < 1) throw ShapeError("PhogConfig: levels must be >= 1");
        if (orientation_range != 180 && orientation_range != 360)
            throw ShapeError("PhogConfig: orientation_range must be 180 or 360");
    }

    // bins * (1 + 4 + 16 + ...) over the pyramid levels
    std::size_t dim() const {
        std::size_t cells = 0, per_level = 1;
        for (std::size_t l = 0; l < levels; ++l, per_level *= 4) cells += per_level;
        return bins * cells;
    }
};

enum class DescriptorSource : std::uint8_t { vae = 0, phog = 1, random = 2, external = 3 };

struct Descriptor {
    std::vector<float> values;
    DescriptorSource source = DescriptorSource::external;
    std::string image_id;
};

// Homogeneous, ordered collection; values are row-major [count, dim].
struct DescriptorSet {
    std::size_t dim = 0;
    DescriptorSource source = DescriptorSource::external;
    std::vector<std::string> ids;
    std::vector<float> values;

    std::size_t count() const { return dim == 0 ? 0 : values.size() / dim; }
    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(values).subspan(i * dim, dim);
    }
    void append(const Descriptor& d) {
        if (dim == 0 && ids.empty()) dim = d.values.size();
        if (d.values.size() != dim)
            throw ShapeError("DescriptorSet: descriptor length " + std::to_string(d.values.size()) +
                             " != set dim " + std::to_string(dim));
        ids.push_back(d.image_id);
        values.insert(values.end(), d.values.begin(), d.values.end());
    }
};

// ITU-R 601 luma from planar [3,H,W] pixels.
std::vector<float> to_grayscale(std::span<const float> rgb, std::size_t h, std::size_t w);

// Pyramid histogram of oriented gradients over a grayscale [H,W] image:
// Sobel gradients (replicate border), signed orientation binned over the
// configured range, magnitude-weighted single-bin votes per pyramid cell,
// L1 normalization of the concatenated vector. A gradient-free image yields
// the all-zero vector.
Descriptor phog(std::span<const float> gray, std::size_t h, std::size_t w, const PhogConfig& cfg);

// dim i.i.d. N(0,1) draws from the caller's generator.
Descriptor random_descriptor(std::size_t dim, Rng& rng);

// Binary container: magic "DSC1", u32 count, u32 dim, u8 source tag, then
// count*dim little-endian float32. Image ids go to "<path>.ids.csv", one id
// per line, same order.
void save_descriptors(const std::filesystem::path& path, const DescriptorSet& set);
DescriptorSet load_descriptors(const std::filesystem::path& path);

}  // namespace vaescene
