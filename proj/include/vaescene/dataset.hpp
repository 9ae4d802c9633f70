#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vaescene/errors.hpp"

namespace vaescene {

inline constexpr int kLabelRural = 0;
inline constexpr int kLabelSuburban = 1;
inline constexpr int kLabelUrban = 2;
inline constexpr int kNumClasses = 3;

std::string_view label_name(int label);
int label_from_name(std::string_view name);

// One decoded image: interleaved-free CHW float layout, RGB, values in [0,1].
struct ImageSample {
    std::string id;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;           // [3, height, width]
    std::optional<int> label;            // kLabelRural / kLabelSuburban / kLabelUrban
    std::string route;                   // empty when unknown

    std::size_t expected_size() const {
        return 3 * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
};

enum class ImageFormat { ppm, png, jpeg };

// Binary PPM (P6), self-contained so test fixtures need no codec. Only
// maxval 255 is accepted.
ImageSample decode_ppm(std::span<const std::byte> bytes);
std::vector<std::byte> encode_ppm(const ImageSample& sample);

ImageSample decode_image(std::span<const std::byte> bytes, ImageFormat format);

// Reads the file and dispatches on extension: .ppm, .png, .jpg/.jpeg.
// The sample id is the path as given.
ImageSample load_image(const std::filesystem::path& path);
void save_ppm(const ImageSample& sample, const std::filesystem::path& path);

// Separable bilinear resampling, align-corners-false convention:
//   src_x = (dst_x + 0.5) * src_w / dst_w - 0.5, clamped to [0, src_w - 1]
// and likewise vertically. Source must be at least 2x2.
ImageSample resize_bilinear(const ImageSample& src, int target_h, int target_w);
inline ImageSample resize_bilinear(const ImageSample& src, int target_size) {
    return resize_bilinear(src, target_size, target_size);
}

struct ManifestEntry {
    std::string path;
    int label = kLabelRural;
    std::string route;
};

// UTF-8 CSV with header `path,label,route`; labels are lowercase class names.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& csv_path);
void save_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& csv_path);

// Converter for a folder-per-class layout: root/<class-name>/... image files.
// Each class folder doubles as the route, since that layout carries no finer
// grouping. Files are collected recursively and sorted.
std::vector<ManifestEntry> scan_class_folders(const std::filesystem::path& root);

struct SplitSpec {
    std::vector<std::string> train_ids;  // disjoint from test_ids
    std::vector<std::string> test_ids;
};

// Per-route random split: within every route the ids are sorted, shuffled with
// the seeded generator, and the first round-half-up(2n/3) go to train. Routes
// are processed in sorted order so the draw sequence is reproducible.
SplitSpec split_two_thirds(std::span<const ManifestEntry> manifest, std::uint64_t seed);

// Contiguous video split: frames [0, skip) are dropped, the first
// floor(train_frac * remaining) of the rest are train, the remainder test.
// Ids are the decimal frame indices.
SplitSpec split_video_protocol(std::int64_t frame_count, std::int64_t skip, double train_frac);

}  // namespace vaescene
