#include "vaescene/descriptors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

static_assert(std::endian::native == std::endian::little,
              "descriptor codec assumes a little-endian host");

namespace vaescene {

std::vector<float> to_grayscale(std::span<const float> rgb, std::size_t h, std::size_t w) {
    const std::size_t plane = h * w;
    if (rgb.size() != 3 * plane)
        throw ShapeError("to_grayscale: expected 3x" + std::to_string(h) + "x" + std::to_string(w) +
                         " values, got " + std::to_string(rgb.size()));
    std::vector<float> gray(plane);
    for (std::size_t i = 0; i < plane; ++i)
        gray[i] = 0.299f * rgb[i] + 0.587f * rgb[plane + i] + 0.114f * rgb[2 * plane + i];
    return gray;
}

namespace {

inline float at_clamped(std::span<const float> img, std::ptrdiff_t y, std::ptrdiff_t x,
                        std::size_t h, std::size_t w) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
}

}  // namespace

Descriptor phog(std::span<const float> gray, std::size_t h, std::size_t w, const PhogConfig& cfg) {
    cfg.validate();
    if (gray.size() != h * w)
        throw ShapeError("phog: expected " + std::to_string(h * w) + " values, got " +
                         std::to_string(gray.size()));
    const std::size_t min_side = std::size_t{1} << (cfg.levels - 1);
    if (h < min_side || w < min_side)
        throw ShapeError("phog: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " too small for " + std::to_string(cfg.levels) + " pyramid levels");

    const double range = cfg.orientation_range == 360 ? 2.0 * std::numbers::pi : std::numbers::pi;
    const double bin_width = range / static_cast<double>(cfg.bins);

    Descriptor out;
    out.source = DescriptorSource::phog;
    out.values.assign(cfg.dim(), 0.0f);

    // Per-level block offsets into the concatenated vector.
    std::vector<std::size_t> level_offset(cfg.levels);
    for (std::size_t l = 0, off = 0; l < cfg.levels; ++l) {
        level_offset[l] = off;
        off += cfg.bins * (std::size_t{1} << (2 * l));
    }

    std::vector<double> acc(cfg.dim(), 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const auto py = static_cast<std::ptrdiff_t>(y);
            const auto px = static_cast<std::ptrdiff_t>(x);
            // Sobel with replicate border; +y points down, +x right.
            const double gx = -at_clamped(gray, py - 1, px - 1, h, w) +
                              at_clamped(gray, py - 1, px + 1, h, w) -
                              2.0 * at_clamped(gray, py, px - 1, h, w) +
                              2.0 * at_clamped(gray, py, px + 1, h, w) -
                              at_clamped(gray, py + 1, px - 1, h, w) +
                              at_clamped(gray, py + 1, px + 1, h, w);
            const double gy = -at_clamped(gray, py - 1, px - 1, h, w) -
                              2.0 * at_clamped(gray, py - 1, px, h, w) -
                              at_clamped(gray, py - 1, px + 1, h, w) +
                              at_clamped(gray, py + 1, px - 1, h, w) +
                              2.0 * at_clamped(gray, py + 1, px, h, w) +
                              at_clamped(gray, py + 1, px + 1, h, w);
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag == 0.0) continue;

            double theta = std::atan2(gy, gx);  // (-pi, pi]
            if (cfg.orientation_range == 360) {
                if (theta < 0.0) theta += 2.0 * std::numbers::pi;
            } else {
                if (theta < 0.0) theta += std::numbers::pi;  // fold to [0, pi)
                if (theta >= std::numbers::pi) theta -= std::numbers::pi;
            }
            std::size_t bin = static_cast<std::size_t>(theta / bin_width);
            if (bin >= cfg.bins) bin = cfg.bins - 1;  // guards the theta == range edge

            for (std::size_t l = 0; l < cfg.levels; ++l) {
                const std::size_t cells = std::size_t{1} << l;
                const std::size_t cy = std::min(cells - 1, y * cells / h);
                const std::size_t cx = std::min(cells - 1, x * cells / w);
                acc[level_offset[l] + (cy * cells + cx) * cfg.bins + bin] += mag;
            }
        }

    double total = 0.0;
    for (double v : acc) total += v;
    if (total > 0.0) {
        for (std::size_t i = 0; i < acc.size(); ++i)
            out.values[i] = static_cast<float>(acc[i] / total);
    }
    return out;
}

Descriptor random_descriptor(std::size_t dim, Rng& rng) {
    if (dim < 1) throw ShapeError("random_descriptor: dim must be >= 1");
    Descriptor out;
    out.source = DescriptorSource::random;
    out.values.resize(dim);
    for (auto& v : out.values) v = static_cast<float>(rng.normal());
    return out;
}

namespace {

constexpr char kMagic[4] = {'D', 'S', 'C', '1'};

std::filesystem::path ids_sidecar(const std::filesystem::path& path) {
    auto p = path;
    p += ".ids.csv";
    return p;
}

}  // namespace

void save_descriptors(const std::filesystem::path& path, const DescriptorSet& set) {
    if (set.dim == 0 && !set.values.empty())
        throw ShapeError("save_descriptors: dim 0 with nonempty values");
    if (set.dim != 0 && set.values.size() % set.dim != 0)
        throw ShapeError("save_descriptors: value count not a multiple of dim");
    if (set.ids.size() != set.count())
        throw ShapeError("save_descriptors: " + std::to_string(set.ids.size()) + " ids for " +
                         std::to_string(set.count()) + " descriptors");

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save_descriptors: cannot open " + path.string());
    os.write(kMagic, 4);
    const auto count = static_cast<std::uint32_t>(set.count());
    const auto dim = static_cast<std::uint32_t>(set.dim);
    const auto tag = static_cast<std::uint8_t>(set.source);
    os.write(reinterpret_cast<const char*>(&count), 4);
    os.write(reinterpret_cast<const char*>(&dim), 4);
    os.write(reinterpret_cast<const char*>(&tag), 1);
    os.write(reinterpret_cast<const char*>(set.values.data()),
             static_cast<std::streamsize>(set.values.size() * sizeof(float)));
    os.flush();
    if (!os) throw IoError("save_descriptors: write failed: " + path.string());

    std::ofstream ids(ids_sidecar(path), std::ios::trunc);
    if (!ids) throw IoError("save_descriptors: cannot open " + ids_sidecar(path).string());
    for (const auto& id : set.ids) ids << id << '\n';
    ids.flush();
    if (!ids) throw IoError("save_descriptors: write failed: " + ids_sidecar(path).string());
}

DescriptorSet load_descriptors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_descriptors: cannot open " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("load_descriptors: bad magic in " + path.string() +
                          " (expected \"DSC1\")");
    std::uint32_t count = 0, dim = 0;
    std::uint8_t tag = 0;
    is.read(reinterpret_cast<char*>(&count), 4);
    is.read(reinterpret_cast<char*>(&dim), 4);
    is.read(reinterpret_cast<char*>(&tag), 1);
    if (!is) throw FormatError("load_descriptors: truncated header in " + path.string());
    if (tag > static_cast<std::uint8_t>(DescriptorSource::external))
        throw FormatError("load_descriptors: unknown source tag " + std::to_string(tag));

    DescriptorSet set;
    set.dim = dim;
    set.source = static_cast<DescriptorSource>(tag);
    set.values.resize(static_cast<std::size_t>(count) * dim);
    is.read(reinterpret_cast<char*>(set.values.data()),
            static_cast<std::streamsize>(set.values.size() * sizeof(float)));
    if (!is) throw FormatError("load_descriptors: truncated payload in " + path.string());
    char extra = 0;
    if (is.read(&extra, 1))
        throw FormatError("load_descriptors: trailing bytes in " + path.string());

    const auto sidecar = ids_sidecar(path);
    if (std::filesystem::exists(sidecar)) {
        std::ifstream ids(sidecar);
        if (!ids) throw IoError("load_descriptors: cannot open " + sidecar.string());
        std::string line;
        while (std::getline(ids, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            set.ids.push_back(line);
        }
        if (set.ids.size() != count)
            throw FormatError("load_descriptors: " + std::to_string(set.ids.size()) +
                              " ids in sidecar for " + std::to_string(count) + " descriptors");
    } else {
        set.ids.assign(count, "");
    }
    return set;
}

}  // namespace vaescene
