#include "vaescene/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <jpeglib.h>
#include <png.h>

#include "vaescene/rng.hpp"

namespace vaescene {

std::string_view label_name(int label) {
    switch (label) {
        case kLabelRural: return "rural";
        case kLabelSuburban: return "suburban";
        case kLabelUrban: return "urban";
        default: throw ShapeError("label_name: unknown label " + std::to_string(label));
    }
}

int label_from_name(std::string_view name) {
    if (name == "rural") return kLabelRural;
    if (name == "suburban") return kLabelSuburban;
    if (name == "urban") return kLabelUrban;
    throw IoError("unknown class name '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// PPM (P6)
// ---------------------------------------------------------------------------

namespace {

// Reads the next header token, skipping whitespace and `#` comments.
std::string next_ppm_token(std::span<const std::byte> bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        char c = static_cast<char>(bytes[pos]);
        if (c == '#') {
            while (pos < bytes.size() && static_cast<char>(bytes[pos]) != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    std::string token;
    while (pos < bytes.size()) {
        char c = static_cast<char>(bytes[pos]);
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') break;
        token.push_back(c);
        ++pos;
    }
    if (token.empty()) throw IoError("ppm: truncated header");
    return token;
}

int parse_ppm_int(const std::string& token, const char* what) {
    for (char c : token) {
        if (c < '0' || c > '9') throw IoError("ppm: malformed " + std::string(what) + " '" + token + "'");
    }
    if (token.size() > 9) throw IoError("ppm: " + std::string(what) + " out of range");
    return std::stoi(token);
}

}  // namespace

ImageSample decode_ppm(std::span<const std::byte> bytes) {
    std::size_t pos = 0;
    if (next_ppm_token(bytes, pos) != "P6") throw IoError("ppm: not a binary P6 file");
    const int width = parse_ppm_int(next_ppm_token(bytes, pos), "width");
    const int height = parse_ppm_int(next_ppm_token(bytes, pos), "height");
    const int maxval = parse_ppm_int(next_ppm_token(bytes, pos), "maxval");
    if (width <= 0 || height <= 0) throw IoError("ppm: non-positive dimensions");
    if (maxval != 255) throw IoError("ppm: only maxval 255 is supported, got " + std::to_string(maxval));
    // Exactly one whitespace byte separates the header from the payload.
    if (pos >= bytes.size()) throw IoError("ppm: truncated header");
    char sep = static_cast<char>(bytes[pos]);
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
        throw IoError("ppm: missing separator after maxval");
    ++pos;

    const std::size_t n = 3 * static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - pos < n) throw IoError("ppm: truncated pixel payload");
    if (bytes.size() - pos > n) throw IoError("ppm: trailing bytes after pixel payload");

    ImageSample sample;
    sample.height = height;
    sample.width = width;
    sample.pixels.resize(n);
    const std::size_t plane = static_cast<std::size_t>(width) * height;
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c) {
            sample.pixels[c * plane + p] =
                static_cast<float>(static_cast<unsigned char>(bytes[pos + 3 * p + c])) / 255.0f;
        }
    }
    return sample;
}

std::vector<std::byte> encode_ppm(const ImageSample& sample) {
    if (sample.height <= 0 || sample.width <= 0 || sample.pixels.size() != sample.expected_size())
        throw ShapeError("encode_ppm: inconsistent sample dimensions");
    std::string header = "P6\n" + std::to_string(sample.width) + " " +
                         std::to_string(sample.height) + "\n255\n";
    const std::size_t plane = static_cast<std::size_t>(sample.width) * sample.height;
    std::vector<std::byte> out(header.size() + 3 * plane);
    std::memcpy(out.data(), header.data(), header.size());
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c) {
            float v = sample.pixels[c * plane + p];
            long q = std::lround(static_cast<double>(v) * 255.0);
            q = std::clamp(q, 0L, 255L);
            out[header.size() + 3 * p + c] = static_cast<std::byte>(static_cast<unsigned char>(q));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PNG / JPEG via the system codecs
// ---------------------------------------------------------------------------

namespace {

ImageSample from_interleaved_rgb(const unsigned char* rgb, int height, int width) {
    ImageSample sample;
    sample.height = height;
    sample.width = width;
    const std::size_t plane = static_cast<std::size_t>(width) * height;
    sample.pixels.resize(3 * plane);
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c) {
            sample.pixels[c * plane + p] = static_cast<float>(rgb[3 * p + c]) / 255.0f;
        }
    }
    return sample;
}

ImageSample decode_png_bytes(std::span<const std::byte> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError(std::string("png: ") + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("png: " + msg);
    }
    return from_interleaved_rgb(buffer.data(), static_cast<int>(image.height),
                                static_cast<int>(image.width));
}

struct JpegErrorTrap {
    jpeg_error_mgr pub;
    std::jmp_buf env;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit_trap(j_common_ptr cinfo) {
    auto* trap = reinterpret_cast<JpegErrorTrap*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, trap->message);
    std::longjmp(trap->env, 1);
}

ImageSample decode_jpeg_bytes(std::span<const std::byte> bytes) {
    jpeg_decompress_struct cinfo;
    JpegErrorTrap trap;
    cinfo.err = jpeg_std_error(&trap.pub);
    trap.pub.error_exit = jpeg_error_exit_trap;
    // setjmp/longjmp is libjpeg's sanctioned error path; no C++ objects with
    // destructors live between here and the jump.
    if (setjmp(trap.env)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError(std::string("jpeg: ") + trap.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
                 static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int width = static_cast<int>(cinfo.output_width);
    const int height = static_cast<int>(cinfo.output_height);
    std::vector<unsigned char> rgb(3 * static_cast<std::size_t>(width) * height);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = rgb.data() + 3 * static_cast<std::size_t>(width) * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_interleaved_rgb(rgb.data(), height, width);
}

}  // namespace

ImageSample decode_image(std::span<const std::byte> bytes, ImageFormat format) {
    switch (format) {
        case ImageFormat::ppm: return decode_ppm(bytes);
        case ImageFormat::png: return decode_png_bytes(bytes);
        case ImageFormat::jpeg: return decode_jpeg_bytes(bytes);
    }
    throw IoError("decode_image: unknown format");
}

namespace {

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::byte> bytes;
    in.seekg(0, std::ios::end);
    bytes.resize(static_cast<std::size_t>(in.tellg()));
    in.seekg(0, std::ios::beg);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw IoError("cannot read " + path.string());
    return bytes;
}

std::string lower_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

std::optional<ImageFormat> format_from_extension(const std::filesystem::path& path) {
    const std::string ext = lower_extension(path);
    if (ext == ".ppm") return ImageFormat::ppm;
    if (ext == ".png") return ImageFormat::png;
    if (ext == ".jpg" || ext == ".jpeg") return ImageFormat::jpeg;
    return std::nullopt;
}

}  // namespace

ImageSample load_image(const std::filesystem::path& path) {
    auto format = format_from_extension(path);
    if (!format) throw IoError("unsupported image extension: " + path.string());
    ImageSample sample = decode_image(read_file_bytes(path), *format);
    sample.id = path.string();
    return sample;
}

void save_ppm(const ImageSample& sample, const std::filesystem::path& path) {
    auto bytes = encode_ppm(sample);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

ImageSample resize_bilinear(const ImageSample& src, int target_h, int target_w) {
    if (src.height < 2 || src.width < 2)
        throw ShapeError("resize_bilinear: source must be at least 2x2");
    if (target_h < 1 || target_w < 1)
        throw ShapeError("resize_bilinear: non-positive target size");
    if (src.pixels.size() != src.expected_size())
        throw ShapeError("resize_bilinear: inconsistent sample dimensions");

    const int sh = src.height, sw = src.width;
    const std::size_t splane = static_cast<std::size_t>(sw) * sh;
    const double sx_scale = static_cast<double>(sw) / target_w;
    const double sy_scale = static_cast<double>(sh) / target_h;

    struct Tap {
        int lo, hi;
        double frac;
    };
    auto make_taps = [](int dst, int srcn, double scale) {
        std::vector<Tap> taps(static_cast<std::size_t>(dst));
        for (int d = 0; d < dst; ++d) {
            double s = (d + 0.5) * scale - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(srcn - 1));
            int lo = static_cast<int>(std::floor(s));
            taps[static_cast<std::size_t>(d)] = {lo, std::min(lo + 1, srcn - 1), s - lo};
        }
        return taps;
    };
    const auto xtaps = make_taps(target_w, sw, sx_scale);
    const auto ytaps = make_taps(target_h, sh, sy_scale);

    // Horizontal pass into [3, sh, target_w], then vertical.
    std::vector<double> mid(3 * static_cast<std::size_t>(sh) * target_w);
    for (int c = 0; c < 3; ++c) {
        const float* plane = src.pixels.data() + c * splane;
        double* mplane = mid.data() + c * static_cast<std::size_t>(sh) * target_w;
        for (int y = 0; y < sh; ++y) {
            const float* row = plane + static_cast<std::size_t>(y) * sw;
            double* mrow = mplane + static_cast<std::size_t>(y) * target_w;
            for (int x = 0; x < target_w; ++x) {
                const Tap& t = xtaps[static_cast<std::size_t>(x)];
                mrow[x] = (1.0 - t.frac) * row[t.lo] + t.frac * row[t.hi];
            }
        }
    }

    ImageSample out;
    out.id = src.id;
    out.label = src.label;
    out.route = src.route;
    out.height = target_h;
    out.width = target_w;
    out.pixels.resize(3 * static_cast<std::size_t>(target_h) * target_w);
    const std::size_t dplane = static_cast<std::size_t>(target_w) * target_h;
    for (int c = 0; c < 3; ++c) {
        const double* mplane = mid.data() + c * static_cast<std::size_t>(sh) * target_w;
        float* oplane = out.pixels.data() + c * dplane;
        for (int y = 0; y < target_h; ++y) {
            const Tap& t = ytaps[static_cast<std::size_t>(y)];
            const double* rlo = mplane + static_cast<std::size_t>(t.lo) * target_w;
            const double* rhi = mplane + static_cast<std::size_t>(t.hi) * target_w;
            float* orow = oplane + static_cast<std::size_t>(y) * target_w;
            for (int x = 0; x < target_w; ++x) {
                orow[x] = static_cast<float>((1.0 - t.frac) * rlo[x] + t.frac * rhi[x]);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifests and splits
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("manifest: cannot open " + csv_path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("manifest: empty file " + csv_path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "path,label,route")
        throw IoError("manifest: expected header 'path,label,route' in " + csv_path.string());

    std::vector<ManifestEntry> entries;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_fields(line);
        if (fields.size() != 3)
            throw IoError("manifest: expected 3 fields on line " + std::to_string(line_no));
        ManifestEntry entry;
        entry.path = fields[0];
        entry.label = label_from_name(fields[1]);
        entry.route = fields[2];
        if (entry.path.empty()) throw IoError("manifest: empty path on line " + std::to_string(line_no));
        entries.push_back(std::move(entry));
    }
    return entries;
}

void save_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& csv_path) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("manifest: cannot open " + csv_path.string() + " for writing");
    out << "path,label,route\n";
    for (const auto& entry : entries) {
        out << entry.path << ',' << label_name(entry.label) << ',' << entry.route << '\n';
    }
    if (!out) throw IoError("manifest: cannot write " + csv_path.string());
}

std::vector<ManifestEntry> scan_class_folders(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root))
        throw IoError("scan_class_folders: not a directory: " + root.string());
    std::vector<ManifestEntry> entries;
    for (int label = 0; label < kNumClasses; ++label) {
        const std::filesystem::path class_dir = root / std::string(label_name(label));
        if (!std::filesystem::is_directory(class_dir)) continue;
        std::vector<std::string> files;
        for (const auto& item : std::filesystem::recursive_directory_iterator(class_dir)) {
            if (!item.is_regular_file()) continue;
            if (format_from_extension(item.path())) files.push_back(item.path().string());
        }
        std::sort(files.begin(), files.end());
        for (auto& file : files) {
            entries.push_back({std::move(file), label, std::string(label_name(label))});
        }
    }
    if (entries.empty())
        throw IoError("scan_class_folders: no class folders with images under " + root.string());
    return entries;
}

SplitSpec split_two_thirds(std::span<const ManifestEntry> manifest, std::uint64_t seed) {
    if (manifest.empty()) throw ShapeError("split_two_thirds: empty manifest");
    std::map<std::string, std::vector<std::string>> by_route;
    for (const auto& entry : manifest) {
        if (entry.route.empty())
            throw ShapeError("split_two_thirds: sample '" + entry.path + "' has no route");
        by_route[entry.route].push_back(entry.path);
    }

    Rng rng(seed);
    SplitSpec split;
    for (auto& [route, ids] : by_route) {
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
            throw ShapeError("split_two_thirds: duplicate id within route '" + route + "'");
        rng.shuffle(ids.begin(), ids.end());
        // round-half-up(2n/3) without going through floating point.
        const std::size_t n = ids.size();
        const std::size_t n_train = (4 * n + 3) / 6;
        split.train_ids.insert(split.train_ids.end(), ids.begin(),
                               ids.begin() + static_cast<std::ptrdiff_t>(n_train));
        split.test_ids.insert(split.test_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                              ids.end());
    }
    std::sort(split.train_ids.begin(), split.train_ids.end());
    std::sort(split.test_ids.begin(), split.test_ids.end());
    return split;
}

SplitSpec split_video_protocol(std::int64_t frame_count, std::int64_t skip, double train_frac) {
    if (skip < 0) throw ShapeError("split_video_protocol: negative skip");
    if (frame_count <= skip)
        throw ShapeError("split_video_protocol: frame_count must exceed skip");
    if (!(train_frac >= 0.0 && train_frac <= 1.0))
        throw ShapeError("split_video_protocol: train_frac must be in [0,1]");
    const std::int64_t remaining = frame_count - skip;
    // Floor, not round: the published per-sequence test counts are reproduced
    // only by flooring the train share (59609 frames -> 11921 train).
    const auto n_train = static_cast<std::int64_t>(
        std::floor(train_frac * static_cast<double>(remaining)));

    SplitSpec split;
    split.train_ids.reserve(static_cast<std::size_t>(n_train));
    split.test_ids.reserve(static_cast<std::size_t>(remaining - n_train));
    for (std::int64_t f = skip; f < frame_count; ++f) {
        std::string id = std::to_string(f);
        if (f < skip + n_train) {
            split.train_ids.push_back(std::move(id));
        } else {
            split.test_ids.push_back(std::move(id));
        }
    }
    return split;
}

}  // namespace vaescene
