#include "vaescene/trajectory.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

namespace vaescene {

double wrap_angle(double a) {
    // In-range angles pass through bitwise, so the function is idempotent and
    // never perturbs already-wrapped values.
    if (a > -std::numbers::pi && a <= std::numbers::pi) return a;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(a + std::numbers::pi, two_pi);
    if (r <= 0.0) r += two_pi;
    return r - std::numbers::pi;
}

std::vector<std::int64_t> adaptive_subsample(std::span<const PoseRecord> poses,
                                             const SamplerConfig& cfg) {
    cfg.validate();
    if (poses.empty()) throw ShapeError("adaptive_subsample: empty pose sequence");
    for (std::size_t i = 1; i < poses.size(); ++i) {
        if (poses[i].frame_index <= poses[i - 1].frame_index)
            throw ShapeError("adaptive_subsample: frame indices must be strictly increasing");
    }

    std::vector<std::int64_t> selected;
    selected.push_back(poses[0].frame_index);
    double dist_acc = 0.0;
    double theta_acc = 0.0;
    for (std::size_t i = 1; i < poses.size(); ++i) {
        const PoseRecord& prev = poses[i - 1];
        const PoseRecord& cur = poses[i];
        dist_acc += std::hypot(cur.x - prev.x, cur.y - prev.y);
        theta_acc += std::abs(wrap_angle(cur.yaw - prev.yaw));
        if (dist_acc >= cfg.tau_d_acc || theta_acc >= cfg.tau_theta_acc) {
            selected.push_back(cur.frame_index);
            dist_acc = 0.0;
            theta_acc = 0.0;
        }
    }
    return selected;
}

namespace {

double parse_double_field(const std::string& field, const char* what, std::size_t line_no) {
    const char* begin = field.data();
    const char* end = begin + field.size();
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) {
        throw IoError("pose csv: bad " + std::string(what) + " value '" + field + "' on line " +
                      std::to_string(line_no));
    }
    return value;
}

std::int64_t parse_int_field(const std::string& field, const char* what, std::size_t line_no) {
    const char* begin = field.data();
    const char* end = begin + field.size();
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) {
        throw IoError("pose csv: bad " + std::string(what) + " value '" + field + "' on line " +
                      std::to_string(line_no));
    }
    return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

std::vector<PoseRecord> load_poses_csv(const std::filesystem::path& path, bool yaw_degrees) {
    std::ifstream in(path);
    if (!in) throw IoError("pose csv: cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw IoError("pose csv: empty file " + path.string());
    if (strip_cr(line) != "frame,timestamp,x,y,yaw")
        throw IoError("pose csv: expected header 'frame,timestamp,x,y,yaw' in " + path.string());

    std::vector<PoseRecord> poses;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 5)
            throw IoError("pose csv: expected 5 fields on line " + std::to_string(line_no) +
                          ", got " + std::to_string(fields.size()));
        PoseRecord rec;
        rec.frame_index = parse_int_field(fields[0], "frame", line_no);
        (void)parse_double_field(fields[1], "timestamp", line_no);
        rec.x = parse_double_field(fields[2], "x", line_no);
        rec.y = parse_double_field(fields[3], "y", line_no);
        double yaw = parse_double_field(fields[4], "yaw", line_no);
        if (yaw_degrees) yaw *= std::numbers::pi / 180.0;
        rec.yaw = wrap_angle(yaw);
        poses.push_back(rec);
    }
    return poses;
}

}  // namespace vaescene
