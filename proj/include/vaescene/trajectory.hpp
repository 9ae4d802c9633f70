#pragma once

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <vector>

#include "vaescene/errors.hpp"

namespace vaescene {

struct PoseRecord {
    std::int64_t frame_index = 0;
    double x = 0.0;    // meters
    double y = 0.0;    // meters
    double yaw = 0.0;  // radians in (-pi, pi]
};

struct SamplerConfig {
    double tau_d_acc = 5.0;                                   // meters
    double tau_theta_acc = 15.0 * std::numbers::pi / 180.0;   // radians

    void validate() const {
        if (!(tau_d_acc > 0.0) || !(tau_theta_acc > 0.0))
            throw ShapeError("SamplerConfig: thresholds must be strictly positive");
    }
};

// Shortest signed angle, wrapped to (-pi, pi].
double wrap_angle(double a);

// Walks the trajectory accumulating traveled distance and absolute heading
// change since the last selected frame; selects a frame (and resets both
// accumulators) when either accumulator reaches its threshold. The first pose
// is always selected. Returns the PoseRecord::frame_index values of the
// selections, sorted and duplicate-free by construction.
std::vector<std::int64_t> adaptive_subsample(std::span<const PoseRecord> poses,
                                             const SamplerConfig& cfg);

// CSV intake with header `frame,timestamp,x,y,yaw`; the timestamp column is
// parsed and discarded. yaw_degrees converts the yaw column from degrees.
std::vector<PoseRecord> load_poses_csv(const std::filesystem::path& path, bool yaw_degrees = false);

}  // namespace vaescene
