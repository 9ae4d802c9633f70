#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vaescene/dataset.hpp"
#include "vaescene/descriptors.hpp"
#include "vaescene/probe.hpp"
#include "vaescene/vae.hpp"

namespace vaescene {

struct EvalReport {
    double accuracy = 0.0;                                        // percent
    std::array<double, 3> per_class_accuracy = {0.0, 0.0, 0.0};   // percent; 0 when class absent
    std::array<std::array<std::size_t, 3>, 3> confusion = {};     // [true class][predicted]
    std::size_t n = 0;
};

// Runs the probe over every descriptor and tallies a confusion matrix.
EvalReport evaluate(const ProbeModel& probe, const DescriptorSet& descriptors,
                    std::span<const int> labels);

struct BenchResult {
    double mean_us = 0.0;
    double std_us = 0.0;
    std::size_t reps = 0;
    std::string descriptor_kind;
};

struct BenchConfig {
    std::size_t reps = 30;    // timed repetitions, each a full pass over the images
    std::size_t warmup = 10;  // untimed passes run first
    PhogConfig phog;
    std::size_t random_dim = 128;
    std::uint64_t seed = 0;

    void validate() const {
        if (reps < 30) throw ShapeError("BenchConfig: reps must be >= 30");
    }
};

// Times descriptor extraction per image over pre-decoded, pre-resized images;
// decode and resize never enter the timed region. `vae` is required for the
// vae kind and ignored otherwise.
BenchResult bench_descriptor(DescriptorSource kind, std::span<const ImageSample> images,
                             const BenchConfig& cfg, VaeModel* vae = nullptr);

// Three procedural families with distinct coarse statistics, labeled and
// routed by class name so the standard split machinery applies:
//   rural    — sky/ground gradient split by a low-frequency rolling horizon
//   suburban — medium blocks of jittered color over a smooth backdrop
//   urban    — dense rectangular grid with strong axis-aligned edges
// Per-image generators are seeded from (seed, class, index), so any slice of
// the corpus is reproducible independently of generation order.
std::vector<ImageSample> generate_synthetic_corpus(std::size_t n_per_class,
                                                   std::size_t image_size, std::uint64_t seed);

// Report serialization: machine-readable JSON and the aligned text table
// (Descriptor / Type / Dimensions / Accuracy / Compute Time columns).
nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const BenchResult& result);

struct ResultRow {
    std::string descriptor;
    std::string type;
    std::size_t dimensions = 0;
    double accuracy_percent = 0.0;
    std::string compute_time;  // free-form, e.g. "60.4 +- 3.0 us"
};

std::string render_results_table(std::span<const ResultRow> rows);

}  // namespace vaescene
