// Command-line surface for the scene-descriptor toolkit. Subcommands cover
// synthetic data generation, encoder training, descriptor extraction (learned,
// gradient-histogram, random), probe training, evaluation, benchmarking, pose
// subsampling, and latent traversals. Machine-readable JSON summaries go to
// stdout; human-readable progress goes to stderr. Exit codes: 0 success,
// 2 usage error, 1 runtime error.

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vaescene/checkpoint.hpp"
#include "vaescene/dataset.hpp"
#include "vaescene/descriptors.hpp"
#include "vaescene/errors.hpp"
#include "vaescene/evalbench.hpp"
#include "vaescene/probe.hpp"
#include "vaescene/rng.hpp"
#include "vaescene/train.hpp"
#include "vaescene/trajectory.hpp"
#include "vaescene/vae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    unsigned threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--seed", c.seed, "Base seed for every random stream")->capture_default_str();
    cmd->add_option("--out-dir", c.out_dir, "Directory receiving output artifacts")
        ->capture_default_str();
    cmd->add_option("--threads", c.threads, "Worker threads for per-image work")
        ->capture_default_str()
        ->check(CLI::Range(1u, 256u));
}

// Relative --out style flags land under --out-dir; absolute paths win.
fs::path artifact_path(const CommonOpts& c, const std::string& flag) {
    fs::path p(flag);
    return p.is_absolute() ? p : fs::path(c.out_dir) / p;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Index-parallel loop with deterministic output placement: worker t handles
// indices congruent to t. Exceptions surface on the calling thread.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Manifest-relative image paths resolve against the manifest's directory, so
// a generated corpus can be moved as a unit.
fs::path resolve_entry(const fs::path& manifest_path, const std::string& entry_path) {
    fs::path p(entry_path);
    if (p.is_absolute()) return p;
    return manifest_path.parent_path() / p;
}

struct LoadedCorpus {
    std::vector<vaescene::ManifestEntry> entries;
    std::vector<vaescene::ImageSample> images;  // ids keep the manifest's path strings
};

// target_size 0 keeps native resolution.
LoadedCorpus load_corpus(const fs::path& manifest_path, std::size_t target_size,
                         unsigned threads) {
    LoadedCorpus corpus;
    corpus.entries = vaescene::load_manifest(manifest_path);
    corpus.images.resize(corpus.entries.size());
    parallel_for(corpus.entries.size(), threads, [&](std::size_t i) {
        const auto& entry = corpus.entries[i];
        auto img = vaescene::load_image(resolve_entry(manifest_path, entry.path));
        const int target = static_cast<int>(target_size);
        if (target > 0 && (img.height != target || img.width != target))
            img = vaescene::resize_bilinear(img, target);
        img.id = entry.path;
        img.label = entry.label;
        img.route = entry.route;
        corpus.images[i] = std::move(img);
    });
    std::cerr << "loaded " << corpus.images.size() << " images from " << manifest_path << "\n";
    return corpus;
}

std::vector<int> labels_for_descriptors(const vaescene::DescriptorSet& set,
                                        const fs::path& manifest_path) {
    auto entries = vaescene::load_manifest(manifest_path);
    std::map<std::string, int> label_by_path;
    for (const auto& e : entries) label_by_path[e.path] = e.label;
    std::vector<int> labels;
    labels.reserve(set.count());
    for (const auto& id : set.ids) {
        auto it = label_by_path.find(id);
        if (it == label_by_path.end())
            throw vaescene::ShapeError("descriptor id '" + id + "' has no manifest entry");
        labels.push_back(it->second);
    }
    return labels;
}

void emit(const json& summary) { std::cout << summary.dump(2) << "\n"; }

// Lossless float text so identical runs produce identical artifacts.
std::string full_precision(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- gen-synthetic ----

struct GenSynthOpts {
    CommonOpts common;
    std::size_t n = 100;
    std::size_t size = 64;
};

int run_gen_synthetic(const GenSynthOpts& o) {
    auto corpus = vaescene::generate_synthetic_corpus(o.n, o.size, o.common.seed);
    const fs::path root(o.common.out_dir);
    std::vector<vaescene::ManifestEntry> entries;
    std::array<std::size_t, vaescene::kNumClasses> counter{};
    for (const auto& img : corpus) {
        auto& index = counter[static_cast<std::size_t>(*img.label)];
        const fs::path rel = fs::path(img.route) / (std::to_string(index) + ".ppm");
        ++index;
        const fs::path dest = root / rel;
        ensure_parent(dest);
        vaescene::save_ppm(img, dest);
        entries.push_back({rel.generic_string(), *img.label, img.route});
    }
    const fs::path manifest = root / "manifest.csv";
    vaescene::save_manifest(entries, manifest);
    std::cerr << "wrote " << corpus.size() << " images under " << root << "\n";
    emit({{"images", corpus.size()},
          {"per_class", o.n},
          {"image_size", o.size},
          {"manifest", manifest.string()},
          {"out_dir", root.string()}});
    return 0;
}

// ---- train-vae ----

struct TrainVaeOpts {
    CommonOpts common;
    std::string manifest;
    std::string out = "vae.ckpt";
    std::size_t image_size = 64;
    std::size_t latent = 128;
    double lr = 0.005;
    std::size_t epochs = 500;
    std::size_t patience = 100;
    std::size_t batch = 64;
    double lambda_d = 50.0;
    double lambda_od = 5.0;
    std::string variant = "dip";
    std::size_t mc_samples = 1;
    double val_fraction = 0.1;
};

void write_history_csv(const fs::path& path, const std::vector<vaescene::EpochStats>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw vaescene::IoError("cannot write " + path.string());
    out << "epoch,train_recon,train_kl,train_dip,train_total,"
           "val_recon,val_kl,val_dip,val_total\n";
    for (const auto& row : history) {
        out << row.epoch << ',' << full_precision(row.train.recon) << ','
            << full_precision(row.train.kl) << ',' << full_precision(row.train.dip) << ','
            << full_precision(row.train.total) << ',' << full_precision(row.val.recon) << ','
            << full_precision(row.val.kl) << ',' << full_precision(row.val.dip) << ','
            << full_precision(row.val.total) << '\n';
    }
}

int run_train_vae(const TrainVaeOpts& o) {
    auto corpus = load_corpus(o.manifest, o.image_size, o.common.threads);
    std::vector<std::vector<float>> pixels;
    pixels.reserve(corpus.images.size());
    for (auto& img : corpus.images) pixels.push_back(std::move(img.pixels));

    vaescene::VaeConfig vcfg;
    vcfg.image_size = o.image_size;
    vcfg.latent_dim = o.latent;
    vcfg.variant = o.variant == "dip" ? vaescene::VaeVariant::dip : vaescene::VaeVariant::vanilla;
    vcfg.lambda_d = o.lambda_d;
    vcfg.lambda_od = o.lambda_od;
    vaescene::VaeModel model(vcfg, o.common.seed);

    vaescene::TrainConfig tcfg;
    tcfg.learning_rate = o.lr;
    tcfg.max_epochs = o.epochs;
    tcfg.patience = o.patience;
    tcfg.batch_size = o.batch;
    tcfg.seed = o.common.seed;
    tcfg.mc_samples = o.mc_samples;
    tcfg.val_fraction = o.val_fraction;

    auto result = vaescene::train_vae(model, pixels, tcfg, &std::cerr);

    const fs::path ckpt = artifact_path(o.common, o.out);
    ensure_parent(ckpt);
    vaescene::save_vae(ckpt, model);
    const fs::path history = ckpt.string() + ".history.csv";
    write_history_csv(history, result.history);

    emit({{"checkpoint", ckpt.string()},
          {"history", history.string()},
          {"images", pixels.size()},
          {"image_size", o.image_size},
          {"latent_dim", o.latent},
          {"epochs_run", result.epochs_run},
          {"best_epoch", result.best_epoch},
          {"best_val_loss", result.best_val_loss},
          {"stopped_early", result.stopped_early}});
    return 0;
}

// ---- encode ----

struct EncodeOpts {
    CommonOpts common;
    std::string model;
    std::string manifest;
    std::string out = "descriptors.dsc1";
};

int run_encode(const EncodeOpts& o) {
    auto model = vaescene::load_vae(o.model);
    auto corpus = load_corpus(o.manifest, model.image_size(), o.common.threads);

    std::vector<vaescene::Descriptor> rows(corpus.images.size());
    parallel_for(corpus.images.size(), o.common.threads, [&](std::size_t i) {
        auto code = model.encode(corpus.images[i].pixels);
        rows[i] = {std::move(code.z), vaescene::DescriptorSource::vae, corpus.images[i].id};
    });

    vaescene::DescriptorSet set;
    set.source = vaescene::DescriptorSource::vae;
    for (auto& d : rows) set.append(d);

    const fs::path out = artifact_path(o.common, o.out);
    ensure_parent(out);
    vaescene::save_descriptors(out, set);
    emit({{"descriptors", out.string()},
          {"count", set.count()},
          {"dim", set.dim},
          {"source", "vae"}});
    return 0;
}

// ---- phog ----

struct PhogOpts {
    CommonOpts common;
    std::string manifest;
    std::string out = "phog.dsc1";
    std::size_t bins = 60;
    std::size_t levels = 3;
    std::size_t range = 360;
    std::size_t image_size = 0;  // 0 keeps native resolution
};

int run_phog(const PhogOpts& o) {
    vaescene::PhogConfig cfg;
    cfg.bins = o.bins;
    cfg.levels = o.levels;
    cfg.orientation_range = o.range;
    cfg.validate();

    auto corpus = load_corpus(o.manifest, o.image_size, o.common.threads);
    std::vector<vaescene::Descriptor> rows(corpus.images.size());
    parallel_for(corpus.images.size(), o.common.threads, [&](std::size_t i) {
        const auto& img = corpus.images[i];
        auto gray = vaescene::to_grayscale(img.pixels, img.height, img.width);
        rows[i] = vaescene::phog(gray, img.height, img.width, cfg);
        rows[i].image_id = img.id;
    });

    vaescene::DescriptorSet set;
    set.source = vaescene::DescriptorSource::phog;
    for (auto& d : rows) set.append(d);

    const fs::path out = artifact_path(o.common, o.out);
    ensure_parent(out);
    vaescene::save_descriptors(out, set);
    emit({{"descriptors", out.string()},
          {"count", set.count()},
          {"dim", set.dim},
          {"source", "phog"}});
    return 0;
}

// ---- random-desc ----

struct RandomDescOpts {
    CommonOpts common;
    std::string manifest;
    std::string out = "random.dsc1";
    std::size_t dim = 128;
};

int run_random_desc(const RandomDescOpts& o) {
    auto entries = vaescene::load_manifest(o.manifest);
    std::vector<vaescene::Descriptor> rows(entries.size());
    parallel_for(entries.size(), o.common.threads, [&](std::size_t i) {
        // Per-image stream keyed on the manifest path: stable under reordering.
        vaescene::Rng rng(vaescene::derive_seed(o.common.seed, "random-desc-" + entries[i].path));
        rows[i] = vaescene::random_descriptor(o.dim, rng);
        rows[i].image_id = entries[i].path;
    });

    vaescene::DescriptorSet set;
    set.source = vaescene::DescriptorSource::random;
    for (auto& d : rows) set.append(d);

    const fs::path out = artifact_path(o.common, o.out);
    ensure_parent(out);
    vaescene::save_descriptors(out, set);
    emit({{"descriptors", out.string()},
          {"count", set.count()},
          {"dim", set.dim},
          {"source", "random"}});
    return 0;
}

// ---- train-probe ----

struct TrainProbeOpts {
    CommonOpts common;
    std::string descriptors;
    std::string manifest;
    std::string out = "probe.ckpt";
    std::size_t epochs = 100;
    double lr = 0.01;
    std::size_t hidden = 3;
};

int run_train_probe(const TrainProbeOpts& o) {
    auto set = vaescene::load_descriptors(o.descriptors);
    auto labels = labels_for_descriptors(set, o.manifest);

    vaescene::ProbeTrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.lr = static_cast<float>(o.lr);
    cfg.hidden = o.hidden;
    cfg.seed = o.common.seed;
    auto result = vaescene::train_probe(set, labels, cfg);

    const fs::path ckpt = artifact_path(o.common, o.out);
    ensure_parent(ckpt);
    vaescene::save_probe(ckpt, result.model);

    const fs::path history = ckpt.string() + ".history.csv";
    std::ofstream hist(history, std::ios::binary);
    if (!hist) throw vaescene::IoError("cannot write " + history.string());
    hist << "epoch,loss\n";
    for (std::size_t i = 0; i < result.loss_history.size(); ++i)
        hist << (i + 1) << ',' << full_precision(result.loss_history[i]) << '\n';
    hist.close();

    emit({{"checkpoint", ckpt.string()},
          {"history", history.string()},
          {"epochs", result.loss_history.size()},
          {"final_loss", result.loss_history.empty() ? 0.0 : result.loss_history.back()},
          {"input_dim", set.dim},
          {"classes", vaescene::kNumClasses}});
    return 0;
}

// ---- eval ----

struct EvalOpts {
    CommonOpts common;
    std::string probe;
    std::string descriptors;
    std::string manifest;
};

int run_eval(const EvalOpts& o) {
    auto probe = vaescene::load_probe(o.probe);
    auto set = vaescene::load_descriptors(o.descriptors);
    auto labels = labels_for_descriptors(set, o.manifest);
    auto report = vaescene::evaluate(probe, set, labels);
    std::cerr << "accuracy " << report.accuracy << "% over " << report.n << " samples\n";
    emit(vaescene::to_json(report));
    return 0;
}

// ---- bench ----

struct BenchOpts {
    CommonOpts common;
    std::string kind;
    std::string manifest;
    std::string model;
    std::size_t reps = 30;
    std::size_t warmup = 10;
    std::size_t dim = 128;
    std::size_t bins = 60;
    std::size_t levels = 3;
    std::size_t image_size = 0;  // 0 keeps native resolution
};

int run_bench(const BenchOpts& o) {
    vaescene::BenchConfig cfg;
    cfg.reps = o.reps;
    cfg.warmup = o.warmup;
    cfg.random_dim = o.dim;
    cfg.phog.bins = o.bins;
    cfg.phog.levels = o.levels;
    cfg.seed = o.common.seed;

    vaescene::DescriptorSource kind;
    if (o.kind == "vae")
        kind = vaescene::DescriptorSource::vae;
    else if (o.kind == "phog")
        kind = vaescene::DescriptorSource::phog;
    else
        kind = vaescene::DescriptorSource::random;

    std::optional<vaescene::VaeModel> model;
    std::size_t image_size = o.image_size;
    if (kind == vaescene::DescriptorSource::vae) {
        if (o.model.empty())
            throw vaescene::ShapeError("bench: the vae kind requires --model");
        model.emplace(vaescene::load_vae(o.model));
        if (image_size == 0) image_size = model->image_size();
    }
    auto corpus = load_corpus(o.manifest, image_size, o.common.threads);
    auto result = vaescene::bench_descriptor(kind, corpus.images, cfg,
                                             model ? &*model : nullptr);
    std::cerr << result.descriptor_kind << ": " << result.mean_us << " +- " << result.std_us
              << " us per image over " << result.reps << " reps\n";
    emit(vaescene::to_json(result));
    return 0;
}

// ---- sample-poses ----

struct SamplePosesOpts {
    CommonOpts common;
    std::string poses;
    double tau_d = 5.0;
    double tau_theta_deg = 15.0;
    bool yaw_degrees = false;
};

int run_sample_poses(const SamplePosesOpts& o) {
    auto poses = vaescene::load_poses_csv(o.poses, o.yaw_degrees);
    vaescene::SamplerConfig cfg;
    cfg.tau_d_acc = o.tau_d;
    cfg.tau_theta_acc = o.tau_theta_deg * std::numbers::pi / 180.0;
    auto selected = vaescene::adaptive_subsample(poses, cfg);
    std::cerr << "selected " << selected.size() << " of " << poses.size() << " poses\n";
    emit({{"selected", selected},
          {"count", selected.size()},
          {"total", poses.size()},
          {"tau_d", o.tau_d},
          {"tau_theta_deg", o.tau_theta_deg}});
    return 0;
}

// ---- traverse-latent ----

struct TraverseOpts {
    CommonOpts common;
    std::string model;
    std::string image;
    std::size_t dim = 0;
    std::size_t steps = 9;
    double span = 3.0;
};

int run_traverse(const TraverseOpts& o) {
    auto model = vaescene::load_vae(o.model);
    if (o.dim >= model.latent_dim())
        throw vaescene::ShapeError("traverse-latent: --dim " + std::to_string(o.dim) +
                                   " out of range for latent size " +
                                   std::to_string(model.latent_dim()));
    if (o.steps < 2) throw vaescene::ShapeError("traverse-latent: --steps must be >= 2");

    std::vector<float> mu(model.latent_dim(), 0.0f);
    if (!o.image.empty()) {
        auto img = vaescene::load_image(o.image);
        const int side = static_cast<int>(model.image_size());
        if (img.height != side || img.width != side) img = vaescene::resize_bilinear(img, side);
        mu = model.encode(img.pixels).mu;
    }

    const fs::path root(o.common.out_dir);
    fs::create_directories(root);
    std::vector<std::string> files;
    for (std::size_t s = 0; s < o.steps; ++s) {
        const double offset =
            -o.span + 2.0 * o.span * static_cast<double>(s) / static_cast<double>(o.steps - 1);
        auto z = mu;
        z[o.dim] += static_cast<float>(offset);
        vaescene::ImageSample frame;
        frame.height = static_cast<int>(model.image_size());
        frame.width = static_cast<int>(model.image_size());
        frame.pixels = model.decode(z);
        char name[64];
        std::snprintf(name, sizeof name, "traverse_d%zu_%02zu.ppm", o.dim, s);
        const fs::path dest = root / name;
        vaescene::save_ppm(frame, dest);
        files.push_back(dest.string());
    }
    emit({{"files", files}, {"dim", o.dim}, {"steps", o.steps}, {"span", o.span}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scene descriptor toolkit: train a convolutional variational encoder on "
                 "street-level images, extract compact global descriptors, and compare them "
                 "against gradient-histogram and random baselines with a linear probe."};
    app.require_subcommand(1);

    GenSynthOpts gen;
    auto* gen_cmd = app.add_subcommand("gen-synthetic",
                                       "Generate a labeled synthetic corpus (three scene classes)");
    add_common(gen_cmd, gen.common);
    gen_cmd->add_option("--n", gen.n, "Images per class")->capture_default_str();
    gen_cmd->add_option("--size", gen.size, "Square image size in pixels")->capture_default_str();

    TrainVaeOpts tv;
    auto* tv_cmd = app.add_subcommand("train-vae", "Train the variational encoder");
    add_common(tv_cmd, tv.common);
    tv_cmd->add_option("--manifest", tv.manifest, "Training manifest CSV")->required();
    tv_cmd->add_option("--out", tv.out, "Checkpoint file name")->capture_default_str();
    tv_cmd->add_option("--image-size", tv.image_size, "Square input size")->capture_default_str();
    tv_cmd->add_option("--latent", tv.latent, "Latent dimensionality")->capture_default_str();
    tv_cmd->add_option("--lr", tv.lr, "Adam learning rate")->capture_default_str();
    tv_cmd->add_option("--epochs", tv.epochs, "Maximum training epochs")->capture_default_str();
    tv_cmd->add_option("--patience", tv.patience, "Early-stopping patience in epochs")
        ->capture_default_str();
    tv_cmd->add_option("--batch", tv.batch, "Minibatch size")->capture_default_str();
    tv_cmd->add_option("--lambda-d", tv.lambda_d, "Moment-matching diagonal weight")
        ->capture_default_str();
    tv_cmd->add_option("--lambda-od", tv.lambda_od, "Moment-matching off-diagonal weight")
        ->capture_default_str();
    tv_cmd->add_option("--variant", tv.variant, "Objective variant")
        ->capture_default_str()
        ->check(CLI::IsMember({"dip", "vanilla"}));
    tv_cmd->add_option("--mc-samples", tv.mc_samples, "Reparameterized draws per step")
        ->capture_default_str();
    tv_cmd->add_option("--val-fraction", tv.val_fraction, "Held-out validation fraction")
        ->capture_default_str();

    EncodeOpts enc;
    auto* enc_cmd = app.add_subcommand("encode", "Encode images into latent descriptors");
    add_common(enc_cmd, enc.common);
    enc_cmd->add_option("--model", enc.model, "Encoder checkpoint")->required();
    enc_cmd->add_option("--manifest", enc.manifest, "Manifest CSV of images")->required();
    enc_cmd->add_option("--out", enc.out, "Descriptor file name")->capture_default_str();

    PhogOpts ph;
    auto* ph_cmd =
        app.add_subcommand("phog", "Compute pyramid gradient-histogram descriptors");
    add_common(ph_cmd, ph.common);
    ph_cmd->add_option("--manifest", ph.manifest, "Manifest CSV of images")->required();
    ph_cmd->add_option("--out", ph.out, "Descriptor file name")->capture_default_str();
    ph_cmd->add_option("--bins", ph.bins, "Orientation bins per cell")->capture_default_str();
    ph_cmd->add_option("--levels", ph.levels, "Pyramid levels")->capture_default_str();
    ph_cmd->add_option("--range", ph.range, "Orientation range in degrees (180 or 360)")
        ->capture_default_str();
    ph_cmd->add_option("--image-size", ph.image_size, "Resize to this square size (0 = native)")
        ->capture_default_str();

    RandomDescOpts rd;
    auto* rd_cmd = app.add_subcommand("random-desc", "Draw random baseline descriptors");
    add_common(rd_cmd, rd.common);
    rd_cmd->add_option("--manifest", rd.manifest, "Manifest CSV of images")->required();
    rd_cmd->add_option("--out", rd.out, "Descriptor file name")->capture_default_str();
    rd_cmd->add_option("--dim", rd.dim, "Descriptor dimensionality")->capture_default_str();

    TrainProbeOpts tp;
    auto* tp_cmd = app.add_subcommand("train-probe",
                                      "Fit the linear probe on frozen descriptors");
    add_common(tp_cmd, tp.common);
    tp_cmd->add_option("--descriptors", tp.descriptors, "Descriptor file")->required();
    tp_cmd->add_option("--manifest", tp.manifest, "Manifest CSV supplying labels")->required();
    tp_cmd->add_option("--out", tp.out, "Probe checkpoint file name")->capture_default_str();
    tp_cmd->add_option("--epochs", tp.epochs, "Full-batch training epochs")->capture_default_str();
    tp_cmd->add_option("--lr", tp.lr, "Adam learning rate")->capture_default_str();
    tp_cmd->add_option("--hidden", tp.hidden, "Width of the intermediate linear map")
        ->capture_default_str();

    EvalOpts ev;
    auto* ev_cmd = app.add_subcommand("eval", "Score a probe on labeled descriptors");
    add_common(ev_cmd, ev.common);
    ev_cmd->add_option("--probe", ev.probe, "Probe checkpoint")->required();
    ev_cmd->add_option("--descriptors", ev.descriptors, "Descriptor file")->required();
    ev_cmd->add_option("--manifest", ev.manifest, "Manifest CSV supplying labels")->required();

    BenchOpts bn;
    auto* bn_cmd = app.add_subcommand("bench", "Time descriptor computation per image");
    add_common(bn_cmd, bn.common);
    bn_cmd->add_option("--kind", bn.kind, "Descriptor kind to time")
        ->required()
        ->check(CLI::IsMember({"vae", "phog", "random"}));
    bn_cmd->add_option("--manifest", bn.manifest, "Manifest CSV of images")->required();
    bn_cmd->add_option("--model", bn.model, "Encoder checkpoint (vae kind only)");
    bn_cmd->add_option("--reps", bn.reps, "Timed repetitions (minimum 30)")->capture_default_str();
    bn_cmd->add_option("--warmup", bn.warmup, "Untimed warmup passes")->capture_default_str();
    bn_cmd->add_option("--dim", bn.dim, "Random descriptor dimensionality")->capture_default_str();
    bn_cmd->add_option("--bins", bn.bins, "Gradient-histogram bins")->capture_default_str();
    bn_cmd->add_option("--levels", bn.levels, "Gradient-histogram pyramid levels")
        ->capture_default_str();
    bn_cmd->add_option("--image-size", bn.image_size, "Resize to this square size (0 = native)")
        ->capture_default_str();

    SamplePosesOpts sp;
    auto* sp_cmd = app.add_subcommand("sample-poses",
                                      "Select frames by accumulated motion thresholds");
    add_common(sp_cmd, sp.common);
    sp_cmd->add_option("--poses", sp.poses, "Pose CSV (frame,timestamp,x,y,yaw)")->required();
    sp_cmd->add_option("--tau-d", sp.tau_d, "Accumulated distance threshold in meters")
        ->capture_default_str();
    sp_cmd->add_option("--tau-theta-deg", sp.tau_theta_deg,
                       "Accumulated rotation threshold in degrees")
        ->capture_default_str();
    sp_cmd->add_flag("--yaw-degrees", sp.yaw_degrees, "Pose yaw column is in degrees");

    TraverseOpts tr;
    auto* tr_cmd = app.add_subcommand("traverse-latent",
                                      "Decode a sweep along one latent dimension");
    add_common(tr_cmd, tr.common);
    tr_cmd->add_option("--model", tr.model, "Encoder checkpoint")->required();
    tr_cmd->add_option("--image", tr.image, "Source image (omit to sweep from the origin)");
    tr_cmd->add_option("--dim", tr.dim, "Latent dimension to sweep")->required();
    tr_cmd->add_option("--steps", tr.steps, "Frames in the sweep")->capture_default_str();
    tr_cmd->add_option("--span", tr.span, "Half-width of the sweep")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) return run_gen_synthetic(gen);
        if (*tv_cmd) return run_train_vae(tv);
        if (*enc_cmd) return run_encode(enc);
        if (*ph_cmd) return run_phog(ph);
        if (*rd_cmd) return run_random_desc(rd);
        if (*tp_cmd) return run_train_probe(tp);
        if (*ev_cmd) return run_eval(ev);
        if (*bn_cmd) return run_bench(bn);
        if (*sp_cmd) return run_sample_poses(sp);
        if (*tr_cmd) return run_traverse(tr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
