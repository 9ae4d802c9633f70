// Exercises the installed command-line binary end to end: exit codes, JSON
// summaries, documented defaults, and byte-identical artifacts for repeated
// runs with the same seeds.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "vaescene/descriptors.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int rc = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

RunResult run_cli(const fs::path& workdir, const std::string& args) {
    const fs::path out_file = workdir / "_stdout.txt";
    const fs::path err_file = workdir / "_stderr.txt";
    const std::string cmd = "cd '" + workdir.string() + "' && '" + VAESCENE_CLI + "' " + args +
                            " > '" + out_file.string() + "' 2> '" + err_file.string() + "'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

// A small corpus most subcommands run against.
fs::path seeded_corpus(const fs::path& dir, int per_class) {
    auto r = run_cli(dir, "gen-synthetic --n " + std::to_string(per_class) +
                              " --size 32 --seed 7 --out-dir corpus");
    REQUIRE(r.rc == 0);
    return dir / "corpus" / "manifest.csv";
}

}  // namespace

TEST_CASE("exit codes separate success, usage errors, and runtime errors") {
    auto dir = fresh_dir("vaescene_cli_codes");
    CHECK(run_cli(dir, "--help").rc == 0);
    CHECK(run_cli(dir, "no-such-subcommand").rc == 2);
    CHECK(run_cli(dir, "phog").rc == 2);                       // missing required flag
    CHECK(run_cli(dir, "phog --manifest x.csv --bogus 1").rc == 2);
    CHECK(run_cli(dir, "sample-poses --poses missing.csv").rc == 1);
    auto err = run_cli(dir, "sample-poses --poses missing.csv").err;
    CHECK(err.find("error:") != std::string::npos);
}

TEST_CASE("help text documents the default settings") {
    auto dir = fresh_dir("vaescene_cli_help");

    auto tv = run_cli(dir, "train-vae --help");
    REQUIRE(tv.rc == 0);
    CHECK(tv.out.find("--lr FLOAT [0.005]") != std::string::npos);
    CHECK(tv.out.find("--patience UINT [100]") != std::string::npos);
    CHECK(tv.out.find("--latent UINT [128]") != std::string::npos);

    auto ph = run_cli(dir, "phog --help");
    REQUIRE(ph.rc == 0);
    CHECK(ph.out.find("--bins UINT [60]") != std::string::npos);
    CHECK(ph.out.find("--levels UINT [3]") != std::string::npos);

    auto sp = run_cli(dir, "sample-poses --help");
    REQUIRE(sp.rc == 0);
    CHECK(sp.out.find("--tau-d FLOAT [5]") != std::string::npos);
    CHECK(sp.out.find("--tau-theta-deg FLOAT [15]") != std::string::npos);

    auto tp = run_cli(dir, "train-probe --help");
    REQUIRE(tp.rc == 0);
    CHECK(tp.out.find("--lr FLOAT [0.01]") != std::string::npos);
    CHECK(tp.out.find("--epochs UINT [100]") != std::string::npos);

    auto rd = run_cli(dir, "random-desc --help");
    REQUIRE(rd.rc == 0);
    CHECK(rd.out.find("--dim UINT [128]") != std::string::npos);
    CHECK(rd.out.find("--threads UINT:UINT in [1 - 256] [1]") != std::string::npos);
}

TEST_CASE("summaries are pure JSON on stdout with logs on stderr") {
    auto dir = fresh_dir("vaescene_cli_json");
    auto r = run_cli(dir, "gen-synthetic --n 2 --size 32 --seed 3 --out-dir corpus");
    REQUIRE(r.rc == 0);
    auto j = nlohmann::json::parse(r.out);  // throws if stdout is not valid JSON
    CHECK(j["images"].get<std::size_t>() == 6);
    CHECK(j["per_class"].get<std::size_t>() == 2);
    CHECK(fs::exists(dir / j["manifest"].get<std::string>()));
    CHECK(r.err.find("wrote 6 images") != std::string::npos);
}

TEST_CASE("generated corpora are reproducible byte for byte") {
    auto dir = fresh_dir("vaescene_cli_genrepro");
    REQUIRE(run_cli(dir, "gen-synthetic --n 3 --size 32 --seed 9 --out-dir a").rc == 0);
    REQUIRE(run_cli(dir, "gen-synthetic --n 3 --size 32 --seed 9 --out-dir b").rc == 0);
    CHECK(same_bytes(dir / "a/manifest.csv", dir / "b/manifest.csv"));
    for (const char* rel : {"rural/0.ppm", "suburban/2.ppm", "urban/1.ppm"})
        CHECK(same_bytes(dir / "a" / rel, dir / "b" / rel));
    // A different seed must actually change the pixels.
    REQUIRE(run_cli(dir, "gen-synthetic --n 3 --size 32 --seed 10 --out-dir c").rc == 0);
    CHECK_FALSE(same_bytes(dir / "a/rural/0.ppm", dir / "c/rural/0.ppm"));
}

TEST_CASE("descriptor extraction and probe training are idempotent") {
    auto dir = fresh_dir("vaescene_cli_idem");
    auto manifest = seeded_corpus(dir, 4);
    const std::string m = " --manifest '" + manifest.string() + "'";

    SUBCASE("gradient histograms") {
        REQUIRE(run_cli(dir, "phog" + m + " --bins 12 --levels 2 --out a.dsc1").rc == 0);
        REQUIRE(run_cli(dir, "phog" + m + " --bins 12 --levels 2 --out b.dsc1").rc == 0);
        CHECK(same_bytes(dir / "a.dsc1", dir / "b.dsc1"));
        CHECK(same_bytes(dir / "a.dsc1.ids.csv", dir / "b.dsc1.ids.csv"));
        // Thread count must not change the artifact.
        REQUIRE(run_cli(dir, "phog" + m + " --bins 12 --levels 2 --out c.dsc1 --threads 4").rc ==
                0);
        CHECK(same_bytes(dir / "a.dsc1", dir / "c.dsc1"));
    }

    SUBCASE("random baselines keyed by seed") {
        REQUIRE(run_cli(dir, "random-desc" + m + " --dim 16 --seed 5 --out a.dsc1").rc == 0);
        REQUIRE(run_cli(dir, "random-desc" + m + " --dim 16 --seed 5 --out b.dsc1").rc == 0);
        REQUIRE(run_cli(dir, "random-desc" + m + " --dim 16 --seed 6 --out c.dsc1").rc == 0);
        CHECK(same_bytes(dir / "a.dsc1", dir / "b.dsc1"));
        CHECK_FALSE(same_bytes(dir / "a.dsc1", dir / "c.dsc1"));
    }

    SUBCASE("probe training") {
        REQUIRE(run_cli(dir, "phog" + m + " --bins 12 --levels 2 --out p.dsc1").rc == 0);
        const std::string d = " --descriptors p.dsc1" + m + " --seed 11";
        REQUIRE(run_cli(dir, "train-probe" + d + " --out a.ckpt").rc == 0);
        REQUIRE(run_cli(dir, "train-probe" + d + " --out b.ckpt").rc == 0);
        CHECK(same_bytes(dir / "a.ckpt", dir / "b.ckpt"));
        CHECK(same_bytes(dir / "a.ckpt.history.csv", dir / "b.ckpt.history.csv"));
    }
}

TEST_CASE("the encoder pipeline trains, encodes, evaluates, and benches") {
    auto dir = fresh_dir("vaescene_cli_pipeline");
    auto manifest = seeded_corpus(dir, 4);
    const std::string m = " --manifest '" + manifest.string() + "'";
    const std::string train_flags =
        "train-vae" + m + " --image-size 32 --latent 8 --epochs 2 --batch 6 --seed 5";

    REQUIRE(run_cli(dir, train_flags + " --out a.ckpt").rc == 0);
    REQUIRE(run_cli(dir, train_flags + " --out b.ckpt").rc == 0);
    CHECK(same_bytes(dir / "a.ckpt", dir / "b.ckpt"));
    CHECK(same_bytes(dir / "a.ckpt.history.csv", dir / "b.ckpt.history.csv"));

    REQUIRE(run_cli(dir, "encode --model a.ckpt" + m + " --out za.dsc1").rc == 0);
    REQUIRE(run_cli(dir, "encode --model b.ckpt" + m + " --out zb.dsc1 --threads 4").rc == 0);
    CHECK(same_bytes(dir / "za.dsc1", dir / "zb.dsc1"));

    auto set = vaescene::load_descriptors(dir / "za.dsc1");
    CHECK(set.dim == 8);
    CHECK(set.count() == 12);
    CHECK(set.source == vaescene::DescriptorSource::vae);
    CHECK(set.ids[0] == "rural/0.ppm");

    REQUIRE(run_cli(dir, "train-probe --descriptors za.dsc1" + m + " --seed 2 --out pr.ckpt").rc ==
            0);
    auto ev = run_cli(dir, "eval --probe pr.ckpt --descriptors za.dsc1" + m);
    REQUIRE(ev.rc == 0);
    auto j = nlohmann::json::parse(ev.out);
    CHECK(j["n"].get<std::size_t>() == 12);
    CHECK(j["accuracy_percent"].get<double>() >= 0.0);
    CHECK(j["confusion"].size() == 3);

    auto bench = run_cli(dir, "bench --kind random" + m + " --dim 16 --reps 30 --warmup 2");
    REQUIRE(bench.rc == 0);
    auto bj = nlohmann::json::parse(bench.out);
    CHECK(bj["reps"].get<std::size_t>() == 30);
    CHECK(bj["mean_us"].get<double>() > 0.0);
    CHECK(bj["descriptor_kind"].get<std::string>() == "random");
    CHECK(run_cli(dir, "bench --kind vae" + m + " --reps 30").rc == 1);  // needs --model

    auto tr = run_cli(dir, "traverse-latent --model a.ckpt --dim 2 --steps 3 --out-dir sweep");
    REQUIRE(tr.rc == 0);
    auto tj = nlohmann::json::parse(tr.out);
    REQUIRE(tj["files"].size() == 3);
    for (const auto& f : tj["files"]) CHECK(fs::exists(dir / f.get<std::string>()));
    CHECK(run_cli(dir, "traverse-latent --model a.ckpt --dim 99 --out-dir sweep").rc == 1);
}

TEST_CASE("pose subsampling reports the selected frames as JSON") {
    auto dir = fresh_dir("vaescene_cli_poses");
    {
        std::ofstream csv(dir / "poses.csv");
        csv << "frame,timestamp,x,y,yaw\n";
        for (int i = 0; i <= 20; ++i)
            csv << i << ',' << i * 0.1 << ',' << i << ",0,0\n";
    }
    auto r = run_cli(dir, "sample-poses --poses poses.csv --tau-d 5 --tau-theta-deg 15");
    REQUIRE(r.rc == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["selected"] == nlohmann::json({0, 5, 10, 15, 20}));
    CHECK(j["count"].get<std::size_t>() == 5);
    CHECK(j["total"].get<std::size_t>() == 21);
}
