#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "vaescene/checkpoint.hpp"
#include "vaescene/train.hpp"
#include "vaescene/vae.hpp"

using vaescene::GradientTapeT;
using vaescene::Rng;
using vaescene::Shape;
using vaescene::TensorT;
using vaescene::VaeConfig;
using vaescene::VaeVariant;

namespace {

using DTensor = TensorT<double>;
using DTape = GradientTapeT<double>;

VaeConfig toy_config() {
    VaeConfig cfg;
    cfg.image_size = 8;
    cfg.latent_dim = 3;
    cfg.channel_schedule = {4, 8};
    cfg.variant = VaeVariant::dip;
    cfg.lambda_d = 10.0;
    cfg.lambda_od = 5.0;
    return cfg;
}

DTensor rand_tensor(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = true) {
    auto t = DTensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("kl divergence is exactly zero for the standard normal") {
    auto mu = DTensor::zeros({3, 4});
    auto logvar = DTensor::zeros({3, 4});
    CHECK(vaescene::kl_standard_normal(mu, logvar).item() == 0.0);
}

TEST_CASE("kl divergence matches a Monte Carlo estimate") {
    // KL(q||p) = E_q[log q(z) - log p(z)] with z = mu + sigma * eps reduces to
    // mean of 0.5 * (z^2 - eps^2 - logvar) — an estimator that shares no code
    // with the closed form under test.
    Rng rng(55);
    for (int pair = 0; pair < 4; ++pair) {
        const std::size_t d = 3;
        auto mu = rand_tensor({1, d}, rng, 0.75, 2.0, false);
        auto logvar = rand_tensor({1, d}, rng, 0.5, 1.5, false);
        if (pair % 2 == 1)
            for (auto& v : mu.data()) v = -v;

        const double analytic = vaescene::kl_standard_normal(mu, logvar).item();
        Rng mc(900 + pair);
        const int m = 200000;
        double acc = 0.0;
        for (int i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double eps = mc.normal();
                const double z = mu.data()[j] + std::exp(0.5 * logvar.data()[j]) * eps;
                acc += 0.5 * (z * z - eps * eps - logvar.data()[j]);
            }
        }
        const double estimate = acc / m;
        CHECK(std::abs(estimate - analytic) / analytic < 0.02);
    }
}

TEST_CASE("kl divergence gradient passes finite differences") {
    Rng rng(56);
    auto mu = rand_tensor({4, 3}, rng, -1.5, 1.5);
    auto logvar = rand_tensor({4, 3}, rng, -1.0, 1.0);
    std::vector<DTensor> inputs = {mu, logvar};
    auto fn = [](std::vector<DTensor>& in) { return vaescene::kl_standard_normal(in[0], in[1]); };
    CHECK(vaescene::finite_difference_check<double>(fn, inputs) < 1e-6);
}

TEST_CASE("dip penalty vanishes exactly on an identity-covariance batch") {
    // Rows +/- sqrt(D) * e_d have exact zero mean and identity covariance in
    // binary floating point when D is a perfect square (sqrt(4) = 2).
    const std::size_t d = 4, n = 2 * d;
    auto mu = DTensor::zeros({n, d});
    for (std::size_t k = 0; k < d; ++k) {
        mu.data()[(2 * k) * d + k] = 2.0;
        mu.data()[(2 * k + 1) * d + k] = -2.0;
    }
    CHECK(vaescene::dip_penalty(mu, 50.0, 5.0).item() == 0.0);
}

TEST_CASE("dip penalty matches a two-pass covariance oracle") {
    Rng rng(57);
    const std::size_t n = 6, d = 4;
    const double ld = 50.0, lod = 5.0;
    auto mu = rand_tensor({n, d}, rng, -1.0, 1.0, false);

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += mu.data()[i * d + j];
    for (auto& v : mean) v /= n;
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                cov[a * d + b] +=
                    (mu.data()[i * d + a] - mean[a]) * (mu.data()[i * d + b] - mean[b]);
    for (auto& v : cov) v /= n;
    double want = 0.0;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
            want += (a == b) ? ld * (cov[a * d + b] - 1.0) * (cov[a * d + b] - 1.0)
                             : lod * cov[a * d + b] * cov[a * d + b];

    CHECK(vaescene::dip_penalty(mu, ld, lod).item() == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("dip penalty rejects singleton batches") {
    auto mu = DTensor::zeros({1, 4});
    CHECK_THROWS_AS((void)vaescene::dip_penalty(mu, 50.0, 5.0), vaescene::ShapeError);
}

TEST_CASE("dip penalty gradient passes finite differences") {
    Rng rng(58);
    auto mu = rand_tensor({5, 3}, rng, -1.0, 1.0);
    std::vector<DTensor> inputs = {mu};
    auto fn = [](std::vector<DTensor>& in) { return vaescene::dip_penalty(in[0], 50.0, 5.0); };
    CHECK(vaescene::finite_difference_check<double>(fn, inputs) < 1e-6);
}

TEST_CASE("model wiring: shapes, loss composition, gradient coverage") {
    vaescene::VaeModel model(toy_config(), 42);
    Rng rng(59);
    auto x = TensorT<float>::zeros({2, 3, 8, 8});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));

    SUBCASE("encode/decode shapes and ranges") {
        auto [mu, logvar] = model.encode_batch(x, false);
        CHECK(mu.shape() == Shape{2, 3});
        CHECK(logvar.shape() == Shape{2, 3});
        auto xhat = model.decode_batch(mu, false);
        CHECK(xhat.shape() == Shape{2, 3, 8, 8});
        for (float v : xhat.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    SUBCASE("loss breakdown composes recon + kl + dip") {
        Rng eps_rng(60);
        GradientTapeT<float> tape;
        auto [total, bd] = model.loss(x, eps_rng, true);
        CHECK(bd.total ==
              doctest::Approx(bd.recon * model.config().recon_weight + bd.kl + bd.dip).epsilon(1e-5));
        CHECK(bd.recon > 0.0);
        CHECK(std::isfinite(bd.total));
        tape.backward(total);
        for (auto& [name, p] : model.named_parameters()) {
            INFO("parameter without gradient: " << name);
            CHECK(p.has_grad());
        }
    }

    SUBCASE("vanilla variant skips the dip term") {
        auto cfg = toy_config();
        cfg.variant = VaeVariant::vanilla;
        vaescene::VaeModel vm(cfg, 42);
        Rng eps_rng(61);
        GradientTapeT<float> tape;
        auto [total, bd] = vm.loss(x, eps_rng, true);
        (void)total;
        CHECK(bd.dip == 0.0);
    }

    SUBCASE("encode validates pixel range") {
        std::vector<float> img(3 * 8 * 8, 0.5f);
        img[7] = 1.5f;
        CHECK_THROWS_AS((void)model.encode(img), vaescene::NumericError);
        img[7] = 0.5f;
        CHECK_NOTHROW((void)model.encode(img));
    }
}

TEST_CASE("identically seeded models produce identical descriptors") {
    vaescene::VaeModel a(toy_config(), 7), b(toy_config(), 7), c(toy_config(), 8);
    std::vector<float> img(3 * 8 * 8);
    Rng rng(62);
    for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 1.0));
    auto ca = a.encode(img), cb = b.encode(img), cc = c.encode(img);
    CHECK(ca.mu == cb.mu);
    CHECK(ca.logvar == cb.logvar);
    CHECK(ca.mu != cc.mu);
}

TEST_CASE("whole-model gradient passes finite differences in double") {
    VaeConfig cfg = toy_config();
    vaescene::VaeModelT<double> model(cfg, 13);
    Rng rng(63);
    auto x = rand_tensor({2, 3, 8, 8}, rng, 0.0, 1.0, false);
    auto eps = rand_tensor({2, cfg.latent_dim}, rng, -1.0, 1.0, false);

    std::vector<DTensor> inputs;
    for (auto& [name, p] : model.named_parameters()) inputs.push_back(p);

    auto fn = [&](std::vector<DTensor>&) {
        auto [mu, logvar] = model.encode_batch(x, true);
        auto z = vaescene::reparameterize(mu, logvar, eps);
        auto xhat = model.decode_batch(z, true);
        auto recon = vaescene::affine(vaescene::sum(vaescene::square(vaescene::sub(x, xhat))),
                                      1.0 / 2.0, 0.0);
        auto kl = vaescene::kl_standard_normal(mu, logvar);
        auto dip = vaescene::dip_penalty(mu, cfg.lambda_d, cfg.lambda_od);
        return vaescene::add(vaescene::add(recon, kl), dip);
    };
    CHECK(vaescene::finite_difference_check<double>(fn, inputs, 1e-4) < 1e-4);
}

TEST_CASE("early stopping halts at best epoch plus patience") {
    vaescene::EarlyStopper stopper(4);
    std::size_t stop_epoch = 0;
    for (std::size_t e = 1; e <= 100; ++e) {
        const double val = e <= 10 ? 20.0 - static_cast<double>(e) : 10.0;
        if (stopper.update(val)) {
            stop_epoch = e;
            break;
        }
    }
    CHECK(stop_epoch == 14);  // best at 10, patience 4
    CHECK(stopper.best_epoch() == 10);
    CHECK(stopper.best_value() == doctest::Approx(10.0));
}

TEST_CASE("early stopping treats ties as non-improvements") {
    vaescene::EarlyStopper stopper(2);
    CHECK_FALSE(stopper.update(5.0));
    CHECK(stopper.improved_last());
    CHECK_FALSE(stopper.update(5.0));
    CHECK_FALSE(stopper.improved_last());
    CHECK(stopper.update(5.0));  // two epochs without improvement
    CHECK(stopper.best_epoch() == 1);
}

TEST_CASE("train_vae runs, records history, and restores the best epoch") {
    VaeConfig cfg = toy_config();
    vaescene::VaeModel model(cfg, 3);
    Rng rng(64);
    std::vector<std::vector<float>> images;
    for (int i = 0; i < 12; ++i) {
        std::vector<float> img(3 * 8 * 8);
        for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 1.0));
        images.push_back(std::move(img));
    }
    vaescene::TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.max_epochs = 3;
    tc.patience = 5;
    tc.batch_size = 4;
    tc.seed = 1;
    tc.val_fraction = 0.25;

    auto result = vaescene::train_vae(model, images, tc);
    CHECK(result.history.size() == 3);
    CHECK(result.epochs_run == 3);
    CHECK(result.best_epoch >= 1);
    for (const auto& h : result.history) {
        CHECK(std::isfinite(h.train.total));
        CHECK(std::isfinite(h.val.total));
    }
    // Model must be usable (and the best-epoch restore must leave valid state).
    CHECK_NOTHROW((void)model.encode(images[0]));
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    VaeConfig cfg = toy_config();
    Rng rng(65);
    std::vector<std::vector<float>> images;
    for (int i = 0; i < 8; ++i) {
        std::vector<float> img(3 * 8 * 8);
        for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 1.0));
        images.push_back(std::move(img));
    }
    vaescene::TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.max_epochs = 2;
    tc.patience = 5;
    tc.batch_size = 4;
    tc.seed = 9;

    vaescene::VaeModel m1(cfg, 11), m2(cfg, 11);
    auto r1 = vaescene::train_vae(m1, images, tc);
    auto r2 = vaescene::train_vae(m2, images, tc);
    CHECK(r1.history.size() == r2.history.size());
    for (std::size_t e = 0; e < r1.history.size(); ++e)
        CHECK(r1.history[e].train.total == r2.history[e].train.total);
    auto p1 = m1.named_parameters();
    auto p2 = m2.named_parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) {
        auto d1 = p1[i].second.data();
        auto d2 = p2[i].second.data();
        REQUIRE(d1.size() == d2.size());
        for (std::size_t j = 0; j < d1.size(); ++j) REQUIRE(d1[j] == d2[j]);
    }
}

TEST_CASE("checkpoint container round-trips tensors and config") {
    const auto path = temp_file("vaescene_ckpt_container_test.bin");
    std::vector<vaescene::NamedTensorData> tensors = {
        {"alpha", {2, 3}, {1, 2, 3, 4, 5, 6}},
        {"beta", {4}, {0.5f, -0.25f, 8.0f, 1e-7f}},
    };
    nlohmann::json config = {{"kind", "probe"}, {"classes", 3}};
    vaescene::save_checkpoint(path, tensors, config);
    auto loaded = vaescene::load_checkpoint(path);
    REQUIRE(loaded.tensors.size() == 2);
    CHECK(loaded.tensors[0].name == "alpha");
    CHECK(loaded.tensors[0].shape == Shape{2, 3});
    CHECK(loaded.tensors[0].data == tensors[0].data);
    CHECK(loaded.tensors[1].data == tensors[1].data);
    CHECK(loaded.config == config);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects corrupted and truncated files") {
    const auto path = temp_file("vaescene_ckpt_corrupt_test.bin");
    std::vector<vaescene::NamedTensorData> tensors = {{"t", {2}, {1.0f, 2.0f}}};
    vaescene::save_checkpoint(path, tensors, nlohmann::json::object());

    SUBCASE("corrupt magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
        f.close();
        bool threw = false;
        try {
            (void)vaescene::load_checkpoint(path);
        } catch (const vaescene::FormatError& e) {
            threw = true;
            CHECK(std::string(e.what()).find("magic") != std::string::npos);
        }
        CHECK(threw);
    }
    SUBCASE("truncated payload") {
        const auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size / 2);
        CHECK_THROWS_AS((void)vaescene::load_checkpoint(path), vaescene::FormatError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("vae model round-trips through a checkpoint") {
    const auto path = temp_file("vaescene_ckpt_model_test.bin");
    vaescene::VaeModel model(toy_config(), 21);

    // Push a batch through in train mode so the BatchNorm buffers move off
    // their init values and the round trip covers them.
    Rng rng(66);
    auto x = TensorT<float>::zeros({4, 3, 8, 8});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    (void)model.encode_batch(x, true);

    std::vector<float> img(3 * 8 * 8);
    for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 1.0));
    auto before = model.encode(img);

    vaescene::save_vae(path, model);
    auto loaded = vaescene::load_vae(path);
    CHECK(loaded.config().image_size == 8);
    CHECK(loaded.config().latent_dim == 3);
    CHECK(loaded.config().variant == VaeVariant::dip);
    auto after = loaded.encode(img);
    CHECK(before.mu == after.mu);        // bitwise
    CHECK(before.logvar == after.logvar);
    std::filesystem::remove(path);
}

TEST_CASE("latent traverse sweeps one dimension into a strip") {
    vaescene::VaeModel model(toy_config(), 33);
    std::vector<float> z(3, 0.0f);
    const std::vector<float> values = {-2.0f, 0.0f, 2.0f};
    auto grid = vaescene::latent_traverse(model, z, 1, values);
    CHECK(grid.tiles == 3);
    CHECK(grid.tile_size == 8);
    CHECK(grid.pixels.size() == 3 * 8 * 8 * 3);

    // Middle tile must equal a plain decode of the unmodified z.
    auto mid = model.decode(z);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t xp = 0; xp < 8; ++xp) {
                const float got = grid.pixels[(c * 8 + y) * 24 + 8 + xp];
                REQUIRE(got == mid[(c * 8 + y) * 8 + xp]);
            }
    CHECK_THROWS_AS((void)vaescene::latent_traverse(model, z, 99, values), vaescene::ShapeError);
}
