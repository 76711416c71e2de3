#include <doctest.h>

#include <cmath>
#include <limits>

#include "critmap/criticality.hpp"
#include "critmap/trainer.hpp"
#include "fixtures.hpp"

using namespace critmap;

namespace {

bool params_equal(const ModelGraph& a, const ModelGraph& b) {
    for (const auto& l : a.layers()) {
        if (!l.parameterized()) continue;
        for (const auto& [name, t] : a.params(l.id))
            if (!t.bit_equal(b.params(l.id).at(name))) return false;
    }
    return true;
}

double linf(const Tensor& a, const Tensor& b, std::int64_t begin, std::int64_t end) {
    double m = 0.0;
    for (std::int64_t i = begin; i < end; ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

double l2(const Tensor& a, const Tensor& b, std::int64_t begin, std::int64_t end) {
    double s = 0.0;
    for (std::int64_t i = begin; i < end; ++i) s += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
    return std::sqrt(s);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("one linf step on a two-class linear model has a closed form") {
    // For two classes the input gradient of the cross-entropy is
    // p_other * (w_other - w_label), so its sign is sign(w_other - w_label).
    for (DType dtype : {DType::f32, DType::f64}) {
        const ModelGraph m = build_linear_model({1, 3, 3}, 2, 21, dtype);
        const Tensor x = fixtures::random_batch(m, 4, 3);
        const std::vector<int> y{0, 1, 1, 0};
        PgdConfig cfg;
        cfg.eps = 0.05;
        cfg.alpha = 0.05;
        cfg.steps = 1;
        cfg.random_start = false;
        Rng rng(0);
        const Tensor adv = pgd_attack(m, x, y, cfg, rng);
        const Tensor& w = m.params("head.fc").at("weight");
        for (int s = 0; s < 4; ++s)
            for (int j = 0; j < 9; ++j) {
                const int other = 1 - y[s];
                const double d = w.at(other * 9 + j) - w.at(y[s] * 9 + j);
                const double xi = x.at(s * 9 + j);
                const double want = std::clamp(xi + 0.05 * (d > 0 ? 1.0 : -1.0), 0.0, 1.0);
                CHECK(adv.at(s * 9 + j) == doctest::Approx(want).epsilon(1e-6));
            }
        CHECK(rng.state() == 0);  // no random start, no draws
    }
}

TEST_CASE("PGD respects the norm ball and pixel range exactly") {
    const ModelGraph lin = build_linear_model({2, 4, 4}, 3, 5);
    ModelGraph conv = fixtures::per_kind_models(3)[3].model.to(DType::f32);  // conv -> maxpool -> pool
    Rng meta(1234);
    int cases = 0;
    for (int c = 0; c < 200; ++c) {
        const ModelGraph& m = c % 2 == 0 ? lin : conv;
        const std::int64_t n = 1 + static_cast<std::int64_t>(meta.below(3));
        Tensor x = fixtures::random_batch(m, n, meta.next_u64());
        // Push some pixels onto the boundary of [0,1].
        for (std::int64_t i = 0; i < x.numel(); i += 5) x.set(i, meta.uniform() < 0.5 ? 0.0 : 1.0);
        const auto labels = fixtures::random_labels(n, m.num_classes(), meta.next_u64());
        PgdConfig cfg;
        cfg.norm = meta.uniform() < 0.5 ? Norm::linf : Norm::l2;
        cfg.eps = cfg.norm == Norm::linf ? meta.uniform(0.0, 0.3) : meta.uniform(0.0, 2.0);
        cfg.steps = 1 + static_cast<int>(meta.below(4));
        if (meta.uniform() < 0.5) cfg.alpha = meta.uniform(0.01, 1.0);
        cfg.random_start = meta.uniform() < 0.7;
        Rng rng(meta.next_u64());
        const Tensor adv = pgd_attack(m, x, labels, cfg, rng);
        REQUIRE(adv.shape() == x.shape());
        const std::int64_t per = x.numel() / n;
        for (std::int64_t s = 0; s < n; ++s) {
            ++cases;
            for (std::int64_t i = s * per; i < (s + 1) * per; ++i) {
                REQUIRE(adv.at(i) >= 0.0);
                REQUIRE(adv.at(i) <= 1.0);
            }
            if (cfg.norm == Norm::linf)
                REQUIRE(linf(adv, x, s * per, (s + 1) * per) <= cfg.eps);
            else
                REQUIRE(l2(adv, x, s * per, (s + 1) * per) <= cfg.eps);
        }
    }
    CHECK(cases >= 200);
}

TEST_CASE("PGD with eps zero is the identity and draws nothing") {
    const ModelGraph m = build_linear_model({1, 2, 2}, 2, 1);
    const Tensor x = fixtures::random_batch(m, 2, 1);
    PgdConfig cfg;
    Rng rng(77);
    CHECK(pgd_attack(m, x, std::vector<int>{0, 1}, cfg, rng).bit_equal(x));
    CHECK(rng.state() == 77);
    cfg.eps = -1.0;
    CHECK_THROWS_AS(pgd_attack(m, x, std::vector<int>{0, 1}, cfg, rng), Error);
}

TEST_CASE("PGD increases the loss on a trained model") {
    SynthConfig sc;
    sc.classes = 2;
    sc.n = 64;
    sc.margin = 0.6;
    const Dataset data = synthetic_dataset(sc);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 16;
    const ModelGraph m = train(build_linear_model(data.sample_shape(), 2, 0), data, tc).model;
    PgdConfig cfg;
    cfg.eps = 0.1;
    Rng rng(2);
    const Tensor adv = pgd_attack(m, data.images, data.labels, cfg, rng);
    const double clean = backward(m, data.images, data.labels, NormMode::running_stats).loss;
    const double attacked = backward(m, adv, data.labels, NormMode::running_stats).loss;
    CHECK(attacked > clean);
    CHECK(robust_accuracy(m, data, cfg, 1) <= evaluate_accuracy(m, data));
}

TEST_CASE("zero learning rate leaves learnable parameters unchanged") {
    const Dataset data = synthetic_dataset(SynthConfig{4, 32, 3, 16, 4, 1.0, 0.15, 1});
    const ModelGraph m = build_model(mini_resnet_config(), 3);
    TrainConfig tc;
    tc.epochs = 1;
    tc.lr = 0.0;
    tc.batch_size = 16;
    CHECK(params_equal(m, train(m, data, tc).model) == false);  // running stats move
    const ModelGraph out = train(m, data, tc).model;
    for (const auto& id : randomizable_layers(m))
        for (const auto& [name, t] : m.params(id)) CHECK(t.bit_equal(out.params(id).at(name)));
}

TEST_CASE("linear model separates a large-margin two-class set") {
    SynthConfig sc;
    sc.classes = 2;
    sc.n = 200;
    sc.margin = 1.0;
    sc.noise = 0.1;
    sc.seed = 4;
    const Dataset data = synthetic_dataset(sc);
    TrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 20;
    tc.lr = 0.01;
    const auto r = train(build_linear_model(data.sample_shape(), 2, 1), data, tc);
    CHECK(r.log.size() == 20);
    CHECK(evaluate_accuracy(r.model, data) >= 0.99);
    CHECK(r.log.back().loss < r.log.front().loss);
}

TEST_CASE("full-batch loss does not increase over the first five steps") {
    SynthConfig sc;
    sc.n = 96;
    sc.seed = 11;
    const Dataset data = synthetic_dataset(sc);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = static_cast<int>(data.size());
    tc.lr = 0.01;
    tc.momentum = 0.0;
    const auto r = train(build_linear_model(data.sample_shape(), sc.classes, 2), data, tc);
    REQUIRE(r.log.size() == 5);
    for (std::size_t i = 1; i < r.log.size(); ++i) CHECK(r.log[i].loss <= r.log[i - 1].loss);
}

TEST_CASE("adversarial training beats its standard twin under attack") {
    SynthConfig sc;
    sc.classes = 2;
    sc.n = 128;
    sc.margin = 0.5;
    sc.noise = 0.2;
    sc.seed = 5;
    const Dataset data = synthetic_dataset(sc);
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 16;
    tc.lr = 0.01;
    const ModelGraph init = build_linear_model(data.sample_shape(), 2, 3);
    const ModelGraph standard = train(init, data, tc).model;
    tc.mode = TrainMode::adversarial;
    tc.pgd.eps = 8.0 / 255.0;
    const ModelGraph robust = train_adversarial(init, data, tc).model;
    PgdConfig attack;
    attack.eps = 8.0 / 255.0;
    attack.steps = 10;
    const double ra_std = robust_accuracy(standard, data, attack, 7);
    const double ra_adv = robust_accuracy(robust, data, attack, 7);
    MESSAGE("robust accuracy standard=" << ra_std << " adversarial=" << ra_adv);
    CHECK(ra_adv > ra_std);
}

TEST_CASE("training is deterministic and eps zero matches standard training") {
    const Dataset data = synthetic_dataset(SynthConfig{4, 24, 3, 16, 4, 1.0, 0.15, 2});
    const ModelGraph m = build_model(mini_resnet_config(), 6);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 8;
    tc.seed = 9;
    const auto a = train(m, data, tc);
    const auto b = train(m, data, tc);
    CHECK(params_equal(a.model, b.model));
    tc.mode = TrainMode::adversarial;
    tc.pgd.eps = 0.0;
    const auto c = train_adversarial(m, data, tc);
    CHECK(params_equal(a.model, c.model));
    CHECK(a.log[0].loss == c.log[0].loss);
    tc.pgd.eps = 4.0 / 255.0;
    CHECK_FALSE(params_equal(a.model, train_adversarial(m, data, tc).model));
}

TEST_CASE("non-finite loss aborts training with the epoch number") {
    Dataset data = synthetic_dataset(SynthConfig{2, 8, 1, 4, 2, 1.0, 0.1, 0});
    data.images.set(3, std::numeric_limits<double>::quiet_NaN());
    TrainConfig tc;
    tc.epochs = 2;
    try {
        train(build_linear_model(data.sample_shape(), 2, 0), data, tc);
        FAIL("expected a training error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::training);
        CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
}

TEST_CASE("augmentation") {
    const Tensor x = Tensor::full({64, 1, 8, 8}, 0.5);
    AugmentConfig noise;
    noise.noise_sigma = 0.1;
    Rng rng(3);
    const Tensor nz = augment(x, noise, rng);
    double s = 0, s2 = 0;
    for (std::int64_t i = 0; i < nz.numel(); ++i) {
        const double d = nz.at(i) - 0.5;
        s += d;
        s2 += d * d;
    }
    CHECK(std::sqrt(s2 / nz.numel() - (s / nz.numel()) * (s / nz.numel())) ==
          doctest::Approx(0.1).epsilon(0.05));

    const Tensor r = fixtures::random_batch(build_linear_model({2, 3, 5}, 2, 0), 3, 1);
    CHECK(flip_horizontal(flip_horizontal(r)).bit_equal(r));
    CHECK(flip_horizontal(r).at(0) == r.at(4));
    AugmentConfig flip;
    flip.flip_prob = 1.0;
    CHECK(augment(r, flip, rng).bit_equal(flip_horizontal(r)));
    CHECK(augment(r, AugmentConfig{}, rng).bit_equal(r));

    AugmentConfig crop;
    crop.crop_pad = 1;
    const Tensor cr = augment(r, crop, rng);
    CHECK(cr.shape() == r.shape());
}

TEST_CASE("config validation and string names") {
    TrainConfig tc;
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), Error);
    CHECK(train_mode_from_string("adv") == TrainMode::adversarial);
    CHECK(train_mode_from_string("augmented") == TrainMode::augmented);
    CHECK(norm_from_string("l2") == Norm::l2);
    CHECK_THROWS_AS(norm_from_string("l1"), Error);
    PgdConfig p;
    p.eps = 0.3;
    CHECK(p.step_size() == doctest::Approx(0.25));
}

}  // TEST_SUITE
