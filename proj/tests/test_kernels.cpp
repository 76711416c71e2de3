#include <doctest.h>

#include <cmath>
#include <numbers>

#include "critmap/criticality.hpp"
#include "critmap/kernels.hpp"
#include "oracles.hpp"

using namespace critmap;
namespace k = critmap::kernels;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, DType dtype = DType::f32) {
    Tensor t(shape, dtype);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-1.0, 1.0));
    return t;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("hand-computed forward values") {
    std::vector<float> nine(9);
    for (int i = 0; i < 9; ++i) nine[i] = static_cast<float>(i + 1);
    const Tensor x({1, 1, 3, 3}, nine);
    const Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
    CHECK(k::conv2d(x, ones, nullptr, {}).at(0) == 45.0);

    const Tensor bn = k::batchnorm_infer(Tensor({1, 1}, std::vector<float>{5.0f}), Tensor({1}, std::vector<float>{2.0f}),
                                         Tensor({1}, std::vector<float>{1.0f}), Tensor({1}, std::vector<float>{3.0f}),
                                         Tensor({1}, std::vector<float>{1.0f}), 0.0);
    CHECK(bn.at(0) == 5.0);  // 2 * (5 - 3) / 1 + 1

    const Tensor lin = k::linear(Tensor({1, 2}, std::vector<float>{1.0f, 2.0f}),
                                 Tensor({1, 2}, std::vector<float>{3.0f, 4.0f}), nullptr);
    const Tensor b({1}, std::vector<float>{5.0f});
    CHECK(lin.at(0) == 11.0);
    CHECK(k::linear(Tensor({1, 2}, std::vector<float>{1.0f, 2.0f}), Tensor({1, 2}, std::vector<float>{3.0f, 4.0f}), &b)
              .at(0) == 16.0);

    const Tensor sm = k::softmax(Tensor({1, 2}, std::vector<double>{std::log(2.0), 0.0}));
    CHECK(sm.at(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(sm.at(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const Tensor mp = k::maxpool(x, {2, 1, 0});
    CHECK(mp.to_vector() == std::vector<double>{5, 6, 8, 9});
    CHECK(k::global_avg_pool(x).at(0) == 5.0);
    CHECK(k::relu(Tensor({3}, std::vector<float>{-1.0f, 0.0f, 2.0f})).to_vector() == std::vector<double>{0, 0, 2});
}

TEST_CASE("softmax stays normalized for extreme logits") {
    Rng rng(11);
    for (double scale : {1.0, 1e2, 1e3, 1e4}) {
        const Tensor logits = [&] {
            Tensor t({16, 7}, DType::f32);
            for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-scale, scale));
            return t;
        }();
        const Tensor p = k::softmax(logits);
        for (int r = 0; r < 16; ++r) {
            double s = 0;
            for (int c = 0; c < 7; ++c) {
                REQUIRE(std::isfinite(p.at(r * 7 + c)));
                s += p.at(r * 7 + c);
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("cosine distance cases") {
    const std::vector<double> a{1, 0}, b{0, 1}, c{0.5, 0.5};
    CHECK(cosine_distance(a, a) == 0.0);
    CHECK(cosine_distance(a, b) == 1.0);
    CHECK(std::abs(cosine_distance(a, c) - (1.0 - 1.0 / std::numbers::sqrt2)) < 1e-12);
    const std::vector<double> p{0.2, 0.3, 0.5};
    CHECK(cosine_distance(p, p) == 0.0);
}

TEST_CASE("conv, linear, pool and batchnorm match loop oracles") {
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(3)), c = 1 + static_cast<int>(rng.below(4));
        const int kk = 1 + static_cast<int>(rng.below(3)), kh = 1 + static_cast<int>(rng.below(3));
        const int stride = 1 + static_cast<int>(rng.below(2)), pad = static_cast<int>(rng.below(2));
        const int h = kh + static_cast<int>(rng.below(5)), w = kh + static_cast<int>(rng.below(5));
        const Tensor x = random_tensor(rng, {n, c, h, w});
        const Tensor wt = random_tensor(rng, {kk, c, kh, kh});
        const Tensor bias = random_tensor(rng, {kk});
        int ho = 0, wo = 0;
        const auto bv = bias.to_vector();
        const auto want = oracle::conv2d(x.to_vector(), n, c, h, w, wt.to_vector(), kk, kh, kh, &bv, stride, pad, ho, wo);
        const Tensor got = k::conv2d(x, wt, &bias, {stride, pad});
        REQUIRE(got.shape() == Shape{n, kk, ho, wo});
        worst = std::max(worst, oracle::max_rel_err(got.to_vector(), want, 1e-6));

        const int pk = 1 + static_cast<int>(rng.below(std::min(h, w)));
        const int ppad = static_cast<int>(rng.below(pk / 2 + 1));
        const auto mp = oracle::maxpool(x.to_vector(), n, c, h, w, pk, stride, ppad, ho, wo);
        worst = std::max(worst, oracle::max_rel_err(k::maxpool(x, {pk, stride, ppad}).to_vector(), mp, 1e-6));
        worst = std::max(worst, oracle::max_rel_err(k::global_avg_pool(x).to_vector(),
                                                    oracle::global_avg_pool(x.to_vector(), n, c, h, w), 1e-6));

        const Tensor g = random_tensor(rng, {c}), be = random_tensor(rng, {c}), m = random_tensor(rng, {c});
        Tensor v({c});
        for (int i = 0; i < c; ++i) v.set(i, rng.uniform(0.1, 2.0));
        const auto bn = oracle::batchnorm(x.to_vector(), n, c, h * w, g.to_vector(), be.to_vector(), m.to_vector(),
                                          v.to_vector(), 1e-5);
        worst = std::max(worst, oracle::max_rel_err(k::batchnorm_infer(x, g, be, m, v, 1e-5).to_vector(), bn, 1e-6));

        const int f = c * h * w, o = 1 + static_cast<int>(rng.below(5));
        const Tensor lw = random_tensor(rng, {o, f}), lb = random_tensor(rng, {o});
        const auto lin = oracle::linear(x.to_vector(), n, f, lw.to_vector(), o, lb.to_vector());
        worst = std::max(worst, oracle::max_rel_err(k::linear(x, lw, &lb).to_vector(), lin, 1e-6));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("training-mode batchnorm normalizes with batch statistics") {
    Rng rng(5);
    const Tensor x = random_tensor(rng, {4, 3, 2, 2}, DType::f64);
    const Tensor g = Tensor::full({3}, 1.0, DType::f64), b = Tensor::zeros({3}, DType::f64);
    const auto r = k::batchnorm_train(x, g, b, 1e-12);
    CHECK(r.count == 16);
    for (int c = 0; c < 3; ++c) {
        double s = 0, s2 = 0;
        for (int i = 0; i < 4; ++i)
            for (int q = 0; q < 4; ++q) {
                const double y = r.output.at((i * 3 + c) * 4 + q);
                s += y;
                s2 += y * y;
            }
        CHECK(std::abs(s / 16) < 1e-12);
        CHECK(s2 / 16 == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("kernels reject mismatched shapes") {
    const Tensor x({1, 2, 3, 3});
    CHECK_THROWS_AS(k::conv2d(x, Tensor({1, 3, 3, 3}), nullptr, {}), Error);
    CHECK_THROWS_AS(k::conv2d(x, Tensor({1, 2, 5, 5}), nullptr, {}), Error);
    CHECK_THROWS_AS(k::linear(x, Tensor({2, 17}), nullptr), Error);
    CHECK_THROWS_AS(k::add(x, Tensor({1, 2, 3, 4})), Error);
    CHECK_THROWS_AS(k::batchnorm_infer(Tensor({1, 1}), Tensor({1}), Tensor({1}), Tensor({1}),
                                       Tensor({1}, std::vector<float>{-1.0f}), 1e-5),
                    Error);
}

TEST_CASE("cross entropy gradient and accuracy") {
    const Tensor logits({2, 2}, std::vector<double>{std::log(2.0), 0.0, 0.0, 0.0});
    const std::vector<int> labels{0, 1};
    const auto ce = k::cross_entropy(logits, labels);
    CHECK(ce.loss == doctest::Approx((std::log(1.5) + std::log(2.0)) / 2).epsilon(1e-14));
    CHECK(ce.correct == 1);  // row 2 ties resolve to class 0
    CHECK(ce.grad_logits.at(0) == doctest::Approx((2.0 / 3.0 - 1.0) / 2).epsilon(1e-14));
    CHECK(ce.grad_logits.at(3) == doctest::Approx((0.5 - 1.0) / 2).epsilon(1e-14));
    CHECK(k::argmax_rows(logits) == std::vector<int>{0, 0});
}

}  // TEST_SUITE
