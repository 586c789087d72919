#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "knt/baselines.hpp"
#include "knt/errors.hpp"
#include "knt/metrics.hpp"
#include "oracle_goldens.hpp"

using namespace knt;

TEST_CASE("quantile goldens (linear interpolation)") {
    const std::vector<double> v{3, 1, 4, 1, 5, 9, 2, 6};
    CHECK(quantile(v, 0.0) == golden::kQuantile000);
    CHECK(quantile(v, 0.25) == doctest::Approx(golden::kQuantile025).epsilon(1e-15));
    CHECK(quantile(v, 0.5) == doctest::Approx(golden::kQuantile050).epsilon(1e-15));
    CHECK(quantile(v, 0.95) == doctest::Approx(golden::kQuantile095).epsilon(1e-15));
    CHECK(quantile(v, 1.0) == golden::kQuantile100);
    CHECK(quantile(std::vector<double>{2.5}, 0.3) == 2.5);
    CHECK_THROWS_AS(quantile(std::vector<double>{}, 0.5), InvalidArgument);
    CHECK_THROWS_AS(quantile(v, 1.5), InvalidArgument);
}

TEST_CASE("Gaussian mechanism sigma goldens") {
    CHECK(dp_sigma(1.0, 1e-5, 1.0) == doctest::Approx(golden::kDpSigmaUnit).epsilon(1e-14));
    CHECK(dp_sigma(8.0, 1e-5, 601.0) == doctest::Approx(golden::kDpSigmaTable).epsilon(1e-14));
    CHECK(dp_sigma(2.0, 1e-5, 0.0) == 0.0);
    CHECK_THROWS_AS(dp_sigma(0.0, 1e-5, 1.0), InvalidArgument);
    CHECK_THROWS_AS(dp_sigma(1.0, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("sigma scales inversely with epsilon and linearly with sensitivity") {
    const double base = dp_sigma(1.0, 1e-5, 1.0);
    for (double eps : {0.5, 2.0, 8.0}) CHECK(dp_sigma(eps, 1e-5, 1.0) == doctest::Approx(base / eps));
    CHECK(dp_sigma(1.0, 1e-5, 3.0) == doctest::Approx(3.0 * base));
}

TEST_CASE("Gaussian noise baseline") {
    const auto f = testutil::random_map(1, 7, 7, 64);
    CHECK(add_gaussian_noise(f, 0.0, 9) == f);
    const auto a = add_gaussian_noise(f, 3.0, 9);
    CHECK(a == add_gaussian_noise(f, 3.0, 9));
    CHECK_FALSE(a == add_gaussian_noise(f, 3.0, 10));
    double ss = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double d = a.values()[i] - f.values()[i];
        ss += d * d;
    }
    CHECK(std::sqrt(ss / f.size()) == doctest::Approx(3.0).epsilon(0.05));
    CHECK_THROWS_AS(add_gaussian_noise(f, -1.0, 0), InvalidArgument);
}

TEST_CASE("L2 clipping never exceeds the bound and leaves small maps alone") {
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto f = testutil::random_map(s, 3, 3, 7);
        const double n = l2_norm(f);
        const double c = n * (0.1 + 0.05 * static_cast<double>(s));
        const auto g = l2_clip(f, c);
        CHECK(l2_norm(g) <= c);
        if (n <= c) {
            CHECK(g == f);
        } else {
            CHECK(l2_norm(g) == doctest::Approx(c).epsilon(1e-6));
            CHECK(cosine(f.values(), g.values()) == doctest::Approx(1.0));
        }
    }
    CHECK_THROWS_AS(l2_clip(testutil::random_map(0, 1, 1, 2), 0.0), InvalidArgument);
}

TEST_CASE("DP calibration and release") {
    const std::vector<double> norms{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    DpConfig cfg;
    cfg.epsilon = 2.0;
    const auto cal = dp_calibrate(cfg, norms);
    CHECK(cal.clip_norm == doctest::Approx(10.5));
    CHECK(cal.sigma == doctest::Approx(dp_sigma(2.0, 1e-5, 10.5)));
    CHECK(cal.flags.size() == 1);
    cfg.epsilon = 1.0;
    CHECK(dp_calibrate(cfg, norms).flags.empty());

    const auto f = testutil::random_map(3, 7, 7, 64);
    const auto r = dp_release(f, cal, 77);
    CHECK(r == add_gaussian_noise(l2_clip(f, cal.clip_norm), cal.sigma, 77));
    CHECK_THROWS_AS(dp_calibrate(cfg, std::vector<double>{}), InvalidArgument);
    cfg.clip_quantile = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}
