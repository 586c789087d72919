#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "knt/attacks.hpp"
#include "knt/errors.hpp"
#include "knt/metrics.hpp"

using namespace knt;
using testutil::random_map;

TEST_CASE("ridge solver recovers an exact system and shrinks with ridge") {
    DMatrix a(3, 2);
    a(0, 0) = 1;
    a(0, 1) = 2;
    a(1, 0) = 3;
    a(1, 1) = 4;
    a(2, 0) = 5;
    a(2, 1) = 6;
    const std::vector<double> x{0.5, -1.5};
    std::vector<double> y(3);
    for (std::size_t r = 0; r < 3; ++r) y[r] = a(r, 0) * x[0] + a(r, 1) * x[1];
    const auto got = pinv_solve(a, y, 0.0);
    CHECK(got[0] == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(got[1] == doctest::Approx(-1.5).epsilon(1e-10));
    const auto shrunk = pinv_solve(a, y, 10.0);
    CHECK(std::hypot(shrunk[0], shrunk[1]) < std::hypot(0.5, 1.5));
    CHECK_THROWS_AS(pinv_solve(a, y, -1.0), InvalidArgument);
    DMatrix singular(2, 2);
    CHECK_THROWS_AS(RidgeSolver(singular, 0.0), NumericalError);
}

TEST_CASE("composite affine map of a hand network") {
    auto l1 = testutil::make_layer(2, 2, {1, 2, 0, 1}, {1, 0});
    auto l2 = testutil::make_layer(1, 2, {3, -1}, {0.5f});
    const auto p = testutil::hand_params({l1, l2}, testutil::identity_perm(1));
    const auto aff = compose_affine(p);
    // W2 W1 = [3, 5], offset = W2 b1 + b2 = 3.5
    CHECK(aff.matrix(0, 0) == 3.0);
    CHECK(aff.matrix(0, 1) == 5.0);
    CHECK(aff.offset[0] == 3.5);
}

TEST_CASE("pseudo-inverse exactly inverts the linear transform") {
    TransformConfig cfg;
    cfg.nonlinear = false;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto p = gen_params(MasterKey::from_seed(seed), 49, 32, cfg);
        const auto f = random_map(seed + 40, 7, 7, 32, true);
        const auto g = knt_apply(f, p, cfg);
        const auto rec = pinv_attack(g, p);
        CHECK(cosine(rec.values(), f.values()) > 0.9999);
        // Without unpermuting, positions are scrambled.
        const auto scrambled = pinv_attack(g, p, false);
        CHECK(scrambled == spatial_permute(rec, p.perm));
    }
}

TEST_CASE("batched pseudo-inverse equals the single-map path at any thread count") {
    TransformConfig cfg;
    const auto p = gen_params(MasterKey::from_seed(3), 49, 16, cfg);
    std::vector<FeatureMap> gs;
    for (std::uint64_t s = 0; s < 9; ++s) gs.push_back(knt_apply(random_map(s, 7, 7, 16, true), p, cfg));
    const auto serial = pinv_attack_batch(gs, p, true, std::nullopt, 1);
    for (int t : {4, 8}) CHECK(pinv_attack_batch(gs, p, true, std::nullopt, t) == serial);
    for (std::size_t i = 0; i < gs.size(); ++i) CHECK(serial[i] == pinv_attack(gs[i], p));
}

TEST_CASE("objective gradient matches central finite differences") {
    TransformConfig cfg;
    cfg.layers = 3;
    cfg.dim = 5;
    const auto p = gen_params(MasterKey::from_seed(8), 1, 6, cfg);
    const auto fv = gaussian_stream(1, 6, 1.0);
    const auto gv = gaussian_stream(2, 5, 1.0);
    std::vector<double> f(fv.begin(), fv.end()), g(gv.begin(), gv.end());
    for (bool nonlinear : {true, false}) {
        const auto v = knt_objective_grad(f, p, g, 0.01, nonlinear);
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double h = 1e-6;
            auto fp = f, fm = f;
            fp[i] += h;
            fm[i] -= h;
            const double num = (knt_objective_grad(fp, p, g, 0.01, nonlinear).loss -
                                knt_objective_grad(fm, p, g, 0.01, nonlinear).loss) / (2 * h);
            CHECK(v.gradient[i] == doctest::Approx(num).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("objective is zero at the true preimage without regularisation") {
    TransformConfig cfg;
    const auto p = gen_params(MasterKey::from_seed(4), 1, 8, cfg);
    const auto x = gaussian_stream(4, 8, 1.0);
    const auto y = mlp_forward(x, p, true);
    std::vector<double> f(x.begin(), x.end()), g(y.begin(), y.end());
    CHECK(knt_objective_grad(f, p, g, 0.0).loss < 1e-10);
}

TEST_CASE("gradient attack: determinism, loss decrease, thread independence") {
    TransformConfig cfg;
    cfg.dim = 8;
    const auto p = gen_params(MasterKey::from_seed(2), 4, 8, cfg);
    GradAttackConfig ac;
    ac.steps = 60;
    ac.restarts = 2;
    ac.learning_rate = 0.05;
    std::vector<FeatureMap> gs;
    for (std::uint64_t s = 0; s < 3; ++s) gs.push_back(knt_apply(random_map(s, 2, 2, 8, true), p, cfg));
    const std::vector<std::uint64_t> ids{10, 11, 12};
    const auto serial = grad_attack_batch(gs, p, ac, ids, true, true, 1);
    for (int t : {4, 8}) {
        const auto par = grad_attack_batch(gs, p, ac, ids, true, true, t);
        for (std::size_t i = 0; i < gs.size(); ++i) CHECK(par[i].estimate == serial[i].estimate);
    }
    for (std::size_t i = 0; i < gs.size(); ++i) {
        CHECK(grad_attack(gs[i], p, ac, true, true, ids[i]).estimate == serial[i].estimate);
        for (const auto& tr : serial[i].positions) CHECK(tr.final_loss <= tr.initial_loss);
    }
    GradAttackConfig bad = ac;
    bad.steps = 0;
    CHECK_THROWS_AS(grad_attack(gs[0], p, bad), InvalidArgument);
}

TEST_CASE("gradient attack inverts a linear transform") {
    TransformConfig cfg;
    cfg.dim = 6;
    cfg.nonlinear = false;
    const auto p = gen_params(MasterKey::from_seed(1), 4, 6, cfg);
    const auto f = random_map(77, 2, 2, 6);
    const auto g = knt_apply(f, p, cfg);
    GradAttackConfig ac;
    ac.steps = 20000;
    ac.restarts = 1;
    ac.lambda = 0.0;
    ac.learning_rate = 0.02;
    const auto r = grad_attack(g, p, ac, false, true);
    CHECK(cosine(r.estimate.values(), f.values()) > 0.99);
}

TEST_CASE("nonnegative projection keeps estimates in the orthant") {
    TransformConfig cfg;
    cfg.dim = 8;
    const auto p = gen_params(MasterKey::from_seed(6), 4, 8, cfg);
    const auto g = knt_apply(random_map(1, 2, 2, 8, true), p, cfg);
    GradAttackConfig ac;
    ac.steps = 30;
    ac.restarts = 1;
    ac.nonnegative = true;
    const auto r = grad_attack(g, p, ac);
    for (float v : r.estimate.values()) CHECK(v >= 0.0f);
}

TEST_CASE("attack evaluation") {
    std::vector<FeatureMap> orig;
    std::vector<PatientId> pid;
    for (std::uint64_t s = 0; s < 6; ++s) {
        orig.push_back(random_map(s, 2, 2, 3));
        pid.push_back(s / 2);
    }
    const auto perfect = attack_eval(orig, orig, pid);
    CHECK(perfect.mean_cosine == doctest::Approx(1.0));
    CHECK(perfect.std_cosine == doctest::Approx(0.0).scale(1.0));
    CHECK(perfect.top1 == 1.0);
    CHECK(perfect.samples == 6);
    std::vector<FeatureMap> neg = orig;
    for (auto& m : neg) {
        for (float& v : m.values()) v = -v;
    }
    CHECK(attack_eval(neg, orig, pid).mean_cosine == doctest::Approx(-1.0));
    CHECK_THROWS_AS(attack_eval(std::vector<FeatureMap>{}, std::vector<FeatureMap>{}, std::vector<PatientId>{}),
                    InvalidArgument);
}

TEST_CASE("report aggregation across key seeds") {
    AttackReport r;
    for (double c : {0.2, 0.4}) {
        AttackSeedRow row;
        row.eval.mean_cosine = c;
        row.eval.top1 = c * 2;
        row.ms_per_sample = 10 * c;
        r.per_seed.push_back(row);
    }
    r.aggregate();
    CHECK(r.mean_cosine == doctest::Approx(0.3));
    CHECK(r.top1_mean == doctest::Approx(0.6));
    CHECK(r.std_cosine > 0.0);
}
