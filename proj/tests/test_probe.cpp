#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "knt/errors.hpp"
#include "knt/optim.hpp"
#include "knt/probe.hpp"
#include "knt/synthdata.hpp"
#include "oracle_goldens.hpp"

using namespace knt;

TEST_CASE("Adam reference steps") {
    Adam adam(2, AdamOptions{0.1, 0.9, 0.999, 1e-8});
    std::vector<double> p{1.0, -2.0};
    adam.step(p, std::vector<double>{0.5, -1.0});
    CHECK(p[0] == doctest::Approx(golden::kAdamStep1[0]).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(golden::kAdamStep1[1]).epsilon(1e-15));
    adam.step(p, std::vector<double>{0.25, 0.1});
    CHECK(p[0] == doctest::Approx(golden::kAdamStep2[0]).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(golden::kAdamStep2[1]).epsilon(1e-15));
    CHECK(adam.steps() == 2);
    adam.reset();
    CHECK(adam.steps() == 0);
}

TEST_CASE("Adam minimises a quadratic") {
    Adam adam(3, AdamOptions{0.05});
    std::vector<double> p{4.0, -3.0, 1.0};
    for (int i = 0; i < 2000; ++i) {
        std::vector<double> g{2 * (p[0] - 1), 2 * (p[1] + 1), 2 * p[2]};
        adam.step(p, g);
    }
    CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(p[1] == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(std::abs(p[2]) < 1e-3);
}

TEST_CASE("global average pooling") {
    FeatureMap f(1, 2, 2, {1.0f, 10.0f, 3.0f, -2.0f});
    CHECK(gap(f) == std::vector<float>{2.0f, 4.0f});
}

TEST_CASE("pooled probe learns a separable label and logits match the formula") {
    ProbeData data;
    data.num_labels = 2;
    for (std::uint64_t i = 0; i < 80; ++i) {
        auto x = gaussian_stream(i, 6, 1.0);
        const bool y = x[0] + 0.5f * x[3] > 0.0f;
        data.inputs.push_back(x);
        data.labels.push_back(y);
        data.labels.push_back(1);  // constant label
    }
    ProbeTrainConfig cfg;
    cfg.epochs = 300;
    cfg.learning_rate = 0.05;
    const auto probe = train_probe(data, cfg, true);
    REQUIRE(probe.flags.size() == 1);
    CHECK(probe.flags[0].find("label 1") != std::string::npos);
    CHECK(probe.bias[1] > 10.0f);
    const auto auc = probe_auc(probe, data);
    CHECK(auc.labels_used == 1);
    CHECK(auc.auc > 0.97);

    const auto& x = data.inputs[3];
    double z = probe.bias[0];
    for (std::size_t j = 0; j < 6; ++j) z += static_cast<double>(probe.weights[j]) * x[j];
    CHECK(probe_logits(probe, x)[0] == doctest::Approx(z).epsilon(1e-12));
    CHECK_THROWS_AS(probe_logits(probe, std::vector<float>(5)), InvalidArgument);
}

TEST_CASE("probe training is deterministic in its seed") {
    ProbeData data;
    data.num_labels = 1;
    for (std::uint64_t i = 0; i < 40; ++i) {
        data.inputs.push_back(gaussian_stream(i, 4, 1.0));
        data.labels.push_back(i % 3 == 0);
    }
    ProbeTrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    const auto a = train_probe(data, cfg, true);
    CHECK(a.weights == train_probe(data, cfg, true).weights);
    cfg.seed = 1;
    CHECK(a.weights != train_probe(data, cfg, true).weights);
}

TEST_CASE("spatial CAM averages to the logit") {
    SynthConfig sc;
    sc.num_patients = 10;
    sc.channels = 8;
    sc.height = 3;
    sc.width = 3;
    const auto ds = generate(sc);
    const auto data = make_probe_data(ds.features, ds.labels, false);
    ProbeTrainConfig cfg;
    cfg.epochs = 5;
    const auto probe = train_probe(data, cfg, false, 3, 3, 8);
    for (std::size_t s = 0; s < 5; ++s) {
        const auto logits = probe_logits(probe, ds.features[s].values());
        for (std::size_t k = 0; k < probe.num_labels; ++k) {
            const auto cam = spatial_cam(probe, ds.features[s], k);
            const double mean = std::accumulate(cam.begin(), cam.end(), 0.0) / cam.size();
            CHECK(mean == doctest::Approx(logits[k]).epsilon(1e-9));
        }
    }
    CHECK_THROWS_AS(spatial_cam(probe, ds.features[0], 99), InvalidArgument);
    CHECK_THROWS_AS(train_probe(data, cfg, false, 3, 3, 7), InvalidArgument);
}

TEST_CASE("permuted probe on permuted map gives the permuted CAM") {
    LinearProbe p;
    p.num_labels = 1;
    p.pooled = false;
    p.height = 2;
    p.width = 3;
    p.channels = 4;
    p.input_dim = 24;
    p.weights = gaussian_stream(5, 24, 1.0);
    p.bias = {0.25f};
    const auto f = testutil::random_map(6, 2, 3, 4);
    const auto perm = key_permutation(3, 6);
    const auto fp = spatial_permute(f, perm);
    const auto pp = permute_probe(p, perm);
    const auto cam = spatial_cam(p, f, 0);
    const auto camp = spatial_cam(pp, fp, 0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(camp[i] == cam[perm[i]]);
    CHECK(cam_preservation(f, fp, perm, p, pp, 0, true) == doctest::Approx(1.0));
    CHECK(cam_preservation(f, fp, perm, p, pp, 0, false) < 0.999);
}
