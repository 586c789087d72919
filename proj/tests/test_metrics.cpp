#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "knt/errors.hpp"
#include "knt/keying.hpp"
#include "knt/metrics.hpp"
#include "oracle_goldens.hpp"

using namespace knt;

namespace {

double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
    double w = 0;
    for (double p : pos) {
        for (double n : neg) w += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    }
    return w / (pos.size() * neg.size());
}

std::vector<double> draws(std::uint64_t seed, std::size_t n, int levels) {
    UniformStream u(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<double>(u.next() % static_cast<std::uint64_t>(levels));
    return v;
}

}  // namespace

TEST_CASE("cosine basics") {
    const std::vector<float> a{1, 2, 3}, b{2, 4, 6}, c{-1, -2, -3}, z{0, 0, 0};
    CHECK(cosine(a, b) == doctest::Approx(1.0));
    CHECK(cosine(a, c) == doctest::Approx(-1.0));
    const auto d = cosine_checked(a, z);
    CHECK(d.degenerate);
    CHECK(d.value == 0.0);
    const std::vector<float> e{1, 0}, f{0, 1};
    CHECK(cosine(e, f) == 0.0);
    CHECK_THROWS_AS(cosine(a, e), InvalidArgument);
}

TEST_CASE("cosine is scale invariant and bounded") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = gaussian_stream(s, 50, 1.0);
        const auto b = gaussian_stream(s + 100, 50, 1.0);
        auto a3 = a;
        for (auto& x : a3) x *= 4.0f;
        const double c = cosine(a, b);
        CHECK(std::abs(c) <= 1.0);
        CHECK(cosine(a3, b) == doctest::Approx(c).epsilon(1e-12));
        CHECK(cosine(b, a) == c);
    }
}

TEST_CASE("pearson") {
    const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1}, k{5, 5, 5, 5};
    CHECK(pearson(a, b) == 1.0);
    CHECK(pearson(a, c) == doctest::Approx(-1.0));
    CHECK(pearson_checked(a, k).degenerate);
    CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), InvalidArgument);
}

TEST_CASE("AUC golden with ties") {
    const std::vector<double> pos{0.9, 0.5, 0.5, 0.3}, neg{0.5, 0.2, 0.3};
    CHECK(auc_from_scores(pos, neg) == doctest::Approx(golden::kAucTies).epsilon(1e-15));
    CHECK(auc_from_scores(std::vector<double>{1.0}, std::vector<double>{0.0}) == 1.0);
    CHECK(auc_from_scores(std::vector<double>{0.0}, std::vector<double>{1.0}) == 0.0);
    CHECK(auc_from_scores(std::vector<double>{1, 1}, std::vector<double>{1}) == 0.5);
    CHECK_THROWS_AS(auc_from_scores(std::vector<double>{}, neg), InvalidArgument);
}

TEST_CASE("AUC matches brute-force pair counting") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto pos = draws(s, 1 + s % 13, 5 + static_cast<int>(s % 3));
        const auto neg = draws(s + 1000, 1 + s % 7, 5);
        const double a = auc_from_scores(pos, neg);
        CHECK(a == doctest::Approx(brute_auc(pos, neg)).epsilon(1e-12));
        // Swapping roles mirrors the AUC.
        CHECK(auc_from_scores(neg, pos) == doctest::Approx(1.0 - a).epsilon(1e-12));
    }
}

TEST_CASE("sample_pairs: validity, uniqueness, capping, determinism") {
    std::vector<PatientId> patients;
    for (PatientId p = 0; p < 10; ++p) {
        for (int i = 0; i < 3; ++i) patients.push_back(p);
    }
    const auto sp = sample_pairs(patients, 500, 100, 4);
    CHECK(sp.same.size() == 30);  // 10 patients x C(3,2)
    CHECK(sp.diff.size() == 100);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (auto [i, j] : sp.same) {
        CHECK(i != j);
        CHECK(patients[i] == patients[j]);
        CHECK(seen.insert({std::min(i, j), std::max(i, j)}).second);
    }
    for (auto [i, j] : sp.diff) {
        CHECK(patients[i] != patients[j]);
        CHECK(seen.insert({std::min(i, j), std::max(i, j)}).second);
    }
    const auto again = sample_pairs(patients, 500, 100, 4);
    CHECK(again.same == sp.same);
    CHECK(again.diff == sp.diff);
    CHECK(sample_pairs(patients, 5, 5, 5).same != sample_pairs(patients, 5, 5, 6).same);
    const std::vector<PatientId> singles{1, 2, 3};
    CHECK_THROWS_AS(sample_pairs(singles, 1, 1, 0), InvalidDataset);
}

TEST_CASE("verification AUC separates clustered patients") {
    std::vector<PatientId> patients;
    std::vector<FeatureMap> feats;
    for (PatientId p = 0; p < 20; ++p) {
        const auto centre = gaussian_stream(p, 8, 1.0);
        for (std::uint64_t i = 0; i < 3; ++i) {
            auto v = centre;
            const auto jitter = gaussian_stream(1000 + p * 10 + i, 8, 0.01);
            for (std::size_t k = 0; k < v.size(); ++k) v[k] += jitter[k];
            feats.emplace_back(2, 1, 4, v);
            patients.push_back(p);
        }
    }
    PairSpec spec;
    spec.mode = SimilarityMode::flattened;
    const auto r = verification_auc(patients, feats, spec);
    CHECK(r.n_same == 60);
    CHECK(r.n_diff == 500);
    CHECK(r.auc > 0.99);
    // Identical features for everyone: every score ties.
    std::vector<FeatureMap> same(feats.size(), feats[0]);
    CHECK(verification_auc(patients, same, spec).auc == 0.5);
}

TEST_CASE("nearest neighbour agrees with a direct cosine scan") {
    std::vector<std::vector<float>> g, q;
    std::vector<PatientId> gid, qid;
    for (std::uint64_t i = 0; i < 37; ++i) {
        g.push_back(gaussian_stream(i, 19, 1.0));
        gid.push_back(i % 11);
    }
    g[5].assign(19, 0.0f);  // degenerate gallery entry
    for (std::uint64_t i = 0; i < 29; ++i) {
        q.push_back(gaussian_stream(500 + i, 19, 1.0));
        qid.push_back(i % 11);
    }
    std::vector<VectorView> gv(g.begin(), g.end()), qv(q.begin(), q.end());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::size_t best = 0;
        double bs = cosine(qv[i], gv[0]);
        for (std::size_t j = 1; j < g.size(); ++j) {
            const double s = cosine(qv[i], gv[j]);
            if (s > bs) {
                bs = s;
                best = j;
            }
        }
        hits += gid[best] == qid[i];
    }
    CHECK(nearest_neighbor_accuracy(gv, gid, qv, qid) == static_cast<double>(hits) / q.size());
}

TEST_CASE("top1 retrieval: exact copies are found, validation") {
    std::vector<std::vector<float>> g;
    std::vector<PatientId> ids;
    for (PatientId p = 0; p < 15; ++p) {
        g.push_back(gaussian_stream(p, 10, 1.0));
        ids.push_back(p * 3);
    }
    std::vector<VectorView> gv(g.begin(), g.end());
    CHECK(top1_retrieval(gv, ids, gv, ids) == 1.0);
    auto dup = ids;
    dup[1] = dup[0];
    CHECK_THROWS_AS(top1_retrieval(gv, dup, gv, ids), InvalidArgument);
    std::vector<PatientId> missing = ids;
    missing[0] = 999;
    CHECK_THROWS_AS(top1_retrieval(gv, ids, gv, missing), InvalidDataset);
}

TEST_CASE("first/second split and Top-1 re-identification") {
    const std::vector<PatientId> patients{7, 3, 7, 9, 3, 7, 4};
    const auto s = first_second_split(patients);
    CHECK(s.gallery == std::vector<std::size_t>{0, 1});
    CHECK(s.queries == std::vector<std::size_t>{2, 4});

    std::vector<FeatureMap> feats;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        feats.push_back(testutil::random_map(patients[i], 2, 2, 3));
    }
    CHECK(top1_reidentification(patients, feats, SimilarityMode::flattened) == 1.0);
    CHECK(top1_reidentification(patients, feats, SimilarityMode::pooled) == 1.0);
}

TEST_CASE("macro AUC skips single-class labels") {
    // 4 samples x 3 labels; label 2 is all zero.
    const std::vector<double> scores{0.9, 0.1, 0.5, 0.8, 0.7, 0.5, 0.2, 0.3, 0.5, 0.1, 0.2, 0.5};
    const std::vector<std::uint8_t> labels{1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0};
    const auto m = macro_auc(scores, labels, 3);
    CHECK(m.labels_used == 2);
    CHECK(m.labels_skipped == 1);
    // label 0: pos {0.9,0.8} neg {0.2,0.1} -> 1; label 1: pos {0.7,0.2} neg {0.1,0.3} -> 0.75
    CHECK(m.auc == doctest::Approx(0.875));
    CHECK_THROWS_AS(macro_auc(scores, labels, 5), InvalidArgument);
}

TEST_CASE("similarity mode parsing") {
    CHECK(parse_similarity_mode("pooled") == SimilarityMode::pooled);
    CHECK(to_string(parse_similarity_mode("flattened")) == "flattened");
    CHECK_THROWS_AS(parse_similarity_mode("mean"), InvalidArgument);
}
