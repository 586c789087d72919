#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "knt/errors.hpp"
#include "knt/keying.hpp"
#include "oracle_goldens.hpp"

using namespace knt;

TEST_CASE("splitmix64 matches the reference sequence from state 0") {
    std::uint64_t s = 0;
    for (auto expected : golden::kSplitmixFrom0) CHECK(splitmix::next(s) == expected);
}

TEST_CASE("from_seed expands through splitmix64 little-endian words") {
    CHECK(MasterKey::from_seed(0).to_hex() == golden::kKeySeed0Hex);
}

TEST_CASE("derive_seed golden values") {
    const MasterKey k = MasterKey::from_seed(0);
    CHECK(derive_seed(k, "perm") == golden::kDerivePerm);
    CHECK(derive_seed(k, "W1") == golden::kDeriveW1);
    CHECK(derive_seed(k, "b1") == golden::kDeriveB1);
    CHECK(derive_seed(k, "abcdefghi") == golden::kDeriveNine);
    CHECK(derive_seed(k, std::string(64, 'L')) == golden::kDeriveLong);
    CHECK(derive_seed(MasterKey::public_key(), "perm") == golden::kDerivePublicPerm);
}

TEST_CASE("derive_seed rejects empty and oversized labels") {
    const MasterKey k = MasterKey::from_seed(1);
    CHECK_THROWS_AS(derive_seed(k, ""), InvalidArgument);
    CHECK_THROWS_AS(derive_seed(k, std::string(65, 'x')), InvalidArgument);
}

TEST_CASE("domain separation: labels and keys give distinct seeds") {
    const MasterKey k = MasterKey::from_seed(3);
    std::set<std::uint64_t> seen;
    for (const char* label : {"perm", "W1", "W2", "b1", "b2", "noise", "W10", "W1\0"}) seen.insert(derive_seed(k, label));
    CHECK(seen.size() == 7);  // "W1\0" is the C string "W1"
    CHECK(derive_seed(k, "perm") != derive_seed(MasterKey::from_seed(4), "perm"));
    // Zero padding of the last chunk is disambiguated by the absorbed length.
    CHECK(derive_seed(k, "a") != derive_seed(k, std::string("a\0", 2)));
}

TEST_CASE("hex round trip and validation") {
    const MasterKey k = MasterKey::from_seed(9);
    CHECK(MasterKey::from_hex(k.to_hex()) == k);
    std::string upper = k.to_hex();
    std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
    CHECK(MasterKey::from_hex(upper) == k);
    CHECK_THROWS_AS(MasterKey::from_hex("abcd"), InvalidArgument);
    CHECK_THROWS_AS(MasterKey::from_hex(std::string(63, 'a') + "g"), InvalidArgument);
}

TEST_CASE("public key and fingerprint") {
    const auto& b = MasterKey::public_key().bytes();
    CHECK(std::string(b.begin(), b.end()) == "PUBLIC-0000000000000000000000000");
    const MasterKey k = MasterKey::from_seed(0);
    CHECK(k.fingerprint() == std::string(golden::kFingerprintSeed0).substr(0, 8));
    CHECK(k.fingerprint().size() == 8);
    CHECK(k.to_hex().find(k.fingerprint()) == std::string::npos);
}

TEST_CASE("subkeys and seed combination") {
    const MasterKey k = MasterKey::from_seed(0);
    CHECK(derive_subkey(k, 1).to_hex() == golden::kSubkey1Hex);
    CHECK(derive_subkey(k, 1) != derive_subkey(k, 2));
    CHECK(combine_seeds(5, {1, 2, 3}) == golden::kCombine5_123);
    CHECK(combine_seeds(5, {1, 2}) != combine_seeds(5, {2, 1}));
}

TEST_CASE("xoshiro256** golden outputs") {
    UniformStream u(42);
    for (auto expected : golden::kXoshiro42) CHECK(u.next() == expected);
}

TEST_CASE("Box-Muller golden values and scaling") {
    const auto g = gaussian_stream(7, 5, 1.0);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == golden::kGauss7[i]);
    const auto g2 = gaussian_stream(7, 3, 2.0);
    for (std::size_t i = 0; i < g2.size(); ++i) CHECK(g2[i] == golden::kGauss7Std2[i]);
    // Odd length drops the spare; a prefix of a longer stream is the shorter stream.
    const auto longer = gaussian_stream(7, 6, 1.0);
    CHECK(std::equal(g.begin(), g.end(), longer.begin()));
}

TEST_CASE("Gaussian stream moments") {
    const auto g = gaussian_stream(11, 200000, 1.0);
    double s = 0, ss = 0;
    for (float v : g) {
        s += v;
        ss += static_cast<double>(v) * v;
    }
    const double mean = s / g.size();
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(ss / g.size() - mean * mean - 1.0) < 0.02);
}

TEST_CASE("key_permutation golden values and bijectivity") {
    const auto p = key_permutation(123, 10);
    CHECK(std::equal(p.begin(), p.end(), golden::kPerm123.begin()));
    const auto p49 = key_permutation(derive_seed(MasterKey::from_seed(0), "perm"), 49);
    CHECK(std::equal(p49.begin(), p49.end(), golden::kPermKey0.begin()));
    for (std::size_t n : {1u, 2u, 7u, 49u, 196u}) {
        auto q = key_permutation(n * 31, n);
        std::sort(q.begin(), q.end());
        for (std::size_t i = 0; i < n; ++i) CHECK(q[i] == i);
    }
    CHECK_THROWS_AS(key_permutation(1, 0), InvalidArgument);
}
