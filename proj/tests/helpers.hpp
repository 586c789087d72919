#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knt/feature_map.hpp"
#include "knt/keying.hpp"
#include "knt/transform.hpp"

namespace testutil {

inline knt::FeatureMap random_map(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t c, bool relu = false) {
    auto v = knt::gaussian_stream(seed, h * w * c, 1.0);
    if (relu) {
        for (auto& x : v) x = x > 0.0f ? x : 0.0f;
    }
    return knt::FeatureMap(h, w, c, std::move(v));
}

inline std::vector<std::uint8_t> from_hex(const std::string& hex) {
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < hex.size(); i += 2) out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    return out;
}

/// Params with explicit layers, used by the hand-built oracle cases.
inline knt::KntParams hand_params(std::vector<knt::Layer> layers, knt::Permutation perm) {
    knt::KntParams p;
    p.in_dim = layers.front().weights.cols;
    p.out_dim = layers.back().weights.rows;
    p.layers = std::move(layers);
    p.perm = std::move(perm);
    return p;
}

inline knt::Layer make_layer(std::size_t rows, std::size_t cols, std::vector<float> w, std::vector<float> b) {
    knt::Layer l;
    l.weights = knt::Matrix(rows, cols);
    l.weights.data = std::move(w);
    l.bias = std::move(b);
    return l;
}

inline knt::Layer identity_layer(std::size_t n) {
    knt::Layer l;
    l.weights = knt::Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) l.weights(i, i) = 1.0f;
    l.bias.assign(n, 0.0f);
    return l;
}

inline knt::Permutation identity_perm(std::size_t n) {
    knt::Permutation p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i);
    return p;
}

}  // namespace testutil
