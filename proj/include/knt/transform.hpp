#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "knt/feature_map.hpp"
#include "knt/keying.hpp"

namespace knt {

/// Dense row-major matrix of single-precision values.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
    std::span<const float> row(std::size_t r) const noexcept { return {data.data() + r * cols, cols}; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct Layer {
    Matrix weights;  // out_dim x in_dim
    std::vector<float> bias;

    friend bool operator==(const Layer&, const Layer&) = default;
};

struct TransformConfig {
    std::size_t layers = 2;
    std::optional<std::size_t> dim;          // defaults to the input channel count
    bool nonlinear = true;
    bool permute = true;
    std::optional<double> weight_std;        // defaults to 1/sqrt(d)

    /// Throws InvalidArgument when L < 1 or d < 1.
    void validate() const;
    std::size_t resolved_dim(std::size_t in_dim) const { return dim.value_or(in_dim); }
};

/// Key-derived transform parameters; immutable once generated.
struct KntParams {
    Permutation perm;
    std::vector<Layer> layers;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    std::size_t num_layers() const noexcept { return layers.size(); }

    friend bool operator==(const KntParams&, const KntParams&) = default;
};

KntParams gen_params(const MasterKey& key, std::size_t positions, std::size_t in_dim, const TransformConfig& cfg);

FeatureMap spatial_permute(const FeatureMap& f, const Permutation& perm);
FeatureMap spatial_unpermute(const FeatureMap& g, const Permutation& perm);

/// Serial evaluation of the keyed MLP on one channel vector. Each output is a
/// single fused multiply-add chain over the inputs in index order.
std::vector<float> mlp_forward(std::span<const float> v, const KntParams& params, bool nonlinear);

/// Blocked, parameter-packed evaluator. Produces results bit-identical to
/// per-position mlp_forward over the permuted map.
class KntTransformer {
public:
    KntTransformer(KntParams params, const TransformConfig& cfg);

    FeatureMap apply(const FeatureMap& f) const;

    /// Applies to every map; parallel across samples with `threads` OpenMP
    /// workers (0 = runtime default). Output does not depend on `threads`.
    std::vector<FeatureMap> apply_batch(std::span<const FeatureMap> maps, int threads = 0) const;

    const KntParams& params() const noexcept { return params_; }
    bool nonlinear() const noexcept { return nonlinear_; }
    bool permute() const noexcept { return permute_; }

private:
    void check_input(const FeatureMap& f) const;

    struct PackedLayer {
        std::size_t in_dim = 0;
        std::size_t out_dim = 0;
        std::vector<float> weights_t;  // in_dim x out_dim (transposed)
        std::vector<float> bias;
    };

    KntParams params_;
    std::vector<PackedLayer> packed_;
    bool nonlinear_ = true;
    bool permute_ = true;
};

/// G = keyed MLP applied per position of the (optionally) permuted map.
FeatureMap knt_apply(const FeatureMap& f, const KntParams& params, const TransformConfig& cfg);

}  // namespace knt
