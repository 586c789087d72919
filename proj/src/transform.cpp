#include "knt/transform.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <immintrin.h>
#include <omp.h>

namespace knt {

namespace {

void check_perm(const FeatureMap& f, const Permutation& perm) {
    if (perm.size() != f.positions()) {
        throw InvalidArgument("permutation length " + std::to_string(perm.size()) + " does not match " +
                              std::to_string(f.positions()) + " spatial positions");
    }
}

inline float activate(float acc, bool nonlinear) noexcept { return (nonlinear && !(acc > 0.0f)) ? 0.0f : acc; }

}  // namespace

void TransformConfig::validate() const {
    if (layers < 1) throw InvalidArgument("transform: layers must be >= 1");
    if (dim && *dim < 1) throw InvalidArgument("transform: dim must be >= 1");
    if (weight_std && !(*weight_std >= 0.0)) throw InvalidArgument("transform: weight_std must be >= 0");
}

KntParams gen_params(const MasterKey& key, std::size_t positions, std::size_t in_dim, const TransformConfig& cfg) {
    cfg.validate();
    if (in_dim < 1) throw InvalidArgument("gen_params: in_dim must be >= 1");
    const std::size_t d = cfg.resolved_dim(in_dim);
    const double stddev = cfg.weight_std.value_or(1.0 / std::sqrt(static_cast<double>(d)));

    KntParams p;
    p.in_dim = in_dim;
    p.out_dim = d;
    p.perm = key_permutation(derive_seed(key, "perm"), positions);
    p.layers.reserve(cfg.layers);
    for (std::size_t l = 1; l <= cfg.layers; ++l) {
        const std::size_t fan_in = (l == 1) ? in_dim : d;
        Layer layer;
        layer.weights.rows = d;
        layer.weights.cols = fan_in;
        layer.weights.data = gaussian_stream(derive_seed(key, "W" + std::to_string(l)), d * fan_in, stddev);
        layer.bias = gaussian_stream(derive_seed(key, "b" + std::to_string(l)), d, stddev);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

FeatureMap spatial_permute(const FeatureMap& f, const Permutation& perm) {
    check_perm(f, perm);
    FeatureMap out(f.height(), f.width(), f.channels());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const auto src = f.position(perm[i]);
        std::copy(src.begin(), src.end(), out.position(i).begin());
    }
    return out;
}

FeatureMap spatial_unpermute(const FeatureMap& g, const Permutation& perm) {
    check_perm(g, perm);
    FeatureMap out(g.height(), g.width(), g.channels());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const auto src = g.position(i);
        std::copy(src.begin(), src.end(), out.position(perm[i]).begin());
    }
    return out;
}

std::vector<float> mlp_forward(std::span<const float> v, const KntParams& params, bool nonlinear) {
    if (v.size() != params.in_dim) {
        throw InvalidArgument("mlp_forward: input length " + std::to_string(v.size()) + " != in_dim " +
                              std::to_string(params.in_dim));
    }
    std::vector<float> h(v.begin(), v.end());
    for (const Layer& layer : params.layers) {
        if (layer.weights.cols != h.size()) {
            throw InvalidArgument("mlp_forward: layer input dimension mismatch");
        }
        std::vector<float> next(layer.weights.rows);
        for (std::size_t o = 0; o < layer.weights.rows; ++o) {
            const auto w = layer.weights.row(o);
            float acc = 0.0f;
            for (std::size_t c = 0; c < h.size(); ++c) {
                acc = std::fma(h[c], w[c], acc);
            }
            next[o] = activate(acc + layer.bias[o], nonlinear);
        }
        h = std::move(next);
    }
    return h;
}

KntTransformer::KntTransformer(KntParams params, const TransformConfig& cfg)
    : params_(std::move(params)), nonlinear_(cfg.nonlinear), permute_(cfg.permute) {
    packed_.reserve(params_.layers.size());
    for (const Layer& layer : params_.layers) {
        PackedLayer pl;
        pl.in_dim = layer.weights.cols;
        pl.out_dim = layer.weights.rows;
        pl.weights_t.resize(pl.in_dim * pl.out_dim);
        for (std::size_t o = 0; o < pl.out_dim; ++o) {
            for (std::size_t c = 0; c < pl.in_dim; ++c) {
                pl.weights_t[c * pl.out_dim + o] = layer.weights(o, c);
            }
        }
        pl.bias.assign(layer.bias.begin(), layer.bias.end());
        packed_.push_back(std::move(pl));
    }
}

namespace {

// Computes y[p, o] = act(sum_c x[p, c] * w[o, c] + b[o]) in single precision.
// Vector lanes hold distinct outputs, so each output is still a single fused
// multiply-add chain over c in increasing order: identical to mlp_forward.

#if defined(__AVX512F__)
constexpr std::size_t kLanes = 16;
using vreg = __m512;
inline vreg vzero() noexcept { return _mm512_setzero_ps(); }
inline vreg vload(const float* p) noexcept { return _mm512_loadu_ps(p); }
inline vreg vset1(float v) noexcept { return _mm512_set1_ps(v); }
inline vreg vfma(vreg a, vreg b, vreg c) noexcept { return _mm512_fmadd_ps(a, b, c); }
inline void vstore(float* p, vreg v) noexcept { _mm512_storeu_ps(p, v); }
#elif defined(__AVX2__) && defined(__FMA__)
constexpr std::size_t kLanes = 8;
using vreg = __m256;
inline vreg vzero() noexcept { return _mm256_setzero_ps(); }
inline vreg vload(const float* p) noexcept { return _mm256_loadu_ps(p); }
inline vreg vset1(float v) noexcept { return _mm256_set1_ps(v); }
inline vreg vfma(vreg a, vreg b, vreg c) noexcept { return _mm256_fmadd_ps(a, b, c); }
inline void vstore(float* p, vreg v) noexcept { _mm256_storeu_ps(p, v); }
#else
constexpr std::size_t kLanes = 0;
#endif

struct LayerView {
    const float* x;
    std::size_t in_dim;
    const float* wt;
    std::size_t out_dim;
    const float* bias;
    bool nonlinear;
    float* y;
};

inline void store_output(const LayerView& L, std::size_t p, std::size_t o, float acc) noexcept {
    L.y[p * L.out_dim + o] = activate(acc + L.bias[o], L.nonlinear);
}

void layer_scalar(const LayerView& L, std::size_t p0, std::size_t p1, std::size_t o0, std::size_t o1) {
    for (std::size_t p = p0; p < p1; ++p) {
        for (std::size_t o = o0; o < o1; ++o) {
            float acc = 0.0f;
            for (std::size_t c = 0; c < L.in_dim; ++c) {
                acc = std::fma(L.x[p * L.in_dim + c], L.wt[c * L.out_dim + o], acc);
            }
            store_output(L, p, o, acc);
        }
    }
}

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
constexpr std::size_t kRegsPerRow = 4;
constexpr std::size_t kOutBlock = kRegsPerRow * kLanes;
constexpr std::size_t kPosBlock = 6;

template <std::size_t PB>
void layer_tile(const LayerView& L, std::size_t p0, std::size_t o0) {
    vreg acc[PB][kRegsPerRow];
    for (std::size_t p = 0; p < PB; ++p) {
        for (std::size_t r = 0; r < kRegsPerRow; ++r) acc[p][r] = vzero();
    }
    const float* xrow[PB];
    for (std::size_t p = 0; p < PB; ++p) xrow[p] = L.x + (p0 + p) * L.in_dim;
    for (std::size_t c = 0; c < L.in_dim; ++c) {
        const float* wrow = L.wt + c * L.out_dim + o0;
        vreg w[kRegsPerRow];
        for (std::size_t r = 0; r < kRegsPerRow; ++r) w[r] = vload(wrow + r * kLanes);
        for (std::size_t p = 0; p < PB; ++p) {
            const vreg xv = vset1(xrow[p][c]);
            for (std::size_t r = 0; r < kRegsPerRow; ++r) acc[p][r] = vfma(xv, w[r], acc[p][r]);
        }
    }
    alignas(64) float buf[kOutBlock];
    for (std::size_t p = 0; p < PB; ++p) {
        for (std::size_t r = 0; r < kRegsPerRow; ++r) vstore(buf + r * kLanes, acc[p][r]);
        for (std::size_t o = 0; o < kOutBlock; ++o) store_output(L, p0 + p, o0 + o, buf[o]);
    }
}

void layer_tile_dispatch(const LayerView& L, std::size_t p0, std::size_t pb, std::size_t o0) {
    switch (pb) {
        case 1: layer_tile<1>(L, p0, o0); break;
        case 2: layer_tile<2>(L, p0, o0); break;
        case 3: layer_tile<3>(L, p0, o0); break;
        case 4: layer_tile<4>(L, p0, o0); break;
        case 5: layer_tile<5>(L, p0, o0); break;
        default: layer_tile<kPosBlock>(L, p0, o0); break;
    }
}

void layer_forward(const LayerView& L, std::size_t positions) {
    const std::size_t o_full = L.out_dim - L.out_dim % kOutBlock;
    for (std::size_t o0 = 0; o0 < o_full; o0 += kOutBlock) {
        for (std::size_t p0 = 0; p0 < positions; p0 += kPosBlock) {
            layer_tile_dispatch(L, p0, std::min(kPosBlock, positions - p0), o0);
        }
    }
    layer_scalar(L, 0, positions, o_full, L.out_dim);
}
#else
void layer_forward(const LayerView& L, std::size_t positions) { layer_scalar(L, 0, positions, 0, L.out_dim); }
#endif

}  // namespace

void KntTransformer::check_input(const FeatureMap& f) const {
    if (f.channels() != params_.in_dim) {
        throw InvalidArgument("knt_apply: feature map has " + std::to_string(f.channels()) + " channels, params expect " +
                              std::to_string(params_.in_dim));
    }
    if (permute_) check_perm(f, params_.perm);
}

FeatureMap KntTransformer::apply(const FeatureMap& f) const {
    check_input(f);

    const std::size_t positions = f.positions();
    std::vector<float> cur(positions * params_.in_dim);
    for (std::size_t i = 0; i < positions; ++i) {
        const auto src = f.position(permute_ ? params_.perm[i] : i);
        std::copy(src.begin(), src.end(), cur.begin() + static_cast<std::ptrdiff_t>(i * params_.in_dim));
    }
    std::vector<float> next;
    for (const PackedLayer& pl : packed_) {
        next.assign(positions * pl.out_dim, 0.0f);
        const LayerView view{cur.data(), pl.in_dim, pl.weights_t.data(), pl.out_dim, pl.bias.data(), nonlinear_,
                             next.data()};
        layer_forward(view, positions);
        cur.swap(next);
    }
    return FeatureMap(f.height(), f.width(), params_.out_dim, std::move(cur));
}

std::vector<FeatureMap> KntTransformer::apply_batch(std::span<const FeatureMap> maps, int threads) const {
    for (const auto& m : maps) check_input(m);
    std::vector<FeatureMap> out(maps.size());
    const int nthreads = threads > 0 ? threads : omp_get_max_threads();
    const auto n = static_cast<std::ptrdiff_t>(maps.size());
#pragma omp parallel for num_threads(nthreads) schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = apply(maps[static_cast<std::size_t>(i)]);
    }
    return out;
}

FeatureMap knt_apply(const FeatureMap& f, const KntParams& params, const TransformConfig& cfg) {
    return KntTransformer(params, cfg).apply(f);
}

}  // namespace knt
