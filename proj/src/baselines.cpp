#include "knt/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "knt/errors.hpp"
#include "knt/keying.hpp"

namespace knt {

FeatureMap add_gaussian_noise(const FeatureMap& f, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw InvalidArgument("add_gaussian_noise: sigma must be >= 0");
    FeatureMap out = f;
    if (sigma == 0.0) return out;
    const auto noise = gaussian_stream(seed, f.size(), sigma);
    auto v = out.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise[i];
    return out;
}

double l2_norm(const FeatureMap& f) {
    double s = 0.0;
    for (float v : f.values()) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

FeatureMap l2_clip(const FeatureMap& f, double c) {
    if (!(c > 0.0)) throw InvalidArgument("l2_clip: clip norm must be > 0");
    const double norm = l2_norm(f);
    if (norm <= c) return f;
    FeatureMap out = f;
    double scale = c / norm;
    // Float rounding can leave the result a hair above c; shrink until it is not.
    for (int attempt = 0; attempt < 8; ++attempt) {
        auto dst = out.values();
        const auto src = f.values();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i] * scale);
        const double clipped = l2_norm(out);
        if (clipped <= c) break;
        scale *= (c / clipped) * (1.0 - 1e-7);
    }
    return out;
}

double quantile(std::span<const double> values, double q) {
    if (values.empty()) throw InvalidArgument("quantile: empty input");
    if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile: q must lie in [0, 1]");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double dp_sigma(double epsilon, double delta, double sensitivity) {
    if (!(epsilon > 0.0)) throw InvalidArgument("dp_sigma: epsilon must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("dp_sigma: delta must lie in (0, 1)");
    if (!(sensitivity >= 0.0)) throw InvalidArgument("dp_sigma: sensitivity must be >= 0");
    return sensitivity * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

void DpConfig::validate() const {
    if (!(epsilon > 0.0)) throw InvalidArgument("dp: epsilon must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("dp: delta must lie in (0, 1)");
    if (!(clip_quantile > 0.0 && clip_quantile <= 1.0)) throw InvalidArgument("dp: clip_quantile must lie in (0, 1]");
}

DpCalibration dp_calibrate(const DpConfig& cfg, std::span<const double> train_norms) {
    cfg.validate();
    if (train_norms.empty()) throw InvalidArgument("dp: training norms must be non-empty");
    DpCalibration cal;
    cal.clip_norm = quantile(train_norms, cfg.clip_quantile);
    if (!(cal.clip_norm > 0.0)) throw InvalidArgument("dp: clip norm quantile is zero");
    cal.sigma = dp_sigma(cfg.epsilon, cfg.delta, cal.clip_norm);
    if (cfg.epsilon > 1.0) {
        cal.flags.push_back("epsilon > 1: classical Gaussian-mechanism bound nominally requires epsilon <= 1");
    }
    return cal;
}

FeatureMap dp_release(const FeatureMap& f, const DpCalibration& cal, std::uint64_t seed) {
    return add_gaussian_noise(l2_clip(f, cal.clip_norm), cal.sigma, seed);
}

FeatureMap dp_release(const FeatureMap& f, const DpConfig& cfg, std::span<const double> train_norms,
                      std::uint64_t seed) {
    return dp_release(f, dp_calibrate(cfg, train_norms), seed);
}

}  // namespace knt
