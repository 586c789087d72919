#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knt/feature_map.hpp"

namespace knt {

/// F + N(0, sigma^2) elementwise, noise drawn from gaussian_stream(seed, size, sigma).
FeatureMap add_gaussian_noise(const FeatureMap& f, double sigma, std::uint64_t seed);

double l2_norm(const FeatureMap& f);

/// Rescales f onto the ball of radius c when its L2 norm exceeds c.
FeatureMap l2_clip(const FeatureMap& f, double c);

/// Linear interpolation between order statistics at position q * (n - 1).
double quantile(std::span<const double> values, double q);

/// Classical Gaussian mechanism: sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon.
double dp_sigma(double epsilon, double delta, double sensitivity);

struct DpConfig {
    double epsilon = 8.0;
    double delta = 1e-5;
    double clip_quantile = 0.95;

    void validate() const;
};

/// Clip norm (= L2 sensitivity for single replacement) and the resulting noise scale.
struct DpCalibration {
    double clip_norm = 0.0;
    double sigma = 0.0;
    std::vector<std::string> flags;
};

DpCalibration dp_calibrate(const DpConfig& cfg, std::span<const double> train_norms);

FeatureMap dp_release(const FeatureMap& f, const DpCalibration& cal, std::uint64_t seed);
FeatureMap dp_release(const FeatureMap& f, const DpConfig& cfg, std::span<const double> train_norms,
                      std::uint64_t seed);

}  // namespace knt
