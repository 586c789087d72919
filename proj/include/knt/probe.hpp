#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knt/feature_map.hpp"
#include "knt/metrics.hpp"

namespace knt {

/// Per-channel mean over spatial positions.
std::vector<float> gap(const FeatureMap& f);

/// Multi-label linear classifier.
///
/// pooled:   logit_k = w_k . gap(F) + b_k                         (weights K x c)
/// spatial:  logit_k = mean_i (w_{k,i} . f_i + b_k)               (weights K x (h*w*c))
///
/// The spatial form makes the class activation map CAM_i = w_{k,i} . f_i + b_k
/// average exactly to the logit.
struct LinearProbe {
    std::size_t num_labels = 0;
    std::size_t input_dim = 0;
    bool pooled = true;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> weights;  // num_labels x input_dim
    std::vector<float> bias;
    std::vector<std::string> flags;

    double input_scale() const noexcept {
        return pooled ? 1.0 : 1.0 / static_cast<double>(height * width);
    }
};

struct ProbeTrainConfig {
    std::size_t epochs = 100;
    double learning_rate = 1e-3;
    std::size_t batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
    double weight_decay = 0.0;
    double init_std = 0.01;
};

/// Inputs prepared for a probe: one vector per sample plus N x K binary targets.
struct ProbeData {
    std::vector<std::vector<float>> inputs;
    std::vector<std::uint8_t> labels;
    std::size_t num_labels = 0;

    std::size_t size() const noexcept { return inputs.size(); }
};

/// GAP vectors (pooled) or flattened maps (spatial) for a set of feature maps.
ProbeData make_probe_data(std::span<const FeatureMap> maps, std::span<const std::vector<std::uint8_t>> labels,
                          bool pooled);

/// Adam on mean per-label binary cross-entropy. Labels constant across the
/// training set are fixed at their empirical prior and flagged.
LinearProbe train_probe(const ProbeData& train, const ProbeTrainConfig& cfg, bool pooled,
                        std::size_t height = 0, std::size_t width = 0, std::size_t channels = 0);

std::vector<double> probe_logits(const LinearProbe& probe, std::span<const float> input);

/// Macro AUC over labels present in both classes of `test`. Ranks raw logits
/// (same ordering as sigmoid outputs, without saturation ties).
MacroAuc probe_auc(const LinearProbe& probe, const ProbeData& test);

/// Per-position class score map of a spatial probe, length h*w.
std::vector<double> spatial_cam(const LinearProbe& probe, const FeatureMap& f, std::size_t label);

/// Spatial probe whose weights follow a spatial permutation, so that
/// CAM(permuted probe, permuted map) = permuted CAM.
LinearProbe permute_probe(const LinearProbe& probe, const Permutation& perm);

/// Pearson r between the original-feature CAM and the transformed-feature CAM,
/// the latter mapped back through the inverse permutation when the key is available.
double cam_preservation(const FeatureMap& original, const FeatureMap& transformed, const Permutation& perm,
                        const LinearProbe& original_probe, const LinearProbe& transformed_probe,
                        std::size_t label, bool key_available);

}  // namespace knt
