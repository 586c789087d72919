#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knt/feature_map.hpp"
#include "knt/metrics.hpp"

namespace knt {

enum class Split : std::uint8_t { unassigned, train, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// Samples stored column-wise so feature maps can be handed to metrics as one span.
struct Dataset {
    std::vector<std::uint64_t> sample_ids;
    std::vector<PatientId> patient_ids;
    std::vector<std::vector<std::uint8_t>> labels;
    std::vector<FeatureMap> features;
    std::vector<Split> splits;
    std::size_t num_labels = 0;

    std::size_t size() const noexcept { return features.size(); }

    /// Throws InvalidDataset on ragged columns, duplicate sample ids, or mixed geometry.
    void validate() const;

    Dataset subset(std::span<const std::size_t> indices) const;
    /// Same records, replaced feature maps (e.g. after a defense).
    Dataset with_features(std::vector<FeatureMap> maps) const;
    std::vector<std::size_t> indices_of(Split s) const;
};

struct SynthConfig {
    std::size_t num_patients = 200;
    std::size_t samples_per_patient = 3;
    std::size_t height = 7;
    std::size_t width = 7;
    std::size_t channels = 64;
    std::size_t num_labels = 5;
    double identity_strength = 0.5;
    double label_strength = 5.0;
    double noise_std = 5.0;
    double label_prior = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

/// F = ReLU(alpha * u_patient (broadcast over positions) + beta * sum_k y_k T_k + noise_std * N(0, I)),
/// with u ~ N(0, I_c), templates T_k ~ N(0, I_{hwc}), y_k ~ Bernoulli(label_prior).
Dataset generate(const SynthConfig& cfg);

/// Partitions patients (not samples) into train/test; every sample follows its patient.
/// Throws InvalidArgument unless 0 < train_fraction < 1 and there are >= 2 patients.
std::pair<Dataset, Dataset> split_patient_disjoint(const Dataset& data, double train_fraction, std::uint64_t seed);

}  // namespace knt
