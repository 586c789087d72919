#include "knt/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "knt/errors.hpp"
#include "knt/keying.hpp"

namespace knt {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        default: return "unassigned";
    }
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    if (s == "unassigned" || s.empty()) return Split::unassigned;
    throw InvalidArgument("unknown split tag '" + s + "'");
}

void Dataset::validate() const {
    const std::size_t n = features.size();
    if (sample_ids.size() != n || patient_ids.size() != n || labels.size() != n || splits.size() != n) {
        throw InvalidDataset("dataset columns have different lengths");
    }
    std::unordered_set<std::uint64_t> ids;
    for (std::size_t i = 0; i < n; ++i) {
        if (!ids.insert(sample_ids[i]).second) {
            throw InvalidDataset("duplicate sample id " + std::to_string(sample_ids[i]));
        }
        if (labels[i].size() != num_labels) throw InvalidDataset("sample " + std::to_string(i) + " has wrong label count");
        if (i > 0 && !features[i].same_shape(features[0])) {
            throw InvalidDataset("sample " + std::to_string(i) + " has a different feature geometry");
        }
    }
    std::unordered_map<PatientId, Split> side;
    for (std::size_t i = 0; i < n; ++i) {
        if (splits[i] == Split::unassigned) continue;
        auto [it, inserted] = side.emplace(patient_ids[i], splits[i]);
        if (!inserted && it->second != splits[i]) {
            throw InvalidDataset("patient " + std::to_string(patient_ids[i]) + " appears in both train and test");
        }
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_labels = num_labels;
    for (std::size_t i : indices) {
        if (i >= size()) throw InvalidArgument("Dataset::subset: index out of range");
        out.sample_ids.push_back(sample_ids[i]);
        out.patient_ids.push_back(patient_ids[i]);
        out.labels.push_back(labels[i]);
        out.features.push_back(features[i]);
        out.splits.push_back(splits[i]);
    }
    return out;
}

Dataset Dataset::with_features(std::vector<FeatureMap> maps) const {
    if (maps.size() != size()) throw InvalidArgument("Dataset::with_features: sample count mismatch");
    Dataset out;
    out.sample_ids = sample_ids;
    out.patient_ids = patient_ids;
    out.labels = labels;
    out.splits = splits;
    out.num_labels = num_labels;
    out.features = std::move(maps);
    return out;
}

std::vector<std::size_t> Dataset::indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (splits[i] == s) out.push_back(i);
    }
    return out;
}

void SynthConfig::validate() const {
    if (num_patients < 1 || samples_per_patient < 1 || height < 1 || width < 1 || channels < 1 || num_labels < 1) {
        throw InvalidArgument("synth: all counts must be >= 1");
    }
    if (!(identity_strength >= 0.0) || !(label_strength >= 0.0) || !(noise_std >= 0.0)) {
        throw InvalidArgument("synth: strengths and noise_std must be >= 0");
    }
    if (!(label_prior >= 0.0 && label_prior <= 1.0)) throw InvalidArgument("synth: label_prior must lie in [0, 1]");
}

Dataset generate(const SynthConfig& cfg) {
    cfg.validate();
    const MasterKey key = MasterKey::from_seed(cfg.seed);
    const std::size_t hwc = cfg.height * cfg.width * cfg.channels;
    const std::size_t c = cfg.channels;

    std::vector<std::vector<float>> templates(cfg.num_labels);
    for (std::size_t k = 0; k < cfg.num_labels; ++k) {
        templates[k] = gaussian_stream(derive_seed(key, "template/" + std::to_string(k)), hwc, 1.0);
    }

    const std::size_t n = cfg.num_patients * cfg.samples_per_patient;
    Dataset data;
    data.num_labels = cfg.num_labels;
    data.sample_ids.resize(n);
    data.patient_ids.resize(n);
    data.labels.resize(n);
    data.features.resize(n);
    data.splits.assign(n, Split::unassigned);

    const auto patients = static_cast<std::ptrdiff_t>(cfg.num_patients);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pi = 0; pi < patients; ++pi) {
        const auto p = static_cast<std::size_t>(pi);
        const auto identity = gaussian_stream(derive_seed(key, "patient/" + std::to_string(p)), c, 1.0);
        for (std::size_t j = 0; j < cfg.samples_per_patient; ++j) {
            const std::size_t s = p * cfg.samples_per_patient + j;
            UniformStream label_rng(derive_seed(key, "labels/" + std::to_string(s)));
            std::vector<std::uint8_t> y(cfg.num_labels);
            for (auto& v : y) v = label_rng.next_unit() < cfg.label_prior ? 1 : 0;
            GaussianStream noise(derive_seed(key, "noise/" + std::to_string(s)));

            FeatureMap f(cfg.height, cfg.width, c);
            auto out = f.values();
            for (std::size_t i = 0; i < hwc; ++i) {
                double v = cfg.identity_strength * identity[i % c];
                for (std::size_t k = 0; k < cfg.num_labels; ++k) {
                    if (y[k]) v += cfg.label_strength * templates[k][i];
                }
                v += cfg.noise_std * static_cast<double>(noise.next());
                out[i] = v > 0.0 ? static_cast<float>(v) : 0.0f;
            }
            data.sample_ids[s] = s;
            data.patient_ids[s] = p;
            data.labels[s] = std::move(y);
            data.features[s] = std::move(f);
        }
    }
    return data;
}

std::pair<Dataset, Dataset> split_patient_disjoint(const Dataset& data, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw InvalidArgument("split: train_fraction must lie strictly between 0 and 1");
    }
    std::vector<PatientId> order;
    std::set<PatientId> seen;
    for (PatientId p : data.patient_ids) {
        if (seen.insert(p).second) order.push_back(p);
    }
    if (order.size() < 2) throw InvalidArgument("split: need at least 2 patients");

    const Permutation perm = key_permutation(combine_seeds(seed, {0x73706c6974ULL}), order.size());
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
    std::unordered_set<PatientId> train_patients;
    for (std::size_t i = 0; i < n_train; ++i) train_patients.insert(order[perm[i]]);

    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
        (train_patients.contains(data.patient_ids[i]) ? train_idx : test_idx).push_back(i);
    }
    Dataset train = data.subset(train_idx);
    Dataset test = data.subset(test_idx);
    std::fill(train.splits.begin(), train.splits.end(), Split::train);
    std::fill(test.splits.begin(), test.splits.end(), Split::test);
    return {std::move(train), std::move(test)};
}

}  // namespace knt
