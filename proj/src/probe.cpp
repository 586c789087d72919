#include "knt/probe.hpp"

#include <algorithm>
#include <cmath>

#include "knt/errors.hpp"
#include "knt/keying.hpp"
#include "knt/optim.hpp"

namespace knt {

std::vector<float> gap(const FeatureMap& f) {
    std::vector<double> acc(f.channels(), 0.0);
    for (std::size_t i = 0; i < f.positions(); ++i) {
        const auto v = f.position(i);
        for (std::size_t c = 0; c < v.size(); ++c) acc[c] += v[c];
    }
    std::vector<float> out(f.channels());
    const double n = static_cast<double>(f.positions());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<float>(acc[c] / n);
    return out;
}

ProbeData make_probe_data(std::span<const FeatureMap> maps, std::span<const std::vector<std::uint8_t>> labels,
                          bool pooled) {
    if (maps.size() != labels.size()) throw InvalidArgument("make_probe_data: maps and labels differ in length");
    ProbeData data;
    data.num_labels = labels.empty() ? 0 : labels.front().size();
    data.inputs.reserve(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (labels[i].size() != data.num_labels) throw InvalidArgument("make_probe_data: ragged label vectors");
        if (pooled) {
            data.inputs.push_back(gap(maps[i]));
        } else {
            const auto v = maps[i].values();
            data.inputs.emplace_back(v.begin(), v.end());
        }
        data.labels.insert(data.labels.end(), labels[i].begin(), labels[i].end());
    }
    return data;
}

namespace {

double sigmoid(double z) noexcept {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

LinearProbe train_probe(const ProbeData& train, const ProbeTrainConfig& cfg, bool pooled, std::size_t height,
                        std::size_t width, std::size_t channels) {
    if (cfg.epochs < 1) throw InvalidArgument("train_probe: epochs must be >= 1");
    if (train.size() < 2) throw InvalidArgument("train_probe: need at least 2 samples");
    if (train.num_labels < 1) throw InvalidArgument("train_probe: need at least 1 label");
    const std::size_t n = train.size();
    const std::size_t k_labels = train.num_labels;
    const std::size_t dim = train.inputs.front().size();
    for (const auto& x : train.inputs) {
        if (x.size() != dim) throw InvalidArgument("train_probe: ragged inputs");
    }

    LinearProbe probe;
    probe.num_labels = k_labels;
    probe.input_dim = dim;
    probe.pooled = pooled;
    probe.height = height;
    probe.width = width;
    probe.channels = channels;
    if (!pooled && height * width * channels != dim) {
        throw InvalidArgument("train_probe: spatial probe geometry does not match input length");
    }
    const double scale = probe.input_scale();

    // Training runs on centered inputs; the mean is folded back into the bias at the end.
    std::vector<double> mean(dim, 0.0);
    for (const auto& x : train.inputs) {
        for (std::size_t j = 0; j < dim; ++j) mean[j] += x[j];
    }
    for (auto& m : mean) m /= static_cast<double>(n);

    // params = [weights (K x D) | bias (K)]
    std::vector<double> params(k_labels * dim + k_labels, 0.0);
    {
        GaussianStream init(combine_seeds(cfg.seed, {0x70726f6265ULL}));
        for (std::size_t i = 0; i < k_labels * dim; ++i) params[i] = cfg.init_std * init.next();
    }

    std::vector<bool> active(k_labels, true);
    for (std::size_t k = 0; k < k_labels; ++k) {
        std::size_t positives = 0;
        for (std::size_t i = 0; i < n; ++i) positives += train.labels[i * k_labels + k];
        const double rate = static_cast<double>(positives) / static_cast<double>(n);
        if (positives > 0 && positives < n) params[k_labels * dim + k] = std::log(rate / (1.0 - rate));
        if (positives == 0 || positives == n) {
            active[k] = false;
            const double prior = std::clamp(static_cast<double>(positives) / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
            std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(k * dim), dim, 0.0);
            params[k_labels * dim + k] = std::log(prior / (1.0 - prior));
            probe.flags.push_back("label " + std::to_string(k) + " constant in training set; fixed at prior");
        }
    }

    Adam adam(params.size(), AdamOptions{cfg.learning_rate, 0.9, 0.999, 1e-8});
    std::vector<double> grad(params.size());
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    const std::size_t batch = (cfg.batch_size == 0 || cfg.batch_size > n) ? n : cfg.batch_size;
    UniformStream shuffle_rng(combine_seeds(cfg.seed, {0x73687566ULL}));

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < n) {
            for (std::size_t i = n - 1; i >= 1; --i) {
                std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.next() % (i + 1))]);
            }
        }
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(n, start + batch);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t s = start; s < end; ++s) {
                const std::size_t i = order[s];
                const auto& x = train.inputs[i];
                for (std::size_t k = 0; k < k_labels; ++k) {
                    if (!active[k]) continue;
                    const double* w = params.data() + k * dim;
                    double z = 0.0;
                    for (std::size_t j = 0; j < dim; ++j) z += w[j] * (x[j] - mean[j]);
                    z = scale * z + params[k_labels * dim + k];
                    const double dz = (sigmoid(z) - train.labels[i * k_labels + k]) * inv_b;
                    double* gw = grad.data() + k * dim;
                    const double dzs = dz * scale;
                    for (std::size_t j = 0; j < dim; ++j) gw[j] += dzs * (x[j] - mean[j]);
                    grad[k_labels * dim + k] += dz;
                }
            }
            if (cfg.weight_decay > 0.0) {
                for (std::size_t j = 0; j < k_labels * dim; ++j) grad[j] += cfg.weight_decay * params[j];
            }
            for (std::size_t k = 0; k < k_labels; ++k) {
                if (active[k]) continue;
                std::fill_n(grad.begin() + static_cast<std::ptrdiff_t>(k * dim), dim, 0.0);
                grad[k_labels * dim + k] = 0.0;
            }
            adam.step(params, grad);
        }
    }

    probe.weights.assign(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(k_labels * dim));
    probe.bias.assign(k_labels, 0.0f);
    for (std::size_t k = 0; k < k_labels; ++k) {
        double shift = 0.0;
        if (active[k]) {
            for (std::size_t j = 0; j < dim; ++j) shift += static_cast<double>(probe.weights[k * dim + j]) * mean[j];
        }
        probe.bias[k] = static_cast<float>(params[k_labels * dim + k] - scale * shift);
    }
    return probe;
}

std::vector<double> probe_logits(const LinearProbe& probe, std::span<const float> input) {
    if (input.size() != probe.input_dim) {
        throw InvalidArgument("probe_logits: input length " + std::to_string(input.size()) + " != " +
                              std::to_string(probe.input_dim));
    }
    const double scale = probe.input_scale();
    std::vector<double> out(probe.num_labels);
    for (std::size_t k = 0; k < probe.num_labels; ++k) {
        const float* w = probe.weights.data() + k * probe.input_dim;
        double z = 0.0;
        for (std::size_t j = 0; j < probe.input_dim; ++j) z += static_cast<double>(w[j]) * input[j];
        out[k] = scale * z + probe.bias[k];
    }
    return out;
}

MacroAuc probe_auc(const LinearProbe& probe, const ProbeData& test) {
    if (test.size() == 0) throw InvalidArgument("probe_auc: empty test set");
    if (test.num_labels != probe.num_labels) throw InvalidArgument("probe_auc: label count mismatch");
    std::vector<double> scores;
    scores.reserve(test.size() * probe.num_labels);
    for (const auto& x : test.inputs) {
        const auto z = probe_logits(probe, x);
        scores.insert(scores.end(), z.begin(), z.end());
    }
    return macro_auc(scores, test.labels, probe.num_labels);
}

std::vector<double> spatial_cam(const LinearProbe& probe, const FeatureMap& f, std::size_t label) {
    if (probe.pooled) throw InvalidArgument("spatial_cam: probe was trained with pooling");
    if (label >= probe.num_labels) throw InvalidArgument("spatial_cam: label out of range");
    if (f.height() != probe.height || f.width() != probe.width || f.channels() != probe.channels) {
        throw InvalidArgument("spatial_cam: feature map geometry does not match probe");
    }
    const float* w = probe.weights.data() + label * probe.input_dim;
    std::vector<double> cam(f.positions());
    for (std::size_t i = 0; i < f.positions(); ++i) {
        const auto v = f.position(i);
        double s = 0.0;
        for (std::size_t c = 0; c < v.size(); ++c) s += static_cast<double>(w[i * f.channels() + c]) * v[c];
        cam[i] = s + probe.bias[label];
    }
    return cam;
}

LinearProbe permute_probe(const LinearProbe& probe, const Permutation& perm) {
    if (probe.pooled) return probe;
    const std::size_t positions = probe.height * probe.width;
    if (perm.size() != positions) throw InvalidArgument("permute_probe: permutation length mismatch");
    LinearProbe out = probe;
    const std::size_t c = probe.channels;
    for (std::size_t k = 0; k < probe.num_labels; ++k) {
        const float* src = probe.weights.data() + k * probe.input_dim;
        float* dst = out.weights.data() + k * probe.input_dim;
        for (std::size_t i = 0; i < positions; ++i) {
            std::copy_n(src + perm[i] * c, c, dst + i * c);
        }
    }
    return out;
}

double cam_preservation(const FeatureMap& original, const FeatureMap& transformed, const Permutation& perm,
                        const LinearProbe& original_probe, const LinearProbe& transformed_probe,
                        std::size_t label, bool key_available) {
    const auto cam_orig = spatial_cam(original_probe, original, label);
    const auto cam_trans = spatial_cam(transformed_probe, transformed, label);
    if (cam_orig.size() != cam_trans.size()) throw InvalidArgument("cam_preservation: position count mismatch");
    if (!key_available) return pearson(cam_orig, cam_trans);
    if (perm.size() != cam_trans.size()) throw InvalidArgument("cam_preservation: permutation length mismatch");
    std::vector<double> restored(cam_trans.size());
    for (std::size_t i = 0; i < perm.size(); ++i) restored[perm[i]] = cam_trans[i];
    return pearson(cam_orig, restored);
}

}  // namespace knt
