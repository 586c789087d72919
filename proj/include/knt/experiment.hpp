#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knt/attacks.hpp"
#include "knt/baselines.hpp"
#include "knt/keying.hpp"
#include "knt/metrics.hpp"
#include "knt/probe.hpp"
#include "knt/synthdata.hpp"
#include "knt/transform.hpp"

#include <json.hpp>

namespace knt {

enum class Method { raw, noise, perm, knt, knt_nokey, knt_linear, knt_noperm, dp };

Method parse_method(const std::string& s);
std::string to_string(Method m);
/// Methods whose output depends on the key (or noise seed).
bool is_randomized(Method m);

struct DefenseSpec {
    Method method = Method::knt;
    std::size_t layers = 2;
    std::optional<std::size_t> d;  // defaults to the channel count
    std::optional<double> weight_std;
    double sigma = 3.0;            // Gaussian-noise baseline
    DpConfig dp;

    void validate() const;
    TransformConfig transform_config() const;
};

/// A defense bound to a key and, for DP, to a training-norm calibration.
class Defense {
public:
    /// `train_norms` is only read for Method::dp.
    Defense(const DefenseSpec& spec, const MasterKey& key, std::size_t h, std::size_t w, std::size_t c,
            std::span<const double> train_norms = {});

    /// Output does not depend on `threads`. Noise streams are seeded per sample id.
    std::vector<FeatureMap> apply(std::span<const FeatureMap> maps, std::span<const std::uint64_t> sample_ids,
                                  int threads = 0) const;

    const DefenseSpec& spec() const noexcept { return spec_; }
    /// Transform parameters for keyed methods, empty otherwise.
    const std::optional<KntParams>& params() const noexcept { return params_; }
    const std::optional<DpCalibration>& dp() const noexcept { return dp_; }
    std::size_t output_channels() const noexcept { return out_c_; }
    const std::string& key_fingerprint() const noexcept { return fingerprint_; }

private:
    DefenseSpec spec_;
    std::string fingerprint_;
    std::size_t h_, w_, c_, out_c_;
    std::optional<KntParams> params_;
    std::optional<KntTransformer> transformer_;
    std::optional<DpCalibration> dp_;
    Permutation perm_;
    std::uint64_t noise_seed_ = 0;
};

/// Key for repetition `key_seed`: a subkey of `master` when one is supplied,
/// otherwise MasterKey::from_seed(key_seed).
MasterKey key_for_seed(const std::optional<MasterKey>& master, std::uint64_t key_seed);

struct EvalProtocol {
    PairSpec pairs;               // seed and mode of the verification pairs
    double train_fraction = 0.5;
    std::uint64_t split_seed = 0;
    bool run_probe = true;
    ProbeTrainConfig probe;
    std::size_t probe_seeds = 1;  // classification AUC is averaged over this many probe inits
};

/// One (method, key) evaluation: privacy on held-out patients, probe trained on
/// the training patients and scored on the held-out ones.
MetricsReport evaluate_defense(const Dataset& data, const DefenseSpec& spec, const MasterKey& key,
                               std::uint64_t key_seed, const EvalProtocol& protocol, int threads = 0);

struct SweepCell {
    DefenseSpec spec;
    std::uint64_t key_seed = 0;
};

/// Evaluates every cell; results are ordered by cell index. Cells run in
/// parallel with single-threaded kernels inside.
std::vector<MetricsReport> run_cells(const Dataset& data, std::span<const SweepCell> cells,
                                     const std::optional<MasterKey>& master, const EvalProtocol& protocol,
                                     int threads = 0);

enum class AttackKind { pinv, grad };
AttackKind parse_attack_kind(const std::string& s);
std::string to_string(AttackKind k);

struct AttackSetup {
    AttackKind kind = AttackKind::grad;
    DefenseSpec spec;             // method knt / knt_linear / knt_noperm
    GradAttackConfig grad;
    std::optional<double> ridge;  // unset: exact solve, 1e-8 fallback
    std::size_t num_samples = 100;
    /// Restart init std; when unset, the per-element RMS of the training-split features.
    std::optional<double> init_scale;
};

/// Key-compromise attack on the first `num_samples` samples, one row per key seed.
AttackReport run_attack(const Dataset& data, const AttackSetup& setup, std::span<const std::uint64_t> key_seeds,
                        const std::optional<MasterKey>& master, const EvalProtocol& protocol, int threads = 0);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};
MeanStd mean_std(std::span<const double> xs);

/// Grouped mean and std of every metric over key seeds, keyed by (method, d, L).
nlohmann::ordered_json summarize(std::span<const MetricsReport> reports);

struct LatencyStats {
    double median_ms = 0.0;
    double p10_ms = 0.0;
    double p90_ms = 0.0;
    std::size_t reps = 0;
};

/// Median single-sample transform latency over `reps` runs after `warmup` runs.
LatencyStats bench_transform(std::size_t h, std::size_t w, std::size_t c, const TransformConfig& cfg,
                             std::size_t reps = 1000, std::size_t warmup = 50);

}  // namespace knt
