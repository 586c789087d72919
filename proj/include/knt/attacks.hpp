#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knt/feature_map.hpp"
#include "knt/metrics.hpp"
#include "knt/transform.hpp"

namespace knt {

/// Row-major double matrix used by the inversion attacks.
struct DMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    DMatrix() = default;
    DMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
};

/// Cholesky factor of (A^T A + ridge I), reusable across right-hand sides.
class RidgeSolver {
public:
    /// Throws NumericalError when the normal matrix is not positive definite.
    RidgeSolver(const DMatrix& a, double ridge);

    /// argmin_x |A x - y|^2 + ridge |x|^2.
    std::vector<double> solve(std::span<const double> y) const;

private:
    DMatrix a_;
    DMatrix chol_;  // lower triangular
};

std::vector<double> pinv_solve(const DMatrix& a, std::span<const double> y, double ridge = 1e-8);

/// Composite affine map of the keyed MLP with every ReLU removed:
/// x -> M x + offset, M = W_L ... W_1.
struct AffineComposite {
    DMatrix matrix;
    std::vector<double> offset;
};
AffineComposite compose_affine(const KntParams& params);

/// Factorization used by the inversion attacks. With no explicit ridge the
/// exact least-squares solve (ridge 0) is tried first and 1e-8 is the fallback
/// for rank-deficient composites (d < C).
RidgeSolver attack_solver(const AffineComposite& affine, std::optional<double> ridge);

/// Closed-form inversion that treats the transform as affine, per position,
/// then undoes the spatial permutation (when `permuted`).
FeatureMap pinv_attack(const FeatureMap& g, const KntParams& params, bool permuted = true,
                       std::optional<double> ridge = std::nullopt);

/// Batched variant sharing one factorization; parallel across samples.
std::vector<FeatureMap> pinv_attack_batch(std::span<const FeatureMap> gs, const KntParams& params, bool permuted = true,
                                          std::optional<double> ridge = std::nullopt, int threads = 0);

/// Loss |KNT(f) - g|^2 + lambda |f|^2 for one position and its exact gradient
/// by reverse-mode differentiation. ReLU derivative at 0 is 0.
template <typename T>
class InversionObjective {
public:
    InversionObjective(const KntParams& params, bool nonlinear);

    T evaluate(std::span<const T> f, std::span<const T> g, T lambda, std::span<T> grad);
    T loss(std::span<const T> f, std::span<const T> g, T lambda);

    std::size_t in_dim() const noexcept { return in_dim_; }
    std::size_t out_dim() const noexcept { return out_dim_; }

private:
    T forward(std::span<const T> f, std::span<const T> g, T lambda);

    struct L {
        std::size_t in = 0, out = 0;
        std::vector<T> w;  // out x in
        std::vector<T> b;
    };
    std::vector<L> layers_;
    bool nonlinear_;
    std::size_t in_dim_ = 0;
    std::size_t out_dim_ = 0;
    std::vector<std::vector<T>> pre_;   // pre-activations per layer
    std::vector<std::vector<T>> act_;   // activations, act_[0] = input
    std::vector<T> delta_, delta_next_;
};

extern template class InversionObjective<float>;
extern template class InversionObjective<double>;

struct ObjectiveValue {
    double loss = 0.0;
    std::vector<double> gradient;
};
ObjectiveValue knt_objective_grad(std::span<const double> f, const KntParams& params, std::span<const double> g,
                                  double lambda, bool nonlinear = true);

struct GradAttackConfig {
    std::size_t steps = 2000;
    std::size_t restarts = 5;
    double lambda = 1e-4;
    double learning_rate = 0.05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double init_scale = 1.0;  // std of the Gaussian restart initialization
    /// Clamp the estimate to >= 0 after every step (attacker knows the features are post-ReLU).
    bool nonnegative = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PositionTrace {
    double initial_loss = 0.0;  // of the restart that was kept
    double final_loss = 0.0;
    std::size_t failed_restarts = 0;
};

struct GradAttackResult {
    FeatureMap estimate;
    std::vector<PositionTrace> positions;  // indexed by transmitted (permuted) position
};

/// Adam inversion, independently per position. Restart r of position p of
/// sample s starts from N(0, init_scale^2) seeded by (cfg.seed, s, p, r); each
/// trajectory keeps its lowest-loss iterate and the best restart wins.
/// Throws AttackFailure if every restart of a position diverges.
GradAttackResult grad_attack(const FeatureMap& g, const KntParams& params, const GradAttackConfig& cfg,
                             bool nonlinear = true, bool permuted = true, std::uint64_t sample_id = 0);

/// Parallel across (sample, position) work items; result independent of `threads`.
std::vector<GradAttackResult> grad_attack_batch(std::span<const FeatureMap> gs, const KntParams& params,
                                                const GradAttackConfig& cfg, std::span<const std::uint64_t> sample_ids,
                                                bool nonlinear = true, bool permuted = true, int threads = 0);

struct AttackEval {
    double mean_cosine = 0.0;
    double std_cosine = 0.0;
    double top1 = 0.0;
    std::size_t samples = 0;
};

/// Flattened cosine between recovered and original maps, and Top-1 where each
/// recovered map queries a gallery of the original maps (hit = same patient).
AttackEval attack_eval(std::span<const FeatureMap> recovered, std::span<const FeatureMap> original,
                       std::span<const PatientId> patients);

struct AttackSeedRow {
    std::uint64_t key_seed = 0;
    std::string key_fingerprint;
    AttackEval eval;
    double ms_per_sample = 0.0;
};

struct AttackReport {
    std::string experiment_id;
    std::string attack_kind;  // pinv_linear | pinv_nonlinear | grad_nonlinear | grad_linear
    std::size_t d = 0;
    std::size_t layers = 0;
    std::vector<AttackSeedRow> per_seed;
    double mean_cosine = 0.0;  // mean over key seeds
    double std_cosine = 0.0;   // std over key seeds
    double top1_mean = 0.0;
    double top1_std = 0.0;
    double ms_per_sample = 0.0;
    std::vector<std::string> flags;

    /// Fills the across-seed aggregates from per_seed.
    void aggregate();
};

}  // namespace knt
