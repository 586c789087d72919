#include "knt/attacks.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>

#include <omp.h>

#include "knt/errors.hpp"
#include "knt/keying.hpp"
#include "knt/optim.hpp"

namespace knt {

RidgeSolver::RidgeSolver(const DMatrix& a, double ridge) : a_(a), chol_(a.cols, a.cols) {
    if (!(ridge >= 0.0)) throw InvalidArgument("pinv_solve: ridge must be >= 0");
    for (double v : a.data) {
        if (!std::isfinite(v)) throw InvalidArgument("pinv_solve: matrix has non-finite entries");
    }
    const std::size_t n = a.cols;
    const std::size_t m = a.rows;
    // Normal matrix, lower triangle.
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < m; ++r) s += a(r, i) * a(r, j);
            chol_(i, j) = s + (i == j ? ridge : 0.0);
        }
        max_diag = std::max(max_diag, chol_(i, i));
    }
    const double tiny = static_cast<double>(n) * DBL_EPSILON * max_diag;
    for (std::size_t j = 0; j < n; ++j) {
        double d = chol_(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= chol_(j, k) * chol_(j, k);
        if (!(d > tiny)) {
            throw NumericalError("pinv_solve: normal matrix is not positive definite at pivot " + std::to_string(j) +
                                 " (rank-deficient system); raise the ridge");
        }
        const double ljj = std::sqrt(d);
        chol_(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = chol_(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= chol_(i, k) * chol_(j, k);
            chol_(i, j) = s / ljj;
        }
    }
}

std::vector<double> RidgeSolver::solve(std::span<const double> y) const {
    if (y.size() != a_.rows) throw InvalidArgument("pinv_solve: right-hand side length mismatch");
    const std::size_t n = a_.cols;
    std::vector<double> x(n, 0.0);
    for (std::size_t r = 0; r < a_.rows; ++r) {
        const double yr = y[r];
        for (std::size_t i = 0; i < n; ++i) x[i] += a_(r, i) * yr;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = x[i];
        for (std::size_t k = 0; k < i; ++k) s -= chol_(i, k) * x[k];
        x[i] = s / chol_(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= chol_(k, ii) * x[k];
        x[ii] = s / chol_(ii, ii);
    }
    return x;
}

std::vector<double> pinv_solve(const DMatrix& a, std::span<const double> y, double ridge) {
    return RidgeSolver(a, ridge).solve(y);
}

AffineComposite compose_affine(const KntParams& params) {
    if (params.layers.empty()) throw InvalidArgument("compose_affine: no layers");
    AffineComposite out;
    const Layer& first = params.layers.front();
    out.matrix = DMatrix(first.weights.rows, first.weights.cols);
    for (std::size_t i = 0; i < first.weights.data.size(); ++i) out.matrix.data[i] = first.weights.data[i];
    out.offset.assign(first.bias.begin(), first.bias.end());
    for (std::size_t l = 1; l < params.layers.size(); ++l) {
        const Matrix& w = params.layers[l].weights;
        if (w.cols != out.matrix.rows) throw InvalidArgument("compose_affine: layer shape mismatch");
        DMatrix next(w.rows, out.matrix.cols);
        std::vector<double> offset(w.rows, 0.0);
        for (std::size_t r = 0; r < w.rows; ++r) {
            for (std::size_t k = 0; k < w.cols; ++k) {
                const double wk = w(r, k);
                for (std::size_t c = 0; c < next.cols; ++c) next(r, c) += wk * out.matrix(k, c);
                offset[r] += wk * out.offset[k];
            }
            offset[r] += params.layers[l].bias[r];
        }
        out.matrix = std::move(next);
        out.offset = std::move(offset);
    }
    return out;
}

namespace {

FeatureMap pinv_with(const RidgeSolver& solver, const AffineComposite& affine, const FeatureMap& g,
                     const KntParams& params, bool permuted) {
    if (g.channels() != params.out_dim) {
        throw InvalidArgument("pinv_attack: transformed map has " + std::to_string(g.channels()) +
                              " channels, params produce " + std::to_string(params.out_dim));
    }
    if (permuted && params.perm.size() != g.positions()) {
        throw InvalidArgument("pinv_attack: permutation length does not match spatial positions");
    }
    FeatureMap estimate(g.height(), g.width(), params.in_dim);
    std::vector<double> rhs(params.out_dim);
    for (std::size_t i = 0; i < g.positions(); ++i) {
        const auto gi = g.position(i);
        for (std::size_t o = 0; o < rhs.size(); ++o) rhs[o] = gi[o] - affine.offset[o];
        const auto x = solver.solve(rhs);
        auto dst = estimate.position(permuted ? params.perm[i] : i);
        for (std::size_t c = 0; c < x.size(); ++c) dst[c] = static_cast<float>(x[c]);
    }
    return estimate;
}

}  // namespace

RidgeSolver attack_solver(const AffineComposite& affine, std::optional<double> ridge) {
    if (ridge) return RidgeSolver(affine.matrix, *ridge);
    if (affine.matrix.rows >= affine.matrix.cols) {
        try {
            return RidgeSolver(affine.matrix, 0.0);
        } catch (const NumericalError&) {
        }
    }
    return RidgeSolver(affine.matrix, 1e-8);
}

FeatureMap pinv_attack(const FeatureMap& g, const KntParams& params, bool permuted, std::optional<double> ridge) {
    const AffineComposite affine = compose_affine(params);
    const RidgeSolver solver = attack_solver(affine, ridge);
    return pinv_with(solver, affine, g, params, permuted);
}

std::vector<FeatureMap> pinv_attack_batch(std::span<const FeatureMap> gs, const KntParams& params, bool permuted,
                                          std::optional<double> ridge, int threads) {
    const AffineComposite affine = compose_affine(params);
    const RidgeSolver solver = attack_solver(affine, ridge);
    for (const auto& g : gs) {
        if (g.channels() != params.out_dim || (permuted && params.perm.size() != g.positions())) {
            throw InvalidArgument("pinv_attack_batch: transformed map shape does not match params");
        }
    }
    std::vector<FeatureMap> out(gs.size());
    const int nthreads = threads > 0 ? threads : omp_get_max_threads();
    const auto n = static_cast<std::ptrdiff_t>(gs.size());
#pragma omp parallel for num_threads(nthreads) schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = pinv_with(solver, affine, gs[static_cast<std::size_t>(i)], params, permuted);
    }
    return out;
}

template <typename T>
InversionObjective<T>::InversionObjective(const KntParams& params, bool nonlinear)
    : nonlinear_(nonlinear), in_dim_(params.in_dim), out_dim_(params.out_dim) {
    if (params.layers.empty()) throw InvalidArgument("InversionObjective: no layers");
    for (const Layer& layer : params.layers) {
        L l;
        l.in = layer.weights.cols;
        l.out = layer.weights.rows;
        l.w.assign(layer.weights.data.begin(), layer.weights.data.end());
        l.b.assign(layer.bias.begin(), layer.bias.end());
        layers_.push_back(std::move(l));
    }
    act_.resize(layers_.size() + 1);
    pre_.resize(layers_.size());
    act_[0].resize(in_dim_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        pre_[l].resize(layers_[l].out);
        act_[l + 1].resize(layers_[l].out);
    }
}

template <typename T>
T InversionObjective<T>::forward(std::span<const T> f, std::span<const T> g, T lambda) {
    if (f.size() != in_dim_ || g.size() != out_dim_) {
        throw InvalidArgument("knt_objective_grad: dimension mismatch");
    }
    std::copy(f.begin(), f.end(), act_[0].begin());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const L& ly = layers_[l];
        const T* x = act_[l].data();
        for (std::size_t o = 0; o < ly.out; ++o) {
            const T* w = ly.w.data() + o * ly.in;
            T s = 0;
            for (std::size_t c = 0; c < ly.in; ++c) s += w[c] * x[c];
            s += ly.b[o];
            pre_[l][o] = s;
            act_[l + 1][o] = (nonlinear_ && !(s > T(0))) ? T(0) : s;
        }
    }
    T loss = 0;
    const auto& out = act_.back();
    for (std::size_t o = 0; o < out_dim_; ++o) {
        const T r = out[o] - g[o];
        loss += r * r;
    }
    T reg = 0;
    for (T v : f) reg += v * v;
    return loss + lambda * reg;
}

template <typename T>
T InversionObjective<T>::loss(std::span<const T> f, std::span<const T> g, T lambda) {
    return forward(f, g, lambda);
}

template <typename T>
T InversionObjective<T>::evaluate(std::span<const T> f, std::span<const T> g, T lambda, std::span<T> grad) {
    const T value = forward(f, g, lambda);
    if (grad.size() != in_dim_) throw InvalidArgument("knt_objective_grad: gradient buffer length mismatch");
    const auto& out = act_.back();
    delta_.resize(out_dim_);
    for (std::size_t o = 0; o < out_dim_; ++o) delta_[o] = T(2) * (out[o] - g[o]);
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const L& ly = layers_[l];
        if (nonlinear_) {
            for (std::size_t o = 0; o < ly.out; ++o) {
                if (!(pre_[l][o] > T(0))) delta_[o] = T(0);
            }
        }
        delta_next_.assign(ly.in, T(0));
        for (std::size_t o = 0; o < ly.out; ++o) {
            const T d = delta_[o];
            if (d == T(0)) continue;
            const T* w = ly.w.data() + o * ly.in;
            for (std::size_t c = 0; c < ly.in; ++c) delta_next_[c] += w[c] * d;
        }
        delta_.swap(delta_next_);
    }
    for (std::size_t c = 0; c < in_dim_; ++c) grad[c] = delta_[c] + T(2) * lambda * f[c];
    return value;
}

template class InversionObjective<float>;
template class InversionObjective<double>;

ObjectiveValue knt_objective_grad(std::span<const double> f, const KntParams& params, std::span<const double> g,
                                  double lambda, bool nonlinear) {
    InversionObjective<double> obj(params, nonlinear);
    ObjectiveValue out;
    out.gradient.resize(params.in_dim);
    out.loss = obj.evaluate(f, g, lambda, out.gradient);
    return out;
}

void GradAttackConfig::validate() const {
    if (steps < 1) throw InvalidArgument("grad attack: steps must be >= 1");
    if (restarts < 1) throw InvalidArgument("grad attack: restarts must be >= 1");
    if (!(lambda >= 0.0)) throw InvalidArgument("grad attack: lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw InvalidArgument("grad attack: learning_rate must be > 0");
    if (!(init_scale >= 0.0)) throw InvalidArgument("grad attack: init_scale must be >= 0");
}

namespace {

struct PositionOutcome {
    std::vector<double> x;
    PositionTrace trace;
    bool failed = false;
};

PositionOutcome invert_position(InversionObjective<double>& obj, std::span<const float> g_pos,
                                const GradAttackConfig& cfg, std::uint64_t sample_id, std::size_t position) {
    const std::size_t n = obj.in_dim();
    std::vector<double> g(g_pos.begin(), g_pos.end());
    std::vector<double> x(n), grad(n), best_x(n);
    const AdamOptions opts{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};

    PositionOutcome out;
    double best_overall = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
        GaussianStream init(combine_seeds(cfg.seed, {sample_id, position, r}));
        for (auto& v : x) v = cfg.init_scale * static_cast<double>(init.next());
        if (cfg.nonnegative) {
            for (auto& v : x) v = std::max(v, 0.0);
        }
        Adam adam(n, opts);
        const double initial = obj.evaluate(x, g, cfg.lambda, grad);
        if (!std::isfinite(initial)) {
            ++out.trace.failed_restarts;
            continue;
        }
        double best = initial;
        best_x = x;
        bool diverged = false;
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            adam.step(x, grad);
            if (cfg.nonnegative) {
                for (auto& v : x) v = std::max(v, 0.0);
            }
            const double value = obj.evaluate(x, g, cfg.lambda, grad);
            if (!std::isfinite(value)) {
                diverged = true;
                break;
            }
            if (value < best) {
                best = value;
                best_x = x;
            }
        }
        if (diverged) {
            ++out.trace.failed_restarts;
            continue;
        }
        if (best < best_overall) {
            best_overall = best;
            out.x = best_x;
            out.trace.initial_loss = initial;
            out.trace.final_loss = best;
        }
    }
    out.failed = out.x.empty();
    return out;
}

}  // namespace

GradAttackResult grad_attack(const FeatureMap& g, const KntParams& params, const GradAttackConfig& cfg, bool nonlinear,
                             bool permuted, std::uint64_t sample_id) {
    const std::uint64_t ids[] = {sample_id};
    auto out = grad_attack_batch(std::span<const FeatureMap>(&g, 1), params, cfg, ids, nonlinear, permuted, 1);
    return std::move(out.front());
}

std::vector<GradAttackResult> grad_attack_batch(std::span<const FeatureMap> gs, const KntParams& params,
                                                const GradAttackConfig& cfg, std::span<const std::uint64_t> sample_ids,
                                                bool nonlinear, bool permuted, int threads) {
    cfg.validate();
    if (sample_ids.size() != gs.size()) throw InvalidArgument("grad_attack_batch: sample ids and maps differ in length");
    std::vector<GradAttackResult> results(gs.size());
    std::size_t positions = 0;
    for (std::size_t s = 0; s < gs.size(); ++s) {
        const FeatureMap& g = gs[s];
        if (g.channels() != params.out_dim) throw InvalidArgument("grad_attack: transformed map channel mismatch");
        if (permuted && params.perm.size() != g.positions()) {
            throw InvalidArgument("grad_attack: permutation length does not match spatial positions");
        }
        if (s > 0 && g.positions() != positions) throw InvalidArgument("grad_attack_batch: mixed spatial sizes");
        positions = g.positions();
        results[s].estimate = FeatureMap(g.height(), g.width(), params.in_dim);
        results[s].positions.resize(g.positions());
    }

    const auto tasks = static_cast<std::ptrdiff_t>(gs.size() * positions);
    std::vector<std::uint8_t> failed(static_cast<std::size_t>(tasks), 0);
    const int nthreads = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel num_threads(nthreads)
    {
        InversionObjective<double> obj(params, nonlinear);
#pragma omp for schedule(dynamic, 4)
        for (std::ptrdiff_t t = 0; t < tasks; ++t) {
            const std::size_t s = static_cast<std::size_t>(t) / positions;
            const std::size_t p = static_cast<std::size_t>(t) % positions;
            PositionOutcome o = invert_position(obj, gs[s].position(p), cfg, sample_ids[s], p);
            GradAttackResult& res = results[s];
            res.positions[p] = o.trace;
            if (o.failed) {
                failed[static_cast<std::size_t>(t)] = 1;
                continue;
            }
            auto dst = res.estimate.position(permuted ? params.perm[p] : p);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = static_cast<float>(o.x[c]);
        }
    }
    for (std::size_t t = 0; t < failed.size(); ++t) {
        if (failed[t]) {
            throw AttackFailure("grad_attack: every restart diverged for sample " +
                                std::to_string(sample_ids[t / positions]) + ", position " +
                                std::to_string(t % positions));
        }
    }
    return results;
}

AttackEval attack_eval(std::span<const FeatureMap> recovered, std::span<const FeatureMap> original,
                       std::span<const PatientId> patients) {
    if (recovered.size() != original.size() || recovered.size() != patients.size()) {
        throw InvalidArgument("attack_eval: recovered, original and patient ids are misaligned");
    }
    if (recovered.empty()) throw InvalidArgument("attack_eval: no samples");
    AttackEval out;
    out.samples = recovered.size();
    std::vector<double> cos(recovered.size());
    std::vector<VectorView> rv(recovered.size()), ov(original.size());
    for (std::size_t i = 0; i < recovered.size(); ++i) {
        if (!recovered[i].same_shape(original[i])) throw InvalidArgument("attack_eval: shape mismatch at sample " + std::to_string(i));
        rv[i] = recovered[i].values();
        ov[i] = original[i].values();
        cos[i] = cosine(rv[i], ov[i]);
    }
    const double n = static_cast<double>(cos.size());
    out.mean_cosine = std::accumulate(cos.begin(), cos.end(), 0.0) / n;
    if (cos.size() > 1) {
        double ss = 0.0;
        for (double c : cos) ss += (c - out.mean_cosine) * (c - out.mean_cosine);
        out.std_cosine = std::sqrt(ss / (n - 1.0));
    }
    out.top1 = nearest_neighbor_accuracy(ov, patients, rv, patients);
    return out;
}

void AttackReport::aggregate() {
    if (per_seed.empty()) return;
    const double n = static_cast<double>(per_seed.size());
    auto mean_std = [&](auto get, double& mean, double& sd) {
        mean = 0.0;
        for (const auto& row : per_seed) mean += get(row);
        mean /= n;
        sd = 0.0;
        if (per_seed.size() > 1) {
            for (const auto& row : per_seed) sd += (get(row) - mean) * (get(row) - mean);
            sd = std::sqrt(sd / (n - 1.0));
        }
    };
    mean_std([](const AttackSeedRow& r) { return r.eval.mean_cosine; }, mean_cosine, std_cosine);
    mean_std([](const AttackSeedRow& r) { return r.eval.top1; }, top1_mean, top1_std);
    double unused = 0.0;
    mean_std([](const AttackSeedRow& r) { return r.ms_per_sample; }, ms_per_sample, unused);
}

}  // namespace knt
