#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace knt {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias-corrected moments:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
class Adam {
public:
    Adam(std::size_t n, const AdamOptions& opts) : opts_(opts), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad) {
        ++t_;
        b1_pow_ *= opts_.beta1;
        b2_pow_ *= opts_.beta2;
        const double c1 = 1.0 - b1_pow_;
        const double c2 = 1.0 - b2_pow_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad[i];
            m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
            v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g * g;
            params[i] -= opts_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + opts_.eps);
        }
    }

    void reset() {
        std::fill(m_.begin(), m_.end(), 0.0);
        std::fill(v_.begin(), v_.end(), 0.0);
        t_ = 0;
        b1_pow_ = 1.0;
        b2_pow_ = 1.0;
    }

    std::size_t steps() const noexcept { return t_; }

private:
    AdamOptions opts_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
    double b1_pow_ = 1.0;
    double b2_pow_ = 1.0;
};

}  // namespace knt
