#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "knt/errors.hpp"

namespace knt {

/// Spatial feature tensor of one sample, h x w x c, position-major / channel-minor.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(std::size_t h, std::size_t w, std::size_t c) : h_(h), w_(w), c_(c), data_(h * w * c, 0.0f) {}
    FeatureMap(std::size_t h, std::size_t w, std::size_t c, std::vector<float> data)
        : h_(h), w_(w), c_(c), data_(std::move(data)) {
        if (data_.size() != h_ * w_ * c_) {
            throw InvalidArgument("FeatureMap: data length does not match h*w*c");
        }
    }

    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }
    std::size_t channels() const noexcept { return c_; }
    std::size_t positions() const noexcept { return h_ * w_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<float> position(std::size_t i) noexcept { return {data_.data() + i * c_, c_}; }
    std::span<const float> position(std::size_t i) const noexcept { return {data_.data() + i * c_, c_}; }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }

    float& at(std::size_t pos, std::size_t ch) noexcept { return data_[pos * c_ + ch]; }
    float at(std::size_t pos, std::size_t ch) const noexcept { return data_[pos * c_ + ch]; }

    bool same_shape(const FeatureMap& o) const noexcept { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

private:
    std::size_t h_ = 0;
    std::size_t w_ = 0;
    std::size_t c_ = 0;
    std::vector<float> data_;
};

/// Bijection over {0..n-1}; entry i names the source index placed at slot i.
using Permutation = std::vector<std::uint32_t>;

}  // namespace knt
