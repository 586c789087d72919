#include "knt/keying.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace knt {

namespace {

constexpr std::size_t kMaxLabelBytes = 64;

std::uint64_t load_le64(const std::uint8_t* p, std::size_t n) noexcept {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

std::uint64_t absorb(std::uint64_t h, std::uint64_t chunk) noexcept {
    std::uint64_t state = h ^ chunk;
    return splitmix::next(state);
}

int hex_value(char ch) {
    if (ch >= '0' && ch <= '9') return ch - '0';
    if (ch >= 'a' && ch <= 'f') return ch - 'a' + 10;
    if (ch >= 'A' && ch <= 'F') return ch - 'A' + 10;
    return -1;
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

MasterKey MasterKey::from_hex(std::string_view hex) {
    if (hex.size() != 2 * kBytes) {
        throw InvalidArgument("key must be exactly 64 hex characters, got " + std::to_string(hex.size()));
    }
    std::array<std::uint8_t, kBytes> bytes{};
    for (std::size_t i = 0; i < kBytes; ++i) {
        const int hi = hex_value(hex[2 * i]);
        const int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) {
            throw InvalidArgument("key contains a non-hex character at position " + std::to_string(hi < 0 ? 2 * i : 2 * i + 1));
        }
        bytes[i] = static_cast<std::uint8_t>(hi * 16 + lo);
    }
    return MasterKey(bytes);
}

MasterKey MasterKey::from_seed(std::uint64_t seed) {
    std::array<std::uint8_t, kBytes> bytes{};
    std::uint64_t state = seed;
    for (std::size_t word = 0; word < 4; ++word) {
        const std::uint64_t v = splitmix::next(state);
        for (std::size_t b = 0; b < 8; ++b) {
            bytes[word * 8 + b] = static_cast<std::uint8_t>(v >> (8 * b));
        }
    }
    return MasterKey(bytes);
}

MasterKey MasterKey::public_key() {
    // "PUBLIC-" followed by ASCII '0' up to 32 bytes.
    std::array<std::uint8_t, kBytes> bytes{};
    constexpr std::string_view prefix = "PUBLIC-";
    for (std::size_t i = 0; i < kBytes; ++i) {
        bytes[i] = static_cast<std::uint8_t>(i < prefix.size() ? prefix[i] : '0');
    }
    return MasterKey(bytes);
}

std::string MasterKey::to_hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * kBytes);
    for (std::uint8_t b : bytes_) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

std::string MasterKey::fingerprint() const {
    static constexpr char digits[] = "0123456789abcdef";
    const std::uint64_t h = derive_seed(*this, "fingerprint");
    std::string out;
    for (int nibble = 15; nibble >= 8; --nibble) {
        out.push_back(digits[(h >> (4 * nibble)) & 0xF]);
    }
    return out;
}

std::uint64_t derive_seed(const MasterKey& key, std::string_view label) {
    if (label.empty() || label.size() > kMaxLabelBytes) {
        throw InvalidArgument("derive_seed: label must be 1.." + std::to_string(kMaxLabelBytes) + " bytes");
    }
    std::uint64_t h = 0;
    const auto& kb = key.bytes();
    for (std::size_t off = 0; off < MasterKey::kBytes; off += 8) {
        h = absorb(h, load_le64(kb.data() + off, 8));
    }
    const auto* lb = reinterpret_cast<const std::uint8_t*>(label.data());
    for (std::size_t off = 0; off < label.size(); off += 8) {
        h = absorb(h, load_le64(lb + off, std::min<std::size_t>(8, label.size() - off)));
    }
    h = absorb(h, static_cast<std::uint64_t>(label.size()));
    return splitmix::mix(h);
}

MasterKey derive_subkey(const MasterKey& master, std::uint64_t index) {
    UniformStream stream(derive_seed(master, "subkey/" + std::to_string(index)));
    std::array<std::uint8_t, MasterKey::kBytes> bytes{};
    for (std::size_t word = 0; word < 4; ++word) {
        const std::uint64_t v = stream.next();
        for (std::size_t b = 0; b < 8; ++b) {
            bytes[word * 8 + b] = static_cast<std::uint8_t>(v >> (8 * b));
        }
    }
    return MasterKey(bytes);
}

std::uint64_t combine_seeds(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t h = splitmix::mix(base + splitmix::kGamma);
    for (std::uint64_t p : parts) {
        h = absorb(h, p);
    }
    return h;
}

UniformStream::UniformStream(std::uint64_t seed) noexcept {
    std::uint64_t state = seed;
    for (auto& word : s_) {
        word = splitmix::next(state);
    }
}

UniformStream::result_type UniformStream::next() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double UniformStream::next_unit() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

float GaussianStream::next() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = static_cast<double>((uniform_.next() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(uniform_.next() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = static_cast<float>(r * std::sin(theta));
    has_spare_ = true;
    return static_cast<float>(r * std::cos(theta));
}

std::vector<float> gaussian_stream(std::uint64_t seed, std::size_t n, double stddev) {
    GaussianStream g(seed);
    const float scale = static_cast<float>(stddev);
    std::vector<float> out(n);
    for (auto& v : out) {
        v = scale * g.next();
    }
    return out;
}

Permutation key_permutation(std::uint64_t seed, std::size_t n) {
    if (n == 0) {
        throw InvalidArgument("key_permutation: n must be >= 1");
    }
    Permutation perm(n);
    for (std::size_t i = 0; i < n; ++i) {
        perm[i] = static_cast<std::uint32_t>(i);
    }
    UniformStream stream(seed);
    for (std::size_t i = n - 1; i >= 1; --i) {
        const std::size_t j = static_cast<std::size_t>(stream.next() % (i + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

}  // namespace knt
