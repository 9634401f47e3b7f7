#pragma once

#include <cstdint>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace duet {

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

inline void check(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

[[noreturn]] inline void fail_runtime(const std::string& msg) {
    throw std::runtime_error(msg);
}

// ----------------------------- deterministic RNG -----------------------------
// xoshiro256** seeded through splitmix64. Self-contained so streams are
// bit-stable across standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s_) {
            x += 0x9E3779B97F4A7C15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
            z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
            si = z ^ (z >> 31);
        }
        has_spare_ = false;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl_(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl_(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    float uniformf() { return float(uniform()); }

    // uniform in [lo, hi)
    float uniform_range(float lo, float hi) { return lo + (hi - lo) * uniformf(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        check(n > 0, "Rng::below: n must be positive");
        const uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // standard normal via Box-Muller with cached spare
    float normal() {
        if (has_spare_) {
            has_spare_ = false;
            return float(spare_);
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return float(r * std::cos(a));
    }

    float normal(float mean, float stddev) { return mean + stddev * normal(); }

    // deterministic child stream
    Rng fork(uint64_t stream) const {
        uint64_t mix = s_[0] ^ (stream * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
        return Rng(mix);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t rotl_(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    bool has_spare_;
    double spare_ = 0.0;
};

// ----------------------------- binary IO helpers -----------------------------
// Clip/checkpoint blobs are little-endian float32 on disk.

inline bool host_is_little_endian() {
    const uint16_t probe = 1;
    uint8_t byte0 = 0;
    std::memcpy(&byte0, &probe, 1);
    return byte0 == 1;
}

inline void write_f32_blob(std::ostream& os, const float* data, size_t count) {
    if (host_is_little_endian()) {
        os.write(reinterpret_cast<const char*>(data), std::streamsize(count * 4));
        return;
    }
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits = 0;
        std::memcpy(&bits, data + i, 4);
        char b[4] = {char(bits & 0xFF), char((bits >> 8) & 0xFF),
                     char((bits >> 16) & 0xFF), char((bits >> 24) & 0xFF)};
        os.write(b, 4);
    }
}

inline void read_f32_blob(std::istream& is, float* data, size_t count) {
    if (host_is_little_endian()) {
        is.read(reinterpret_cast<char*>(data), std::streamsize(count * 4));
    } else {
        std::vector<char> raw(count * 4);
        is.read(raw.data(), std::streamsize(count * 4));
        for (size_t i = 0; i < count; ++i) {
            const auto* b = reinterpret_cast<const uint8_t*>(raw.data() + i * 4);
            uint32_t bits = uint32_t(b[0]) | uint32_t(b[1]) << 8 |
                            uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
            std::memcpy(data + i, &bits, 4);
        }
    }
    if (!is) fail_runtime("read_f32_blob: truncated stream");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail_runtime("cannot open file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail_runtime("cannot open file for writing: " + path);
    f << text;
    if (!f) fail_runtime("write failed: " + path);
}

}  // namespace duet
