#pragma once

// Shared plumbing: error taxonomy, deterministic RNG, seed derivation,
// FNV-1a hashing and little-endian byte encoding used by the file formats.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace codesum {

// ----------------------------- error taxonomy -----------------------------
// contract_error:          caller violated a documented precondition (a bug).
// degenerate_input_error:  input is structurally valid but mathematically
//                          unusable (zero-norm vector, all-pad targets).
// config_error:            bad configuration / CLI usage.        exit code 2
// data_error:              corpus or artifact file problems.     exit code 3
// numeric_error:           non-finite values, divergence.        exit code 4

struct contract_error : std::logic_error {
    using std::logic_error::logic_error;
};

struct degenerate_input_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ----------------------------- hashing -----------------------------

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

class Fnv1a64 {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= kFnvPrime;
        }
    }

    void update(std::string_view s) { update(s.data(), s.size()); }

    void update_u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        update(b, 8);
    }

    void update_f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        update_u64(bits);
    }

    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = kFnvOffset;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    Fnv1a64 h;
    h.update(s);
    return h.digest();
}

// ----------------------------- deterministic RNG -----------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// All randomness in the project flows from one root seed.  Streams are
// derived by hashing a tag plus counters, so independent consumers never
// share state and every run is reproducible from the root seed alone.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    Fnv1a64 h;
    h.update_u64(root);
    h.update(tag);
    h.update_u64(a);
    h.update_u64(b);
    std::uint64_t s = h.digest();
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // Box-Muller; 1-u keeps the log argument in (0, 1]
        const double u = 1.0 - uniform();
        const double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 6.283185307179586476925286766559 * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::size_t below(std::size_t n) {
        if (n == 0) throw contract_error("Rng::below: n must be positive");
        return static_cast<std::size_t>(next_u64() % n);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() <= 1) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::swap(v[i], v[below(i + 1)]);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    return idx;
}

// ----------------------------- little-endian byte IO -----------------------------

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

class ByteReader {
public:
    ByteReader(const std::string& buf, std::string_view what)
        : buf_(buf), what_(what) {}

    std::uint32_t get_u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t get_u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    float get_f32() {
        std::uint32_t bits = get_u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double get_f64() {
        std::uint64_t bits = get_u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string get_bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == buf_.size(); }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size())
            throw data_error(std::string(what_) + ": truncated file");
    }

    const std::string& buf_;
    std::string_view what_;
    std::size_t pos_ = 0;
};

}  // namespace codesum
