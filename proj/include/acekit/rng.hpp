#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace acekit {

// Counter-based random stream. A stream is identified by an immutable
// 64-bit key derived from (root_seed, stream_id); draws are a keyed hash
// of an incrementing counter, so replaying a stream never depends on what
// other streams did, and derived substreams are stable across execution
// order and thread count.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}

    RngStream(std::uint64_t root_seed, std::uint64_t stream_id)
        : key_(mix(mix(root_seed) ^ (0xd2b74407b1ce6e93ULL * (stream_id + 1)))),
          counter_(0) {}

    // Child stream keyed off (key, tag). Independent of how many draws the
    // parent has consumed.
    RngStream derive(std::uint64_t tag) const {
        RngStream child;
        child.key_ = mix(key_ ^ mix(0x8bb84b93962eacc9ULL + tag));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() {
        counter_ += 0x9e3779b97f4a7c15ULL;
        return mix(key_ + counter_);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; two draws per value, no cached state.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Unbiased integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Fisher-Yates; self-contained so shuffles do not depend on the
    // standard library's unspecified algorithm.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t key() const { return key_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

inline RngStream rng_stream(std::uint64_t root_seed, std::uint64_t stream_id) {
    return RngStream(root_seed, stream_id);
}

}  // namespace acekit
