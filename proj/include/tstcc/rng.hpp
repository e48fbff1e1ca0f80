#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace tstcc {

// Counter-based deterministic generator (splitmix64 core). Draw i from key k
// is mix64(k + i*GAMMA), so sequences are identical on every platform and
// child streams obtained via split() are independent of the parent's
// position. Augmentation code splits one stream per sample, which keeps the
// draws reproducible no matter how samples are ordered or parallelized.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(seed) {}

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; two uniform draws per call.
    double normal();
    double normal(double mean, double sigma);

    // Uniform integer in [lo, hi], both inclusive. Rejection sampled.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Child stream; does not advance this generator.
    Rng split(std::uint64_t stream) const;

    std::uint64_t key() const { return key_; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace tstcc
