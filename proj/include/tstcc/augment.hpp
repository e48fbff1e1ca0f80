#pragma once

// The two stochastic views fed to the contrastive objectives: a weak
// jitter-and-scale transform and a strong permutation-and-jitter transform.
// Both are pure functions of (batch, params, rng); every sample consumes an
// independently split stream, so results do not depend on evaluation order.

#include <cstddef>
#include <utility>
#include <vector>

#include "tstcc/rng.hpp"
#include "tstcc/tensor.hpp"

namespace tstcc {

// One minibatch of raw series: values shaped (batch, channels, length) with
// optional integer labels and subject ids carried alongside.
struct TimeSeriesBatch {
    Tensor x;
    std::vector<int> labels;
    std::vector<int> subjects;

    std::size_t batch() const { return x.dim(0); }
    std::size_t channels() const { return x.dim(1); }
    std::size_t length() const { return x.dim(2); }
};

struct AugmentParams {
    std::size_t max_segments = 10;   // strong view: maximum segment count M
    double jitter_sigma_weak = 0.05;
    double jitter_sigma_strong = 0.8;
    double scale_mean = 2.0;
    double scale_sigma = 0.1;

    void validate() const;
};

// Segment boundaries (m+1 ascending offsets from 0 to length) plus the order
// in which the m segments are emitted.
struct SegmentPermutation {
    std::vector<std::size_t> boundaries;
    std::vector<std::size_t> order;
};

// Chooses m-1 distinct interior split points uniformly and a uniform shuffle
// of the resulting segments.
SegmentPermutation draw_segment_permutation(std::size_t length, std::size_t m, Rng& rng);

std::vector<double> apply_segment_permutation(const std::vector<double>& series,
                                              const SegmentPermutation& perm);

// Convenience wrapper for a single series; returns the shuffled series and
// the permutation record that produced it.
std::pair<std::vector<double>, SegmentPermutation> segment_permute(
    const std::vector<double>& series, std::size_t m, Rng& rng);

// s * x + noise with s ~ Normal(scale_mean, scale_sigma^2) drawn once per
// sample-channel and noise ~ Normal(0, jitter_sigma_weak^2) per element.
TimeSeriesBatch weak_augment(const TimeSeriesBatch& in, const AugmentParams& p, const Rng& rng);

// Split into m ~ Uniform{1..M} segments at distinct interior points, shuffle
// the segments (all channels of a sample share one permutation), then add
// Normal(0, jitter_sigma_strong^2) noise per element.
TimeSeriesBatch strong_augment(const TimeSeriesBatch& in, const AugmentParams& p, const Rng& rng);

}  // namespace tstcc
