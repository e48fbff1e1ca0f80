#pragma once

// Dataset container, binary file format, deterministic splitting and label
// subsampling, synthetic labeled series generation, and CSV export.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tstcc/augment.hpp"

namespace tstcc {

// Labeled multivariate series: N samples of shape (channels, length) stored
// row-major, labels in [0, classes), optional per-sample subject ids.
struct Dataset {
    std::size_t channels = 0;
    std::size_t length = 0;
    std::size_t classes = 0;
    std::vector<double> values;  // N * channels * length
    std::vector<int> labels;     // N
    std::vector<int> subjects;   // empty or N
    std::string metadata;

    std::size_t size() const { return labels.size(); }
    bool has_subjects() const { return !subjects.empty(); }
    void validate() const;

    // Copies the listed samples into a batch / a smaller dataset.
    TimeSeriesBatch gather(const std::vector<std::size_t>& idx) const;
    Dataset subset(const std::vector<std::size_t>& idx) const;
};

// Binary TSDS container: little-endian, magic "TSDS", version, counts,
// subject flag, labels, optional subjects, values, length-prefixed metadata.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct SplitSpec {
    double train = 0.6, val = 0.2, test = 0.2;
    bool subject_wise = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SplitResult {
    Dataset train, val, test;
    std::vector<std::size_t> train_idx, val_idx, test_idx;
};

// Deterministic disjoint cover.  Random mode: shuffled indices with train
// taking round(f_train*N), val round(f_val*N), test the remainder.
// Subject-wise mode: whole subjects are dealt to the split with the largest
// remaining deficit, so no subject straddles two splits.
SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec);

// Keeps round(fraction*N) samples (at least 1); stratified mode keeps
// round(fraction*n_c) per class (at least 1 each).  Original order preserved.
Dataset label_subsample(const Dataset& ds, double fraction, bool stratified, std::uint64_t seed);

struct SynthSpec {
    std::size_t classes = 3;
    std::size_t n = 2500;
    std::size_t channels = 3;
    std::size_t length = 128;
    double noise = 0.5;         // additive Gaussian sigma before normalization
    double domain_scale = 1.0;  // global amplitude of the clean signal
    double domain_noise = 0.0;  // extra noise floor (shifted working condition)
    std::size_t subject_count = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

// Balanced labels; class c draws from generative family c % 4 (sinusoid,
// sawtooth, amplitude-modulated noise burst, AR(2) process) with band c / 4,
// plus Gaussian noise; every (sample, channel) row is z-normalized.
Dataset synth_generate(const SynthSpec& spec);

// One row per sample: id, label, subject (-1 when absent), values
// channel-major.
void export_csv(const Dataset& ds, const std::string& path);

}  // namespace tstcc
