#include "tstcc/augment.hpp"

#include <algorithm>
#include <numeric>

#include "tstcc/util.hpp"

namespace tstcc {

void AugmentParams::validate() const {
    if (max_segments < 1) throw ValueError("max_segments must be at least 1");
    if (jitter_sigma_weak < 0.0 || jitter_sigma_strong < 0.0)
        throw ValueError("jitter sigmas must be non-negative");
    if (scale_sigma < 0.0) throw ValueError("scale_sigma must be non-negative");
}

namespace {

void check_batch(const TimeSeriesBatch& in) {
    if (in.x.rank() != 3)
        throw ShapeError("augmentation expects a (batch, channels, length) tensor, got " +
                         shape_str(in.x.shape()));
    if (!in.labels.empty() && in.labels.size() != in.batch())
        throw ShapeError("label count does not match batch size");
    if (!in.subjects.empty() && in.subjects.size() != in.batch())
        throw ShapeError("subject count does not match batch size");
}

}  // namespace

SegmentPermutation draw_segment_permutation(std::size_t length, std::size_t m, Rng& rng) {
    if (m < 1 || m > length)
        throw ValueError("segment count " + std::to_string(m) +
                         " out of range for series length " + std::to_string(length));
    SegmentPermutation perm;
    perm.boundaries.push_back(0);
    if (m > 1) {
        // m-1 distinct interior positions, chosen uniformly.
        std::vector<std::size_t> interior(length - 1);
        std::iota(interior.begin(), interior.end(), 1);
        rng.shuffle(interior);
        interior.resize(m - 1);
        std::sort(interior.begin(), interior.end());
        perm.boundaries.insert(perm.boundaries.end(), interior.begin(), interior.end());
    }
    perm.boundaries.push_back(length);
    perm.order.resize(m);
    std::iota(perm.order.begin(), perm.order.end(), 0);
    if (m > 1) rng.shuffle(perm.order);
    return perm;
}

std::vector<double> apply_segment_permutation(const std::vector<double>& series,
                                              const SegmentPermutation& perm) {
    if (perm.boundaries.size() != perm.order.size() + 1 || perm.boundaries.front() != 0 ||
        perm.boundaries.back() != series.size())
        throw ValueError("segment permutation does not cover the series");
    std::vector<double> out;
    out.reserve(series.size());
    for (std::size_t seg : perm.order)
        out.insert(out.end(), series.begin() + perm.boundaries[seg],
                   series.begin() + perm.boundaries[seg + 1]);
    return out;
}

std::pair<std::vector<double>, SegmentPermutation> segment_permute(
    const std::vector<double>& series, std::size_t m, Rng& rng) {
    SegmentPermutation perm = draw_segment_permutation(series.size(), m, rng);
    return {apply_segment_permutation(series, perm), perm};
}

TimeSeriesBatch weak_augment(const TimeSeriesBatch& in, const AugmentParams& p, const Rng& rng) {
    p.validate();
    check_batch(in);
    const std::size_t b = in.batch(), c = in.channels(), l = in.length();
    std::vector<double> out(in.x.data());
    for (std::size_t i = 0; i < b; ++i) {
        Rng sample_rng = rng.split(i);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double s = sample_rng.normal(p.scale_mean, p.scale_sigma);
            double* row = out.data() + (i * c + ch) * l;
            for (std::size_t t = 0; t < l; ++t) {
                row[t] *= s;
                // Skipping the add when sigma is zero keeps identity configs
                // bit-identical.
                if (p.jitter_sigma_weak > 0.0)
                    row[t] += sample_rng.normal(0.0, p.jitter_sigma_weak);
            }
        }
    }
    return {Tensor::from_data(in.x.shape(), std::move(out)), in.labels, in.subjects};
}

TimeSeriesBatch strong_augment(const TimeSeriesBatch& in, const AugmentParams& p, const Rng& rng) {
    p.validate();
    check_batch(in);
    const std::size_t b = in.batch(), c = in.channels(), l = in.length();
    if (p.max_segments > l)
        throw ValueError("max_segments " + std::to_string(p.max_segments) +
                         " exceeds series length " + std::to_string(l));
    std::vector<double> out(b * c * l);
    const std::vector<double>& src = in.x.data();
    for (std::size_t i = 0; i < b; ++i) {
        Rng sample_rng = rng.split(i);
        const auto m = static_cast<std::size_t>(
            sample_rng.uniform_int(1, static_cast<std::int64_t>(p.max_segments)));
        const SegmentPermutation perm = draw_segment_permutation(l, m, sample_rng);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* row_in = src.data() + (i * c + ch) * l;
            double* row_out = out.data() + (i * c + ch) * l;
            std::size_t pos = 0;
            for (std::size_t seg : perm.order)
                for (std::size_t t = perm.boundaries[seg]; t < perm.boundaries[seg + 1]; ++t)
                    row_out[pos++] = row_in[t];
        }
        if (p.jitter_sigma_strong > 0.0)
            for (std::size_t j = i * c * l; j < (i + 1) * c * l; ++j)
                out[j] += sample_rng.normal(0.0, p.jitter_sigma_strong);
    }
    return {Tensor::from_data(in.x.shape(), std::move(out)), in.labels, in.subjects};
}

}  // namespace tstcc
