#include "tstcc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "testkit.hpp"
#include "tstcc/rng.hpp"
#include "tstcc/util.hpp"

using namespace tstcc;

namespace {

TimeSeriesBatch make_batch(Rng& r, std::size_t b, std::size_t c, std::size_t l) {
    std::vector<double> v(b * c * l);
    for (double& x : v) x = r.uniform(-2.0, 2.0);
    TimeSeriesBatch out;
    out.x = Tensor::from_data({b, c, l}, std::move(v));
    for (std::size_t i = 0; i < b; ++i) {
        out.labels.push_back(static_cast<int>(i % 3));
        out.subjects.push_back(static_cast<int>(i % 5));
    }
    return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

std::vector<double> channel_of(const TimeSeriesBatch& tb, std::size_t i, std::size_t ch) {
    const std::size_t l = tb.length();
    const double* p = tb.x.data().data() + (i * tb.channels() + ch) * l;
    return std::vector<double>(p, p + l);
}

}  // namespace

static void test_weak_augment() {
    Rng r(100);
    TimeSeriesBatch in = make_batch(r, 4, 3, 20);

    // Degenerate draws: scale fixed at 2, no jitter -> exactly 2x.
    AugmentParams twice{10, 0.0, 0.8, 2.0, 0.0};
    TimeSeriesBatch doubled = weak_augment(in, twice, Rng(7));
    for (std::size_t i = 0; i < in.x.numel(); ++i)
        REQUIRE(doubled.x.data()[i] == 2.0 * in.x.data()[i]);
    REQUIRE(doubled.labels == in.labels);
    REQUIRE(doubled.subjects == in.subjects);

    // Identity configuration is bit-identical.
    AugmentParams ident{10, 0.0, 0.8, 1.0, 0.0};
    REQUIRE(bit_equal(weak_augment(in, ident, Rng(7)).x, in.x));

    // Same seed, same output.
    AugmentParams noisy{10, 0.05, 0.8, 2.0, 0.1};
    TimeSeriesBatch a = weak_augment(in, noisy, Rng(21));
    TimeSeriesBatch b = weak_augment(in, noisy, Rng(21));
    REQUIRE(bit_equal(a.x, b.x));
    REQUIRE(!bit_equal(weak_augment(in, noisy, Rng(22)).x, a.x));

    // Monte Carlo moments of the jitter at sigma = 0.05 over 1e5 elements:
    // with the scale pinned to 1 the residual out - x is pure jitter.
    Rng big(3);
    TimeSeriesBatch wide = make_batch(big, 10, 2, 5000);
    AugmentParams jit{10, 0.05, 0.8, 1.0, 0.0};
    TimeSeriesBatch out = weak_augment(wide, jit, Rng(99));
    double s1 = 0.0, s2 = 0.0;
    const std::size_t n = wide.x.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = out.x.data()[i] - wide.x.data()[i];
        s1 += d;
        s2 += d * d;
    }
    const double mean = s1 / n;
    const double sd = std::sqrt(s2 / n - mean * mean);
    REQUIRE(std::abs(mean) < 0.002);
    REQUIRE(std::abs(sd - 0.05) < 0.005);

    // The scale is drawn once per sample-channel: within a channel the ratio
    // out/x is a constant, and channels get different draws.
    AugmentParams sc{10, 0.0, 0.8, 2.0, 0.1};
    TimeSeriesBatch scaled = weak_augment(in, sc, Rng(5));
    std::set<long long> distinct;
    for (std::size_t i = 0; i < in.batch(); ++i)
        for (std::size_t ch = 0; ch < in.channels(); ++ch) {
            const std::vector<double> xin = channel_of(in, i, ch);
            const std::vector<double> xout = channel_of(scaled, i, ch);
            const double ratio = xout[0] / xin[0];
            for (std::size_t t = 0; t < xin.size(); ++t)
                REQUIRE_CLOSE(xout[t], ratio * xin[t], 1e-12);
            REQUIRE(std::abs(ratio - 2.0) < 1.0);  // plausible Normal(2, 0.1) draw
            long long key;
            std::memcpy(&key, &ratio, sizeof key);
            distinct.insert(key);
        }
    REQUIRE(distinct.size() == in.batch() * in.channels());
}

static void test_strong_augment() {
    Rng r(200);
    TimeSeriesBatch in = make_batch(r, 6, 2, 30);

    // Single segment, no jitter: identity.
    AugmentParams ident{1, 0.05, 0.0, 2.0, 0.1};
    REQUIRE(bit_equal(strong_augment(in, ident, Rng(11)).x, in.x));

    // Jitter off: the permutation preserves each channel's value multiset.
    AugmentParams perm_only{10, 0.05, 0.0, 2.0, 0.1};
    TimeSeriesBatch shuffled = strong_augment(in, perm_only, Rng(12));
    REQUIRE(shuffled.labels == in.labels);
    REQUIRE(shuffled.subjects == in.subjects);
    bool any_moved = false;
    for (std::size_t i = 0; i < in.batch(); ++i)
        for (std::size_t ch = 0; ch < in.channels(); ++ch) {
            std::vector<double> a = channel_of(in, i, ch);
            std::vector<double> b = channel_of(shuffled, i, ch);
            if (a != b) any_moved = true;
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            REQUIRE(a == b);
        }
    REQUIRE(any_moved);

    // Channels of one sample share the permutation: a constant cross-channel
    // offset survives the shuffle position by position.
    std::vector<double> aligned(2 * 2 * 24);
    Rng ar(77);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t t = 0; t < 24; ++t) {
            const double v = ar.uniform(-1.0, 1.0);
            aligned[(i * 2 + 0) * 24 + t] = v;
            aligned[(i * 2 + 1) * 24 + t] = v + 100.0;
        }
    TimeSeriesBatch ab{Tensor::from_data({2, 2, 24}, std::move(aligned)), {}, {}};
    TimeSeriesBatch as = strong_augment(ab, perm_only, Rng(13));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t t = 0; t < 24; ++t)
            REQUIRE_CLOSE(as.x.at({i, 1, t}) - as.x.at({i, 0, t}), 100.0, 1e-12);

    // Determinism and distinct streams.
    AugmentParams full{10, 0.05, 0.8, 2.0, 0.1};
    REQUIRE(bit_equal(strong_augment(in, full, Rng(31)).x, strong_augment(in, full, Rng(31)).x));
    REQUIRE(!bit_equal(strong_augment(in, full, Rng(31)).x, strong_augment(in, full, Rng(32)).x));

    // Segment-count cap above the series length is a parameter error.
    AugmentParams toobig{31, 0.05, 0.8, 2.0, 0.1};
    REQUIRE_THROWS_AS(strong_augment(in, toobig, Rng(1)), ValueError);
    AugmentParams zero_m{0, 0.05, 0.8, 2.0, 0.1};
    REQUIRE_THROWS_AS(strong_augment(in, zero_m, Rng(1)), ValueError);
    AugmentParams neg_sigma{10, -0.1, 0.8, 2.0, 0.1};
    REQUIRE_THROWS_AS(weak_augment(in, neg_sigma, Rng(1)), ValueError);
}

static void test_segment_permute() {
    Rng r(300);
    std::vector<double> series(178);
    for (double& v : series) v = r.uniform(-1.0, 1.0);

    // m = 1: identity permutation.
    Rng r1(1);
    auto [same, rec1] = segment_permute(series, 1, r1);
    REQUIRE(same == series);
    REQUIRE(rec1.order == std::vector<std::size_t>({0}));
    REQUIRE(rec1.boundaries == std::vector<std::size_t>({0, 178}));

    // m = length: element-level permutation, multiset preserved.
    Rng r2(2);
    auto [shuf, rec2] = segment_permute(series, series.size(), r2);
    REQUIRE(rec2.order.size() == series.size());
    std::vector<double> a = series, b = shuf;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    REQUIRE(a == b);
    REQUIRE(shuf != series);

    // Fixed seed gives an identical record across runs.
    Rng r3a(42), r3b(42);
    auto [s1, rec_a] = segment_permute(series, 7, r3a);
    auto [s2, rec_b] = segment_permute(series, 7, r3b);
    REQUIRE(rec_a.boundaries == rec_b.boundaries);
    REQUIRE(rec_a.order == rec_b.order);
    REQUIRE(s1 == s2);

    // Worked configuration: cap 12 on a length-178 series always yields m
    // segments with distinct ascending boundaries covering the series.
    std::set<std::size_t> seen_m;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng g(seed);
        const auto m = static_cast<std::size_t>(g.uniform_int(1, 12));
        const SegmentPermutation rec = draw_segment_permutation(178, m, g);
        seen_m.insert(m);
        REQUIRE(rec.order.size() == m);
        REQUIRE(rec.boundaries.size() == m + 1);
        REQUIRE(rec.boundaries.front() == 0);
        REQUIRE(rec.boundaries.back() == 178);
        std::size_t total = 0;
        for (std::size_t k = 0; k < m; ++k) {
            REQUIRE(rec.boundaries[k] < rec.boundaries[k + 1]);
            total += rec.boundaries[k + 1] - rec.boundaries[k];
        }
        REQUIRE(total == 178);
        std::vector<std::size_t> ord = rec.order;
        std::sort(ord.begin(), ord.end());
        for (std::size_t k = 0; k < m; ++k) REQUIRE(ord[k] == k);
    }
    REQUIRE(seen_m.size() == 12);

    Rng r4(4);
    REQUIRE_THROWS_AS(segment_permute(series, 0, r4), ValueError);
    REQUIRE_THROWS_AS(segment_permute(series, 179, r4), ValueError);
}

int main() {
    test_weak_augment();
    test_strong_augment();
    test_segment_permute();
    TEST_SUMMARY("augmentations");
    return 0;
}
