#include "tstcc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "testkit.hpp"
#include "tstcc/util.hpp"

using tstcc::Rng;

// Published splitmix64 outputs (Vigna's reference sequence).
static void test_known_vectors() {
    Rng r0(0);
    REQUIRE(r0.next_u64() == 0xe220a8397b1dcdafull);
    REQUIRE(r0.next_u64() == 0x6e789e6aa1b965f4ull);
    REQUIRE(r0.next_u64() == 0x06c45d188009454full);
    Rng r42(42);
    REQUIRE(r42.next_u64() == 0xbdd732262feb6e95ull);
    REQUIRE(r42.next_u64() == 0x28efe333b266f103ull);
}

static void test_determinism() {
    Rng a(123456789), b(123456789);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());
    for (int i = 0; i < 100; ++i) REQUIRE(a.normal() == b.normal());
}

static void test_split_independence() {
    Rng a(7), b(7);
    // Drawing from children must not disturb the parent stream.
    Rng c1 = a.split(1);
    Rng c2 = a.split(2);
    for (int i = 0; i < 10; ++i) {
        (void)c1.next_u64();
        (void)c2.next_u64();
    }
    for (int i = 0; i < 50; ++i) REQUIRE(a.next_u64() == b.next_u64());
    // Distinct streams, reproducible children.
    Rng d1 = b.split(1);
    REQUIRE(d1.next_u64() != c2.split(99).next_u64());
    Rng e1 = b.split(1);
    REQUIRE(e1.next_u64() == b.split(1).next_u64());
    REQUIRE(b.split(1).next_u64() != b.split(2).next_u64());
}

static void test_uniform_range_and_mean() {
    Rng r(2024);
    double s = 0.0, mn = 1.0, mx = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0 && u < 1.0);
        s += u;
        mn = std::min(mn, u);
        mx = std::max(mx, u);
    }
    REQUIRE_CLOSE(s / n, 0.5, 0.01);
    REQUIRE(mn < 0.01 && mx > 0.99);
    double lo = r.uniform(-3.0, 5.0);
    REQUIRE(lo >= -3.0 && lo < 5.0);
}

static void test_normal_moments() {
    Rng r(99);
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double v = r.normal();
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    REQUIRE_CLOSE(mean, 0.0, 0.02);
    REQUIRE_CLOSE(var, 1.0, 0.03);
    Rng r2(99);
    double shifted = 0.0;
    for (int i = 0; i < 1000; ++i) shifted += r2.normal(10.0, 0.5);
    REQUIRE_CLOSE(shifted / 1000.0, 10.0, 0.1);
}

static void test_uniform_int() {
    Rng r(5);
    std::vector<int> counts(6, 0);
    for (int i = 0; i < 60000; ++i) {
        std::int64_t v = r.uniform_int(2, 7);
        REQUIRE(v >= 2 && v <= 7);
        counts[static_cast<std::size_t>(v - 2)]++;
    }
    for (int c : counts) REQUIRE(c > 9000 && c < 11000);  // 10000 expected per bin
    REQUIRE(r.uniform_int(4, 4) == 4);
    REQUIRE_THROWS_AS(r.uniform_int(3, 2), tstcc::ValueError);
}

static void test_shuffle_permutation() {
    Rng r(31337);
    std::vector<int> v(257);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> orig = v;
    r.shuffle(v);
    REQUIRE(v != orig);  // 257! to 1 odds say so
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == orig);
    // Reproducible for equal seeds.
    Rng r2(31337);
    std::vector<int> w = orig;
    r2.shuffle(w);
    REQUIRE(w == v);
}

int main() {
    test_known_vectors();
    test_determinism();
    test_split_independence();
    test_uniform_range_and_mean();
    test_normal_moments();
    test_uniform_int();
    test_shuffle_permutation();
    TEST_SUMMARY("rng");
    return 0;
}
