#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

#include "rmlab/rng.hpp"

using namespace rmlab;

TEST_CASE("identical seeds produce identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(42), d(43);
    bool all_equal = true;
    for (int i = 0; i < 64; ++i) {
        if (c.next_u64() != d.next_u64()) all_equal = false;
    }
    CHECK_FALSE(all_equal);
}

TEST_CASE("derived streams are independent of each other") {
    std::uint64_t master = 1234;
    CHECK(derive_stream_seed(master, "prompts") != derive_stream_seed(master, "gold"));
    CHECK(derive_stream_seed(master, "prompts") == derive_stream_seed(master, "prompts"));
    CHECK(derive_stream_seed(master, "prompts") != derive_stream_seed(master + 1, "prompts"));

    Rng a = stream(master, "prompts");
    Rng b = stream(master, "prompts");
    CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform01 stays in [0,1) and matches its replay") {
    Rng r(7);
    Rng replay(7);
    for (int i = 0; i < 10000; ++i) {
        double u = r.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(u == replay.uniform01());
    }
}

TEST_CASE("below is unbiased over small ranges and in-range") {
    Rng r(99);
    std::vector<int> counts(5, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        std::uint64_t v = r.below(5);
        REQUIRE(v < 5);
        counts[v]++;
    }
    for (int c : counts) {
        CHECK(std::abs(c - draws / 5) < 1200);
    }
    CHECK_THROWS_AS(r.below(0), std::invalid_argument);
}

TEST_CASE("normal draws have the requested moments") {
    Rng r(2024);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = r.normal();
        sum += z;
        sum2 += z * z;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);

    Rng r2(2024);
    Rng r3(2024);
    for (int i = 0; i < 100; ++i) {
        CHECK(r2.normal(3.0, 2.0) == 3.0 + 2.0 * r3.normal());
    }
}

TEST_CASE("shuffle is a permutation and deterministic per seed") {
    std::vector<int> v(20);
    for (int i = 0; i < 20; ++i) v[i] = i;
    Rng r(5);
    r.shuffle(v);
    std::set<int> seen(v.begin(), v.end());
    CHECK(seen.size() == 20);

    std::vector<int> w(20);
    for (int i = 0; i < 20; ++i) w[i] = i;
    Rng r2(5);
    r2.shuffle(w);
    CHECK(v == w);
}

TEST_CASE("sample_without_replacement yields distinct in-range indices") {
    Rng r(11);
    auto s = r.sample_without_replacement(10, 4);
    REQUIRE(s.size() == 4);
    std::set<std::size_t> distinct(s.begin(), s.end());
    CHECK(distinct.size() == 4);
    for (auto idx : s) CHECK(idx < 10);

    auto all = r.sample_without_replacement(5, 5);
    std::set<std::size_t> full(all.begin(), all.end());
    CHECK(full.size() == 5);
    CHECK_THROWS_AS(r.sample_without_replacement(3, 4), std::invalid_argument);
}

TEST_CASE("gumbel draws are finite and deterministic") {
    Rng a(321), b(321);
    for (int i = 0; i < 1000; ++i) {
        double g = a.gumbel();
        CHECK(std::isfinite(g));
        CHECK(g == b.gumbel());
    }
}
