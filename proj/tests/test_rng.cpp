#include <doctest.h>

#include <cmath>
#include <vector>

#include "hedet/rng.hpp"

using hedet::RandomStream;

TEST_CASE("same seed reproduces the sequence") {
    RandomStream a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
    RandomStream a(1), b(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += (a.next_u64() == b.next_u64());
    CHECK(same == 0);
}

TEST_CASE("child streams depend on seed, not parent state") {
    RandomStream a(7);
    RandomStream child_before = a.child("data");
    a.next_u64();
    a.next_u64();
    RandomStream child_after = a.child("data");
    for (int i = 0; i < 16; ++i) CHECK(child_before.next_u64() == child_after.next_u64());
}

TEST_CASE("named children are distinct") {
    RandomStream a(7);
    auto c1 = a.child("data");
    auto c2 = a.child("augment");
    auto c3 = a.child(std::uint64_t{0});
    auto c4 = a.child(std::uint64_t{1});
    CHECK(c1.next_u64() != c2.next_u64());
    CHECK(c3.next_u64() != c4.next_u64());
}

TEST_CASE("uniform stays in [0,1) and is centered") {
    RandomStream r(123);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("uniform(lo,hi) respects bounds") {
    RandomStream r(5);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform(-0.1, 0.1);
        CHECK(u >= -0.1);
        CHECK(u < 0.1);
    }
}

TEST_CASE("normal moments") {
    RandomStream r(99);
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("bernoulli frequency") {
    RandomStream r(11);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += r.bernoulli(0.3);
    CHECK(std::abs(hits / double(n) - 0.3) < 0.01);
}

TEST_CASE("uniform_int bounds and coverage") {
    RandomStream r(3);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 5000; ++i) {
        int k = r.uniform_int(5);
        REQUIRE(k >= 0);
        REQUIRE(k < 5);
        ++counts[static_cast<std::size_t>(k)];
    }
    for (int c : counts) CHECK(c > 800);
}

TEST_CASE("shuffle permutes deterministically") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    RandomStream r(21);
    r.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});

    std::vector<int> w{0, 1, 2, 3, 4, 5, 6, 7};
    RandomStream r2(21);
    r2.shuffle(w);
    CHECK(v == w);
}
