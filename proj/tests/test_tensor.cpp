#include <doctest.h>

#include <cmath>
#include <limits>

#include "padapt/rng.hpp"
#include "padapt/tensor.hpp"

using namespace padapt;

TEST_CASE("tensor shape and data stay consistent") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        CHECK(t[i] == 0.0);
    }

    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("tensor helpers check shapes") {
    Tensor a({2}, {1.0, 2.0});
    Tensor b({2}, {3.0, 4.0});
    const Tensor sum = add(a, b);
    CHECK(sum[0] == 4.0);
    CHECK(sum[1] == 6.0);
    const Tensor diff = subtract(b, a);
    CHECK(diff[0] == 2.0);
    CHECK(diff[1] == 2.0);

    Tensor c({3});
    CHECK_THROWS_AS(add(a, c), ShapeError);
    CHECK_THROWS_AS(add_scaled_inplace(a, c, 1.0), ShapeError);
}

TEST_CASE("tensor finiteness probe") {
    Tensor t({2}, {1.0, 2.0});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("rng streams are deterministic and distinct per tag") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.uniform() == b.uniform());
    }
    CHECK(Rng::derive(42, "one") != Rng::derive(42, "two"));
    CHECK(Rng::derive(42, "one") == Rng::derive(42, "one"));
}

TEST_CASE("rng normal moments are sane") {
    Rng rng(7);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng poisson matches its rate") {
    Rng rng(11);
    const double lambda = 6.0;
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        sum += rng.poisson(lambda);
    }
    CHECK(sum / n == doctest::Approx(lambda).epsilon(0.03));
    CHECK(rng.poisson(0.0) == 0);
}

TEST_CASE("rng uniform_int covers its range inclusively") {
    Rng rng(3);
    bool saw_lo = false, saw_hi = false;
    for (int i = 0; i < 1000; ++i) {
        const int v = rng.uniform_int(-2, 2);
        CHECK(v >= -2);
        CHECK(v <= 2);
        saw_lo = saw_lo || v == -2;
        saw_hi = saw_hi || v == 2;
    }
    CHECK(saw_lo);
    CHECK(saw_hi);
}
