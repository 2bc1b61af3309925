#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <thread>
#include <vector>

#include "hdi/rng.hpp"
#include "hdi/stats.hpp"

using hdi::RngStream;

TEST_CASE("draw sequence is a pure function of (seed, rep, label)") {
    RngStream a(42, 7, "data");
    RngStream b(42, 7, "data");
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    RngStream c(42, 7, "cv_folds");
    RngStream d(42, 8, "data");
    RngStream e(43, 7, "data");
    RngStream f(42, 7, "data");
    bool all_same_c = true, all_same_d = true, all_same_e = true;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t x = f.next_u64();
        all_same_c &= (c.next_u64() == x);
        all_same_d &= (d.next_u64() == x);
        all_same_e &= (e.next_u64() == x);
    }
    REQUIRE_FALSE(all_same_c);
    REQUIRE_FALSE(all_same_d);
    REQUIRE_FALSE(all_same_e);
}

TEST_CASE("streams are independent of thread scheduling") {
    // draw the same streams concurrently and serially; bitwise identical
    std::vector<std::vector<std::uint64_t>> serial(8), parallel(8);
    for (int s = 0; s < 8; ++s) {
        RngStream r(99, s, "data");
        for (int i = 0; i < 256; ++i) serial[s].push_back(r.next_u64());
    }
    std::vector<std::thread> pool;
    for (int s = 0; s < 8; ++s)
        pool.emplace_back([&, s]() {
            RngStream r(99, s, "data");
            for (int i = 0; i < 256; ++i) parallel[s].push_back(r.next_u64());
        });
    for (auto& t : pool) t.join();
    REQUIRE(serial == parallel);
}

TEST_CASE("uniforms live strictly inside (0,1)") {
    RngStream r(1, 0, "u");
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("normal moments") {
    RngStream r(2024, 0, "n");
    const int n = 200000;
    double s1 = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s1 += z;
        s2 += z * z;
        s4 += z * z * z * z;
    }
    REQUIRE(std::fabs(s1 / n) < 0.01);
    REQUIRE(std::fabs(s2 / n - 1.0) < 0.02);
    REQUIRE(std::fabs(s4 / n - 3.0) < 0.15);
}

TEST_CASE("scaled t(5) has unit variance") {
    RngStream r(7, 3, "t");
    const int n = 200000;
    double s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = r.t5_scaled();
        s2 += z * z;
    }
    // var(t5/sqrt(5/3)) = 1; heavy tails widen the MC band
    REQUIRE(std::fabs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("inverse normal CDF against closed-form checkpoints") {
    // oracle values computed with 30-digit arithmetic
    REQUIRE(hdi::inv_normal_cdf(0.95) == Catch::Approx(1.64485362695147271486).epsilon(1e-12));
    REQUIRE(hdi::inv_normal_cdf(0.975) == Catch::Approx(1.95996398454005423552).epsilon(1e-12));
    REQUIRE(hdi::inv_normal_cdf(0.5) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(hdi::inv_normal_cdf(0.05) == Catch::Approx(-1.64485362695147271486).epsilon(1e-12));
    // round trip through the cdf; above z ~ 5 the complement 1-p loses
    // precision in doubles, so the upper tail is checked via small p instead
    for (double z = -8.0; z <= 5.0; z += 0.25) {
        const double p = hdi::normal_cdf(z);
        if (p > 0.0 && p < 1.0) REQUIRE(hdi::inv_normal_cdf(p) == Catch::Approx(z).margin(1e-9));
    }
    // far-tail branch (r > 5) against frozen 40-digit oracle values
    REQUIRE(hdi::inv_normal_cdf(1e-15) == Catch::Approx(-7.9413453261709967810).margin(1e-9));
    REQUIRE(hdi::inv_normal_cdf(1e-30) == Catch::Approx(-11.464024688443377438).margin(1e-9));
    REQUIRE(hdi::inv_normal_cdf(1e-100) == Catch::Approx(-21.273453560965324295).margin(1e-8));
    REQUIRE(hdi::inv_normal_cdf(1e-5) == Catch::Approx(-4.2648907939228246285).margin(1e-10));
    REQUIRE(hdi::inv_normal_cdf(0.3) == Catch::Approx(-0.52440051270804078404).margin(1e-12));
    REQUIRE_THROWS_AS(hdi::inv_normal_cdf(0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(hdi::inv_normal_cdf(1.0), std::invalid_argument);
}
