#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "hdi/ovb.hpp"
#include "hdi/rng.hpp"

using namespace hdi;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

OvbInputs paper_inputs(int k) {
    OvbInputs in;
    in.n = 10000;
    in.p = 4000;
    in.k = k;
    in.tau = 0.5;
    in.phi = 0.95;
    in.a = in.b = 1.0;
    in.sigma_eta = in.sigma_v = 1.0;
    return in;
}

}  // namespace

TEST_CASE("under-selection certificate at the worked thresholds") {
    const VectorXd theta = VectorXd::Constant(5, 0.05);
    const Certificate c1 = under_selection_certificate(theta, 1.0, 1.0, 0.95, 0.5, 10000, 4000);
    REQUIRE(c1.thresholds[0] == Catch::Approx(0.0525).margin(5e-4));
    REQUIRE(c1.all_below);
    REQUIRE(c1.prob_lower_single == Catch::Approx(1.0 - 1.0 / std::sqrt(4000.0)).epsilon(1e-12));
    REQUIRE(c1.prob_lower_single == Catch::Approx(0.9842).margin(1e-4));
    REQUIRE(c1.prob_lower_double == Catch::Approx(1.0 - 2.0 / std::sqrt(4000.0)).epsilon(1e-12));

    const Certificate c2 = under_selection_certificate(theta, 0.01, 1.0, 0.95, 0.5, 10000, 4000);
    REQUIRE(c2.thresholds[0] == Catch::Approx(0.525).margin(5e-3));

    VectorXd spike = theta;
    spike[2] = 10.0 * c1.thresholds[0];
    const Certificate c3 = under_selection_certificate(spike, 1.0, 1.0, 0.95, 0.5, 10000, 4000);
    REQUIRE_FALSE(c3.all_below);
}

TEST_CASE("ovb_lower_bound reproduces the worked ratios") {
    const OvbBound b5 = ovb_lower_bound(paper_inputs(5));
    REQUIRE(b5.ratio == Catch::Approx(0.52).margin(0.02));
    REQUIRE_FALSE(b5.vacuous);
    const OvbBound b1 = ovb_lower_bound(paper_inputs(1));
    REQUIRE(b1.ratio == Catch::Approx(0.12).margin(0.02));
    REQUIRE(b5.sigma_alpha_tilde == Catch::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("ovb_lower_bound agrees with a dense-grid oracle") {
    for (int k : {1, 3, 5, 8}) {
        OvbInputs in = paper_inputs(k);
        in.a = 0.8;
        in.b = 0.9;
        const OvbBound fast = ovb_lower_bound(in, 1024);
        double best = 0.0;
        const int N = 1000000;
        for (int i = 1; i <= N; ++i) {
            const double r = static_cast<double>(i) / N;
            const double v = detail::ovb_T1(in, r) * detail::ovb_T2(in, r);
            if (v > best) best = v;
        }
        REQUIRE(fast.value == Catch::Approx(best).epsilon(1e-6));
    }
}

TEST_CASE("T1 decreasing, T2 increasing in r; a -> 0 kills the bound") {
    const OvbInputs in = paper_inputs(5);
    double prev1 = std::numeric_limits<double>::infinity(), prev2 = -1.0;
    for (double r = 0.01; r <= 1.0; r += 0.01) {
        const double t1 = detail::ovb_T1(in, r), t2 = detail::ovb_T2(in, r);
        REQUIRE(t1 <= prev1);
        REQUIRE(t2 >= prev2 - 1e-15);
        prev1 = t1;
        prev2 = t2;
    }
    OvbInputs small = in;
    small.a = 1e-9;
    REQUIRE(ovb_lower_bound(small).value < 1e-9);
    OvbInputs zero = in;
    zero.a = 0.0;
    REQUIRE_THROWS_AS(ovb_lower_bound(zero), std::invalid_argument);
}

TEST_CASE("bound is invariant to the joint rescaling that keeps (a,b) fixed") {
    OvbInputs in = paper_inputs(5);
    in.s_over_n = 1.0;
    const OvbBound b1 = ovb_lower_bound(in);
    in.s_over_n = 4.0;    // covariates scaled, coefficients rescaled, a b fixed
    const OvbBound b2 = ovb_lower_bound(in);
    REQUIRE(b1.value == b2.value);
    REQUIRE(b1.r_star == b2.r_star);
}

TEST_CASE("vacuous bound at hostile dimensions is reported as 0 with a flag") {
    OvbInputs in;
    in.n = 50;
    in.p = 3;
    in.k = 40;
    in.tau = 0.5;
    in.phi = 1.0;
    in.a = in.b = 1.0;
    in.sigma_eta = in.sigma_v = 1.0;
    const OvbBound b = ovb_lower_bound(in);
    REQUIRE(b.vacuous);
    REQUIRE(b.value == 0.0);
}

TEST_CASE("absence-of-OVB check is the either/or of the coefficient multipliers") {
    REQUIRE(absence_of_ovb_check(3.1, 1.0));
    REQUIRE(absence_of_ovb_check(1.0, 3.1));
    REQUIRE(absence_of_ovb_check(-3.5, 0.1));
    REQUIRE_FALSE(absence_of_ovb_check(1.0, 1.0));
    REQUIRE_FALSE(absence_of_ovb_check(0.1, 0.1));
    REQUIRE_FALSE(absence_of_ovb_check(3.0, 3.0));
}

TEST_CASE("sparsity diagnostics") {
    const SparsityDiagnostics d = sparsity_diagnostics(10000, 4000, 5);
    REQUIRE(d.klogp_over_sqrtn == Catch::Approx(0.4147).margin(1e-3));
    REQUIRE(d.klogp_over_n == Catch::Approx(0.004147).margin(1e-5));
    REQUIRE(sparsity_diagnostics(10000, 4000, 1).klogp_over_sqrtn == Catch::Approx(0.08294).margin(1e-4));
    const SparsityDiagnostics z = sparsity_diagnostics(100, 50, 0);
    REQUIRE(z.klogp_over_n == 0.0);
    REQUIRE(z.klogp_over_sqrtn == 0.0);
}

TEST_CASE("incoherence phi") {
    // block-orthogonal: X_K orthogonal to X_Kc gives phi = 1 exactly
    const int n = 16;
    MatrixXd X(n, 4);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = (__builtin_popcount(i & 1) % 2 == 0) ? 1 : -1;
        X(i, 1) = (__builtin_popcount(i & 2) % 2 == 0) ? 1 : -1;
        X(i, 2) = (__builtin_popcount(i & 3) % 2 == 0) ? 1 : -1;
        X(i, 3) = (__builtin_popcount(i & 4) % 2 == 0) ? 1 : -1;
    }
    REQUIRE(incoherence_phi(X, {0, 1}) == Catch::Approx(1.0).margin(1e-12));

    // k = 1 with standardized columns: 1 - phi is the max absolute correlation
    RngStream r(61, 0, "phi");
    MatrixXd Xc(200, 5);
    for (int i = 0; i < 200; ++i)
        for (int j = 0; j < 5; ++j) Xc(i, j) = r.normal();
    Xc.col(1) = 0.6 * Xc.col(0) + 0.8 * Xc.col(1);
    for (int j = 0; j < 5; ++j) Xc.col(j) /= std::sqrt(Xc.col(j).squaredNorm() / 200.0);
    double max_corr = 0.0;
    for (int j = 1; j < 5; ++j)
        max_corr = std::max(max_corr, std::fabs(Xc.col(0).dot(Xc.col(j))) / 200.0);
    REQUIRE(1.0 - incoherence_phi(Xc, {0}) == Catch::Approx(max_corr).margin(1e-10));

    // duplicated column inside and outside K: phi = 0
    MatrixXd Xd(50, 3);
    for (int i = 0; i < 50; ++i) {
        Xd(i, 0) = r.normal();
        Xd(i, 1) = r.normal();
    }
    Xd.col(2) = Xd.col(0);
    REQUIRE(incoherence_phi(Xd, {0}) == Catch::Approx(0.0).margin(1e-12));

    MatrixXd sing(10, 2);
    sing.col(0) = VectorXd::Zero(10);
    sing.col(1) = VectorXd::Ones(10);
    REQUIRE_THROWS_AS(incoherence_phi(sing, {0}), std::runtime_error);
    REQUIRE_THROWS_AS(incoherence_phi(Xd, {}), std::invalid_argument);
}

TEST_CASE("scaling envelopes") {
    // upper_I worked value: sigma_v = sigma_eta = 1, k log p/n = 2, r = 0.5
    // -> max{1*1, 1*2/(2*1)} = 1
    // pick (n,p,k) with k log p / n = 2: n = k log p / 2
    const int p = 150, k = 40;
    const int n = static_cast<int>(std::round(k * std::log(double(p)) / 2.0));
    const double klogpn = k * std::log(double(p)) / n;
    const ScalingEnvelope e = scaling_envelopes(n, p, k, 1.0, 1.0, 0.0, ScalingCase::upper_I, 0.5, 1.0);
    const double expect = std::max(std::min(klogpn, 1.0), std::max(0.5, klogpn) / std::max(klogpn, 1.0));
    REQUIRE(e.value == Catch::Approx(expect).epsilon(1e-12));
    REQUIRE(e.value == Catch::Approx(1.0).margin(0.01));

    // lower_I clamps at sigma_eta/sigma_v once k log p / n exceeds 1
    const ScalingEnvelope big = scaling_envelopes(10, 1000, 50, 2.0, 0.5, 0.0, ScalingCase::lower_I, 0.5, 3.0);
    REQUIRE(big.value == Catch::Approx(3.0 * (2.0 / 0.5)).epsilon(1e-12));

    // lower_II is proportional to |alpha*|
    const ScalingEnvelope z = scaling_envelopes(1000, 100, 5, 1.0, 1.0, 0.0, ScalingCase::lower_II, 0.5, 1.0);
    REQUIRE(z.value == 0.0);

    REQUIRE_THROWS_AS(scaling_envelopes(100, 50, 5, 1, 1, 0, ScalingCase::upper_I, 1.5, 1.0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(scaling_case_from_string("nope"), std::invalid_argument);
    REQUIRE(scaling_case_from_string("upper_II_ii") == ScalingCase::upper_II_ii);
}

TEST_CASE("asymptotic sd") {
    REQUIRE(asymptotic_sd(10000, 1.0, 1.0) == Catch::Approx(0.01).epsilon(1e-14));
    REQUIRE(asymptotic_sd(10000, 2.0, 1.0) == Catch::Approx(0.02).epsilon(1e-14));
    REQUIRE(asymptotic_sd(40000, 1.0, 1.0) == Catch::Approx(0.005).epsilon(1e-14));
    REQUIRE_THROWS_AS(asymptotic_sd(0, 1, 1), std::invalid_argument);
}

TEST_CASE("event probability lower bound") {
    const OvbBound b = ovb_lower_bound(paper_inputs(5));
    const double logp = std::log(4000.0);
    const double expect = 1.0 - 5.0 * std::exp(-1.5 * logp / (4.0 * 0.95 * 0.95)) - 2.0 / std::sqrt(4000.0);
    REQUIRE(b.event_prob_lower == Catch::Approx(expect).epsilon(1e-12));
}
