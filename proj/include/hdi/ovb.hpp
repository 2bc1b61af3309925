#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdi {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Inputs to the finite-sample OVB lower bound. The coefficient magnitudes
// enter only through the multipliers a and b:
//   beta*_j sqrt(s/n)  = a phi^{-1} sigma_eta sqrt(2(1+tau) log p / n)
//   gamma*_j sqrt(s/n) = b phi^{-1} sigma_v   sqrt(2(1+tau) log p / n)
// so rescaling covariates and coefficients jointly leaves the bound fixed.
struct OvbInputs {
    int n = 0, p = 0, k = 0;
    double tau = 0.5;
    double phi = 1.0;
    double sigma_eta = 1.0;
    double sigma_v = 1.0;
    double a = 1.0;
    double b = 1.0;
    double s_over_n = 1.0;

    void validate() const {
        if (n <= 0 || p <= 1 || k <= 0) throw std::invalid_argument("OvbInputs: need n > 0, p > 1, k > 0");
        if (!(phi > 0.0 && phi <= 1.0)) throw std::invalid_argument("OvbInputs: phi must lie in (0,1]");
        if (tau <= 0.0) throw std::invalid_argument("OvbInputs: tau must be positive");
        if (sigma_eta <= 0.0 || sigma_v <= 0.0) throw std::invalid_argument("OvbInputs: noise sds must be positive");
        if (std::fabs(a) > 1.0 || std::fabs(b) > 1.0 || a == 0.0 || b == 0.0)
            throw std::invalid_argument("OvbInputs: |a|, |b| must lie in (0,1]");
        if (s_over_n <= 0.0) throw std::invalid_argument("OvbInputs: s/n must be positive");
    }
};

struct OvbBound {
    double value = 0.0;          // max_r T1(r) T2(r), clamped at 0
    double r_star = 0.0;
    double T1_at_r = 0.0;
    double T2_at_r = 0.0;
    double sigma_alpha_tilde = 0.0;
    double ratio = 0.0;          // value / sigma_alpha_tilde
    double event_prob_lower = 0.0;
    bool vacuous = false;        // T2 < 0 on the whole grid
};

struct Certificate {
    double lambda = 0.0;
    VectorXd thresholds;         // lambda n / (2s), one entry per coefficient
    bool all_below = false;
    double prob_lower_single = 0.0;   // 1 - 1/p^tau, one Lasso equation
    double prob_lower_double = 0.0;   // 1 - 2/p^tau, both equations jointly
};

inline double asymptotic_sd(int n, double sigma_eta, double sigma_v) {
    if (n <= 0 || sigma_eta <= 0.0 || sigma_v <= 0.0)
        throw std::invalid_argument("asymptotic_sd: inputs must be positive");
    return sigma_eta / (sigma_v * std::sqrt(static_cast<double>(n)));
}

struct SparsityDiagnostics {
    double klogp_over_n = 0.0;
    double klogp_over_sqrtn = 0.0;
};

inline SparsityDiagnostics sparsity_diagnostics(int n, int p, int k) {
    if (n <= 0 || p <= 0 || k < 0) throw std::invalid_argument("sparsity_diagnostics: bad dimensions");
    SparsityDiagnostics d;
    d.klogp_over_n = k * std::log(static_cast<double>(p)) / n;
    d.klogp_over_sqrtn = k * std::log(static_cast<double>(p)) / std::sqrt(static_cast<double>(n));
    return d;
}

// Certificate that the Lasso selects nothing: at the stated lambda every
// coefficient with |theta*_l| <= lambda n/(2s) is excluded, and if all of
// them are, P(theta_hat = 0) >= 1 - 1/p^tau.
inline Certificate under_selection_certificate(const VectorXd& theta_star, double s_over_n, double sigma,
                                               double phi, double tau, int n, int p) {
    if (!(phi > 0.0 && phi <= 1.0)) throw std::invalid_argument("under_selection_certificate: phi must lie in (0,1]");
    if (sigma <= 0.0 || s_over_n <= 0.0 || tau <= 0.0 || n <= 0 || p <= 0)
        throw std::invalid_argument("under_selection_certificate: inputs must be positive");
    Certificate cert;
    cert.lambda = (2.0 * sigma / phi) * std::sqrt(s_over_n) *
                  std::sqrt(2.0 * (1.0 + tau) * std::log(static_cast<double>(p)) / n);
    const double threshold = cert.lambda / (2.0 * s_over_n);
    cert.thresholds = VectorXd::Constant(theta_star.size(), threshold);
    cert.all_below = true;
    for (int j = 0; j < theta_star.size(); ++j)
        if (std::fabs(theta_star[j]) > threshold) cert.all_below = false;
    cert.prob_lower_single = 1.0 - std::pow(static_cast<double>(p), -tau);
    cert.prob_lower_double = 1.0 - 2.0 * std::pow(static_cast<double>(p), -tau);
    return cert;
}

namespace detail {

inline double ovb_T1(const OvbInputs& in, double r) {
    const double klogp_n = in.k * std::log(static_cast<double>(in.p)) / in.n;
    const double phi2 = in.phi * in.phi;
    const double num = (1.0 + in.tau) * std::fabs(in.a * in.b) * in.sigma_eta * klogp_n / phi2;
    const double den = 4.0 * (1.0 + in.tau) * in.b * in.b * in.sigma_v * klogp_n / phi2 + (1.0 + r) * in.sigma_v;
    return num / den;
}

inline double ovb_T2(const OvbInputs& in, double r) {
    const double logp = std::log(static_cast<double>(in.p));
    return 1.0 - in.k * std::exp(-in.b * in.b * (1.0 + in.tau) * logp / (4.0 * in.phi * in.phi)) -
           std::pow(static_cast<double>(in.p), -in.tau) - std::exp(-in.n * r * r / 8.0);
}

}  // namespace detail

// max_{r in (0,1]} T1(r) T2(r) on a uniform grid plus golden-section
// refinement around the grid argmax. The product is reported as 0 (with
// the vacuous flag) when T2 stays negative over the whole grid.
inline OvbBound ovb_lower_bound(const OvbInputs& inputs, int r_grid_size = 1024) {
    inputs.validate();
    if (r_grid_size < 2) throw std::invalid_argument("ovb_lower_bound: grid size must be at least 2");

    auto product = [&](double r) { return detail::ovb_T1(inputs, r) * detail::ovb_T2(inputs, r); };

    double best_r = 0.0, best_v = -std::numeric_limits<double>::infinity();
    bool any_t2_pos = false;
    const double step = 1.0 / r_grid_size;
    for (int i = 1; i <= r_grid_size; ++i) {
        const double r = i * step;
        if (detail::ovb_T2(inputs, r) > 0.0) any_t2_pos = true;
        const double v = product(r);
        if (v > best_v) { best_v = v; best_r = r; }
    }

    // golden-section on the bracketing interval
    double lo = std::max(best_r - step, step * 1e-6);
    double hi = std::min(best_r + step, 1.0);
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = product(x1), f2 = product(x2);
    for (int it = 0; it < 200 && (hi - lo) > 1e-13; ++it) {
        if (f1 < f2) {
            lo = x1; x1 = x2; f1 = f2;
            x2 = lo + gr * (hi - lo); f2 = product(x2);
        } else {
            hi = x2; x2 = x1; f2 = f1;
            x1 = hi - gr * (hi - lo); f1 = product(x1);
        }
    }
    const double r_ref = (f1 > f2) ? x1 : x2;
    if (product(r_ref) > best_v) { best_v = product(r_ref); best_r = r_ref; }

    OvbBound out;
    out.r_star = best_r;
    out.T1_at_r = detail::ovb_T1(inputs, best_r);
    out.T2_at_r = detail::ovb_T2(inputs, best_r);
    out.vacuous = !any_t2_pos;
    out.value = out.vacuous ? 0.0 : std::max(best_v, 0.0);
    out.sigma_alpha_tilde = asymptotic_sd(inputs.n, inputs.sigma_eta, inputs.sigma_v);
    out.ratio = out.value / out.sigma_alpha_tilde;
    const double logp = std::log(static_cast<double>(inputs.p));
    out.event_prob_lower =
        1.0 - inputs.k * std::exp(-inputs.b * inputs.b * (1.0 + inputs.tau) * logp / (4.0 * inputs.phi * inputs.phi)) -
        2.0 * std::pow(static_cast<double>(inputs.p), -inputs.tau);
    return out;
}

// Either coefficient-magnitude multiplier above 3 puts the design in the
// perfect-selection regime (no OVB with probability at least 1 - 1/p^tau).
inline bool absence_of_ovb_check(double a, double b) {
    return std::fabs(a) > 3.0 || std::fabs(b) > 3.0;
}

// phi = 1 - ||(X_{K^c}^T X_K)(X_K^T X_K)^{-1}||_inf (max absolute row sum).
// Values <= 0 signal incoherence failure and are returned as-is.
inline double incoherence_phi(const MatrixXd& X, const std::vector<int>& K) {
    const int p = static_cast<int>(X.cols());
    if (K.empty()) throw std::invalid_argument("incoherence_phi: K must be nonempty");
    for (int j : K)
        if (j < 0 || j >= p) throw std::invalid_argument("incoherence_phi: index out of range");
    std::vector<bool> in_k(p, false);
    for (int j : K) in_k[j] = true;

    MatrixXd Xk(X.rows(), K.size());
    for (std::size_t i = 0; i < K.size(); ++i) Xk.col(i) = X.col(K[i]);
    const MatrixXd gram = Xk.transpose() * Xk;
    Eigen::FullPivLU<MatrixXd> lu(gram);
    if (!lu.isInvertible()) throw std::runtime_error("incoherence_phi: X_K^T X_K is singular");

    double max_row_sum = 0.0;
    for (int j = 0; j < p; ++j) {
        if (in_k[j]) continue;
        const VectorXd row = lu.solve(Xk.transpose() * X.col(j));
        max_row_sum = std::max(max_row_sum, row.cwiseAbs().sum());
    }
    return 1.0 - max_row_sum;
}

enum class ScalingCase { lower_I, lower_II, upper_I, upper_II_i, upper_II_ii };

inline ScalingCase scaling_case_from_string(const std::string& s) {
    if (s == "lower_I") return ScalingCase::lower_I;
    if (s == "lower_II") return ScalingCase::lower_II;
    if (s == "upper_I") return ScalingCase::upper_I;
    if (s == "upper_II_i") return ScalingCase::upper_II_i;
    if (s == "upper_II_ii") return ScalingCase::upper_II_ii;
    throw std::invalid_argument("scaling_envelopes: unknown case '" + s + "'");
}

struct ScalingEnvelope {
    ScalingCase scaling_case;
    double value = 0.0;
    // The universal constants in these bounds are unspecified, so the value
    // is an envelope up to the user-supplied constant, not a bound.
    std::string note = "envelope up to unspecified universal constants";
};

inline ScalingEnvelope scaling_envelopes(int n, int p, int k, double sigma_eta, double sigma_v,
                                         double alpha_star, ScalingCase which, double r, double user_constant) {
    if (n <= 0 || p <= 1 || k < 0) throw std::invalid_argument("scaling_envelopes: bad dimensions");
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("scaling_envelopes: r must lie in (0,1]");
    if (user_constant <= 0.0) throw std::invalid_argument("scaling_envelopes: constant must be positive");
    if (sigma_eta <= 0.0 || sigma_v <= 0.0) throw std::invalid_argument("scaling_envelopes: noise sds must be positive");

    const double klogp_n = k * std::log(static_cast<double>(p)) / n;
    const double clamp1 = std::min(klogp_n, 1.0);
    const double second = sigma_v * sigma_eta * std::max(r, klogp_n) /
                          (std::max(klogp_n, 1.0) * sigma_v * sigma_v);
    ScalingEnvelope env;
    env.scaling_case = which;
    switch (which) {
        case ScalingCase::lower_I:
            env.value = user_constant * (sigma_eta / sigma_v) * clamp1;
            break;
        case ScalingCase::lower_II:
            env.value = user_constant * std::fabs(alpha_star) * clamp1;
            break;
        case ScalingCase::upper_I:
            env.value = user_constant * std::max((sigma_eta / sigma_v) * clamp1, second);
            break;
        case ScalingCase::upper_II_i:
            env.value = user_constant * std::max(std::fabs(alpha_star) * clamp1, second);
            break;
        case ScalingCase::upper_II_ii:
            env.value = user_constant *
                        std::max(std::max(std::fabs(alpha_star), sigma_eta / sigma_v) * clamp1, second);
            break;
    }
    return env;
}

}  // namespace hdi
