#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdi/lasso.hpp"
#include "hdi/model.hpp"
#include "hdi/reg_rules.hpp"
#include "hdi/stats.hpp"

namespace hdi {

enum class VarianceKind { HC0, HC3, HCK };

inline const char* variance_kind_name(VarianceKind v) {
    switch (v) {
        case VarianceKind::HC0: return "HC0";
        case VarianceKind::HC3: return "HC3";
        case VarianceKind::HCK: return "HCK";
    }
    return "?";
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double length() const { return hi - lo; }
    bool contains(double x) const { return lo <= x && x <= hi; }
};

inline Interval confidence_interval(double estimate, double se, double level) {
    if (se < 0.0) throw std::invalid_argument("confidence_interval: se must be non-negative");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence_interval: level must lie in (0,1)");
    const double z = inv_normal_cdf((1.0 + level) / 2.0);
    return {estimate - z * se, estimate + z * se};
}

namespace detail {

// Rank-revealing column selection with relative tolerance 1e-10, scanning in
// the given order so the treatment column (first) is always retained. Returns
// the kept column indices plus the thin-QR factors for the kept design.
struct PrunedQr {
    std::vector<int> kept;
    MatrixXd Q;        // n x r, orthonormal
    MatrixXd R;        // r x r, upper triangular
    bool dropped = false;
};

inline PrunedQr prune_and_factor(const MatrixXd& Z, double rel_tol = 1e-10) {
    const int n = static_cast<int>(Z.rows());
    const int m = static_cast<int>(Z.cols());
    PrunedQr out;
    out.Q.resize(n, m);
    out.R = MatrixXd::Zero(m, m);
    int r = 0;
    for (int j = 0; j < m; ++j) {
        VectorXd w = Z.col(j);
        VectorXd coef(r);
        // two rounds of Gram-Schmidt for orthogonality at working precision
        for (int pass = 0; pass < 2; ++pass) {
            for (int i = 0; i < r; ++i) {
                const double c = out.Q.col(i).dot(w);
                w.noalias() -= c * out.Q.col(i);
                if (pass == 0) coef[i] = c;
                else coef[i] += c;
            }
        }
        const double norm_orig = Z.col(j).norm();
        const double norm_res = w.norm();
        if (norm_res <= rel_tol * std::max(norm_orig, 1e-300)) {
            out.dropped = true;
            continue;
        }
        for (int i = 0; i < r; ++i) out.R(i, r) = coef[i];
        out.R(r, r) = norm_res;
        out.Q.col(r) = w / norm_res;
        out.kept.push_back(j);
        ++r;
    }
    out.Q.conservativeResize(n, r);
    out.R.conservativeResize(r, r);
    return out;
}

struct OlsCore {
    VectorXd coef;             // on kept columns
    VectorXd resid;
    std::vector<int> kept;
    MatrixXd Q, R;
    bool dropped = false;
};

inline OlsCore ols_solve(const MatrixXd& Z, const VectorXd& y) {
    PrunedQr f = prune_and_factor(Z);
    OlsCore core;
    core.kept = f.kept;
    core.dropped = f.dropped;
    core.Q = std::move(f.Q);
    core.R = std::move(f.R);
    const VectorXd qty = core.Q.transpose() * y;
    core.coef = core.R.template triangularView<Eigen::Upper>().solve(qty);
    core.resid = y - core.Q * qty;
    return core;
}

// Sandwich variance of one coefficient given per-observation variances:
// Var(b_idx) = sum_i w_i^2 sigma2_i with w = Z (Z^T Z)^{-1} e_idx.
inline double sandwich_coef_var(const OlsCore& core, int idx, const VectorXd& sigma2) {
    const int r = static_cast<int>(core.kept.size());
    VectorXd e = VectorXd::Zero(r);
    e[idx] = 1.0;
    // (Z^T Z)^{-1} e = R^{-1} R^{-T} e
    VectorXd t = core.R.template triangularView<Eigen::Upper>().transpose().solve(e);
    t = core.R.template triangularView<Eigen::Upper>().solve(t);
    // w = Z t = Q R t
    const VectorXd w = core.Q * (core.R.template triangularView<Eigen::Upper>() * t);
    return (w.array().square() * sigma2.array()).sum();
}

// Per-observation variance plug-ins for the robust sandwich. HCK solves the
// (M.M) s2 = e.e system; a singular or indefinite solve falls back to HC3
// with the flag set.
inline VectorXd robust_sigma2(const OlsCore& core, VarianceKind kind, bool* hck_fallback = nullptr) {
    if (hck_fallback) *hck_fallback = false;
    const VectorXd h = core.Q.array().square().rowwise().sum();
    switch (kind) {
        case VarianceKind::HC0:
            return core.resid.array().square();
        case VarianceKind::HC3:
            return (core.resid.array() / (1.0 - h.array()).max(1e-12)).square();
        case VarianceKind::HCK: {
            MatrixXd A = core.Q * core.Q.transpose();
            A = -A;
            A.diagonal().array() += 1.0;   // M = I - QQ^T
            A = A.array().square().matrix();
            const VectorXd rhs = core.resid.array().square();
            Eigen::PartialPivLU<MatrixXd> lu(A);
            VectorXd sigma2 = lu.solve(rhs);
            bool bad = !sigma2.allFinite() ||
                       (A * sigma2 - rhs).norm() > 1e-6 * std::max(rhs.norm(), 1e-300);
            if (!bad) {
                const double var = sandwich_coef_var(core, 0, sigma2);
                if (!(var > 0.0) && core.resid.squaredNorm() > 0.0) bad = true;
            }
            if (bad) {
                if (hck_fallback) *hck_fallback = true;
                return (core.resid.array() / (1.0 - h.array()).max(1e-12)).square();
            }
            return sigma2;
        }
    }
    throw std::logic_error("robust_sigma2: unreachable");
}

}  // namespace detail

struct PdlFit {
    double alpha_tilde = 0.0;
    VectorXd beta_tilde;                      // length p, zeros off the fitted set
    std::vector<int> I1, I2;                  // supports of pi-hat and gamma-hat
    std::vector<int> union_plus_amelioration; // columns offered to the final OLS
    double se = 0.0;
    RegularizationChoice lambda1_used, lambda2_used;
    bool singular_fallback_used = false;
    LassoFit stage1, stage2;
};

// Lasso Y~X, Lasso D~X, then OLS of Y on D and the union of selected
// controls (optionally augmented by an amelioration set). The final-stage
// standard error defaults to the HC0 robust sandwich on the small design.
inline PdlFit post_double_lasso(const Dataset& data_in, const RegularizationChoice& choice1,
                                const RegularizationChoice& choice2,
                                const std::vector<int>& amelioration = {},
                                VarianceKind final_se = VarianceKind::HC0,
                                const MatrixXd* shared_gram = nullptr) {
    const Dataset data = data_in.demeaned ? data_in : demean(data_in);
    const int n = data.n(), p = data.p();

    PdlFit out;
    out.lambda1_used = choice1;
    out.lambda2_used = choice2;

    LassoProblem prob1{data.X, data.Y, choice1.lambda, choice1.loadings, 1e-8, 100000, shared_gram};
    out.stage1 = solve_lasso(prob1);
    LassoProblem prob2{data.X, data.D, choice2.lambda, choice2.loadings, 1e-8, 100000, shared_gram};
    out.stage2 = solve_lasso(prob2);
    out.I1 = out.stage1.support;
    out.I2 = out.stage2.support;

    std::set<int> sel(out.I1.begin(), out.I1.end());
    sel.insert(out.I2.begin(), out.I2.end());
    for (int j : amelioration) {
        if (j < 0 || j >= p) throw std::invalid_argument("post_double_lasso: amelioration index out of range");
        sel.insert(j);
    }
    out.union_plus_amelioration.assign(sel.begin(), sel.end());

    const int m = static_cast<int>(out.union_plus_amelioration.size());
    if (m + 1 >= n) throw std::runtime_error("post-OLS infeasible: selected design has as many columns as observations");

    MatrixXd Z(n, m + 1);
    Z.col(0) = data.D;
    for (int i = 0; i < m; ++i) Z.col(i + 1) = data.X.col(out.union_plus_amelioration[i]);
    detail::OlsCore core = detail::ols_solve(Z, data.Y);
    out.singular_fallback_used = core.dropped;
    if (core.kept.empty() || core.kept[0] != 0)
        throw std::runtime_error("post_double_lasso: treatment column degenerate in final OLS");

    out.alpha_tilde = core.coef[0];
    out.beta_tilde = VectorXd::Zero(p);
    for (std::size_t i = 1; i < core.kept.size(); ++i)
        out.beta_tilde[out.union_plus_amelioration[core.kept[i] - 1]] = core.coef[i];

    bool hck_fb = false;
    const VectorXd sigma2 = detail::robust_sigma2(core, final_se, &hck_fb);
    out.singular_fallback_used = out.singular_fallback_used || hck_fb;
    out.se = std::sqrt(std::max(detail::sandwich_coef_var(core, 0, sigma2), 0.0));
    return out;
}

struct DebiasedFit {
    double alpha_hat_initial = 0.0;
    double alpha_tilde = 0.0;
    double tau1_sq = 0.0;
    VectorXd gamma_hat;
    double se = 0.0;
    LassoFit joint, nodewise;
};

// Debiased Lasso with the nodewise construction: joint Lasso of Y on
// Z = (D, X) with alpha penalized, nodewise Lasso of D on X, and the
// one-step correction alpha~ = alpha^ + Omega_1 Z^T (Y - Z theta^) / n
// with Omega_1 = tau1^{-2} (1, -gamma^).
inline DebiasedFit debiased_lasso(const Dataset& data_in, const RegularizationChoice& choice1,
                                  const RegularizationChoice& choice2) {
    const Dataset data = data_in.demeaned ? data_in : demean(data_in);
    const int n = data.n(), p = data.p();

    MatrixXd Z(n, p + 1);
    Z.col(0) = data.D;
    Z.rightCols(p) = data.X;

    if (choice1.loadings.size() != 0 && choice1.loadings.size() != p + 1)
        throw std::invalid_argument("debiased_lasso: choice1 loadings must cover (alpha, beta)");

    LassoProblem prob1{Z, data.Y, choice1.lambda, choice1.loadings};
    DebiasedFit out;
    out.joint = solve_lasso(prob1);
    out.alpha_hat_initial = out.joint.theta_hat[0];

    LassoProblem prob2{data.X, data.D, choice2.lambda, choice2.loadings};
    out.nodewise = solve_lasso(prob2);
    out.gamma_hat = out.nodewise.theta_hat;

    const VectorXd dres = data.D - data.X * out.gamma_hat;
    out.tau1_sq = dres.squaredNorm() / n + choice2.lambda * out.gamma_hat.cwiseAbs().sum();
    if (out.tau1_sq <= 0.0) throw std::runtime_error("debiased_lasso: degenerate treatment (tau1^2 = 0)");

    VectorXd omega1(p + 1);
    omega1[0] = 1.0;
    omega1.tail(p) = -out.gamma_hat;
    omega1 /= out.tau1_sq;

    const VectorXd resid = data.Y - Z * out.joint.theta_hat;
    out.alpha_tilde = out.alpha_hat_initial + omega1.dot(Z.transpose() * resid) / n;

    const double sigma_u = std::sqrt(resid.squaredNorm() / n);
    const VectorXd zo = Z * omega1;  // omega1 (Z^T Z / n) omega1^T = |Z omega1|^2 / n
    out.se = sigma_u * std::sqrt(zo.squaredNorm() / n / n);
    return out;
}

struct OlsFit {
    VectorXd coefficients;     // on kept columns of (D, X)
    VectorXd residuals;
    VarianceKind variance_kind = VarianceKind::HCK;
    double alpha = 0.0;
    double alpha_se = 0.0;
    bool singular_fallback_used = false;   // HCK system fell back to HC3
    bool collinear_dropped = false;
    std::vector<int> kept_columns;         // indices into (D, X), 0 = treatment
};

// OLS of Y on (D, X) with heteroscedasticity-robust variance. HCK solves the
// elementwise-squared-annihilator system (M.M) s2 = e.e for per-observation
// variances before plugging them into the sandwich; a numerically singular
// system falls back to HC3 with the flag set.
inline OlsFit ols_fit(const Dataset& data_in, VarianceKind variance_kind = VarianceKind::HCK) {
    const Dataset data = data_in.demeaned ? data_in : demean(data_in);
    const int n = data.n(), p = data.p();
    if (p + 1 > n) throw std::runtime_error("ols_fit infeasible: p + 1 > n");

    MatrixXd Z(n, p + 1);
    Z.col(0) = data.D;
    Z.rightCols(p) = data.X;
    detail::OlsCore core = detail::ols_solve(Z, data.Y);
    if (core.kept.empty() || core.kept[0] != 0)
        throw std::runtime_error("ols_fit: treatment column degenerate");

    OlsFit out;
    out.coefficients = core.coef;
    out.residuals = core.resid;
    out.variance_kind = variance_kind;
    out.collinear_dropped = core.dropped;
    out.kept_columns = core.kept;
    out.alpha = core.coef[0];

    bool hck_fb = false;
    const VectorXd sigma2 = detail::robust_sigma2(core, variance_kind, &hck_fb);
    out.singular_fallback_used = hck_fb;
    out.alpha_se = std::sqrt(std::max(detail::sandwich_coef_var(core, 0, sigma2), 0.0));
    return out;
}

// Benchmark estimator using the true nuisance coefficients:
// regression of Y - X pi* on D - X gamma*, pi* = gamma* alpha* + beta*.
inline double oracle_estimator(const Dataset& data_in) {
    if (!data_in.truth) throw std::invalid_argument("oracle_estimator: dataset carries no truth sidecar");
    const Dataset data = data_in.demeaned ? data_in : demean(data_in);
    const DgpSpec& spec = data.truth->spec;
    const VectorXd pi_star = spec.gamma_star * spec.alpha_star + spec.beta_star;
    const VectorXd yres = data.Y - data.X * pi_star;
    const VectorXd dres = data.D - data.X * spec.gamma_star;
    const double denom = dres.squaredNorm();
    if (denom <= 0.0) throw std::runtime_error("oracle_estimator: degenerate treatment residual");
    return dres.dot(yres) / denom;
}

}  // namespace hdi
