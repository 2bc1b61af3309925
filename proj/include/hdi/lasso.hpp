#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "hdi/stats.hpp"

namespace hdi {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Canonical program: (1/2n)|y - X theta|^2 + lambda * sum_j loadings_j |theta_j|.
// The BCCH-scale lambda_B maps onto this as lambda = lambda_B / (2n) with the
// same loadings. Data must be demeaned by the caller.
struct LassoProblem {
    const MatrixXd& X;
    const VectorXd& y;
    double lambda = 0.0;
    VectorXd loadings;          // empty means all ones
    double tol = 1e-8;          // max KKT violation at exit
    int max_iter = 100000;      // coordinate sweeps
    const MatrixXd* gram = nullptr;      // optional shared X^T X / n
    const VectorXd* warm_start = nullptr;

    int n() const { return static_cast<int>(X.rows()); }
    int p() const { return static_cast<int>(X.cols()); }

    VectorXd effective_loadings() const {
        if (loadings.size() == 0) return VectorXd::Ones(p());
        if (loadings.size() != p()) throw std::invalid_argument("LassoProblem: loadings length must equal p");
        if ((loadings.array() < 0.0).any()) throw std::invalid_argument("LassoProblem: loadings must be non-negative");
        return loadings;
    }

    void validate() const {
        if (lambda < 0.0) throw std::invalid_argument("LassoProblem: lambda must be non-negative");
        if (tol <= 0.0) throw std::invalid_argument("LassoProblem: tol must be positive");
        if (max_iter <= 0) throw std::invalid_argument("LassoProblem: max_iter must be positive");
        if (y.size() != X.rows()) throw std::invalid_argument("LassoProblem: dimension mismatch");
    }
};

struct LassoFit {
    VectorXd theta_hat;
    std::vector<int> support;   // sorted indices with theta_hat[j] != 0
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct KktReport {
    VectorXd gradient;          // g_j = X_j^T (y - X theta_hat) / n
    double max_violation = 0.0;
    bool active_sign_ok = true;
};

// Solve to max-coverage threshold on all-zero: smallest lambda with
// theta_hat = 0 under strictly positive loadings.
inline double lambda_max(const MatrixXd& X, const VectorXd& y, const VectorXd& loadings_in = VectorXd()) {
    const int p = static_cast<int>(X.cols());
    const double n = static_cast<double>(X.rows());
    VectorXd l = loadings_in.size() ? loadings_in : VectorXd::Ones(p);
    if (l.size() != p) throw std::invalid_argument("lambda_max: loadings length must equal p");
    const VectorXd c = X.transpose() * y / n;
    double m = 0.0;
    for (int j = 0; j < p; ++j) {
        if (l[j] <= 0.0) throw std::invalid_argument("lambda_max: loadings must be strictly positive");
        m = std::max(m, std::fabs(c[j]) / l[j]);
    }
    return m;
}

namespace detail {

// Exact max KKT violation and active-sign flag for given gradient state.
inline double kkt_violation(const VectorXd& g, const VectorXd& theta, double lambda,
                            const VectorXd& l, bool* sign_ok = nullptr, double sign_tol = 1e-8) {
    double viol = 0.0;
    bool ok = true;
    for (int j = 0; j < g.size(); ++j) {
        if (theta[j] != 0.0) {
            const double stat = g[j] - lambda * l[j] * (theta[j] > 0.0 ? 1.0 : -1.0);
            viol = std::max(viol, std::fabs(stat));
            if (g[j] * theta[j] < 0.0 && std::fabs(g[j]) > sign_tol) ok = false;
        } else {
            viol = std::max(viol, std::fabs(g[j]) - lambda * l[j]);
        }
    }
    if (sign_ok) *sign_ok = ok;
    return std::max(viol, 0.0);
}

}  // namespace detail

// Cyclic coordinate descent with covariance updates and active-set sweeps
// after the first full pass. Deterministic: fixed coordinate order, fixed
// sweep schedule, mode chosen by problem size only. Falls back to residual
// updates when the Gram matrix would be too large and none was supplied.
inline LassoFit solve_lasso(const LassoProblem& prob) {
    prob.validate();
    const int n = prob.n(), p = prob.p();
    const double dn = static_cast<double>(n);
    const VectorXd l = prob.effective_loadings();
    const double lambda = prob.lambda;

    const VectorXd c = prob.X.transpose() * prob.y / dn;
    VectorXd diag(p);
    for (int j = 0; j < p; ++j) diag[j] = prob.X.col(j).squaredNorm() / dn;
    for (int j = 0; j < p; ++j) {
        if (diag[j] == 0.0 && l[j] == 0.0)
            throw std::invalid_argument("solve_lasso: zero-variance column with zero loading is ill-posed");
    }

    const bool covariance_mode = (prob.gram != nullptr) || (p <= 1024);
    MatrixXd gram_local;
    const MatrixXd* G = prob.gram;
    if (covariance_mode && G == nullptr) {
        gram_local.noalias() = prob.X.transpose() * prob.X / dn;
        G = &gram_local;
    }

    VectorXd theta = VectorXd::Zero(p);
    if (prob.warm_start && prob.warm_start->size() == p) theta = *prob.warm_start;

    // Gradient state: covariance mode keeps s = G theta; residual mode keeps r = y - X theta.
    VectorXd s;
    VectorXd r;
    if (covariance_mode) {
        s = VectorXd::Zero(p);
        if (theta.cwiseAbs().maxCoeff() > 0.0) s.noalias() = (*G) * theta;
    } else {
        r = prob.y - prob.X * theta;
    }

    auto update_coord = [&](int j) {
        if (diag[j] == 0.0) { // zero-variance column, positive loading: stays 0
            if (theta[j] != 0.0) {
                if (!covariance_mode) r.noalias() += prob.X.col(j) * theta[j];
                else s.noalias() -= G->col(j) * theta[j];
                theta[j] = 0.0;
            }
            return 0.0;
        }
        double rho;
        if (covariance_mode)
            rho = c[j] - s[j] + diag[j] * theta[j];
        else
            rho = prob.X.col(j).dot(r) / dn + diag[j] * theta[j];
        const double tnew = soft_threshold(rho, lambda * l[j]) / diag[j];
        const double delta = tnew - theta[j];
        if (delta != 0.0) {
            if (covariance_mode)
                s.noalias() += G->col(j) * delta;
            else
                r.noalias() -= prob.X.col(j) * delta;
            theta[j] = tnew;
        }
        return std::fabs(delta);
    };

    auto gradient_now = [&]() -> VectorXd {
        if (covariance_mode) return c - s;
        return prob.X.transpose() * r / dn;
    };

    auto refresh_state = [&]() {
        if (covariance_mode)
            s.noalias() = (*G) * theta;
        else
            r = prob.y - prob.X * theta;
    };

    int sweeps = 0;
    while (sweeps < prob.max_iter) {
        for (int j = 0; j < p; ++j) update_coord(j);
        ++sweeps;
        if (detail::kkt_violation(gradient_now(), theta, lambda, l) <= prob.tol) {
            // guard against incremental drift before declaring victory
            refresh_state();
            if (detail::kkt_violation(gradient_now(), theta, lambda, l) <= prob.tol) break;
        }
        // active-set sweeps until the working set satisfies the KKT
        // stationarity conditions at tol
        std::vector<int> active;
        active.reserve(p);
        for (int j = 0; j < p; ++j)
            if (theta[j] != 0.0) active.push_back(j);
        while (sweeps < prob.max_iter && !active.empty()) {
            double max_delta = 0.0;
            for (int j : active) max_delta = std::max(max_delta, update_coord(j));
            ++sweeps;
            if (max_delta <= 1e-15) break;
            double active_viol = 0.0;
            for (int j : active) {
                if (theta[j] == 0.0) continue;
                const double g = covariance_mode ? (c[j] - s[j]) : prob.X.col(j).dot(r) / dn;
                active_viol = std::max(active_viol,
                                       std::fabs(g - lambda * l[j] * (theta[j] > 0.0 ? 1.0 : -1.0)));
            }
            if (active_viol <= prob.tol) break;
        }
    }

    LassoFit fit;
    fit.theta_hat = theta;
    fit.iterations = sweeps;
    // Recompute the certificate from the data itself; incremental state is
    // only trusted for steering the sweeps.
    const VectorXd g_exact = prob.X.transpose() * (prob.y - prob.X * theta) / dn;
    fit.converged = detail::kkt_violation(g_exact, theta, lambda, l) <= prob.tol;
    for (int j = 0; j < p; ++j)
        if (theta[j] != 0.0) fit.support.push_back(j);
    const double rss = (prob.y - prob.X * theta).squaredNorm();
    double pen = 0.0;
    for (int j = 0; j < p; ++j) pen += l[j] * std::fabs(theta[j]);
    fit.objective = rss / (2.0 * dn) + lambda * pen;
    return fit;
}

inline KktReport kkt_residuals(const LassoFit& fit, const LassoProblem& prob) {
    if (fit.theta_hat.size() != prob.p()) throw std::invalid_argument("kkt_residuals: dimension mismatch");
    const double dn = static_cast<double>(prob.n());
    const VectorXd l = prob.effective_loadings();
    KktReport rep;
    rep.gradient = prob.X.transpose() * (prob.y - prob.X * fit.theta_hat) / dn;
    rep.max_violation = detail::kkt_violation(rep.gradient, fit.theta_hat, prob.lambda, l, &rep.active_sign_ok);
    return rep;
}

}  // namespace hdi
