#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdi/lasso.hpp"
#include "hdi/rng.hpp"
#include "hdi/stats.hpp"

namespace hdi {

enum class RegRule { bickel, lemma1, bcch, cv_min, cv_1se };

inline const char* reg_rule_name(RegRule r) {
    switch (r) {
        case RegRule::bickel: return "bickel";
        case RegRule::lemma1: return "lemma1";
        case RegRule::bcch: return "bcch";
        case RegRule::cv_min: return "cv_min";
        case RegRule::cv_1se: return "cv_1se";
    }
    return "?";
}

struct RegularizationChoice {
    RegRule rule = RegRule::bickel;
    double lambda = 0.0;                    // canonical (1/2n)-scale
    VectorXd loadings;                      // empty means all ones
    double multiplier = 1.0;
    std::map<std::string, double> provenance;
    std::vector<std::string> warnings;
};

// lambda = 2 sigma sqrt(2 b (1+tau) log p / n), all-ones loadings.
inline RegularizationChoice lambda_bickel(double sigma, double b, double tau, int n, int p) {
    if (sigma <= 0.0 || b <= 0.0 || tau <= 0.0 || n <= 0 || p <= 0)
        throw std::invalid_argument("lambda_bickel: all inputs must be positive");
    RegularizationChoice ch;
    ch.rule = RegRule::bickel;
    ch.lambda = 2.0 * sigma * std::sqrt(b) * std::sqrt(2.0 * (1.0 + tau) * std::log(static_cast<double>(p)) / n);
    ch.loadings = VectorXd::Ones(p);
    ch.provenance = {{"sigma", sigma}, {"b", b}, {"tau", tau}, {"n", double(n)}, {"p", double(p)}};
    return ch;
}

// lambda = (2 sigma / phi) sqrt(s/n) sqrt(2 (1+tau) log p / n); reduces to the
// Bickel choice with b = s/n when phi = 1 (bitwise, same operation order).
inline RegularizationChoice lambda_lemma1(double sigma, double phi, double s_over_n, double tau, int n, int p) {
    if (!(phi > 0.0 && phi <= 1.0)) throw std::invalid_argument("lambda_lemma1: phi must lie in (0,1]");
    if (sigma <= 0.0 || s_over_n <= 0.0 || tau <= 0.0 || n <= 0 || p <= 0)
        throw std::invalid_argument("lambda_lemma1: all inputs must be positive");
    RegularizationChoice ch;
    ch.rule = RegRule::lemma1;
    ch.lambda = (2.0 * sigma / phi) * std::sqrt(s_over_n) *
                std::sqrt(2.0 * (1.0 + tau) * std::log(static_cast<double>(p)) / n);
    ch.loadings = VectorXd::Ones(p);
    ch.provenance = {{"sigma", sigma}, {"phi", phi}, {"s_over_n", s_over_n},
                     {"tau", tau},     {"n", double(n)}, {"p", double(p)}};
    return ch;
}

// Known-sigma Bickel rule in its practical form: normalize columns to unit
// second moment, run with b = 1, rescale coefficients back. Equivalent to a
// weighted Lasso on raw columns with loadings equal to the column RMS norms.
inline RegularizationChoice bickel_known_sigma(const MatrixXd& X, double sigma, double tau) {
    const int n = static_cast<int>(X.rows()), p = static_cast<int>(X.cols());
    RegularizationChoice ch = lambda_bickel(sigma, 1.0, tau, n, p);
    ch.loadings.resize(p);
    for (int j = 0; j < p; ++j) ch.loadings[j] = std::sqrt(X.col(j).squaredNorm() / n);
    return ch;
}

// Data-driven BCCH rule: lambda_B = 2 c sqrt(n) Phi^{-1}(1 - varsigma/(2p)),
// varsigma = 0.1/log n, with penalty loadings iterated through post-Lasso
// residuals. Returned lambda is on the canonical scale, lambda_B/(2n).
inline RegularizationChoice lambda_bcch(const MatrixXd& X, const VectorXd& y, double c = 1.1, int n_iter = 2) {
    const int n = static_cast<int>(X.rows()), p = static_cast<int>(X.cols());
    if (c <= 0.0) throw std::invalid_argument("lambda_bcch: c must be positive");
    if (n_iter < 1) throw std::invalid_argument("lambda_bcch: n_iter must be at least 1");
    if (n <= 1) throw std::invalid_argument("lambda_bcch: requires n > 1 (log n must be positive)");
    if (y.size() != n) throw std::invalid_argument("lambda_bcch: dimension mismatch");

    const double varsigma = 0.1 / std::log(static_cast<double>(n));
    const double lambda_raw = 2.0 * c * std::sqrt(static_cast<double>(n)) *
                              inv_normal_cdf(1.0 - varsigma / (2.0 * p));
    const double lambda_canonical = lambda_raw / (2.0 * n);

    RegularizationChoice ch;
    ch.rule = RegRule::bcch;
    ch.lambda = lambda_canonical;
    ch.provenance = {{"c", c}, {"varsigma", varsigma}, {"lambda_raw", lambda_raw},
                     {"n", double(n)}, {"p", double(p)}, {"n_iter_max", double(n_iter)}};

    const VectorXd ybar = y.array() - y.mean();
    VectorXd loadings(p);
    for (int j = 0; j < p; ++j)
        loadings[j] = std::sqrt((X.col(j).array().square() * ybar.array().square()).sum() / n);
    if (loadings.maxCoeff() <= 0.0)
        throw std::invalid_argument("lambda_bcch: degenerate input, all initial loadings are zero");

    for (int t = 0; t < n_iter; ++t) {
        LassoProblem prob{X, y, lambda_canonical, loadings};
        const LassoFit fit = solve_lasso(prob);
        VectorXd resid;
        const int m = static_cast<int>(fit.support.size());
        if (m >= n) {
            ch.warnings.push_back("bcch: post-Lasso support not smaller than n; using Lasso residuals for loadings");
            resid = y - X * fit.theta_hat;
        } else if (m == 0) {
            resid = y;
        } else {
            MatrixXd Xs(n, m);
            for (int i = 0; i < m; ++i) Xs.col(i) = X.col(fit.support[i]);
            const VectorXd b = Xs.householderQr().solve(y);
            resid = y - Xs * b;
        }
        VectorXd next(p);
        for (int j = 0; j < p; ++j)
            next[j] = std::sqrt((X.col(j).array().square() * resid.array().square()).sum() / n);
        double max_rel = 0.0;
        for (int j = 0; j < p; ++j) {
            const double denom = std::max(std::fabs(loadings[j]), 1e-300);
            max_rel = std::max(max_rel, std::fabs(next[j] - loadings[j]) / denom);
        }
        loadings = next;
        ch.provenance["n_iter_used"] = double(t + 1);
        if (max_rel < 1e-4) break;
    }
    ch.loadings = loadings;
    return ch;
}

struct CvCurvePoint {
    double lambda;
    double mean_error;
    double se;
};

struct CvResult {
    RegularizationChoice cv_min;
    RegularizationChoice cv_1se;
    std::vector<CvCurvePoint> curve;
};

// K-fold cross-validation over a geometric grid from lambda_max down to
// lambda_max * 1e-4, unweighted penalty, warm starts in descending lambda
// order. Fold assignment comes from the dedicated stream, so the same data
// always meets the same folds.
inline CvResult cv_lambda(const MatrixXd& X, const VectorXd& y, int folds, int grid_size, RngStream stream) {
    const int n = static_cast<int>(X.rows()), p = static_cast<int>(X.cols());
    if (folds < 2) throw std::invalid_argument("cv_lambda: folds must be at least 2");
    if (n < folds) throw std::invalid_argument("cv_lambda: need n >= folds");
    if (grid_size < 1) throw std::invalid_argument("cv_lambda: grid_size must be at least 1");

    const double lmax = lambda_max(X, y);
    std::vector<double> grid(grid_size);
    if (grid_size == 1) {
        grid[0] = lmax;
    } else {
        const double ratio = std::pow(1e-4, 1.0 / (grid_size - 1));
        grid[0] = lmax;
        for (int g = 1; g < grid_size; ++g) grid[g] = grid[g - 1] * ratio;
    }

    // Fisher-Yates permutation, then balanced fold ids by position.
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(stream.next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[i], perm[j]);
    }
    std::vector<int> fold_of(n);
    for (int i = 0; i < n; ++i) fold_of[perm[i]] = i % folds;

    std::vector<std::vector<double>> fold_err(folds, std::vector<double>(grid_size, 0.0));
    std::vector<bool> fold_ok(folds, true);
    std::vector<std::string> warnings;

    for (int f = 0; f < folds; ++f) {
        std::vector<int> train, test;
        for (int i = 0; i < n; ++i) (fold_of[i] == f ? test : train).push_back(i);
        MatrixXd Xtr(train.size(), p), Xte(test.size(), p);
        VectorXd ytr(train.size()), yte(test.size());
        for (std::size_t i = 0; i < train.size(); ++i) { Xtr.row(i) = X.row(train[i]); ytr[i] = y[train[i]]; }
        for (std::size_t i = 0; i < test.size(); ++i) { Xte.row(i) = X.row(test[i]); yte[i] = y[test[i]]; }
        const double ytr_var = (ytr.array() - ytr.mean()).square().sum();
        if (ytr_var <= 0.0) {
            fold_ok[f] = false;
            warnings.push_back("cv_lambda: fold " + std::to_string(f) + " skipped (constant response)");
            continue;
        }
        MatrixXd gram;
        gram.noalias() = Xtr.transpose() * Xtr / static_cast<double>(train.size());
        VectorXd warm = VectorXd::Zero(p);
        for (int g = 0; g < grid_size; ++g) {
            LassoProblem prob{Xtr, ytr, grid[g], VectorXd(), 1e-7, 20000, &gram, &warm};
            const LassoFit fit = solve_lasso(prob);
            warm = fit.theta_hat;
            fold_err[f][g] = (yte - Xte * fit.theta_hat).squaredNorm() / static_cast<double>(test.size());
        }
    }

    int used = 0;
    for (int f = 0; f < folds; ++f)
        if (fold_ok[f]) ++used;
    if (used == 0) throw std::runtime_error("cv_lambda: all folds degenerate");

    std::vector<CvCurvePoint> curve(grid_size);
    for (int g = 0; g < grid_size; ++g) {
        CompensatedSum s;
        for (int f = 0; f < folds; ++f)
            if (fold_ok[f]) s.add(fold_err[f][g]);
        const double m = s.value() / used;
        double var = 0.0;
        if (used > 1) {
            CompensatedSum v;
            for (int f = 0; f < folds; ++f)
                if (fold_ok[f]) v.add((fold_err[f][g] - m) * (fold_err[f][g] - m));
            var = v.value() / (used - 1);
        }
        curve[g] = {grid[g], m, std::sqrt(var / used)};
    }

    int g_min = 0;
    for (int g = 1; g < grid_size; ++g)
        if (curve[g].mean_error < curve[g_min].mean_error) g_min = g;
    const double cutoff = curve[g_min].mean_error + curve[g_min].se;
    int g_1se = g_min;
    for (int g = 0; g <= g_min; ++g) {
        if (curve[g].mean_error <= cutoff) { g_1se = g; break; }  // grid is descending: first hit is largest lambda
    }

    auto make = [&](RegRule rule, int g) {
        RegularizationChoice ch;
        ch.rule = rule;
        ch.lambda = curve[g].lambda;
        ch.loadings = VectorXd::Ones(p);
        ch.provenance = {{"folds", double(folds)}, {"grid_size", double(grid_size)},
                         {"lambda_max", lmax},     {"cv_error", curve[g].mean_error},
                         {"cv_se", curve[g].se},   {"folds_used", double(used)}};
        ch.warnings = warnings;
        return ch;
    };
    CvResult res;
    res.cv_min = make(RegRule::cv_min, g_min);
    res.cv_1se = make(RegRule::cv_1se, g_1se);
    res.curve = std::move(curve);
    return res;
}

inline RegularizationChoice scale_choice(const RegularizationChoice& choice, double multiplier) {
    if (multiplier <= 0.0) throw std::invalid_argument("scale_choice: multiplier must be positive");
    RegularizationChoice out = choice;
    out.lambda *= multiplier;
    out.multiplier *= multiplier;
    return out;
}

}  // namespace hdi
