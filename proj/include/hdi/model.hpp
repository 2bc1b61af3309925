#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdi/rng.hpp"

namespace hdi {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class XLaw { gaussian_iid, bernoulli };
enum class ErrorLaw { std_normal, t5_scaled };
enum class ScaleMap { constant_one, multiplicative };

// Full description of one data-generating process:
//   Y_i = D_i a* + X_i b* + sigma_y(D_i,X_i) eta_i
//   D_i = X_i g* + sigma_d(X_i) v_i
struct DgpSpec {
    std::string name;
    int n = 0;
    int p = 0;
    int k = 0;
    double alpha_star = 0.0;
    VectorXd beta_star;
    VectorXd gamma_star;
    XLaw x_law = XLaw::gaussian_iid;
    double sigma_x = 0.0;
    ErrorLaw eta_law = ErrorLaw::std_normal;
    ErrorLaw v_law = ErrorLaw::std_normal;
    ScaleMap sigma_y_map = ScaleMap::constant_one;
    ScaleMap sigma_d_map = ScaleMap::constant_one;

    std::vector<int> support() const {
        std::vector<int> idx;
        for (int j = 0; j < p; ++j)
            if (beta_star[j] != 0.0) idx.push_back(j);
        return idx;
    }

    void validate() const {
        if (n <= 0 || p <= 0) throw std::invalid_argument("DgpSpec: n and p must be positive");
        if (k < 0 || k > std::min(n, p)) throw std::invalid_argument("DgpSpec: k must lie in [0, min(n,p)]");
        if (beta_star.size() != p || gamma_star.size() != p)
            throw std::invalid_argument("DgpSpec: coefficient vectors must have length p");
        int nb = 0, ng = 0;
        for (int j = 0; j < p; ++j) {
            if (beta_star[j] != 0.0) ++nb;
            if (gamma_star[j] != 0.0) ++ng;
            if ((beta_star[j] != 0.0) != (gamma_star[j] != 0.0))
                throw std::invalid_argument("DgpSpec: supp(beta*) must equal supp(gamma*)");
        }
        if (nb != k || ng != k)
            throw std::invalid_argument("DgpSpec: number of nonzeros must equal k in both equations");
        if (sigma_x <= 0.0) throw std::invalid_argument("DgpSpec: sigma_x must be positive");
        if (x_law == XLaw::bernoulli && sigma_x > 0.5)
            throw std::invalid_argument("DgpSpec: bernoulli law requires sigma_x <= 0.5 (success probability is real only then)");
    }
};

struct DatasetTruth {
    DgpSpec spec;
    VectorXd eta;
    VectorXd v;
};

struct Dataset {
    VectorXd Y;
    VectorXd D;
    MatrixXd X;
    bool demeaned = false;
    std::optional<DatasetTruth> truth;

    int n() const { return static_cast<int>(Y.size()); }
    int p() const { return static_cast<int>(X.cols()); }

    void check_dims() const {
        if (D.size() != Y.size() || X.rows() != Y.size())
            throw std::invalid_argument("Dataset: inconsistent dimensions");
    }
};

namespace detail {

inline DgpSpec make_flat_spec(const std::string& name, int n, int p, int k, double alpha_star, double sigma_x) {
    DgpSpec s;
    s.name = name;
    s.n = n;
    s.p = p;
    s.k = k;
    s.alpha_star = alpha_star;
    s.sigma_x = sigma_x;
    s.beta_star = VectorXd::Zero(p);
    s.gamma_star = VectorXd::Zero(p);
    // nonzeros occupy the first k positions: beta* = gamma* = (1,...,1,0,...,0)
    for (int j = 0; j < k; ++j) {
        s.beta_star[j] = 1.0;
        s.gamma_star[j] = 1.0;
    }
    return s;
}

}  // namespace detail

// Registry families: main(n, sigma_x) with n in {200,500,1000}; large(sigma_x)
// with (n,p) = (10000,4000); A1..A6(sigma_x) at (n,p) = (500,200) varying the
// covariate law, error laws, heteroscedasticity maps, k, and alpha*.
inline DgpSpec dgp_registry_lookup(const std::string& name, double sigma_x, int n = 0) {
    DgpSpec s;
    if (name == "main") {
        if (n != 200 && n != 500 && n != 1000)
            throw std::invalid_argument("dgp_registry_lookup: main requires n in {200,500,1000}");
        s = detail::make_flat_spec("main", n, 200, 5, 0.0, sigma_x);
    } else if (name == "large") {
        s = detail::make_flat_spec("large", 10000, 4000, 5, 0.0, sigma_x);
    } else if (name == "A1") {
        s = detail::make_flat_spec("A1", 500, 200, 5, 0.0, sigma_x);
        s.x_law = XLaw::bernoulli;
    } else if (name == "A2") {
        s = detail::make_flat_spec("A2", 500, 200, 5, 0.0, sigma_x);
        s.eta_law = ErrorLaw::t5_scaled;
        s.v_law = ErrorLaw::t5_scaled;
    } else if (name == "A3") {
        s = detail::make_flat_spec("A3", 500, 200, 5, 0.0, sigma_x);
        s.sigma_y_map = ScaleMap::multiplicative;
        s.sigma_d_map = ScaleMap::multiplicative;
    } else if (name == "A4") {
        s = detail::make_flat_spec("A4", 500, 200, 10, 0.0, sigma_x);
    } else if (name == "A5") {
        s = detail::make_flat_spec("A5", 500, 200, 5, 1.0, sigma_x);
    } else if (name == "A6") {
        s = detail::make_flat_spec("A6", 500, 200, 5, -1.0, sigma_x);
    } else {
        throw std::invalid_argument("dgp_registry_lookup: unknown DGP name '" + name + "'");
    }
    s.validate();
    return s;
}

// Draws one dataset. Draw order is frozen (X row-major, then v, then eta)
// and each entry consumes a fixed number of uniforms, so a dataset is a
// pure function of the stream identity.
inline Dataset generate_dataset(const DgpSpec& spec, RngStream stream) {
    spec.validate();
    const int n = spec.n, p = spec.p;
    Dataset ds;
    ds.X.resize(n, p);
    if (spec.x_law == XLaw::gaussian_iid) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j) ds.X(i, j) = spec.sigma_x * stream.normal();
    } else {
        const double q = (1.0 - std::sqrt(1.0 - 4.0 * spec.sigma_x * spec.sigma_x)) / 2.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j) ds.X(i, j) = stream.bernoulli(q);
    }
    VectorXd v(n), eta(n);
    for (int i = 0; i < n; ++i)
        v[i] = (spec.v_law == ErrorLaw::std_normal) ? stream.normal() : stream.t5_scaled();
    for (int i = 0; i < n; ++i)
        eta[i] = (spec.eta_law == ErrorLaw::std_normal) ? stream.normal() : stream.t5_scaled();

    const VectorXd xg = ds.X * spec.gamma_star;
    VectorXd sigma_d = VectorXd::Ones(n);
    if (spec.sigma_d_map == ScaleMap::multiplicative) {
        // sigma_d(X_i) = sqrt((1+X_i g*)^2 / mean_i (1+X_i g*)^2): self-normalizing,
        // mean of sigma_d^2 is exactly 1.
        const VectorXd base = (VectorXd::Ones(n) + xg).array().square();
        const double ms = base.mean();
        if (ms <= 0.0) throw std::runtime_error("generate_dataset: degenerate sigma_d map");
        sigma_d = (base / ms).array().sqrt();
    }
    ds.D = xg + sigma_d.cwiseProduct(v);

    const VectorXd xb = ds.X * spec.beta_star;
    const VectorXd signal = spec.alpha_star * ds.D + xb;
    VectorXd sigma_y = VectorXd::Ones(n);
    if (spec.sigma_y_map == ScaleMap::multiplicative) {
        const VectorXd base = (VectorXd::Ones(n) + signal).array().square();
        const double ms = base.mean();
        if (ms <= 0.0) throw std::runtime_error("generate_dataset: degenerate sigma_y map");
        sigma_y = (base / ms).array().sqrt();
    }
    ds.Y = signal + sigma_y.cwiseProduct(eta);
    ds.demeaned = false;
    ds.truth = DatasetTruth{spec, eta, v};
    return ds;
}

// Column-centers Y, D and every X column. Calling it on already-demeaned
// data returns the input unchanged and sets the warning, so the map is
// exactly idempotent.
inline Dataset demean(const Dataset& data, std::string* warning = nullptr) {
    data.check_dims();
    if (data.demeaned) {
        if (warning) *warning = "demean: input already demeaned; returned unchanged";
        return data;
    }
    Dataset out = data;
    out.Y.array() -= out.Y.mean();
    out.D.array() -= out.D.mean();
    out.X.rowwise() -= out.X.colwise().mean();
    out.demeaned = true;
    return out;
}

}  // namespace hdi
