#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hdi/estimators.hpp"
#include "hdi/model.hpp"
#include "hdi/reg_rules.hpp"
#include "hdi/stats.hpp"

namespace hdi {

struct EstimatorConfig {
    std::string estimator;       // pdl | debiased | ols | oracle
    std::string rule;            // bickel | lemma1 | bcch | cv_min | cv_1se (unused for ols/oracle)
    double multiplier = 1.0;
    std::optional<VarianceKind> variance;   // ols sandwich / pdl final-stage se
    double tau = 0.5;
    double phi = 1.0;
    double c = 1.1;
    int folds = 10;
    int grid_size = 100;

    // HCK for the full-design OLS, HC0 on the small post-double-Lasso design.
    VarianceKind resolved_variance() const {
        if (variance) return *variance;
        return (estimator == "ols") ? VarianceKind::HCK : VarianceKind::HC0;
    }

    std::string label() const {
        std::string s = estimator;
        if (estimator == "pdl" || estimator == "debiased") {
            s += "/" + rule;
        } else if (estimator == "ols") {
            s += "/";
            s += variance_kind_name(resolved_variance());
        }
        return s;
    }
};

struct StudyConfig {
    int schema_version = 1;
    std::string dgp_family = "main";
    std::vector<int> n_values;           // used by the "main" family
    std::vector<double> sigma_x_values;
    std::vector<EstimatorConfig> estimators;
    int reps = 1000;
    double ci_level = 0.90;
    std::uint64_t base_seed = 1;
    std::vector<int> amelioration;
    int threads = 1;

    void validate() const {
        if (reps < 1) throw std::invalid_argument("StudyConfig: reps must be at least 1");
        if (!(ci_level > 0.0 && ci_level < 1.0)) throw std::invalid_argument("StudyConfig: ci_level must lie in (0,1)");
        if (sigma_x_values.empty()) throw std::invalid_argument("StudyConfig: sigma_x grid is empty");
        if (estimators.empty()) throw std::invalid_argument("StudyConfig: no estimators given");
        if (threads < 1) throw std::invalid_argument("StudyConfig: threads must be at least 1");
        if (dgp_family == "main" && n_values.empty())
            throw std::invalid_argument("StudyConfig: main family requires n values");
    }
};

struct RepRecord {
    double estimate = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    double ci_lo = std::numeric_limits<double>::quiet_NaN();
    double ci_hi = std::numeric_limits<double>::quiet_NaN();
    bool has_selection = false;
    std::vector<int> selected;   // I1 u I2 (pdl) or supp(beta^) u supp(gamma^) (debiased)
    bool ok = true;
    bool flagged = false;        // collinearity pruning or HCK fallback fired
    std::string note;
};

struct Metrics {
    double bias = std::numeric_limits<double>::quiet_NaN();
    double std_dev = std::numeric_limits<double>::quiet_NaN();
    double bias_over_std = std::numeric_limits<double>::quiet_NaN();
    bool bias_over_std_infinite = false;   // std = 0 with identical estimates
    double coverage = std::numeric_limits<double>::quiet_NaN();
    double mean_ci_length = std::numeric_limits<double>::quiet_NaN();
    double mean_n_selected = std::numeric_limits<double>::quiet_NaN();
    double mean_n_selected_relevant = std::numeric_limits<double>::quiet_NaN();
    double prob_nothing_selected = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> conditional_ovb;
    int rep_count = 0;
    int flagged_count = 0;
    double mc_se_of_bias = std::numeric_limits<double>::quiet_NaN();
};

// Aggregates per-rep records in rep order with compensated sums, so the
// result depends only on the records, never on worker scheduling.
inline Metrics compute_metrics(const std::vector<RepRecord>& records, double alpha_star,
                               const std::vector<int>& relevant_set) {
    Metrics m;
    std::vector<double> est;
    CompensatedSum cover, ci_len, nsel, nsel_rel, nothing, cond_sum;
    long cond_count = 0;
    bool any_selection = false;
    for (const RepRecord& r : records) {
        if (!r.ok) continue;
        est.push_back(r.estimate);
        if (r.flagged) ++m.flagged_count;
        cover.add((r.ci_lo <= alpha_star && alpha_star <= r.ci_hi) ? 1.0 : 0.0);
        ci_len.add(r.ci_hi - r.ci_lo);
        if (r.has_selection) {
            any_selection = true;
            nsel.add(static_cast<double>(r.selected.size()));
            int rel = 0;
            for (int j : r.selected)
                for (int q : relevant_set)
                    if (j == q) { ++rel; break; }
            nsel_rel.add(static_cast<double>(rel));
            const bool s_r = r.selected.empty();
            nothing.add(s_r ? 1.0 : 0.0);
            if (s_r) {
                cond_sum.add(r.estimate - alpha_star);
                ++cond_count;
            }
        }
    }
    m.rep_count = static_cast<int>(est.size());
    if (m.rep_count == 0) return m;
    const double n = static_cast<double>(m.rep_count);
    m.bias = compensated_mean(est) - alpha_star;
    m.coverage = cover.value() / n;
    m.mean_ci_length = ci_len.value() / n;
    if (m.rep_count >= 2) {
        m.std_dev = sample_std(est);
        m.mc_se_of_bias = m.std_dev / std::sqrt(n);
        if (m.std_dev == 0.0) {
            m.bias_over_std_infinite = true;
            m.bias_over_std = (m.bias >= 0.0) ? std::numeric_limits<double>::infinity()
                                              : -std::numeric_limits<double>::infinity();
            if (m.bias == 0.0) m.bias_over_std = 0.0;
        } else {
            m.bias_over_std = m.bias / m.std_dev;
        }
    }
    if (any_selection) {
        m.mean_n_selected = nsel.value() / n;
        m.mean_n_selected_relevant = nsel_rel.value() / n;
        m.prob_nothing_selected = nothing.value() / n;
        if (cond_count > 0) m.conditional_ovb = cond_sum.value() / static_cast<double>(cond_count);
    }
    return m;
}

struct StudyCell {
    DgpSpec spec;
    EstimatorConfig est;
    Metrics metrics;
    bool infeasible = false;
    std::string note;
    double seconds = 0.0;
};

struct StudyResult {
    StudyConfig config;
    std::vector<StudyCell> cells;
};

namespace detail {

// Noise scale of the reduced form Y = X pi* + (eta + alpha* v); this is what
// the known-sigma rules plug in for the outcome equation.
inline double known_sigma_y(const DgpSpec& spec) {
    return std::sqrt(1.0 + spec.alpha_star * spec.alpha_star);
}

inline double max_col_mean_square(const MatrixXd& X) {
    double m = 0.0;
    for (int j = 0; j < X.cols(); ++j)
        m = std::max(m, X.col(j).squaredNorm() / X.rows());
    return m;
}

// Resolve a rule name into a concrete choice for the regression of y on
// design (either X or Z = (D,X)). Known-sigma rules need the DGP truth.
inline RegularizationChoice resolve_rule(const EstimatorConfig& cfg, const std::string& rule,
                                         const MatrixXd& design, const VectorXd& y, double known_sigma,
                                         bool have_truth, std::uint64_t base_seed, std::uint64_t rep,
                                         const std::string& cv_label) {
    RegularizationChoice ch;
    const int n = static_cast<int>(design.rows());
    const int p = static_cast<int>(design.cols());
    if (rule == "bickel") {
        if (!have_truth) throw std::invalid_argument("rule 'bickel' needs a known noise sd (synthetic DGPs only); use bcch or cv_*");
        ch = bickel_known_sigma(design, known_sigma, cfg.tau);
    } else if (rule == "lemma1") {
        if (!have_truth) throw std::invalid_argument("rule 'lemma1' needs a known noise sd (synthetic DGPs only); use bcch or cv_*");
        ch = lambda_lemma1(known_sigma, cfg.phi, max_col_mean_square(design), cfg.tau, n, p);
    } else if (rule == "bcch") {
        ch = lambda_bcch(design, y, cfg.c);
    } else if (rule == "cv_min" || rule == "cv_1se") {
        CvResult cv = cv_lambda(design, y, cfg.folds, cfg.grid_size, RngStream(base_seed, rep, cv_label));
        ch = (rule == "cv_min") ? cv.cv_min : cv.cv_1se;
    } else {
        throw std::invalid_argument("unknown regularization rule '" + rule + "'");
    }
    if (cfg.multiplier != 1.0) ch = scale_choice(ch, cfg.multiplier);
    return ch;
}

inline RepRecord evaluate_estimator(const EstimatorConfig& cfg, const Dataset& data, const DgpSpec& spec,
                                    double ci_level, const std::vector<int>& amelioration,
                                    std::uint64_t base_seed, std::uint64_t rep, const MatrixXd* gram) {
    RepRecord rec;
    try {
        if (cfg.estimator == "oracle") {
            rec.estimate = oracle_estimator(data);
            rec.se = 0.0;
            rec.ci_lo = rec.ci_hi = rec.estimate;
        } else if (cfg.estimator == "ols") {
            const OlsFit fit = ols_fit(data, cfg.resolved_variance());
            rec.estimate = fit.alpha;
            rec.se = fit.alpha_se;
            rec.flagged = fit.singular_fallback_used || fit.collinear_dropped;
            const Interval ci = confidence_interval(rec.estimate, rec.se, ci_level);
            rec.ci_lo = ci.lo;
            rec.ci_hi = ci.hi;
        } else if (cfg.estimator == "pdl") {
            const RegularizationChoice c1 = resolve_rule(cfg, cfg.rule, data.X, data.Y,
                                                         known_sigma_y(spec), data.truth.has_value(),
                                                         base_seed, rep, "cv_y");
            const RegularizationChoice c2 = resolve_rule(cfg, cfg.rule, data.X, data.D, 1.0,
                                                         data.truth.has_value(), base_seed, rep, "cv_d");
            const PdlFit fit = post_double_lasso(data, c1, c2, amelioration, cfg.resolved_variance(), gram);
            rec.estimate = fit.alpha_tilde;
            rec.se = fit.se;
            rec.flagged = fit.singular_fallback_used;
            rec.has_selection = true;
            std::set<int> u(fit.I1.begin(), fit.I1.end());
            u.insert(fit.I2.begin(), fit.I2.end());
            rec.selected.assign(u.begin(), u.end());
            const Interval ci = confidence_interval(rec.estimate, rec.se, ci_level);
            rec.ci_lo = ci.lo;
            rec.ci_hi = ci.hi;
        } else if (cfg.estimator == "debiased") {
            MatrixXd Z(data.n(), data.p() + 1);
            Z.col(0) = data.D;
            Z.rightCols(data.p()) = data.X;
            const RegularizationChoice c1 = resolve_rule(cfg, cfg.rule, Z, data.Y,
                                                         known_sigma_y(spec), data.truth.has_value(),
                                                         base_seed, rep, "cv_y");
            const RegularizationChoice c2 = resolve_rule(cfg, cfg.rule, data.X, data.D, 1.0,
                                                         data.truth.has_value(), base_seed, rep, "cv_d");
            const DebiasedFit fit = debiased_lasso(data, c1, c2);
            rec.estimate = fit.alpha_tilde;
            rec.se = fit.se;
            rec.has_selection = true;
            std::set<int> u;
            for (int j : fit.joint.support)
                if (j >= 1) u.insert(j - 1);   // skip the alpha slot
            u.insert(fit.nodewise.support.begin(), fit.nodewise.support.end());
            rec.selected.assign(u.begin(), u.end());
            const Interval ci = confidence_interval(rec.estimate, rec.se, ci_level);
            rec.ci_lo = ci.lo;
            rec.ci_hi = ci.hi;
        } else {
            throw std::invalid_argument("unknown estimator '" + cfg.estimator + "'");
        }
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.note = e.what();
    }
    return rec;
}

}  // namespace detail

// One grid cell of a study: all estimator configs on the same data stream.
// Reps are independent work items; outputs are indexed by rep and aggregated
// in rep order, so any worker count produces identical results.
inline void run_cell(const DgpSpec& spec, const StudyConfig& config,
                     std::vector<std::vector<RepRecord>>& per_estimator_records) {
    const int reps = config.reps;
    const std::size_t n_est = config.estimators.size();
    per_estimator_records.assign(n_est, std::vector<RepRecord>(reps));

    bool need_gram = false;
    for (const auto& est : config.estimators)
        if (est.estimator == "pdl") need_gram = true;
    const bool gram_worth_it = need_gram && spec.p <= 1024;

    std::atomic<int> next_rep{0};
    auto worker = [&]() {
        while (true) {
            const int r = next_rep.fetch_add(1);
            if (r >= reps) break;
            Dataset ds = generate_dataset(spec, RngStream(config.base_seed, r, "data"));
            ds = demean(ds);
            MatrixXd gram;
            if (gram_worth_it) gram.noalias() = ds.X.transpose() * ds.X / static_cast<double>(spec.n);
            for (std::size_t e = 0; e < n_est; ++e) {
                per_estimator_records[e][r] = detail::evaluate_estimator(
                    config.estimators[e], ds, spec, config.ci_level, config.amelioration,
                    config.base_seed, r, gram_worth_it ? &gram : nullptr);
            }
        }
    };

    const int nthreads = std::max(1, std::min(config.threads, reps));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
}

inline StudyResult run_study(const StudyConfig& config) {
    config.validate();
    StudyResult result;
    result.config = config;

    std::vector<int> n_grid = config.n_values;
    if (config.dgp_family != "main") n_grid = {0};

    for (int n : n_grid) {
        for (double sx : config.sigma_x_values) {
            const DgpSpec spec = dgp_registry_lookup(config.dgp_family, sx, n);
            const std::vector<int> relevant = spec.support();

            // OLS cells need p+1 <= n; infeasible cells are reported, not fatal.
            std::vector<EstimatorConfig> feasible;
            std::vector<StudyCell> infeasible_cells;
            for (const auto& est : config.estimators) {
                if (est.estimator == "ols" && spec.p + 1 > spec.n) {
                    StudyCell cell;
                    cell.spec = spec;
                    cell.est = est;
                    cell.infeasible = true;
                    cell.note = "OLS requires p + 1 <= n";
                    infeasible_cells.push_back(std::move(cell));
                } else {
                    feasible.push_back(est);
                }
            }

            StudyConfig sub = config;
            sub.estimators = feasible;
            std::vector<std::vector<RepRecord>> records;
            const auto t0 = std::chrono::steady_clock::now();
            if (!feasible.empty()) run_cell(spec, sub, records);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            for (std::size_t e = 0; e < feasible.size(); ++e) {
                StudyCell cell;
                cell.spec = spec;
                cell.est = feasible[e];
                cell.metrics = compute_metrics(records[e], spec.alpha_star, relevant);
                cell.seconds = secs / std::max<std::size_t>(feasible.size(), 1);
                int bad = 0;
                for (const auto& r : records[e])
                    if (!r.ok) ++bad;
                if (bad > 0) cell.note = std::to_string(bad) + " rep(s) failed";
                result.cells.push_back(std::move(cell));
            }
            for (auto& cell : infeasible_cells) result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

// One-shot estimation on a dataset (CLI `fit` and the subsample protocol
// both go through this). Data-driven rules resolve on the data at hand;
// known-sigma rules require a truth sidecar.
inline RepRecord estimate_once(const Dataset& data_in, const EstimatorConfig& cfg, double ci_level,
                               std::uint64_t base_seed) {
    const Dataset data = data_in.demeaned ? data_in : demean(data_in);
    DgpSpec dummy;
    const DgpSpec& spec = data.truth ? data.truth->spec : dummy;
    return detail::evaluate_estimator(cfg, data, spec, ci_level, {}, base_seed, 0, nullptr);
}

// ---- Subsample-with-replacement bias protocol ----

struct SubsampleConfig {
    std::vector<int> sizes;
    int reps = 2000;
    std::vector<EstimatorConfig> estimators;
    std::uint64_t base_seed = 1;
    double ci_level = 0.90;
    int threads = 1;

    void validate(int n_data) const {
        if (sizes.empty()) throw std::invalid_argument("SubsampleConfig: sizes empty");
        for (int s : sizes)
            if (s < 2 || s > n_data) throw std::invalid_argument("SubsampleConfig: sizes must lie in [2, n]");
        if (reps < 1) throw std::invalid_argument("SubsampleConfig: reps must be at least 1");
        if (estimators.empty()) throw std::invalid_argument("SubsampleConfig: no estimators given");
    }
};

struct SubsampleCell {
    int size = 0;
    EstimatorConfig est;
    double full_sample_estimate = std::numeric_limits<double>::quiet_NaN();
    double mean_subsample_estimate = std::numeric_limits<double>::quiet_NaN();
    double bias = std::numeric_limits<double>::quiet_NaN();
    double std_dev = std::numeric_limits<double>::quiet_NaN();
    double bias_over_std = std::numeric_limits<double>::quiet_NaN();
    bool std_undefined = false;
    int rep_count = 0;
    int flagged_count = 0;
    std::string note;
};

struct SubsampleResult {
    SubsampleConfig config;
    std::vector<SubsampleCell> cells;
};

namespace detail {

inline Dataset take_rows(const Dataset& data, const std::vector<int>& rows) {
    Dataset out;
    const int m = static_cast<int>(rows.size());
    out.Y.resize(m);
    out.D.resize(m);
    out.X.resize(m, data.X.cols());
    for (int i = 0; i < m; ++i) {
        out.Y[i] = data.Y[rows[i]];
        out.D[i] = data.D[rows[i]];
        out.X.row(i) = data.X.row(rows[i]);
    }
    out.demeaned = false;
    if (data.truth) {
        DatasetTruth t = *data.truth;
        t.eta.resize(m);
        t.v.resize(m);
        for (int i = 0; i < m; ++i) {
            t.eta[i] = data.truth->eta[rows[i]];
            t.v[i] = data.truth->v[rows[i]];
        }
        out.truth = std::move(t);
    }
    return out;
}

}  // namespace detail

// Draws with-replacement subsamples, re-estimates with the same estimator,
// rule and multiplier, and reports the deviation of the mean subsample
// estimate from the full-sample point estimate.
inline SubsampleResult subsample_bias_study(const Dataset& data_in, const SubsampleConfig& config) {
    data_in.check_dims();
    config.validate(data_in.n());
    const Dataset data = data_in.demeaned ? data_in : demean(data_in);
    const DgpSpec* spec = data.truth ? &data.truth->spec : nullptr;
    DgpSpec dummy;
    dummy.alpha_star = 0.0;

    SubsampleResult result;
    result.config = config;

    for (const auto& est : config.estimators) {
        RepRecord full = detail::evaluate_estimator(est, data, spec ? *spec : dummy, config.ci_level, {},
                                                    config.base_seed, 0xFFFFFFFFull, nullptr);
        for (int size : config.sizes) {
            SubsampleCell cell;
            cell.size = size;
            cell.est = est;
            if (!full.ok) {
                cell.note = "full-sample estimate failed: " + full.note;
                result.cells.push_back(std::move(cell));
                continue;
            }
            cell.full_sample_estimate = full.estimate;

            std::vector<RepRecord> recs(config.reps);
            std::atomic<int> next{0};
            auto worker = [&]() {
                while (true) {
                    const int r = next.fetch_add(1);
                    if (r >= config.reps) break;
                    RngStream stream(config.base_seed, r, "subsample/" + std::to_string(size));
                    std::vector<int> rows(size);
                    for (int i = 0; i < size; ++i)
                        rows[i] = static_cast<int>(stream.next_u64() % static_cast<std::uint64_t>(data.n()));
                    Dataset sub = detail::take_rows(data, rows);
                    sub = demean(sub);
                    recs[r] = detail::evaluate_estimator(est, sub, spec ? *spec : dummy, config.ci_level, {},
                                                         config.base_seed, r, nullptr);
                }
            };
            const int nthreads = std::max(1, std::min(config.threads, config.reps));
            if (nthreads == 1) {
                worker();
            } else {
                std::vector<std::thread> pool;
                for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
                for (auto& t : pool) t.join();
            }

            std::vector<double> est_vals;
            for (const auto& r : recs) {
                if (!r.ok) continue;
                est_vals.push_back(r.estimate);
                if (r.flagged) ++cell.flagged_count;
            }
            cell.rep_count = static_cast<int>(est_vals.size());
            if (cell.rep_count > 0) {
                cell.mean_subsample_estimate = compensated_mean(est_vals);
                cell.bias = cell.mean_subsample_estimate - cell.full_sample_estimate;
            }
            if (cell.rep_count >= 2) {
                cell.std_dev = sample_std(est_vals);
                cell.bias_over_std = (cell.std_dev > 0.0)
                                         ? cell.bias / cell.std_dev
                                         : std::numeric_limits<double>::infinity();
            } else {
                cell.std_undefined = true;
                cell.note = "std undefined with a single repetition";
            }
            const int bad = config.reps - cell.rep_count;
            if (bad > 0) cell.note += (cell.note.empty() ? "" : "; ") + std::to_string(bad) + " rep(s) failed";
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

}  // namespace hdi
