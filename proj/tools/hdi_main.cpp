#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hdi/estimators.hpp"
#include "hdi/io.hpp"
#include "hdi/mc.hpp"
#include "hdi/model.hpp"
#include "hdi/ovb.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stod(tok));
    }
    return out;
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) fs::create_directories(dir);
}

std::string joined(const std::string& dir, const std::string& file) {
    return (fs::path(dir) / file).string();
}

hdi::RunManifest base_manifest(const nlohmann::json& effective, std::uint64_t seed) {
    hdi::RunManifest m;
    m.config_digest = hdi::config_digest(effective);
    m.base_seed = seed;
    m.wall_clock_utc = hdi::utc_timestamp_now();
    m.effective_config = effective;
    return m;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, int threads_override,
                 long long seed_override, int reps_override) {
    hdi::StudyConfig cfg = hdi::parse_config(config_path);
    if (threads_override > 0) cfg.threads = threads_override;
    if (seed_override >= 0) cfg.base_seed = static_cast<std::uint64_t>(seed_override);
    if (reps_override > 0) cfg.reps = reps_override;
    ensure_dir(out_dir);

    const auto t0 = std::chrono::steady_clock::now();
    hdi::StudyResult result = hdi::run_study(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    hdi::write_csv(result, joined(out_dir, "results.csv"));
    for (const std::string& kind : hdi::plot_kinds())
        hdi::write_plot_spec(result, kind, joined(out_dir, "plot_" + kind + ".json"));

    hdi::RunManifest man = base_manifest(hdi::config_to_json(cfg), cfg.base_seed);
    man.total_seconds = secs;
    for (const auto& cell : result.cells) {
        nlohmann::json c;
        c["dgp"] = cell.spec.name;
        c["n"] = cell.spec.n;
        c["sigma_x"] = cell.spec.sigma_x;
        c["estimator"] = cell.est.label();
        c["multiplier"] = cell.est.multiplier;
        c["seconds"] = cell.seconds;
        c["status"] = cell.infeasible ? "infeasible" : "ok";
        man.cell_runtimes.push_back(c);
    }
    hdi::write_manifest(man, joined(out_dir, "run_manifest.json"));
    std::printf("simulate: %zu cells, %.1fs, outputs in %s\n", result.cells.size(), secs, out_dir.c_str());
    return 0;
}

int cmd_ovb(int n, int p, int k, double tau, double phi, double a, double b, double sigma_eta,
            double sigma_v, double s_over_n, int grid, const std::string& out_dir) {
    hdi::OvbInputs in;
    in.n = n; in.p = p; in.k = k; in.tau = tau; in.phi = phi;
    in.a = a; in.b = b; in.sigma_eta = sigma_eta; in.sigma_v = sigma_v; in.s_over_n = s_over_n;
    const hdi::OvbBound bound = hdi::ovb_lower_bound(in, grid);
    const hdi::SparsityDiagnostics diag = hdi::sparsity_diagnostics(n, p, k);

    std::printf("OVB lower bound report\n");
    std::printf("  inputs: n=%d p=%d k=%d tau=%g phi=%g a=%g b=%g sigma_eta=%g sigma_v=%g\n",
                n, p, k, tau, phi, a, b, sigma_eta, sigma_v);
    std::printf("  k log(p)/n        = %.6f\n", diag.klogp_over_n);
    std::printf("  k log(p)/sqrt(n)  = %.6f\n", diag.klogp_over_sqrtn);
    std::printf("  lower bound       = %.8f%s\n", bound.value, bound.vacuous ? "  (vacuous at these dimensions)" : "");
    std::printf("  maximizing r      = %.6f  (T1=%.8f, T2=%.8f)\n", bound.r_star, bound.T1_at_r, bound.T2_at_r);
    std::printf("  sigma_alpha_tilde = %.8f\n", bound.sigma_alpha_tilde);
    std::printf("  bound / sigma     = %.4f\n", bound.ratio);
    std::printf("  P(event) lower    = %.4f\n", bound.event_prob_lower);
    std::printf("  no-OVB regime     = %s  (|a|>3 or |b|>3)\n", hdi::absence_of_ovb_check(a, b) ? "yes" : "no");

    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        std::ofstream out(joined(out_dir, "ovb.csv"));
        out << "n,p,k,tau,phi,a,b,sigma_eta,sigma_v,value,r_star,T1,T2,sigma_alpha_tilde,ratio,"
               "event_prob_lower,vacuous,klogp_over_n,klogp_over_sqrtn\n";
        out << n << ',' << p << ',' << k << ',' << hdi::format_value(tau) << ',' << hdi::format_value(phi)
            << ',' << hdi::format_value(a) << ',' << hdi::format_value(b) << ',' << hdi::format_value(sigma_eta)
            << ',' << hdi::format_value(sigma_v) << ',' << hdi::format_value(bound.value) << ','
            << hdi::format_value(bound.r_star) << ',' << hdi::format_value(bound.T1_at_r) << ','
            << hdi::format_value(bound.T2_at_r) << ',' << hdi::format_value(bound.sigma_alpha_tilde) << ','
            << hdi::format_value(bound.ratio) << ',' << hdi::format_value(bound.event_prob_lower) << ','
            << (bound.vacuous ? 1 : 0) << ',' << hdi::format_value(diag.klogp_over_n) << ','
            << hdi::format_value(diag.klogp_over_sqrtn) << '\n';

        nlohmann::json eff;
        eff["command"] = "ovb";
        eff["params"] = {{"n", n}, {"p", p}, {"k", k}, {"tau", tau}, {"phi", phi}, {"a", a}, {"b", b},
                         {"sigma_eta", sigma_eta}, {"sigma_v", sigma_v}, {"s_over_n", s_over_n}, {"grid", grid}};
        hdi::write_manifest(base_manifest(eff, 0), joined(out_dir, "run_manifest.json"));
    }
    return 0;
}

int cmd_certify(const std::string& theta_csv, double s_over_n, double sigma, double phi, double tau,
                int n, int p, const std::string& out_dir) {
    const std::vector<double> tv = parse_double_list(theta_csv);
    if (tv.empty()) throw std::invalid_argument("certify: --theta needs a comma-separated list");
    Eigen::VectorXd theta(tv.size());
    for (std::size_t i = 0; i < tv.size(); ++i) theta[i] = tv[i];
    const hdi::Certificate cert = hdi::under_selection_certificate(theta, s_over_n, sigma, phi, tau, n, p);

    std::printf("Under-selection certificate\n");
    std::printf("  lambda            = %.8f\n", cert.lambda);
    std::printf("  threshold n/(2s)  = %.8f\n", cert.thresholds[0]);
    std::printf("  all |theta*| below threshold: %s\n", cert.all_below ? "yes" : "no");
    std::printf("  P(theta_hat = 0) >= %.6f (single equation)\n", cert.prob_lower_single);
    std::printf("  both equations   >= %.6f\n", cert.prob_lower_double);
    if (cert.all_below)
        std::printf("  certified: the Lasso selects nothing with at least the probability above\n");

    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        std::ofstream out(joined(out_dir, "certificate.csv"));
        out << "lambda,threshold,all_below,prob_lower_single,prob_lower_double\n";
        out << hdi::format_value(cert.lambda) << ',' << hdi::format_value(cert.thresholds[0]) << ','
            << (cert.all_below ? 1 : 0) << ',' << hdi::format_value(cert.prob_lower_single) << ','
            << hdi::format_value(cert.prob_lower_double) << '\n';
        nlohmann::json eff;
        eff["command"] = "certify";
        eff["params"] = {{"theta", tv}, {"s_over_n", s_over_n}, {"sigma", sigma}, {"phi", phi},
                         {"tau", tau}, {"n", n}, {"p", p}};
        hdi::write_manifest(base_manifest(eff, 0), joined(out_dir, "run_manifest.json"));
    }
    return 0;
}

hdi::EstimatorConfig estimator_from_flags(const std::string& estimator, const std::string& rule_raw,
                                          double multiplier, const std::string& variance) {
    nlohmann::json je;
    je["estimator"] = estimator;
    if (!rule_raw.empty()) je["rule"] = rule_raw;
    if (multiplier > 0.0) je["multiplier"] = multiplier;
    if (!variance.empty()) je["variance"] = variance;
    return hdi::detail::parse_estimator(je, "cli");
}

int cmd_subsample(const std::string& config_path, const std::string& csv_path, const std::string& out_dir,
                  int threads_override, long long seed_override, int reps_override) {
    const nlohmann::json j = hdi::detail::load_json_file(config_path);
    hdi::detail::reject_unknown_keys(j, {"schema_version", "data", "sizes", "reps", "estimators",
                                         "base_seed", "ci_level", "threads"}, "");
    if (!j.contains("data") || !j["data"].is_object())
        throw std::invalid_argument("config: 'data' object is required (outcome/treatment/controls)");
    hdi::detail::reject_unknown_keys(j["data"], {"outcome", "treatment", "controls"}, "data.");
    const std::string outcome = j["data"].at("outcome").get<std::string>();
    const std::string treatment = j["data"].at("treatment").get<std::string>();
    std::vector<std::string> controls;
    if (j["data"].contains("controls"))
        for (const auto& c : j["data"]["controls"]) controls.push_back(c.get<std::string>());

    hdi::SubsampleConfig cfg;
    if (!j.contains("sizes")) throw std::invalid_argument("config: 'sizes' is required");
    for (const auto& v : j["sizes"]) cfg.sizes.push_back(v.get<int>());
    if (j.contains("reps")) cfg.reps = j["reps"].get<int>();
    if (j.contains("base_seed")) cfg.base_seed = j["base_seed"].get<std::uint64_t>();
    if (j.contains("ci_level")) cfg.ci_level = j["ci_level"].get<double>();
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
    if (!j.contains("estimators") || !j["estimators"].is_array() || j["estimators"].empty())
        throw std::invalid_argument("config: 'estimators' must be a non-empty array");
    for (std::size_t i = 0; i < j["estimators"].size(); ++i)
        cfg.estimators.push_back(hdi::detail::parse_estimator(j["estimators"][i], "estimators[" + std::to_string(i) + "]"));

    if (threads_override > 0) cfg.threads = threads_override;
    if (seed_override >= 0) cfg.base_seed = static_cast<std::uint64_t>(seed_override);
    if (reps_override > 0) cfg.reps = reps_override;

    const hdi::Dataset data = hdi::load_csv_dataset(csv_path, outcome, treatment, controls);
    ensure_dir(out_dir);

    const auto t0 = std::chrono::steady_clock::now();
    const hdi::SubsampleResult result = hdi::subsample_bias_study(data, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    hdi::write_subsample_csv(result, joined(out_dir, "subsample.csv"));
    hdi::write_subsample_plot_spec(result, "bias_over_std", joined(out_dir, "plot_bias_over_std.json"));
    hdi::write_subsample_plot_spec(result, "bias", joined(out_dir, "plot_bias.json"));

    nlohmann::json eff = j;
    eff["csv"] = csv_path;
    hdi::RunManifest man = base_manifest(eff, cfg.base_seed);
    man.total_seconds = secs;
    hdi::write_manifest(man, joined(out_dir, "run_manifest.json"));
    std::printf("subsample: %zu cells, %.1fs, outputs in %s\n", result.cells.size(), secs, out_dir.c_str());
    return 0;
}

int cmd_fit(const std::string& csv_path, const std::string& estimator, const std::string& rule,
            double multiplier, const std::string& variance, const std::string& outcome,
            const std::string& treatment, const std::string& controls_csv, double level,
            long long seed, const std::string& out_dir) {
    std::vector<std::string> controls;
    std::stringstream ss(controls_csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) controls.push_back(tok);

    const hdi::Dataset data = hdi::load_csv_dataset(csv_path, outcome, treatment, controls);
    const hdi::EstimatorConfig cfg = estimator_from_flags(estimator, rule, multiplier, variance);
    const std::uint64_t base_seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : 1;
    const hdi::RepRecord rec = hdi::estimate_once(data, cfg, level, base_seed);
    if (!rec.ok) {
        std::fprintf(stderr, "fit failed: %s\n", rec.note.c_str());
        return 1;
    }
    std::printf("estimator        : %s\n", cfg.label().c_str());
    std::printf("estimate         : %.10g\n", rec.estimate);
    std::printf("std. error       : %.10g\n", rec.se);
    std::printf("%.0f%% CI           : [%.10g, %.10g]\n", level * 100, rec.ci_lo, rec.ci_hi);
    if (rec.has_selection)
        std::printf("selected controls: %zu\n", rec.selected.size());
    if (rec.flagged) std::printf("note             : collinear columns dropped or variance fallback used\n");

    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        std::ofstream out(joined(out_dir, "fit.csv"));
        out << "estimator,rule,multiplier,estimate,se,ci_lo,ci_hi,n_selected,flagged\n";
        out << cfg.estimator << ',' << cfg.rule << ',' << hdi::format_value(cfg.multiplier) << ','
            << hdi::format_value(rec.estimate) << ',' << hdi::format_value(rec.se) << ','
            << hdi::format_value(rec.ci_lo) << ',' << hdi::format_value(rec.ci_hi) << ','
            << (rec.has_selection ? std::to_string(rec.selected.size()) : "") << ',' << (rec.flagged ? 1 : 0)
            << '\n';
        nlohmann::json eff;
        eff["command"] = "fit";
        eff["csv"] = csv_path;
        eff["estimator"] = cfg.estimator;
        eff["rule"] = cfg.rule;
        eff["multiplier"] = cfg.multiplier;
        hdi::write_manifest(base_manifest(eff, base_seed), joined(out_dir, "run_manifest.json"));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hdinfer: finite-sample inference toolkit for Lasso-based estimators"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "run a Monte Carlo study from a config file");
    std::string sim_config, sim_out = "out";
    int sim_threads = 0, sim_reps = 0;
    long long sim_seed = -1;
    sim->add_option("config", sim_config, "study config (JSON)")->required();
    sim->add_option("--out-dir", sim_out, "output directory");
    sim->add_option("--threads", sim_threads, "worker threads (results are identical for any value)");
    sim->add_option("--seed", sim_seed, "override base seed");
    sim->add_option("--reps", sim_reps, "override repetition count");

    // ovb
    auto* ovb = app.add_subcommand("ovb", "finite-sample OVB lower bound report");
    int ovb_n = 10000, ovb_p = 4000, ovb_k = 5, ovb_grid = 1024;
    double ovb_tau = 0.5, ovb_phi = 0.95, ovb_a = 1.0, ovb_b = 1.0, ovb_se = 1.0, ovb_sv = 1.0, ovb_son = 1.0;
    std::string ovb_out;
    ovb->add_option("--n", ovb_n, "sample size");
    ovb->add_option("--p", ovb_p, "number of controls");
    ovb->add_option("--k", ovb_k, "sparsity");
    ovb->add_option("--tau", ovb_tau, "tail parameter tau");
    ovb->add_option("--phi", ovb_phi, "incoherence constant phi");
    ovb->add_option("--a", ovb_a, "beta-coefficient multiplier a in (0,1]");
    ovb->add_option("--b", ovb_b, "gamma-coefficient multiplier b in (0,1]");
    ovb->add_option("--sigma-eta", ovb_se, "outcome noise sd");
    ovb->add_option("--sigma-v", ovb_sv, "treatment noise sd");
    ovb->add_option("--s-over-n", ovb_son, "relevant-column mean square s/n");
    ovb->add_option("--grid-size", ovb_grid, "r grid size");
    ovb->add_option("--out-dir", ovb_out, "also write ovb.csv and a manifest here");

    // certify
    auto* cert = app.add_subcommand("certify", "Lasso under-selection certificate");
    std::string cert_theta;
    double cert_son = 1.0, cert_sigma = 1.0, cert_phi = 0.95, cert_tau = 0.5;
    int cert_n = 10000, cert_p = 4000;
    std::string cert_out;
    cert->add_option("--theta", cert_theta, "comma-separated nonzero coefficients")->required();
    cert->add_option("--s-over-n", cert_son, "relevant-column mean square s/n");
    cert->add_option("--sigma", cert_sigma, "noise sd");
    cert->add_option("--phi", cert_phi, "incoherence constant");
    cert->add_option("--tau", cert_tau, "tail parameter");
    cert->add_option("--n", cert_n, "sample size");
    cert->add_option("--p", cert_p, "number of controls");
    cert->add_option("--out-dir", cert_out, "also write certificate.csv and a manifest here");

    // subsample
    auto* sub = app.add_subcommand("subsample", "subsample-with-replacement bias study on a CSV dataset");
    std::string sub_config, sub_csv, sub_out = "out";
    int sub_threads = 0, sub_reps = 0;
    long long sub_seed = -1;
    sub->add_option("config", sub_config, "subsample config (JSON)")->required();
    sub->add_option("csv", sub_csv, "dataset (CSV with header)")->required();
    sub->add_option("--out-dir", sub_out, "output directory");
    sub->add_option("--threads", sub_threads, "worker threads");
    sub->add_option("--seed", sub_seed, "override base seed");
    sub->add_option("--reps", sub_reps, "override repetition count");

    // fit
    auto* fit = app.add_subcommand("fit", "one-shot estimation on a CSV dataset");
    std::string fit_csv, fit_estimator = "pdl", fit_rule = "bcch", fit_variance, fit_outcome, fit_treatment, fit_controls;
    double fit_mult = 0.0, fit_level = 0.90;
    long long fit_seed = -1;
    std::string fit_out;
    fit->add_option("csv", fit_csv, "dataset (CSV with header)")->required();
    fit->add_option("--estimator", fit_estimator, "pdl | debiased | ols | oracle");
    fit->add_option("--rule", fit_rule, "bcch | cv_min | cv_1se (suffix ×m scales lambda)");
    fit->add_option("--multiplier", fit_mult, "lambda multiplier");
    fit->add_option("--variance", fit_variance, "HC0 | HC3 | HCK");
    fit->add_option("--outcome", fit_outcome, "outcome column")->required();
    fit->add_option("--treatment", fit_treatment, "treatment column")->required();
    fit->add_option("--controls", fit_controls, "comma-separated control columns (default: all others)");
    fit->add_option("--level", fit_level, "confidence level");
    fit->add_option("--seed", fit_seed, "base seed for CV folds");
    fit->add_option("--out-dir", fit_out, "also write fit.csv and a manifest here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(sim_config, sim_out, sim_threads, sim_seed, sim_reps);
        if (ovb->parsed())
            return cmd_ovb(ovb_n, ovb_p, ovb_k, ovb_tau, ovb_phi, ovb_a, ovb_b, ovb_se, ovb_sv, ovb_son,
                           ovb_grid, ovb_out);
        if (cert->parsed())
            return cmd_certify(cert_theta, cert_son, cert_sigma, cert_phi, cert_tau, cert_n, cert_p, cert_out);
        if (sub->parsed()) return cmd_subsample(sub_config, sub_csv, sub_out, sub_threads, sub_seed, sub_reps);
        if (fit->parsed())
            return cmd_fit(fit_csv, fit_estimator, fit_rule, fit_mult, fit_variance, fit_outcome,
                           fit_treatment, fit_controls, fit_level, fit_seed, fit_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
