#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdi/mc.hpp"
#include "hdi/model.hpp"
#include "hdi/rng.hpp"

namespace hdi {

using nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

// ---- numeric formatting: 10 significant digits, round-half-even ----

inline std::string format_value(double x) {
    if (std::isnan(x)) return "";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", x);
    return buf;
}

// ---- config parsing ----

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + path + it.key() + "'");
    }
}

inline VarianceKind parse_variance(const std::string& s, const std::string& path) {
    if (s == "HC0") return VarianceKind::HC0;
    if (s == "HC3") return VarianceKind::HC3;
    if (s == "HCK") return VarianceKind::HCK;
    throw std::invalid_argument("config: '" + path + "' must be HC0, HC3 or HCK");
}

// Rule strings accept a trailing multiplier: "bcch×1.5" (or ASCII "x1.5").
inline void parse_rule_string(const std::string& raw, std::string& rule, std::optional<double>& mult) {
    static const std::string utf_times = "\xc3\x97";
    std::size_t pos = raw.find(utf_times);
    std::size_t skip = utf_times.size();
    if (pos == std::string::npos) {
        pos = raw.find_last_of('x');
        skip = 1;
        if (pos == std::string::npos || pos == 0 || pos + 1 >= raw.size() ||
            !(std::isdigit(static_cast<unsigned char>(raw[pos + 1])) || raw[pos + 1] == '.')) {
            rule = raw;
            mult = std::nullopt;
            return;
        }
    }
    rule = raw.substr(0, pos);
    try {
        std::size_t used = 0;
        const std::string tail = raw.substr(pos + skip);
        const double m = std::stod(tail, &used);
        if (used != tail.size()) throw std::invalid_argument("trailing characters");
        mult = m;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: cannot parse multiplier suffix in rule '" + raw + "'");
    }
}

inline EstimatorConfig parse_estimator(const json& j, const std::string& path) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + path + "' must be an object");
    reject_unknown_keys(j, {"estimator", "rule", "multiplier", "variance", "tau", "phi", "c", "folds", "grid_size"}, path + ".");
    EstimatorConfig cfg;
    if (!j.contains("estimator") || !j["estimator"].is_string())
        throw std::invalid_argument("config: '" + path + ".estimator' must be a string");
    cfg.estimator = j["estimator"].get<std::string>();
    if (cfg.estimator != "pdl" && cfg.estimator != "debiased" && cfg.estimator != "ols" && cfg.estimator != "oracle")
        throw std::invalid_argument("config: '" + path + ".estimator' must be pdl, debiased, ols or oracle");

    std::optional<double> suffix_mult;
    if (j.contains("rule")) {
        if (!j["rule"].is_string()) throw std::invalid_argument("config: '" + path + ".rule' must be a string");
        parse_rule_string(j["rule"].get<std::string>(), cfg.rule, suffix_mult);
        if (cfg.rule != "bickel" && cfg.rule != "lemma1" && cfg.rule != "bcch" && cfg.rule != "cv_min" && cfg.rule != "cv_1se")
            throw std::invalid_argument("config: '" + path + ".rule' names an unknown rule '" + cfg.rule + "'");
    } else if (cfg.estimator == "pdl" || cfg.estimator == "debiased") {
        throw std::invalid_argument("config: '" + path + "' needs a rule for estimator '" + cfg.estimator + "'");
    }
    if (j.contains("multiplier")) {
        if (suffix_mult)
            throw std::invalid_argument("config: '" + path + "' gives a multiplier both in the rule string and as a key");
        if (!j["multiplier"].is_number()) throw std::invalid_argument("config: '" + path + ".multiplier' must be a number");
        cfg.multiplier = j["multiplier"].get<double>();
    } else if (suffix_mult) {
        cfg.multiplier = *suffix_mult;
    }
    if (cfg.multiplier <= 0.0) throw std::invalid_argument("config: '" + path + ".multiplier' must be positive");
    if (j.contains("variance")) cfg.variance = parse_variance(j["variance"].get<std::string>(), path + ".variance");
    if (j.contains("tau")) cfg.tau = j["tau"].get<double>();
    if (j.contains("phi")) cfg.phi = j["phi"].get<double>();
    if (j.contains("c")) cfg.c = j["c"].get<double>();
    if (j.contains("folds")) cfg.folds = j["folds"].get<int>();
    if (j.contains("grid_size")) cfg.grid_size = j["grid_size"].get<int>();
    if (cfg.tau <= 0.0) throw std::invalid_argument("config: '" + path + ".tau' must be positive");
    if (!(cfg.phi > 0.0 && cfg.phi <= 1.0)) throw std::invalid_argument("config: '" + path + ".phi' must lie in (0,1]");
    if (cfg.folds < 2) throw std::invalid_argument("config: '" + path + ".folds' must be at least 2");
    if (cfg.grid_size < 1) throw std::invalid_argument("config: '" + path + ".grid_size' must be at least 1");
    return cfg;
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config: not valid JSON (" + std::string(e.what()) + ")");
    }
    return j;
}

}  // namespace detail

inline StudyConfig parse_config_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    detail::reject_unknown_keys(j, {"schema_version", "dgp", "estimators", "reps", "ci_level",
                                    "base_seed", "amelioration", "threads"}, "");
    StudyConfig cfg;
    if (j.contains("schema_version")) {
        cfg.schema_version = j["schema_version"].get<int>();
        if (cfg.schema_version != 1) throw std::invalid_argument("config: unsupported schema_version");
    }
    if (!j.contains("dgp") || !j["dgp"].is_object())
        throw std::invalid_argument("config: 'dgp' object is required");
    const json& d = j["dgp"];
    detail::reject_unknown_keys(d, {"name", "n", "sigma_x"}, "dgp.");
    if (!d.contains("name")) throw std::invalid_argument("config: 'dgp.name' is required");
    cfg.dgp_family = d["name"].get<std::string>();
    if (d.contains("n")) {
        if (d["n"].is_array())
            for (const auto& v : d["n"]) cfg.n_values.push_back(v.get<int>());
        else
            cfg.n_values.push_back(d["n"].get<int>());
    }
    if (!d.contains("sigma_x")) throw std::invalid_argument("config: 'dgp.sigma_x' is required");
    if (d["sigma_x"].is_array())
        for (const auto& v : d["sigma_x"]) cfg.sigma_x_values.push_back(v.get<double>());
    else
        cfg.sigma_x_values.push_back(d["sigma_x"].get<double>());

    if (!j.contains("estimators") || !j["estimators"].is_array() || j["estimators"].empty())
        throw std::invalid_argument("config: 'estimators' must be a non-empty array");
    for (std::size_t i = 0; i < j["estimators"].size(); ++i)
        cfg.estimators.push_back(detail::parse_estimator(j["estimators"][i], "estimators[" + std::to_string(i) + "]"));

    if (j.contains("reps")) cfg.reps = j["reps"].get<int>();
    if (j.contains("ci_level")) cfg.ci_level = j["ci_level"].get<double>();
    if (j.contains("base_seed")) cfg.base_seed = j["base_seed"].get<std::uint64_t>();
    if (j.contains("amelioration"))
        for (const auto& v : j["amelioration"]) cfg.amelioration.push_back(v.get<int>());
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();

    cfg.validate();
    // surface DGP errors (unknown name, bernoulli domain) at parse time
    for (double sx : cfg.sigma_x_values)
        dgp_registry_lookup(cfg.dgp_family, sx, cfg.n_values.empty() ? 0 : cfg.n_values[0]);
    return cfg;
}

inline StudyConfig parse_config(const std::string& path) {
    return parse_config_json(detail::load_json_file(path));
}

// Canonical JSON echo of a config with all defaults applied.
inline json config_to_json(const StudyConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["dgp"]["name"] = cfg.dgp_family;
    j["dgp"]["n"] = cfg.n_values;
    j["dgp"]["sigma_x"] = cfg.sigma_x_values;
    j["estimators"] = json::array();
    for (const auto& e : cfg.estimators) {
        json je;
        je["estimator"] = e.estimator;
        if (!e.rule.empty()) je["rule"] = e.rule;
        je["multiplier"] = e.multiplier;
        je["variance"] = variance_kind_name(e.resolved_variance());
        je["tau"] = e.tau;
        je["phi"] = e.phi;
        je["c"] = e.c;
        je["folds"] = e.folds;
        je["grid_size"] = e.grid_size;
        j["estimators"].push_back(je);
    }
    j["reps"] = cfg.reps;
    j["ci_level"] = cfg.ci_level;
    j["base_seed"] = cfg.base_seed;
    j["amelioration"] = cfg.amelioration;
    j["threads"] = cfg.threads;
    return j;
}

// FNV-1a over the canonical serialization: whitespace and key order in the
// source file do not matter, platform does not matter.
inline std::string config_digest(const json& canonical) {
    const std::uint64_t h = detail::fnv1a64(canonical.dump());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- CSV dataset ingestion ----

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_cell(const std::string& s, std::size_t row, const std::string& col) {
    if (s.empty())
        throw std::invalid_argument("csv: empty cell at row " + std::to_string(row) + ", column '" + col + "'");
    std::size_t used = 0;
    double v;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("csv: non-numeric cell '" + s + "' at row " + std::to_string(row) +
                                    ", column '" + col + "'");
    }
    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
    if (used != s.size())
        throw std::invalid_argument("csv: non-numeric cell '" + s + "' at row " + std::to_string(row) +
                                    ", column '" + col + "'");
    if (std::isnan(v))
        throw std::invalid_argument("csv: NaN cell at row " + std::to_string(row) + ", column '" + col + "'");
    return v;
}

}  // namespace detail

// Rectangular numeric CSV with a header row. Collinear columns are kept;
// pruning happens inside the estimators.
inline Dataset load_csv_dataset(const std::string& path, const std::string& outcome_col,
                                const std::string& treatment_col,
                                const std::vector<std::string>& control_cols = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("csv: empty file");
    const std::vector<std::string> header = detail::split_csv_line(line);
    std::map<std::string, int> col_index;
    for (std::size_t i = 0; i < header.size(); ++i) col_index[header[i]] = static_cast<int>(i);

    auto require = [&](const std::string& name) {
        auto it = col_index.find(name);
        if (it == col_index.end()) throw std::invalid_argument("csv: column '" + name + "' not found in header");
        return it->second;
    };
    const int yc = require(outcome_col);
    const int dc = require(treatment_col);
    std::vector<int> xc;
    std::vector<std::string> xnames;
    if (control_cols.empty()) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (static_cast<int>(i) != yc && static_cast<int>(i) != dc) {
                xc.push_back(static_cast<int>(i));
                xnames.push_back(header[i]);
            }
        }
    } else {
        for (const std::string& name : control_cols) {
            xc.push_back(require(name));
            xnames.push_back(name);
        }
    }

    std::vector<double> yv, dv;
    std::vector<std::vector<double>> xv;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw std::invalid_argument("csv: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                        " cells, header has " + std::to_string(header.size()));
        yv.push_back(detail::parse_cell(cells[yc], row, outcome_col));
        dv.push_back(detail::parse_cell(cells[dc], row, treatment_col));
        std::vector<double> xr(xc.size());
        for (std::size_t j = 0; j < xc.size(); ++j) xr[j] = detail::parse_cell(cells[xc[j]], row, xnames[j]);
        xv.push_back(std::move(xr));
    }
    if (yv.empty()) throw std::invalid_argument("csv: no data rows");

    Dataset ds;
    const int n = static_cast<int>(yv.size());
    const int p = static_cast<int>(xc.size());
    ds.Y.resize(n);
    ds.D.resize(n);
    ds.X.resize(n, p);
    for (int i = 0; i < n; ++i) {
        ds.Y[i] = yv[i];
        ds.D[i] = dv[i];
        for (int j = 0; j < p; ++j) ds.X(i, j) = xv[i][j];
    }
    ds.demeaned = false;
    return ds;
}

// ---- result emission ----

inline const std::vector<std::string>& study_csv_columns() {
    static const std::vector<std::string> cols = {
        "dgp", "n", "p", "k", "sigma_x", "alpha_star", "estimator", "rule", "multiplier", "variance",
        "status", "reps", "flagged", "bias", "std", "bias_over_std", "coverage", "mean_ci_length",
        "mean_n_selected", "mean_n_selected_relevant", "prob_nothing_selected", "conditional_ovb",
        "mc_se_of_bias"};
    return cols;
}

inline void write_csv(const StudyResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    const auto& cols = study_csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << cols[i] << (i + 1 < cols.size() ? "," : "\n");
    for (const StudyCell& cell : result.cells) {
        const Metrics& m = cell.metrics;
        out << cell.spec.name << ',' << cell.spec.n << ',' << cell.spec.p << ',' << cell.spec.k << ','
            << format_value(cell.spec.sigma_x) << ',' << format_value(cell.spec.alpha_star) << ','
            << cell.est.estimator << ',' << cell.est.rule << ',' << format_value(cell.est.multiplier) << ','
            << (cell.est.estimator == "ols" || cell.est.estimator == "pdl"
                    ? variance_kind_name(cell.est.resolved_variance())
                    : "") << ','
            << (cell.infeasible ? "infeasible" : "ok") << ',';
        if (cell.infeasible) {
            out << "0,,,,,,,,,,,\n";
            continue;
        }
        out << m.rep_count << ',' << m.flagged_count << ',' << format_value(m.bias) << ','
            << format_value(m.std_dev) << ',' << format_value(m.bias_over_std) << ','
            << format_value(m.coverage) << ',' << format_value(m.mean_ci_length) << ','
            << format_value(m.mean_n_selected) << ',' << format_value(m.mean_n_selected_relevant) << ','
            << format_value(m.prob_nothing_selected) << ','
            << (m.conditional_ovb ? format_value(*m.conditional_ovb) : "") << ','
            << format_value(m.mc_se_of_bias) << '\n';
    }
    if (!out) throw std::runtime_error("write failure on '" + path + "'");
}

inline void write_subsample_csv(const SubsampleResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "size,estimator,rule,multiplier,status,reps,flagged,full_sample_estimate,"
           "mean_subsample_estimate,bias,std,bias_over_std,note\n";
    for (const SubsampleCell& cell : result.cells) {
        std::string note = cell.note;
        for (char& ch : note)
            if (ch == ',' || ch == '\n') ch = ';';
        out << cell.size << ',' << cell.est.estimator << ',' << cell.est.rule << ','
            << format_value(cell.est.multiplier) << ',' << (cell.rep_count > 0 ? "ok" : "failed") << ','
            << cell.rep_count << ',' << cell.flagged_count << ',' << format_value(cell.full_sample_estimate)
            << ',' << format_value(cell.mean_subsample_estimate) << ',' << format_value(cell.bias) << ','
            << (cell.std_undefined ? "" : format_value(cell.std_dev)) << ','
            << (cell.std_undefined ? "" : format_value(cell.bias_over_std)) << ',' << note << '\n';
    }
}

// Generic CSV-of-doubles reader used by the round-trip checks.
inline std::vector<std::map<std::string, std::string>> read_csv_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("csv: empty file");
    const std::vector<std::string> header = detail::split_csv_line(line);
    std::vector<std::map<std::string, std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw std::invalid_argument("csv: ragged row");
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- declarative plot specifications (Vega-Lite v5, data inlined) ----

inline const std::vector<std::string>& plot_kinds() {
    static const std::vector<std::string> kinds = {"selection_vs_sigma", "bias_over_std", "coverage",
                                                   "ci_length", "prob_nothing_selected"};
    return kinds;
}

inline json plot_spec_json(const StudyResult& result, const std::string& kind) {
    std::string metric, title;
    if (kind == "selection_vs_sigma") { metric = "mean_n_selected"; title = "Average number of selected covariates"; }
    else if (kind == "bias_over_std") { metric = "bias_over_std"; title = "Ratio of bias to standard deviation"; }
    else if (kind == "coverage") { metric = "coverage"; title = "Coverage of confidence intervals"; }
    else if (kind == "ci_length") { metric = "mean_ci_length"; title = "Average confidence interval length"; }
    else if (kind == "prob_nothing_selected") { metric = "prob_nothing_selected"; title = "Probability that nothing gets selected"; }
    else throw std::invalid_argument("write_plot_spec: unknown kind '" + kind + "'");

    json values = json::array();
    for (const StudyCell& cell : result.cells) {
        if (cell.infeasible) continue;
        const Metrics& m = cell.metrics;
        double v = std::numeric_limits<double>::quiet_NaN();
        if (metric == "mean_n_selected") v = m.mean_n_selected;
        else if (metric == "bias_over_std") v = m.bias_over_std;
        else if (metric == "coverage") v = m.coverage;
        else if (metric == "mean_ci_length") v = m.mean_ci_length;
        else if (metric == "prob_nothing_selected") v = m.prob_nothing_selected;
        if (std::isnan(v) || std::isinf(v)) continue;
        json row;
        row["sigma_x"] = cell.spec.sigma_x;
        row["n"] = cell.spec.n;
        std::string series = cell.est.label();
        if (cell.est.multiplier != 1.0) series += " \xc3\x97" + format_value(cell.est.multiplier);
        if (result.config.n_values.size() > 1) series += " (n=" + std::to_string(cell.spec.n) + ")";
        row["series"] = series;
        row["value"] = v;
        values.push_back(row);
    }

    json enc;
    enc["x"] = {{"field", "sigma_x"}, {"type", "quantitative"}, {"title", "sigma_x"}};
    enc["y"] = {{"field", "value"}, {"type", "quantitative"}, {"title", metric}};
    enc["color"] = {{"field", "series"}, {"type", "nominal"}};

    json layer_main;
    layer_main["mark"] = {{"type", "line"}, {"point", true}};
    layer_main["encoding"] = enc;

    json spec;
    spec["$schema"] = "https://vega.github.io/schema/vega-lite/v5.json";
    spec["title"] = title;
    spec["data"] = {{"values", values}};
    if (kind == "coverage") {
        json rule;
        rule["mark"] = {{"type", "rule"}, {"strokeDash", json::array({4, 4})}};
        rule["encoding"]["y"] = {{"datum", result.config.ci_level}};
        spec["layer"] = json::array({layer_main, rule});
    } else {
        spec["layer"] = json::array({layer_main});
    }
    return spec;
}

inline void write_plot_spec(const StudyResult& result, const std::string& kind, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << plot_spec_json(result, kind).dump(2) << '\n';
}

inline json subsample_plot_spec_json(const SubsampleResult& result, const std::string& kind) {
    if (kind != "bias_over_std" && kind != "bias")
        throw std::invalid_argument("write_plot_spec(subsample): kind must be bias or bias_over_std");
    json values = json::array();
    for (const SubsampleCell& cell : result.cells) {
        const double v = (kind == "bias") ? cell.bias : cell.bias_over_std;
        if (std::isnan(v) || std::isinf(v)) continue;
        json row;
        row["subsample_size"] = cell.size;
        std::string series = cell.est.label();
        if (cell.est.multiplier != 1.0) series += " \xc3\x97" + format_value(cell.est.multiplier);
        row["series"] = series;
        row["value"] = v;
        values.push_back(row);
    }
    json spec;
    spec["$schema"] = "https://vega.github.io/schema/vega-lite/v5.json";
    spec["title"] = (kind == "bias") ? "Bias vs subsample size" : "Ratio of bias to standard deviation";
    spec["data"] = {{"values", values}};
    spec["mark"] = {{"type", "line"}, {"point", true}};
    spec["encoding"]["x"] = {{"field", "subsample_size"}, {"type", "quantitative"}, {"title", "n_s"}};
    spec["encoding"]["y"] = {{"field", "value"}, {"type", "quantitative"}, {"title", kind}};
    spec["encoding"]["color"] = {{"field", "series"}, {"type", "nominal"}};
    return spec;
}

inline void write_subsample_plot_spec(const SubsampleResult& result, const std::string& kind, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << subsample_plot_spec_json(result, kind).dump(2) << '\n';
}

// ---- run manifest ----

struct RunManifest {
    std::string config_digest;
    std::string tool_version = kToolVersion;
    std::uint64_t base_seed = 0;
    std::string wall_clock_utc;
    double total_seconds = 0.0;
    json cell_runtimes = json::array();
    json effective_config;
};

inline std::string utc_timestamp_now() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
    json j;
    j["config_digest"] = m.config_digest;
    j["tool_version"] = m.tool_version;
    j["base_seed"] = m.base_seed;
    j["wall_clock_utc"] = m.wall_clock_utc;
    j["total_seconds"] = m.total_seconds;
    j["cell_runtimes"] = m.cell_runtimes;
    j["effective_config"] = m.effective_config;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
}

}  // namespace hdi
