#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hdi/io.hpp"

using namespace hdi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("hdi_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

const char* kMinimalConfig = R"({
  "dgp": {"name": "main", "n": [500], "sigma_x": [0.05, 0.1, 0.5]},
  "estimators": [{"estimator": "pdl", "rule": "bcch"}],
  "reps": 1000
})";

}  // namespace

TEST_CASE("parse_config: minimal happy path with defaults echoed") {
    TempDir tmp;
    write_file(tmp.file("c.json"), kMinimalConfig);
    const StudyConfig cfg = parse_config(tmp.file("c.json"));
    REQUIRE(cfg.dgp_family == "main");
    REQUIRE(cfg.n_values == std::vector<int>{500});
    REQUIRE(cfg.sigma_x_values.size() == 3);
    REQUIRE(cfg.reps == 1000);
    REQUIRE(cfg.ci_level == 0.90);
    REQUIRE(cfg.estimators.size() == 1);
    REQUIRE(cfg.estimators[0].multiplier == 1.0);
    const json echoed = config_to_json(cfg);
    REQUIRE(echoed["ci_level"] == 0.90);
    REQUIRE(echoed["estimators"][0]["folds"] == 10);
    REQUIRE(echoed["estimators"][0]["variance"] == "HC0");
}

TEST_CASE("parse_config: rule multiplier suffix") {
    TempDir tmp;
    write_file(tmp.file("c.json"), R"({
      "dgp": {"name": "A3", "sigma_x": 0.3},
      "estimators": [{"estimator": "pdl", "rule": "bcch×1.5"},
                     {"estimator": "pdl", "rule": "bcchx0.5"}],
      "reps": 10
    })");
    const StudyConfig cfg = parse_config(tmp.file("c.json"));
    REQUIRE(cfg.estimators[0].rule == "bcch");
    REQUIRE(cfg.estimators[0].multiplier == 1.5);
    REQUIRE(cfg.estimators[1].multiplier == 0.5);
}

TEST_CASE("parse_config: rejections carry the key path") {
    TempDir tmp;
    write_file(tmp.file("bad1.json"), R"({"dgp": {"name": "main", "n": 500, "sigma_x": 0.1},
      "estimators": [{"estimator": "pdl", "rule": "bcch"}], "reps": 0})");
    REQUIRE_THROWS_AS(parse_config(tmp.file("bad1.json")), std::invalid_argument);

    write_file(tmp.file("bad2.json"), R"({"dgp": {"name": "main", "n": 500, "sigma_x": 0.1},
      "estimators": [{"estimator": "pdl", "rule": "bcch", "oops": 1}], "reps": 5})");
    try {
        parse_config(tmp.file("bad2.json"));
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        REQUIRE(std::string(e.what()).find("estimators[0].oops") != std::string::npos);
    }

    // bernoulli domain error surfaces at parse time with the model message
    write_file(tmp.file("bad3.json"), R"({"dgp": {"name": "A1", "sigma_x": 0.6},
      "estimators": [{"estimator": "pdl", "rule": "bcch"}], "reps": 5})");
    try {
        parse_config(tmp.file("bad3.json"));
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        REQUIRE(std::string(e.what()).find("bernoulli") != std::string::npos);
    }

    write_file(tmp.file("bad4.json"), R"({"dgp": {"name": "main", "n": 500, "sigma_x": 0.1},
      "estimators": [{"estimator": "pdl", "rule": "bcch"}], "reps": 5, "extra_key": true})");
    REQUIRE_THROWS_AS(parse_config(tmp.file("bad4.json")), std::invalid_argument);
}

TEST_CASE("config digest is stable for identical configs, whitespace-insensitive") {
    TempDir tmp;
    write_file(tmp.file("a.json"), kMinimalConfig);
    write_file(tmp.file("b.json"), R"({"reps":1000,"estimators":[{"rule":"bcch","estimator":"pdl"}],
      "dgp":{"sigma_x":[0.05,0.1,0.5],"n":[500],"name":"main"}})");
    const std::string da = config_digest(config_to_json(parse_config(tmp.file("a.json"))));
    const std::string db = config_digest(config_to_json(parse_config(tmp.file("b.json"))));
    REQUIRE(da == db);
    REQUIRE(da.size() == 16);
}

TEST_CASE("load_csv_dataset: exact values, errors, duplicated column flows through") {
    TempDir tmp;
    write_file(tmp.file("d.csv"), "y,d,x1,x2\n1.5,0,0.25,-1\n2.5,1,0.5,-2\n3.5,0,0.75,-3\n");
    const Dataset ds = load_csv_dataset(tmp.file("d.csv"), "y", "d", {"x1", "x2"});
    REQUIRE(ds.n() == 3);
    REQUIRE(ds.p() == 2);
    REQUIRE(ds.Y[1] == 2.5);
    REQUIRE(ds.D[1] == 1.0);
    REQUIRE(ds.X(2, 0) == 0.75);
    REQUIRE(ds.X(2, 1) == -3.0);
    REQUIRE_FALSE(ds.demeaned);

    // default controls: all the other columns
    const Dataset all = load_csv_dataset(tmp.file("d.csv"), "y", "d");
    REQUIRE(all.p() == 2);

    REQUIRE_THROWS_AS(load_csv_dataset(tmp.file("d.csv"), "y", "treat"), std::invalid_argument);

    write_file(tmp.file("ragged.csv"), "y,d,x\n1,2,3\n1,2\n");
    REQUIRE_THROWS_AS(load_csv_dataset(tmp.file("ragged.csv"), "y", "d"), std::invalid_argument);

    write_file(tmp.file("nan.csv"), "y,d,x\n1,2,nan\n");
    REQUIRE_THROWS_AS(load_csv_dataset(tmp.file("nan.csv"), "y", "d"), std::invalid_argument);

    write_file(tmp.file("text.csv"), "y,d,x\n1,2,abc\n");
    REQUIRE_THROWS_AS(load_csv_dataset(tmp.file("text.csv"), "y", "d"), std::invalid_argument);

    // duplicated control column loads; estimator prunes and flags downstream
    write_file(tmp.file("dup.csv"), "y,d,x1,x2\n1,0.4,2,2\n2,1.2,3,3\n0,0.1,1,1\n1.5,0.8,2.5,2.5\n2.2,1.4,3.1,3.1\n");
    const Dataset dup = load_csv_dataset(tmp.file("dup.csv"), "y", "d");
    const OlsFit fit = ols_fit(dup, VarianceKind::HC0);
    REQUIRE(fit.collinear_dropped);
}

TEST_CASE("write_csv: header-only for an empty study, infeasible rows marked") {
    TempDir tmp;
    StudyResult empty;
    write_csv(empty, tmp.file("empty.csv"));
    const auto rows = read_csv_rows(tmp.file("empty.csv"));
    REQUIRE(rows.empty());
    std::ifstream in(tmp.file("empty.csv"));
    std::string header;
    std::getline(in, header);
    REQUIRE(header.rfind("dgp,n,p,k,sigma_x", 0) == 0);

    StudyResult res;
    StudyCell cell;
    cell.spec = dgp_registry_lookup("main", 0.3, 200);
    cell.est.estimator = "ols";
    cell.infeasible = true;
    res.cells.push_back(cell);
    write_csv(res, tmp.file("inf.csv"));
    const auto rows2 = read_csv_rows(tmp.file("inf.csv"));
    REQUIRE(rows2.size() == 1);
    REQUIRE(rows2[0].at("status") == "infeasible");
    REQUIRE(rows2[0].at("bias").empty());
}

TEST_CASE("write_csv round trip preserves metric values to 1e-9") {
    StudyConfig cfg;
    cfg.dgp_family = "main";
    cfg.n_values = {500};
    cfg.sigma_x_values = {0.2};
    EstimatorConfig oracle;
    oracle.estimator = "oracle";
    EstimatorConfig pdl;
    pdl.estimator = "pdl";
    pdl.rule = "bickel";
    cfg.estimators = {oracle, pdl};
    cfg.reps = 30;
    cfg.base_seed = 17;
    const StudyResult res = run_study(cfg);

    TempDir tmp;
    write_csv(res, tmp.file("r.csv"));
    const auto rows = read_csv_rows(tmp.file("r.csv"));
    REQUIRE(rows.size() == res.cells.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Metrics& m = res.cells[i].metrics;
        const double bias = std::stod(rows[i].at("bias"));
        REQUIRE(bias == Catch::Approx(m.bias).margin(1e-9 * std::max(1.0, std::fabs(m.bias))));
        const double cov = std::stod(rows[i].at("coverage"));
        REQUIRE(cov == Catch::Approx(m.coverage).margin(1e-9));
        if (res.cells[i].est.estimator == "pdl") {
            const double sel = std::stod(rows[i].at("mean_n_selected"));
            REQUIRE(sel == Catch::Approx(m.mean_n_selected).margin(1e-9));
        } else {
            REQUIRE(rows[i].at("mean_n_selected").empty());
        }
    }
}

TEST_CASE("plot specs: nominal line on coverage, empty data stays valid, values match") {
    StudyConfig cfg;
    cfg.dgp_family = "main";
    cfg.n_values = {500};
    cfg.sigma_x_values = {0.15};
    EstimatorConfig oracle;
    oracle.estimator = "oracle";
    cfg.estimators = {oracle};
    cfg.reps = 10;
    const StudyResult res = run_study(cfg);

    const json cov = plot_spec_json(res, "coverage");
    REQUIRE(cov.contains("layer"));
    REQUIRE(cov["layer"].size() == 2);
    REQUIRE(cov["layer"][1]["encoding"]["y"]["datum"] == 0.90);
    REQUIRE(cov["data"]["values"].size() == 1);
    REQUIRE(cov["data"]["values"][0]["value"] == res.cells[0].metrics.coverage);

    StudyResult empty;
    empty.config = cfg;
    const json e = plot_spec_json(empty, "bias_over_std");
    REQUIRE(e["data"]["values"].is_array());
    REQUIRE(e["data"]["values"].empty());
    REQUIRE(e.contains("$schema"));

    REQUIRE_THROWS_AS(plot_spec_json(res, "nope"), std::invalid_argument);
}

TEST_CASE("selection plot for a Figure-1-style run rises from ~0 to ~5") {
    StudyConfig cfg;
    cfg.dgp_family = "main";
    cfg.n_values = {500};
    cfg.sigma_x_values = {0.05, 0.5};
    EstimatorConfig pdl;
    pdl.estimator = "pdl";
    pdl.rule = "bickel";
    cfg.estimators = {pdl};
    cfg.reps = 60;
    cfg.base_seed = 8;
    const StudyResult res = run_study(cfg);
    const json spec = plot_spec_json(res, "selection_vs_sigma");
    REQUIRE(spec["data"]["values"].size() == 2);
    double at_low = -1, at_high = -1;
    for (const auto& row : spec["data"]["values"]) {
        if (row["sigma_x"].get<double>() == 0.05) at_low = row["value"].get<double>();
        if (row["sigma_x"].get<double>() == 0.5) at_high = row["value"].get<double>();
    }
    REQUIRE(at_low <= 0.5);
    REQUIRE(at_high >= 4.0);
}

TEST_CASE("format_value: 10 significant digits, infinities, absent values") {
    REQUIRE(format_value(0.123456789012345) == "0.123456789");
    REQUIRE(format_value(std::numeric_limits<double>::infinity()) == "inf");
    REQUIRE(format_value(-std::numeric_limits<double>::infinity()) == "-inf");
    REQUIRE(format_value(std::numeric_limits<double>::quiet_NaN()).empty());
    REQUIRE(format_value(194.0) == "194");
}

TEST_CASE("manifest writes next to outputs") {
    TempDir tmp;
    RunManifest m;
    m.config_digest = "abc";
    m.base_seed = 5;
    m.wall_clock_utc = utc_timestamp_now();
    m.effective_config = json::object();
    write_manifest(m, tmp.file("run_manifest.json"));
    std::ifstream in(tmp.file("run_manifest.json"));
    json j;
    in >> j;
    REQUIRE(j["config_digest"] == "abc");
    REQUIRE(j["tool_version"] == kToolVersion);
}
