#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "catch_amalgamated.hpp"
#include "opsplit/opsplit.hpp"

using namespace opsplit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("opsplit_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

struct Command {
  int exit_code;
  std::string out;
};

Command run_cli(const std::string& args) {
  const std::string cmd = std::string(OPSPLIT_CLI) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream s(line);
    std::string cell;
    while (std::getline(s, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == name) return k;
  FAIL("missing column " << name);
  return 0;
}

const char* kMinimalKM = R"({
  "problem": "rotation2d",
  "flow": {"name": "km", "params": {"lambda": 0.5}},
  "integrator": {"dt": 0.01, "t_end": 10.0}
})";

std::string config_dir() { return std::string(OPSPLIT_SOURCE_DIR) + "/configs/"; }

}  // namespace

TEST_CASE("corpus contents", "[problems][corpus]") {
  const auto problems = corpus();
  CHECK(problems.size() >= 8);
  std::set<std::string> names;
  for (const auto& p : problems) names.insert(p.name);
  CHECK(names.size() == problems.size());
  for (const char* required : {"rotation2d", "neg_identity", "lasso1d", "lasso10d", "box_quadratic", "strongly_convex_l1",
                               "bilinear_saddle", "nonconvex_cos", "pd_lasso_analysis"})
    CHECK(names.count(required) == 1);

  for (const auto& p : problems) {
    INFO(p.name);
    CHECK(p.x0.size() == p.dim);
    if (p.known_solution) CHECK(p.residual(*p.known_solution) < 1e-8);
  }

  const ProblemDef bil = find_problem("bilinear_saddle");
  CHECK_FALSE(bil.B->cocoercivity.has_value());
  REQUIRE(bil.B->lipschitz.has_value());
  CHECK(*bil.B->lipschitz == 1.0);
  CHECK_THROWS_AS(find_problem("nope"), ConfigError);
}

TEST_CASE("every default experiment reaches its residual target", "[problems][corpus][slow]") {
  for (const auto& p : corpus()) {
    INFO(p.name);
    const ExperimentConfig cfg = default_config(p);
    const RunResult r = run_experiment(cfg, scratch("default_" + p.name).string());
    CHECK(r.final_residual < 1e-5);
  }
}

TEST_CASE("config loading", "[problems][config]") {
  const fs::path dir = scratch("config");
  const ExperimentConfig km = load_config(write_file(dir / "km.json", kMinimalKM).string());
  CHECK(km.problem == "rotation2d");
  CHECK(km.flow == "km");
  CHECK(km.integrator.method == Method::rk4);
  CHECK(km.integrator.record_every == 1);

  std::string over(kMinimalKM);
  over.replace(over.find("0.5"), 3, "1.5");
  CHECK_THROWS_AS(load_config(write_file(dir / "km_bad.json", over).string()), HypothesisError);

  const ExperimentConfig lasso = load_config(config_dir() + "fb_lasso1d_cont_ista.json");
  const std::string once = serialize(lasso);
  const ExperimentConfig again = parse_config(once);
  CHECK(serialize(again) == once);
  CHECK(to_json(again) == to_json(lasso));

  const ExperimentConfig box = load_config(config_dir() + "second_order_box.json");
  CHECK(serialize(parse_config(serialize(box))) == serialize(box));
}

TEST_CASE("config errors", "[problems][config][errors]") {
  try {
    parse_config("{\n  \"problem\": \"rotation2d\",\n  \"flow\": {\"name\" \"km\"}\n}");
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  auto with = [](const std::string& from, const std::string& to) {
    std::string s(kMinimalKM);
    s.replace(s.find(from), from.size(), to);
    return parse_config(s);
  };
  CHECK_THROWS_AS(validate(with("rotation2d", "nowhere")), ConfigError);
  CHECK_THROWS_AS(validate(with("\"km\"", "\"warp\"")), ConfigError);
  CHECK_THROWS_AS(with("\"dt\"", "\"step\""), ConfigError);
  CHECK_THROWS_AS(validate(with("0.5", "{\"family\": \"cubic\", \"params\": {}}")), ConfigError);
  CHECK_THROWS_AS(with("\"t_end\": 10.0", "\"t_end\": 10.0, \"record_every\": 1.5"), ConfigError);
  ExperimentConfig probe = with("rotation2d", "rotation2d");
  probe.probes = {"merit_H"};
  CHECK_THROWS_AS(validate(probe), ConfigError);
  ExperimentConfig dim = probe;
  dim.probes.clear();
  dim.x0 = make_vector({1.0, 2.0, 3.0});
  CHECK_THROWS_AS(validate(dim), ConfigError);

  // schedule families
  const json params = json::parse(R"({
    "a": {"family": "affine_clamped", "params": {"a": 0.2, "b": 0.1, "lo": 0.0, "hi": 0.5}},
    "b": {"family": "inverse_power", "params": {"c": 1.0, "p": 2.0}},
    "c": {"family": "alpha_over_t", "params": {"alpha": 3.0}},
    "d": {"family": "exp_relax", "params": {"a": 1.0, "b": 1.0, "c": 2.0}},
    "e": 0.25
  })");
  CHECK(schedule_from_json(params["a"], "a")(10.0) == 0.5);
  CHECK(schedule_from_json(params["b"], "b")(1.0) == 0.25);
  CHECK(schedule_from_json(params["c"], "c")(2.0) == 1.5);
  CHECK(schedule_from_json(params["d"], "d")(0.0) == 2.0);
  CHECK(schedule_from_json(params["e"], "e")(7.0) == 0.25);
}

TEST_CASE("run pipeline outputs", "[problems][run]") {
  const fs::path dir = scratch("pipeline");
  ExperimentConfig km = load_config(config_dir() + "km_rotation.json");
  const RunResult r = run_experiment(km, (dir / "km").string());
  CHECK(r.pass);
  const auto rows = read_csv(dir / "km" / "trajectory.csv");
  REQUIRE(rows.size() == r.trajectory.size() + 1);
  CHECK(rows[0] == std::vector<std::string>{"t", "x_0", "x_1", "fp_residual"});
  std::ifstream diag_in(dir / "km" / "diagnostics.json");
  const json diag = json::parse(diag_in);
  CHECK(diag["problem"] == "rotation2d");
  CHECK(diag["checks"].size() == r.reports.size());
  for (const auto& c : diag["checks"]) CHECK(c["pass"] == true);
  CHECK(r.summary.find("flow=km problem=rotation2d") == 0);

  const RunResult ista = run_experiment(load_config(config_dir() + "fb_lasso1d_cont_ista.json"), (dir / "ista").string());
  CHECK(ista.pass);
  int certificate_reports = 0;
  for (const auto& rep : ista.reports)
    if (rep.check.rfind("cont_ista", 0) == 0) {
      ++certificate_reports;
      CHECK(rep.pass);
    }
  CHECK(certificate_reports == 3);

  run_experiment(load_config(config_dir() + "proxgrad_cos.json"), (dir / "cos").string());
  const auto cos_rows = read_csv(dir / "cos" / "trajectory.csv");
  const std::size_t col = column(cos_rows[0], "merit_H");
  for (std::size_t k = 2; k < cos_rows.size(); ++k)
    CHECK(std::stod(cos_rows[k][col]) <= std::stod(cos_rows[k - 1][col]) + 1e-12);
}

TEST_CASE("divergence keeps the partial trajectory", "[problems][run][errors]") {
  // explicit Euler with step 10 on x' = -(x - 2): factor -9 per step
  const fs::path dir = scratch("diverge");
  const ExperimentConfig c = parse_config(R"({
    "problem": "lasso1d",
    "flow": {"name": "gradient"},
    "integrator": {"method": "explicit_euler", "dt": 10.0, "t_end": 10000.0}
  })");
  CHECK_THROWS_AS(run_experiment(c, dir.string()), DivergenceError);
  CHECK(fs::exists(dir / "trajectory.csv"));
  const auto rows = read_csv(dir / "trajectory.csv");
  REQUIRE(rows.size() > 2);
  CHECK(rows[0][1] == "x_0");
  CHECK(rows[1][1] == "-1");
  CHECK(rows[2][1] == "29");
}

TEST_CASE("command-line interface", "[cli]") {
  const fs::path dir = scratch("cli");

  const Command problems = run_cli("list-problems");
  CHECK(problems.exit_code == 0);
  for (const auto& p : corpus()) CHECK(problems.out.find(p.name + "\t") != std::string::npos);
  const Command flows = run_cli("list-flows");
  CHECK(flows.exit_code == 0);
  CHECK(std::count(flows.out.begin(), flows.out.end(), '\n') == static_cast<long>(flow_registry().size()));

  const Command ok = run_cli("check " + config_dir() + "km_rotation.json");
  CHECK(ok.exit_code == 0);

  const Command run = run_cli("run " + config_dir() + "km_rotation.json --out-dir " + (dir / "km").string() + " --seed 3");
  CHECK(run.exit_code == 0);
  CHECK(run.out.find("pass=true") != std::string::npos);
  CHECK(read_csv(dir / "km" / "trajectory.csv")[0] == std::vector<std::string>{"t", "x_0", "x_1", "fp_residual"});

  std::string over(kMinimalKM);
  over.replace(over.find("0.5"), 3, "1.5");
  CHECK(run_cli("check " + write_file(dir / "bad.json", over).string()).exit_code == 2);
  CHECK(run_cli("check " + write_file(dir / "broken.json", "{ \"problem\": ").string()).exit_code == 1);

  // a failing check: horizon too short for the residual target
  std::string short_run(kMinimalKM);
  short_run.replace(short_run.find("10.0"), 4, "0.5");
  CHECK(run_cli("run " + write_file(dir / "short.json", short_run).string() + " --out-dir " + (dir / "short").string())
            .exit_code == 1);

  const std::string diverge = R"({
    "problem": "lasso1d",
    "flow": {"name": "gradient"},
    "integrator": {"method": "explicit_euler", "dt": 10.0, "t_end": 10000.0}
  })";
  CHECK(run_cli("run " + write_file(dir / "diverge.json", diverge).string() + " --out-dir " + (dir / "div").string())
            .exit_code == 3);
  CHECK(run_cli("").exit_code != 0);

  // lambda at the top of its range: accepted, with a warning about the integral condition
  std::string edge(kMinimalKM);
  edge.replace(edge.find("0.5"), 3, "1.0");
  const Command warned = run_cli("check " + write_file(dir / "edge.json", edge).string());
  CHECK(warned.exit_code == 0);
  CHECK(warned.out.find("warning: KM relaxation lambda") != std::string::npos);
  CHECK(run_cli("check " + config_dir() + "km_rotation.json").out.find("warning") == std::string::npos);
}
