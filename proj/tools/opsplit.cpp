// Command-line front end: run, validate and list experiments.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "opsplit/opsplit.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitHypothesis = 2;
constexpr int kExitDivergence = 3;

template <class Body>
int guarded(Body body) {
  try {
    return body();
  } catch (const opsplit::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << " (last finite t=" << e.last_finite_time() << ")\n";
    return kExitDivergence;
  } catch (const opsplit::HypothesisError& e) {
    std::cerr << "hypothesis violated: " << e.what() << "\n";
    return kExitHypothesis;
  } catch (const opsplit::ParameterError& e) {
    std::cerr << "hypothesis violated: " << e.what() << "\n";
    return kExitHypothesis;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time operator splitting flows"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "integrate the flow of a config and write trajectory.csv / diagnostics.json");
  run->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out-dir", out_dir, "output directory (overrides the config)");
  run->add_option("--seed", seed, "seed for randomized probes");

  auto* check = app.add_subcommand("check", "validate a config without running it");
  check->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);

  auto* problems = app.add_subcommand("list-problems", "list the problem corpus");
  auto* flows = app.add_subcommand("list-flows", "list the available flows");

  CLI11_PARSE(app, argc, argv);

  if (*problems) {
    for (const auto& p : opsplit::corpus())
      std::cout << p.name << "\t" << opsplit::to_string(p.kind) << "\t" << p.description << "\n";
    return kExitPass;
  }
  if (*flows) {
    for (const auto& f : opsplit::flow_registry()) std::cout << f.name << "\t" << f.description << "\n";
    return kExitPass;
  }
  if (*check) {
    return guarded([&] {
      const auto cfg = opsplit::load_config(config_path);
      for (const auto& w : opsplit::validate(cfg).field.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "ok " << config_path << "\n";
      return kExitPass;
    });
  }
  return guarded([&] {
    auto cfg = opsplit::load_config(config_path);
    if (seed) cfg.seed = *seed;
    const auto result = opsplit::run_experiment(cfg, out_dir.empty() ? std::nullopt : std::optional(out_dir));
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << result.summary << "\n";
    return result.pass ? kExitPass : kExitFail;
  });
}
