#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "advcal/error.hpp"
#include "advcal/experiment.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial surrogate calibration experiments"};
  std::string config_path;
  std::string experiment;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  app.add_option("--config", config_path, "Experiment config file (key = value, [sections])");
  app.add_option("--experiment", experiment,
                 "Override: unit_circle | segments | consistency_curve | calibration_report | "
                 "margin_oracle");
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", out_dir, "Override the output directory");
  app.add_option("--jobs", jobs, "Worker threads (results do not depend on this)")
      ->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  advcal::ExperimentConfig config;
  try {
    if (!config_path.empty()) {
      try {
        config = advcal::parse_config(read_file(config_path));
      } catch (const advcal::ConfigError& e) {
        std::cerr << config_path << ':' << e.line() << ':' << e.column() << ": error: " << e.what()
                  << '\n';
        return advcal::kExitConfig;
      }
    }
    if (!experiment.empty()) config.experiment = advcal::parse_experiment_kind(experiment);
  } catch (const advcal::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return advcal::kExitConfig;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return advcal::kExitConfig;
  }
  if (seed) config.seed = *seed;
  if (!out_dir.empty()) config.output_dir = out_dir;

  const advcal::RunResult result = advcal::run(config, jobs);
  for (const auto& path : result.outputs) std::cout << path.string() << '\n';
  if (result.exit_code != advcal::kExitOk) std::cerr << "error: " << result.message << '\n';
  return result.exit_code;
}
