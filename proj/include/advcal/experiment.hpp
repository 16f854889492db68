#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace advcal {

enum class ExperimentKind { unit_circle, segments, consistency_curve, calibration_report, margin_oracle };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view name);  ///< throws ConfigError

struct UnitCircleConfig {
  double sigma = 1.5707963267948966;
  double gamma = 0.70710678118654757;  ///< cos(sigma/2)
  std::vector<std::string> surrogates{"hinge_shifted", "ramp_shifted", "sigmoid_shifted",
                                      "logistic_shifted"};
  std::int64_t n_samples = 1'000'000;
  int grid_n = 4096;

  bool operator==(const UnitCircleConfig&) const = default;
};

struct SegmentsConfig {
  double gamma = 0.1;
  /// Empty means the six table surrogates, with phi1 and phi2 tied to gamma.
  std::vector<std::string> surrogates;
  std::int64_t n_samples = 1'000'000;
  int grid_n = 4096;

  bool operator==(const SegmentsConfig&) const = default;
};

struct ConsistencyCurveConfig {
  std::string distribution = "segments";  ///< segments | flip_circle | half_circle
  double gamma = 0.1;
  double sigma = 1.5707963267948966;  ///< flip_circle only
  /// Empty means phi2(rho=gamma_hat) and ramp_shifted.
  std::vector<std::string> surrogates;
  std::vector<std::int64_t> sizes{100, 1000, 10000, 100000};
  int reps = 10;
  int grid_n = 4096;
  std::int64_t eval_n = 1'000'000;

  bool operator==(const ConsistencyCurveConfig&) const = default;
};

struct CalibrationReportConfig {
  std::string loss = "rho_margin(rho=0.05)";
  std::string hypothesis_class = "linear";  ///< linear | glm | relu | nn
  std::string link = "relu";                ///< glm only
  double gamma = 0.1;
  double G = 2.0;
  double Lambda = 1.0;
  double W = 1.0;
  std::vector<double> epsilons{0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
  int eta_grid = 201;
  int t_grid = 2001;

  bool operator==(const CalibrationReportConfig&) const = default;
};

struct MarginOracleConfig {
  std::string hypothesis_class = "nn";  ///< linear | glm | nn
  std::string link = "relu";
  double gamma = 0.1;
  double G = 2.0;
  double Lambda = 1.0;
  double W = 1.0;
  int dim = 2;
  int hidden = 4;
  int cases = 1000;
  double tol = 1e-3;

  bool operator==(const MarginOracleConfig&) const = default;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::unit_circle;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  UnitCircleConfig unit_circle;
  SegmentsConfig segments;
  ConsistencyCurveConfig consistency_curve;
  CalibrationReportConfig calibration_report;
  MarginOracleConfig margin_oracle;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses the flat key=value format with [section] headers. Unknown keys,
/// malformed values and out-of-range values raise ConfigError carrying the
/// 1-based line and column.
ExperimentConfig parse_config(std::string_view text);

/// Canonical text form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

/// Surrogate list actually used by each table/curve (defaults resolved).
std::vector<std::string> resolved_segments_surrogates(const SegmentsConfig& c);
std::vector<std::string> resolved_curve_surrogates(const ConsistencyCurveConfig& c);

/// Splits "a, b(x=1,y=2), c" on commas outside parentheses.
std::vector<std::string> split_top_level(std::string_view list);

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

struct RunResult {
  int exit_code = kExitOk;
  std::vector<std::filesystem::path> outputs;  ///< written files, manifest last
  std::string message;
};

/// Runs the configured experiment and writes its artifacts plus
/// manifest.json into config.output_dir. `jobs` sets worker threads and
/// does not change any output.
RunResult run(const ExperimentConfig& config, int jobs = 1);

}  // namespace advcal
