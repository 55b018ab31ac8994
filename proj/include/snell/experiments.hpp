#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "snell/run_config.hpp"

namespace snell {

/// What an experiment produced. `<experiment>.report.json` holds everything
/// except the wall-clock time, which goes to `<experiment>.timing.json` so
/// reruns stay byte-identical.
struct RunReport {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string config_text;
  nlohmann::json metrics = nlohmann::json::object();
  std::size_t peak_floats = 0;
  double wall_clock_seconds = 0.0;
  std::vector<std::string> artifacts;  // relative to the output directory
};

RunReport run_fit_matrix(const RunConfig& cfg);
RunReport run_rank_study(const RunConfig& cfg);
RunReport run_sweep_sparsity(const RunConfig& cfg);
RunReport run_train(const RunConfig& cfg);
RunReport run_export(const RunConfig& cfg);

/// Dispatches on cfg.experiment, then writes <experiment>.config.ini,
/// <experiment>.report.json and <experiment>.timing.json into the output
/// directory, so train and export can share one directory.
RunReport run_experiment(const RunConfig& cfg);

/// Full command-line entry point. Exit codes: 0 success, 2 configuration
/// error, 3 runtime or numerical failure. Errors print one
/// `snell: error: ...` line to standard error.
int run_cli(int argc, const char* const* argv);

}  // namespace snell
