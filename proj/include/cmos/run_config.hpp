#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cmos/synth.hpp"
#include "cmos/train.hpp"

namespace cmos {

/// Everything a CLI run can be configured with. Text form is one key=value per line;
/// '#' starts a comment and blank lines are ignored.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  std::size_t folds = 3;

  /// Sets the model, training and synthesis seeds together.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

struct ConfigKey {
  std::string key;
  std::string description;
};

/// Every accepted key in output order.
const std::vector<ConfigKey>& run_config_schema();

/// Starts from defaults. Throws InvalidArgument naming the key for unknown keys,
/// repeated keys and unparsable or out-of-range values.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes every schema key; parse_run_config inverts it exactly.
std::string format_run_config(const RunConfig& config);

}  // namespace cmos
