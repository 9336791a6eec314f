#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "goatlab/trainer.hpp"

namespace goatlab {

// A training run as configured from a JSON file: the trainer settings plus
// orchestration (output directory, optional paired baseline, seed fan-out).
struct RunConfig {
  TrainConfig train;
  std::string output_dir;
  std::string compare_with;   // optional baseline variant for paired runs
  std::size_t num_seeds = 1;  // paired/multi-seed runs use seed, seed+1, ...
};

// Strict parse: unknown keys are config errors (catches sweep typos), and
// every value is validated with a field-level message. The GOATLAB_SEED
// environment variable overrides the configured seed.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string run_config_to_json(const RunConfig& config);

}  // namespace goatlab
