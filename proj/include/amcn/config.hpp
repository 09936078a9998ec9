// JSON run configuration and run reports.
//
// A config document mirrors the C++ field names:
//   { "epochs", "batch_size", "seed", "shots", "polarity", "checkpoint_every",
//     "hp": { HyperParams fields }, "optimizer": { OptimizerConfig fields },
//     "synth": { SynthConfig fields } }
// Every key is optional; unknown keys are rejected.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "amcn/synth.hpp"
#include "amcn/trainer.hpp"

namespace amcn {

struct RunConfig {
  TrainConfig train;
  SynthConfig synth;
};

// Throws InvalidConfig on malformed JSON, wrong types, unknown keys or
// out-of-range values.
RunConfig parse_config(std::string_view text);
// Throws IoError when the file cannot be read.
RunConfig load_config(const std::filesystem::path& path);

// Every field written out, keys sorted, compact.
std::string canonical_json(const RunConfig& cfg);
// fnv1a64 of canonical_json, as 16 lowercase hex digits.
std::string config_hash(const RunConfig& cfg);

struct RunReport {
  std::string config_hash;
  std::vector<LossReport> epochs;
  std::optional<EvalMetrics> metrics;
  std::vector<ClassStats> per_class_stats;
};

// Pretty-printed JSON. Undefined metrics are written as null.
std::string to_json(const RunReport& report);
RunReport parse_run_report(std::string_view text);

}  // namespace amcn
