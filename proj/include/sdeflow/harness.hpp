/// @file harness.hpp
/// @brief Experiment configuration (JSON schema validation), deterministic
///        orchestration of the simulation modules, and run manifests with
///        per-output checksums.

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sdeflow/core.hpp"

namespace sdeflow {

inline constexpr const char* kArtifactVersion = "0.1.0";

/// Schema violation carrying the JSON path of the offending entry
/// (e.g. "$.knobs.eps").
struct ConfigError : std::runtime_error {
  std::string path;
  ConfigError(std::string at, const std::string& what)
      : std::runtime_error("config error at " + at + ": " + what), path(std::move(at)) {}
};

/// A fully validated experiment description. `resolved` holds the original
/// document with every default filled in; it is what gets written next to the
/// outputs and hashed into the manifest.
struct ExperimentConfig {
  std::string kind;  // mollify | flow | density | stability | fpe | ldp
  std::string field_name;
  std::map<std::string, double> field_params;
  std::string measure_name;  // density experiments; empty elsewhere
  std::map<std::string, double> measure_params;
  nlohmann::json knobs;  // kind-specific block, schema-checked
  uint64_t seed = 1;
  std::string out_dir;
  RunMode mode = RunMode::parallel;
  nlohmann::json resolved;
};

/// Parse and validate a config document. Every unknown key, wrong type,
/// out-of-range value, unknown field/measure name, or malformed knob block
/// raises ConfigError whose `path` points at the offending entry. The checks
/// are purely structural; runtime failures (e.g. an unstable time step) are
/// reported by run_experiment instead.
ExperimentConfig parse_config(const nlohmann::json& doc);

/// Read a JSON file and parse_config it. Unreadable files and JSON syntax
/// errors are reported as ConfigError at "$".
ExperimentConfig load_config_file(const std::string& path);

struct RunManifest {
  std::string version;      // artifact version
  std::string config_hash;  // fnv1a64 hex of the resolved config dump
  double wall_ms = 0.0;
  /// output file name -> fnv1a64 hex of its content (manifest excluded)
  std::vector<std::pair<std::string, std::string>> checksums;

  nlohmann::json to_json() const;
};

/// Run the configured experiment. Writes the module outputs, the resolved
/// config copy (config.json), and manifest.json into cfg.out_dir, and returns
/// the manifest. Identical configs reproduce identical checksums. Throws
/// std::runtime_error (or a derived type) on runtime failures.
RunManifest run_experiment(const ExperimentConfig& cfg);

/// Directory holding the shipped preset configs. Resolved at compile time in
/// the including target; falls back to the relative "presets".
inline std::string preset_dir() {
#ifdef SDEFLOW_PRESET_DIR
  return SDEFLOW_PRESET_DIR;
#else
  return "presets";
#endif
}

}  // namespace sdeflow
