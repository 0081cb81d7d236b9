// SPDX-License-Identifier: Apache-2.0
//
// Tool-level configuration and run manifests. A RunConfig gathers every
// knob the command-line tool exposes; it loads from a strict JSON file
// (unknown keys are rejected) and serializes back losslessly, so a
// manifest's embedded snapshot is enough to replay a run byte-for-byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmoerm/labeler.hpp"
#include "dmoerm/optimize.hpp"
#include "dmoerm/pipeline.hpp"
#include "dmoerm/training.hpp"
#include "dmoerm/world.hpp"

namespace dmoerm {

inline constexpr const char* kToolVersion = "0.3.0";

struct GenConfig {
  std::vector<int> sizes;  // explicit per-category counts; empty -> uniform
  int per_category = 300;
  int k_resp = 4;
  double test_fraction = 0.25;

  std::vector<int> resolved_sizes() const;  // sizes or per_category fill
  void validate() const;
};

struct LabelConfig {
  std::string backend = "oracle";  // oracle | remote
  double position_bias = 0.0;      // oracle only
  double tau = -1.0;               // oracle noise; < 0 -> calibrated value
  RemoteConfig remote;

  void validate() const;
};

struct EnsembleConfig {
  int members = 5;
  double lambda = 0.5;          // utility discount for the uncertainty kind
  bool mean_minus_std = false;  // std-based variant of the uncertainty kind

  void validate() const;
};

struct RunConfig {
  std::uint64_t world_seed = 1;
  WorldConfig world;
  GenConfig gen;
  LabelConfig label;
  ModelConfig model;
  PhaseConfig phases;
  TrainConfig train;  // single-model baseline and ensemble members
  EnsembleConfig ensemble;
  long bon_n_max = 60000;
  int bon_prompts = 500;
  PpoConfig ppo;

  BonConfig bon_config() const;  // grid from bon_n_max
  void validate() const;
};

// Strict loader: malformed JSON, unknown keys, or wrong value types all
// raise ConfigError naming the offender. Absent keys keep defaults.
RunConfig load_run_config(const std::filesystem::path& file);
// Overlay parsed JSON text onto an existing config (same strictness).
void apply_config_json(RunConfig& rc, const std::string& json_text,
                       const std::string& origin);
// Full snapshot; load_run_config(save of this) reproduces the config.
std::string run_config_json(const RunConfig& rc);

struct RunManifest {
  std::string command;  // subcommand, e.g. "train dmoerm"
  std::vector<std::string> args;
  std::string version = kToolVersion;
  std::string created;  // UTC ISO-8601; honors SOURCE_DATE_EPOCH
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string config_json;  // full RunConfig snapshot
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

std::string current_timestamp();  // SOURCE_DATE_EPOCH overrides wall clock

void save_manifest(const RunManifest& m, const std::filesystem::path& file);
RunManifest load_manifest(const std::filesystem::path& file);

// Rebuilds the world recorded by a `gen` run from dir/manifest.json.
World world_from_manifest(const std::filesystem::path& dir);

}  // namespace dmoerm
