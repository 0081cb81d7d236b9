// SPDX-License-Identifier: Apache-2.0
//
// End-to-end model assembly shared by the command-line tool and the
// benchmarks: the per-category three-phase mixture models plus the prompt
// router, the single-model and ensemble baselines, and the on-disk model
// directory layout (checkpoints plus a small JSON descriptor).

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "dmoerm/ensembles.hpp"
#include "dmoerm/labeler.hpp"
#include "dmoerm/model.hpp"
#include "dmoerm/optimize.hpp"
#include "dmoerm/router.hpp"
#include "dmoerm/training.hpp"
#include "dmoerm/world.hpp"

namespace dmoerm {

// Learning rates follow a 1 : 500 : 10 ratio across the three phases;
// lr_scale is a global multiplier that adapts them to this model scale.
struct PhaseConfig {
  double lr1 = 1e-7;  // backbone + base head
  double lr2 = 5e-5;  // experts (adapter + per-point head)
  double lr3 = 1e-6;  // aggregator
  double lr_scale = 1e3;
  int batch = 1;
  int max_steps = 3000;  // cap per phase (per expert in phase 2)
  int eval_every = 100;
  int patience = 20;
  double val_fraction = 0.1;
  RouterConfig router{};

  void validate() const;  // ConfigError naming each bad field
};

// The per-phase training schedule: phase in {1,2,3} picks the rate.
TrainConfig phase_train_config(const PhaseConfig& pc, int phase,
                               std::uint64_t seed);

struct DmoermModel {
  RouterParams router;
  std::vector<RewardNet> inner;  // one expert-form net per category
};

struct CategoryStats {
  TrainStats phase1;
  std::vector<TrainStats> phase2;  // one entry per capability point
  TrainStats phase3;
};

struct DmoermStats {
  std::vector<CategoryStats> per_category;
  double router_accuracy = 0.0;  // on the training prompts
};

// Trains one inner model per category (three phases each) on its labeled
// capability points, then fits and freezes the router on the same visible
// dataset. `caps` must hold one category-taxonomy dataset per category,
// in category order. `ds` must be model-visible (no latents).
DmoermModel train_dmoerm(const PreferenceDataset& ds,
                         std::span<const CapabilityDataset> caps,
                         const ModelConfig& mc, const PhaseConfig& pc,
                         std::uint64_t seed, DmoermStats* stats = nullptr);

// Ablation: a single inner model over all categories, with experts drawn
// from the category-agnostic taxonomy. No router is involved in scoring.
RewardNet train_dmoerm_wo_outer(const PreferenceDataset& ds,
                                const CapabilityDataset& overall_caps,
                                const ModelConfig& mc, const PhaseConfig& pc,
                                std::uint64_t seed,
                                CategoryStats* stats = nullptr);

// Self-owning scorers (they keep the model alive via shared_ptr).
Proxy proxy_from_dmoerm_model(std::shared_ptr<const DmoermModel> m);
Proxy proxy_from_owned_net(std::string name, std::shared_ptr<const RewardNet> n);
Proxy proxy_from_owned_ensemble(std::string name,
                                std::shared_ptr<const EnsembleRM> e);

// Model directory layout: model.json descriptor (field "type": one of
// dmoerm, dmoerm-wo-outer, single, ensemble) plus checkpoint files.
void save_dmoerm(const DmoermModel& m, const std::filesystem::path& dir);
DmoermModel load_dmoerm(const std::filesystem::path& dir);
void save_single(const RewardNet& net, const std::filesystem::path& dir,
                 const std::string& type = "single");
RewardNet load_single(const std::filesystem::path& dir);
void save_ensemble(const EnsembleRM& e, const std::filesystem::path& dir);
EnsembleRM load_ensemble(const std::filesystem::path& dir);

// Reads model.json and builds the matching scorer. IoError when the
// descriptor is missing, ParseError when it is malformed.
std::string model_type(const std::filesystem::path& dir);
Proxy load_model_proxy(const std::filesystem::path& dir);

}  // namespace dmoerm
