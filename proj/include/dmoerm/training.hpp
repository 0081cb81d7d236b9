// SPDX-License-Identifier: Apache-2.0
//
// Ranking loss and the staged training pipeline. Stage one fits the shared
// backbone and base head on annotator rankings. Stage two attaches one
// low-rank expert per capability point, freezes the backbone, and fits each
// expert on its point's winner/loser pairs. Stage three fits only the
// aggregator MLP, on rankings from a pool held back from the experts.
// Every stage evaluates validation pair accuracy on a schedule, stops once
// it fails to improve for `patience` consecutive evaluations, and restores
// the best snapshot seen.
//
// Trainers accept only gold-stripped datasets (see visible_only); passing
// records that still carry latents is an error, not a convenience.

#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "dmoerm/autodiff.hpp"
#include "dmoerm/labeler.hpp"
#include "dmoerm/model.hpp"
#include "dmoerm/world.hpp"

namespace dmoerm {

// Mean over all ordered pairs (i before j) of -log sigma(r_i - r_j), for
// scores listed best-first. Needs at least two scores.
double pairwise_loss(std::span<const double> rewards_best_first);
Tensor pairwise_loss(Tape& tape, std::span<const Tensor> rewards_best_first);

// Fraction of pairs ordered as ranked; exact ties earn half credit.
double ranked_pair_accuracy(std::span<const double> rewards_best_first);

// Net-vs-annotator agreement on one sample / a dataset slice. Uses the
// expert reward path when experts exist, the base head otherwise.
double sample_ranking_loss(const RewardNet& net, const PreferenceSample& s);
double sample_pair_accuracy(const RewardNet& net, const PreferenceSample& s);
double dataset_pair_accuracy(const RewardNet& net, const PreferenceDataset& ds,
                             const std::vector<Split>& splits,
                             std::optional<int> category = std::nullopt);

struct TrainConfig {
  double lr = 1e-4;           // 0 is legal and leaves parameters untouched
  int batch = 1;
  int max_steps = 3000;
  int eval_every = 100;       // optimizer steps between validation passes
  int patience = 20;          // evals without improvement before stopping
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MetricRow {
  int step = 0;
  double train_loss = 0.0;  // means over batches since the previous eval
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainStats {
  int steps = 0;              // optimizer steps executed
  int best_step = 0;          // step whose snapshot the model keeps
  double initial_val_acc = 0.0;
  double best_val_acc = 0.0;
  std::vector<MetricRow> history;
};

// Fits backbone + base head on the label rankings of samples in `splits`
// (optionally one category only).
TrainStats train_base(RewardNet& net, const PreferenceDataset& ds,
                      const std::vector<Split>& splits,
                      std::optional<int> category, const TrainConfig& cfg);

// Attaches one expert per capability point of `cd`, then fits each expert
// (adapter + head) separately on its retained pairs drawn from samples in
// `splits`. The backbone is never updated. A point with no usable pairs is
// an error naming the point. Returns per-expert stats.
std::vector<TrainStats> train_experts(RewardNet& net, const ModelConfig& mc,
                                      const PreferenceDataset& ds,
                                      const CapabilityDataset& cd,
                                      const std::vector<Split>& splits,
                                      const TrainConfig& cfg);

// Fits only the aggregator on the label rankings of samples in `splits`.
// Requires experts; adapters, heads, backbone and base head stay untouched.
TrainStats train_aggregator(RewardNet& net, const PreferenceDataset& ds,
                            const std::vector<Split>& splits,
                            std::optional<int> category, const TrainConfig& cfg);

// Baseline: backbone + head fit on all training splits, all categories.
TrainStats train_single_rm(RewardNet& net, const PreferenceDataset& ds,
                           const TrainConfig& cfg);

struct EnsembleSpec {
  int members = 5;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
};

// Baseline: `members` single reward models, identical data and
// hyperparameters, per-member seeds for both init and shuffle order.
std::vector<RewardNet> train_ensemble(const EnsembleSpec& spec,
                                      const PreferenceDataset& ds);

}  // namespace dmoerm
