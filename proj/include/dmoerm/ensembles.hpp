// SPDX-License-Identifier: Apache-2.0
//
// Ensemble reward aggregation baselines over independently trained reward
// models: mean, worst-case (min), and an uncertainty-penalized mean that
// subtracts lambda times the population variance of the member scores. The
// penalized rule also has a mean-minus-std reading, selectable by flag.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmoerm/model.hpp"

namespace dmoerm {

enum class EnsembleKind { kMean, kWco, kUwo };
const char* ensemble_kind_name(EnsembleKind k);
EnsembleKind ensemble_kind_from_name(const std::string& name);

// Score-level aggregation rules. All throw ConfigError on an empty list;
// reward_uwo also rejects negative lambda.
double reward_mean(std::span<const double> member_scores);
double reward_wco(std::span<const double> member_scores);
double reward_uwo(std::span<const double> member_scores, double lambda,
                  bool mean_minus_std = false);

// Net-level wrappers: score x with every member, then aggregate.
double reward_mean(std::span<const RewardNet> members,
                   std::span<const double> x);
double reward_wco(std::span<const RewardNet> members, std::span<const double> x);
double reward_uwo(std::span<const RewardNet> members, std::span<const double> x,
                  double lambda, bool mean_minus_std = false);

struct EnsembleRM {
  std::vector<RewardNet> members;
  EnsembleKind kind = EnsembleKind::kMean;
  double lambda = 0.5;
  bool mean_minus_std = false;

  void validate() const;  // >= 2 members, lambda >= 0
  double score(std::span<const double> x) const;
};

}  // namespace dmoerm
