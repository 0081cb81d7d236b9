// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/ensembles.hpp"

#include <algorithm>
#include <cmath>

#include "dmoerm/errors.hpp"

namespace dmoerm {

namespace {

std::vector<double> member_scores(std::span<const RewardNet> members,
                                  std::span<const double> x) {
  std::vector<double> rs;
  rs.reserve(members.size());
  for (const RewardNet& m : members) rs.push_back(reward(m, x));
  return rs;
}

}  // namespace

const char* ensemble_kind_name(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::kMean: return "mean";
    case EnsembleKind::kWco: return "wco";
    case EnsembleKind::kUwo: return "uwo";
  }
  return "?";
}

EnsembleKind ensemble_kind_from_name(const std::string& name) {
  if (name == "mean") return EnsembleKind::kMean;
  if (name == "wco") return EnsembleKind::kWco;
  if (name == "uwo") return EnsembleKind::kUwo;
  throw ConfigError("unknown ensemble kind '" + name +
                    "' (expected mean|wco|uwo)");
}

double reward_mean(std::span<const double> member_scores) {
  if (member_scores.empty())
    throw ConfigError("reward_mean: empty ensemble");
  double sum = 0.0;
  for (double r : member_scores) sum += r;
  return sum / static_cast<double>(member_scores.size());
}

double reward_wco(std::span<const double> member_scores) {
  if (member_scores.empty())
    throw ConfigError("reward_wco: empty ensemble");
  return *std::min_element(member_scores.begin(), member_scores.end());
}

double reward_uwo(std::span<const double> member_scores, double lambda,
                  bool mean_minus_std) {
  if (member_scores.empty())
    throw ConfigError("reward_uwo: empty ensemble");
  if (lambda < 0.0)
    throw ConfigError("reward_uwo: lambda must be >= 0, got " +
                      std::to_string(lambda));
  const double mu = reward_mean(member_scores);
  double var = 0.0;
  for (double r : member_scores) var += (r - mu) * (r - mu);
  var /= static_cast<double>(member_scores.size());
  return mu - lambda * (mean_minus_std ? std::sqrt(var) : var);
}

double reward_mean(std::span<const RewardNet> members,
                   std::span<const double> x) {
  return reward_mean(member_scores(members, x));
}

double reward_wco(std::span<const RewardNet> members,
                  std::span<const double> x) {
  return reward_wco(member_scores(members, x));
}

double reward_uwo(std::span<const RewardNet> members, std::span<const double> x,
                  double lambda, bool mean_minus_std) {
  return reward_uwo(member_scores(members, x), lambda, mean_minus_std);
}

void EnsembleRM::validate() const {
  if (members.size() < 2)
    throw ConfigError("EnsembleRM: need at least 2 members, got " +
                      std::to_string(members.size()));
  if (lambda < 0.0)
    throw ConfigError("EnsembleRM: lambda must be >= 0, got " +
                      std::to_string(lambda));
}

double EnsembleRM::score(std::span<const double> x) const {
  validate();
  const std::vector<double> rs = member_scores(members, x);
  switch (kind) {
    case EnsembleKind::kMean: return reward_mean(rs);
    case EnsembleKind::kWco: return reward_wco(rs);
    case EnsembleKind::kUwo: return reward_uwo(rs, lambda, mean_minus_std);
  }
  throw ConfigError("EnsembleRM: unknown aggregation kind");
}

}  // namespace dmoerm
