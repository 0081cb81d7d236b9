// SPDX-License-Identifier: Apache-2.0
//
// The outer top-1 gate. A single affine classifier maps prompt features to
// category logits; routing takes the argmax (ties to the lowest id) and
// dispatches to that category's inner reward model, evaluating exactly one
// of them per call. The router is trained once on labeled prompts and then
// frozen; scoring through an unfrozen router is an error.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dmoerm/mat.hpp"
#include "dmoerm/model.hpp"
#include "dmoerm/world.hpp"

namespace dmoerm {

struct RouterParams {
  Mat W;  // kNumCategories x prompt_dim
  Mat b;  // kNumCategories x 1
  bool frozen = false;
};

struct RouterConfig {
  double lr = 0.05;
  int steps = 500;  // full-batch optimizer steps
  std::uint64_t seed = 0;

  void validate() const;
};

struct PromptExample {
  std::vector<double> x;
  int category = 0;
};

// One example per sample in the chosen splits, category-labeled.
std::vector<PromptExample> router_examples(const PreferenceDataset& ds,
                                           const std::vector<Split>& splits);

// Raw logits; usable before freezing (training and diagnostics).
std::vector<double> router_logits(const RouterParams& r,
                                  std::span<const double> x);

// Argmax category, lowest id on ties. StateError if the router is not
// frozen yet.
int route(const RouterParams& r, std::span<const double> x);

// Softmax cross-entropy fit, full batch; the result comes back frozen.
// Data must contain at least two distinct categories.
RouterParams train_router(std::span<const PromptExample> data,
                          const RouterConfig& cfg);

double router_accuracy(const RouterParams& r,
                       std::span<const PromptExample> data);

// Routes on prompt features, then scores the response with the chosen
// category's net. Exactly one inner net runs per call; `forward_counter`
// (when given) is incremented once per inner forward. A missing net falls
// back to `fallback` or raises ConfigError.
double dmoerm_reward(const RouterParams& router,
                     std::span<const RewardNet* const> rms_by_category,
                     std::span<const double> prompt_x,
                     std::span<const double> response_x,
                     long* forward_counter = nullptr,
                     const RewardNet* fallback = nullptr);

// Same container format as model checkpoints.
void save_router(const RouterParams& r, const std::filesystem::path& file);
RouterParams load_router(const std::filesystem::path& file);

}  // namespace dmoerm
