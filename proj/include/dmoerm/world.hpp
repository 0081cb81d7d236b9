// SPDX-License-Identifier: Apache-2.0
//
// The synthetic preference world. Each response is a latent capability
// vector c in [0,1]^n (one coordinate per capability point of its task
// category); observable features are a noisy affine image of c, and the
// hidden gold reward is a monotone nonlinear blend of c. Annotators are
// noisy: perceived utility = gold + tau * Gumbel, which yields logistic
// pairwise choice probabilities and coherent k-ary rankings from one model.
//
// Gold-side data (latents, gold scores, gold order) is serialized to a
// separate file that training code never reads; trainers only ever see the
// feature vectors and annotated orderings.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmoerm/mat.hpp"
#include "dmoerm/taxonomy.hpp"

namespace dmoerm {

struct WorldConfig {
  int prompt_dim = 8;
  int feature_dim = 32;
  double feature_noise = 0.1;    // sigma of observation noise on features
  double prompt_noise = 0.35;    // spread of prompts around category centers
  int gold_hidden = 8;           // softplus units in the gold network
  double interaction_strength = 1.0;
  double agreement_overall = 0.74;     // two-annotator agreement targets
  double agreement_capability = 0.83;
  double tau_overall = 0.0;      // 0 -> calibrate to agreement_overall
  double tau_capability = 0.0;   // 0 -> calibrate to agreement_capability
  int calib_samples = 400;       // per category, for tau calibration
  int calib_k = 4;

  void validate() const;
};

enum class Split { kPhase1, kPhase3, kTest };
const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct ResponseRecord {
  std::vector<double> x;        // observable features
  std::vector<double> latents;  // gold-side; empty when loaded from the
                                // model-visible file
  int category = 0;
};

struct PreferenceSample {
  int id = 0;
  int category = 0;
  Split split = Split::kPhase1;
  std::vector<double> prompt_x;
  std::vector<ResponseRecord> responses;
  std::vector<int> label_order;  // annotator ranking, best first
  std::vector<int> gold_order;   // gold-side ranking; empty when not loaded
};

struct PreferenceDataset {
  std::vector<PreferenceSample> samples;
  int k_resp = 0;

  int count(Split s, std::optional<int> category = std::nullopt) const;
};

// Copy with latents and gold orderings removed; trainers accept only this
// stripped form, so gold-side information cannot leak into model fitting.
PreferenceDataset visible_only(const PreferenceDataset& ds);

struct DisturbanceCombo {
  std::string name;             // e.g. "roleplay+chitchat"
  std::vector<int> categories;  // ascending category ids
};

class World {
 public:
  static World build(std::uint64_t seed, const WorldConfig& cfg);

  std::uint64_t seed() const { return seed_; }
  const WorldConfig& config() const { return cfg_; }
  const CapabilityTaxonomy& taxonomy() const { return taxonomy_; }
  double tau_overall() const { return tau_overall_; }
  double tau_capability() const { return tau_capability_; }

  int capability_count(int category) const { return taxonomy_.count(category); }

  // Gold reward in [0,1], strictly increasing in every latent coordinate.
  double gold_from_latents(int category, std::span<const double> c) const;
  double gold_reward(const ResponseRecord& r) const;  // StateError if no latents

  // Latent value of capability j. With overall_taxonomy the category
  // latents are first projected through a fixed row-stochastic map onto the
  // category-agnostic point list.
  double capability_value(int category, std::span<const double> c, int j,
                          bool overall_taxonomy) const;

  ResponseRecord make_response(int category, std::vector<double> latents,
                               std::uint64_t noise_seed) const;
  std::vector<double> make_prompt(int category, std::uint64_t seed) const;

  // sizes[cat] samples per category, k_resp responses each; a test_fraction
  // share becomes the held-out test split and the rest is split 60/40 into
  // phase-1 and phase-3 pools. Labels come from annotator stream 0 of
  // `seed`.
  PreferenceDataset sample_dataset(const std::vector<int>& sizes, int k_resp,
                                   std::uint64_t seed,
                                   double test_fraction = 0.25) const;

  // True when the annotator prefers a over b. Equal gold is a fair coin.
  bool annotate_overall(const ResponseRecord& a, const ResponseRecord& b,
                        std::uint64_t annotator_seed) const;
  bool annotate_capability(int j, const ResponseRecord& a,
                           const ResponseRecord& b, std::uint64_t annotator_seed,
                           bool overall_taxonomy = false) const;
  // Indices of responses, annotator-best first (Gumbel-perturbed utilities).
  std::vector<int> annotate_ranking(const std::vector<ResponseRecord>& rs,
                                    std::uint64_t annotator_seed) const;

  // Fingerprint over all world parameters; equal seeds+config => equal.
  std::uint64_t checksum() const;

  static std::vector<DisturbanceCombo> disturbance_combos();

 private:
  struct CategoryParams {
    Mat feature_map;     // feature_dim x n_cap
    Mat feature_offset;  // feature_dim x 1
    Mat prompt_center;   // prompt_dim x 1
    Mat gold_u;          // gold_hidden x n_cap, nonnegative
    Mat gold_d;          // gold_hidden x 1
    Mat gold_v;          // gold_hidden x 1, nonnegative
    Mat gold_q;          // n_cap x n_cap, strict upper triangle, nonnegative
    Mat overall_proj;    // overall_count x n_cap, row-stochastic
    double g_lo = 0.0;   // gold net at the all-zeros corner
    double g_hi = 1.0;   // at the all-ones corner
  };

  double gold_raw(const CategoryParams& p, std::span<const double> c) const;
  std::vector<double> draw_latents(int category, Rng& rng) const;
  void calibrate(std::uint64_t seed);

  std::uint64_t seed_ = 0;
  WorldConfig cfg_;
  CapabilityTaxonomy taxonomy_;
  std::vector<CategoryParams> cats_;
  double tau_overall_ = 0.0;
  double tau_capability_ = 0.0;
};

// File layout: dir/dataset.jsonl (model-visible) and dir/gold.jsonl.
void save_dataset(const PreferenceDataset& ds, const std::filesystem::path& dir);
// Loads the model-visible half only: latents and gold orders stay empty.
PreferenceDataset load_visible_dataset(const std::filesystem::path& dir);
// Merges the gold-side file into a visible dataset (for evaluation code).
void load_gold_side(const std::filesystem::path& dir, PreferenceDataset& ds);

}  // namespace dmoerm
