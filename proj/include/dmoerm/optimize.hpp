// SPDX-License-Identifier: Apache-2.0
//
// Policy optimization against a proxy reward with gold-side evaluation:
// best-of-n selection with its analytic KL, two sample KL estimators, and a
// clipped-surrogate PPO variant on a diagonal Gaussian policy over response
// latents. Traces record (KL, proxy, gold) curves for the report stage.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmoerm/ensembles.hpp"
#include "dmoerm/mat.hpp"
#include "dmoerm/model.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/router.hpp"
#include "dmoerm/world.hpp"

namespace dmoerm {

// Scores one response. Trained proxies read only the visible features
// resp.x; the gold oracle reads the latents. Prompt features feed routing.
struct Proxy {
  std::string name;
  std::function<double(std::span<const double> prompt_x,
                       const ResponseRecord& resp)>
      score;
};

// Glue for the usual scorers. Captured objects must outlive the Proxy.
Proxy proxy_from_net(std::string name, const RewardNet& net);
Proxy proxy_from_gold(const World& w);
Proxy proxy_from_dmoerm(const RouterParams& router,
                        std::vector<const RewardNet*> rms_by_category,
                        const RewardNet* fallback = nullptr);
Proxy proxy_from_ensemble(std::string name, const EnsembleRM& e);

// Diagonal Gaussian over one category's latent capability vector. Draws are
// clamped to [0,1] before the World's feature map turns them into a
// response; log-probs are taken on the unclamped draw.
struct GaussianPolicy {
  int category = 0;
  std::vector<double> mu;
  std::vector<double> sigma;  // > 0 elementwise

  void validate() const;
};

// Fresh policy centered in the latent box: mu = 0.5, sigma = 0.22.
GaussianPolicy init_policy(const World& w, int category);

struct PolicySample {
  std::vector<double> raw;      // unclamped Gaussian draw
  ResponseRecord response;      // latents = clamp(raw), features via World
};

PolicySample sample_response(const GaussianPolicy& p, const World& w,
                             Rng& rng);

double policy_log_prob(const GaussianPolicy& p, std::span<const double> raw);
// Analytic KL(p || q) for diagonal Gaussians of equal dimension.
double gaussian_kl(const GaussianPolicy& p, const GaussianPolicy& q);

// ln n - (n-1)/n, the exact KL of best-of-n selection. ConfigError n < 1.
double kl_bon(long n);

// Sample estimators over log(pi/pi_init) ratios. The naive mean can go
// negative; the half-square form cannot.
double kl_naive(std::span<const double> log_ratios);
double kl_squared(std::span<const double> log_ratios);

// Shaped reward R - beta * kl. ConfigError beta < 0.
double ppo_reward(double proxy_score, double kl_estimate, double beta);

struct TraceRow {
  std::string method;
  std::uint64_t seed = 0;
  double x_kl_nats = 0.0;
  double proxy_mean = 0.0;
  double gold_mean = 0.0;
};
using OptimizationTrace = std::vector<TraceRow>;

// Averages aligned rows across the seed groups of a trace (all groups must
// share one method and equal length). Result rows carry seed 0.
OptimizationTrace average_trace(const OptimizationTrace& t);

void save_trace(const OptimizationTrace& t, const std::filesystem::path& file);
OptimizationTrace load_trace(const std::filesystem::path& file);

struct BonConfig {
  std::vector<long> grid;  // default: powers of two to 32768, then 60000
  int prompts = 500;
  std::uint64_t seed = 0;
  int jobs = 1;

  BonConfig();
  void validate() const;  // nonempty, strictly increasing, all >= 1
};

struct BonPick {
  ResponseRecord response;
  double proxy_score = 0.0;
  double gold_score = 0.0;
};

// Draws n i.i.d. responses and returns the proxy argmax (first on ties),
// with its gold score. Deterministic in (seed, prompt); the stream is
// prefix-stable, so the pick at n is among the candidates at any n' > n.
BonPick bon_select(const GaussianPolicy& policy, const World& w,
                   std::span<const double> prompt_x, long n,
                   const Proxy& proxy, std::uint64_t seed);

// Category prompts for a sweep, one per derived seed.
std::vector<std::vector<double>> make_prompts(const World& w, int category,
                                              int count, std::uint64_t seed);

// One trace row per grid point: analytic best-of-n KL against the mean
// proxy/gold scores of the per-prompt picks. Samples are streamed once per
// prompt and shared across the whole grid.
OptimizationTrace bon_sweep(const GaussianPolicy& policy, const World& w,
                            const std::vector<std::vector<double>>& prompts,
                            const Proxy& proxy, const BonConfig& cfg);

struct PpoConfig {
  int steps = 3000;
  int batch = 32;
  double beta = 0.1;
  double clip = 0.2;
  double lr = 1.41e-2;
  int inner_epochs = 4;
  int seeds = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

// Clipped-surrogate policy gradient on (mu, log sigma) with the shaped
// reward R - beta * 0.5 * (log pi - log pi_init)^2 and a batch-mean
// advantage baseline. Emits one row per step (pre-update batch) plus a
// final fresh-batch row, for each seed in turn; rows carry the derived
// per-run seed. DivergenceError if parameters leave the finite range.
OptimizationTrace ppo_run(const GaussianPolicy& init, const World& w,
                          const std::vector<std::vector<double>>& prompts,
                          const Proxy& proxy, const PpoConfig& cfg);

}  // namespace dmoerm
