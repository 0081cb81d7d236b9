// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/router.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "dmoerm/autodiff.hpp"
#include "dmoerm/checkpoint.hpp"
#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/taxonomy.hpp"

namespace dmoerm {
namespace {

void check_dim(const RouterParams& r, std::span<const double> x) {
  if (r.W.rows != kNumCategories || r.b.rows != kNumCategories ||
      r.b.cols != 1) {
    throw ConfigError("router: expected " + std::to_string(kNumCategories) +
                      " logit rows");
  }
  if (r.W.cols != static_cast<int>(x.size())) {
    throw ConfigError("router: prompt has dim " + std::to_string(x.size()) +
                      ", classifier expects " + std::to_string(r.W.cols));
  }
}

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;  // strict: ties keep the lowest id
  }
  return best;
}

// Stable softmax in place.
void softmax(std::vector<double>& z) {
  double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

}  // namespace

void RouterConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("router: lr must be finite and >= 0");
  }
  if (steps < 1) throw ConfigError("router: steps must be >= 1");
}

std::vector<PromptExample> router_examples(const PreferenceDataset& ds,
                                           const std::vector<Split>& splits) {
  std::vector<PromptExample> out;
  for (const PreferenceSample& s : ds.samples) {
    if (std::find(splits.begin(), splits.end(), s.split) == splits.end()) {
      continue;
    }
    out.push_back(PromptExample{s.prompt_x, s.category});
  }
  return out;
}

std::vector<double> router_logits(const RouterParams& r,
                                  std::span<const double> x) {
  check_dim(r, x);
  std::vector<double> z(kNumCategories, 0.0);
  for (int c = 0; c < kNumCategories; ++c) {
    double acc = r.b.at(c, 0);
    for (int j = 0; j < r.W.cols; ++j) acc += r.W.at(c, j) * x[j];
    z[c] = acc;
  }
  return z;
}

int route(const RouterParams& r, std::span<const double> x) {
  if (!r.frozen) {
    throw StateError("router: must be trained and frozen before routing");
  }
  std::vector<double> z = router_logits(r, x);
  return argmax_lowest(z);
}

RouterParams train_router(std::span<const PromptExample> data,
                          const RouterConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("router: no training prompts");
  const int dim = static_cast<int>(data.front().x.size());
  std::set<int> cats;
  for (const PromptExample& e : data) {
    if (e.category < 0 || e.category >= kNumCategories) {
      throw ConfigError("router: category " + std::to_string(e.category) +
                        " out of range");
    }
    if (static_cast<int>(e.x.size()) != dim) {
      throw ConfigError("router: inconsistent prompt dims in training data");
    }
    cats.insert(e.category);
  }
  if (cats.size() < 2) {
    throw ConfigError(
        "router: degenerate data, need prompts from at least two categories");
  }

  RouterParams r;
  r.W = Mat(kNumCategories, dim);
  r.b = Mat(kNumCategories, 1);
  Rng init(derive_seed({cfg.seed, 0x726f7574ULL}));
  fill_normal(r.W, init, 0.01);

  Mat gW(kNumCategories, dim);
  Mat gb(kNumCategories, 1);
  Mat* params[] = {&r.W, &r.b};
  const Mat* grads[] = {&gW, &gb};
  AdamOptimizer opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  const double inv_n = 1.0 / static_cast<double>(data.size());

  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(gW.data(), gW.data() + gW.size(), 0.0);
    std::fill(gb.data(), gb.data() + gb.size(), 0.0);
    for (const PromptExample& e : data) {
      std::vector<double> p = router_logits(r, e.x);
      softmax(p);
      p[e.category] -= 1.0;  // d(logits) of cross-entropy
      for (int c = 0; c < kNumCategories; ++c) {
        const double g = p[c] * inv_n;
        gb.at(c, 0) += g;
        for (int j = 0; j < dim; ++j) gW.at(c, j) += g * e.x[j];
      }
    }
    opt.step(params, grads);
  }
  r.frozen = true;
  return r;
}

double router_accuracy(const RouterParams& r,
                       std::span<const PromptExample> data) {
  if (data.empty()) throw ConfigError("router: no prompts to score");
  long hits = 0;
  for (const PromptExample& e : data) {
    if (route(r, e.x) == e.category) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double dmoerm_reward(const RouterParams& router,
                     std::span<const RewardNet* const> rms_by_category,
                     std::span<const double> prompt_x,
                     std::span<const double> response_x, long* forward_counter,
                     const RewardNet* fallback) {
  if (static_cast<int>(rms_by_category.size()) != kNumCategories) {
    throw ConfigError("router: expected one reward-net slot per category");
  }
  const int cat = route(router, prompt_x);
  const RewardNet* rm = rms_by_category[cat];
  if (rm == nullptr) rm = fallback;
  if (rm == nullptr) {
    throw ConfigError("router: no reward model for routed category " +
                      std::string(category_name(cat)));
  }
  if (forward_counter != nullptr) ++*forward_counter;
  return reward(*rm, response_x);
}

void save_router(const RouterParams& r, const std::filesystem::path& file) {
  Checkpoint ck;
  ck.add("router.W", r.W);
  ck.add("router.b", r.b);
  ck.add("router.frozen", Mat::scalar(r.frozen ? 1.0 : 0.0));
  ck.save(file);
}

RouterParams load_router(const std::filesystem::path& file) {
  Checkpoint ck = Checkpoint::load(file);
  RouterParams r;
  r.W = ck.require("router.W");
  r.b = ck.require("router.b");
  r.frozen = ck.require("router.frozen").item() != 0.0;
  if (r.W.rows != kNumCategories || r.b.rows != kNumCategories) {
    throw ParseError("router checkpoint: wrong logit rows");
  }
  return r;
}

}  // namespace dmoerm
