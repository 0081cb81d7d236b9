// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/optimize.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>

#include "dmoerm/autodiff.hpp"
#include "dmoerm/errors.hpp"
#include "dmoerm/taxonomy.hpp"

namespace dmoerm {
namespace {

constexpr std::uint64_t kTagPromptGen = 0x70726d70ULL;  // "prmp"
constexpr std::uint64_t kTagBon = 0x626f6e73ULL;        // "bons"
constexpr std::uint64_t kTagNoise = 0x6e6f6973ULL;      // "nois"
constexpr std::uint64_t kTagPpo = 0x70706f73ULL;        // "ppos"

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*ln(2*pi)

void check_dims(const GaussianPolicy& p) {
  if (p.mu.size() != p.sigma.size() || p.mu.empty()) {
    throw ConfigError("policy: mu and sigma must share a nonzero dimension");
  }
}

}  // namespace

void GaussianPolicy::validate() const {
  check_dims(*this);
  if (category < 0 || category >= kNumCategories) {
    throw ConfigError("policy: category out of range");
  }
  for (double s : sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw ConfigError("policy: sigma must be finite and > 0 elementwise");
    }
  }
}

GaussianPolicy init_policy(const World& w, int category) {
  if (category < 0 || category >= kNumCategories) {
    throw ConfigError("policy: category out of range");
  }
  GaussianPolicy p;
  p.category = category;
  const int n = w.capability_count(category);
  p.mu.assign(n, 0.5);
  p.sigma.assign(n, 0.22);
  return p;
}

PolicySample sample_response(const GaussianPolicy& p, const World& w,
                             Rng& rng) {
  check_dims(p);
  PolicySample out;
  out.raw.resize(p.mu.size());
  std::vector<double> latents(p.mu.size());
  for (std::size_t j = 0; j < p.mu.size(); ++j) {
    out.raw[j] = rng.normal(p.mu[j], p.sigma[j]);
    latents[j] = std::clamp(out.raw[j], 0.0, 1.0);
  }
  const std::uint64_t noise_seed = derive_seed({rng.next_u64(), kTagNoise});
  out.response = w.make_response(p.category, std::move(latents), noise_seed);
  return out;
}

double policy_log_prob(const GaussianPolicy& p, std::span<const double> raw) {
  check_dims(p);
  if (raw.size() != p.mu.size()) {
    throw ConfigError("policy: log_prob dimension mismatch");
  }
  double lp = 0.0;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    const double z = (raw[j] - p.mu[j]) / p.sigma[j];
    lp += -kHalfLog2Pi - std::log(p.sigma[j]) - 0.5 * z * z;
  }
  return lp;
}

double gaussian_kl(const GaussianPolicy& p, const GaussianPolicy& q) {
  check_dims(p);
  if (p.mu.size() != q.mu.size() || q.mu.size() != q.sigma.size()) {
    throw ConfigError("policy: KL dimension mismatch");
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < p.mu.size(); ++j) {
    const double vr = p.sigma[j] / q.sigma[j];
    const double dm = p.mu[j] - q.mu[j];
    kl += -std::log(vr) +
          (p.sigma[j] * p.sigma[j] + dm * dm) / (2.0 * q.sigma[j] * q.sigma[j]) -
          0.5;
  }
  return kl;
}

double kl_bon(long n) {
  if (n < 1) throw ConfigError("kl_bon: n must be >= 1");
  const double nd = static_cast<double>(n);
  return std::log(nd) - (nd - 1.0) / nd;
}

double kl_naive(std::span<const double> log_ratios) {
  if (log_ratios.empty()) throw ConfigError("kl_naive: no samples");
  double acc = 0.0;
  for (double r : log_ratios) acc += r;
  return acc / static_cast<double>(log_ratios.size());
}

double kl_squared(std::span<const double> log_ratios) {
  if (log_ratios.empty()) throw ConfigError("kl_squared: no samples");
  double acc = 0.0;
  for (double r : log_ratios) acc += 0.5 * r * r;
  return acc / static_cast<double>(log_ratios.size());
}

double ppo_reward(double proxy_score, double kl_estimate, double beta) {
  if (beta < 0.0) throw ConfigError("ppo_reward: beta must be >= 0");
  return proxy_score - beta * kl_estimate;
}

Proxy proxy_from_net(std::string name, const RewardNet& net) {
  return Proxy{std::move(name),
               [n = &net](std::span<const double>, const ResponseRecord& r) {
                 return reward(*n, r.x);
               }};
}

Proxy proxy_from_gold(const World& w) {
  return Proxy{"gold",
               [wp = &w](std::span<const double>, const ResponseRecord& r) {
                 return wp->gold_reward(r);
               }};
}

Proxy proxy_from_dmoerm(const RouterParams& router,
                        std::vector<const RewardNet*> rms_by_category,
                        const RewardNet* fallback) {
  return Proxy{"dmoerm",
               [rt = &router, rms = std::move(rms_by_category), fallback](
                   std::span<const double> prompt_x, const ResponseRecord& r) {
                 return dmoerm_reward(*rt, rms, prompt_x, r.x, nullptr,
                                      fallback);
               }};
}

Proxy proxy_from_ensemble(std::string name, const EnsembleRM& e) {
  return Proxy{std::move(name),
               [ep = &e](std::span<const double>, const ResponseRecord& r) {
                 return ep->score(r.x);
               }};
}

OptimizationTrace average_trace(const OptimizationTrace& t) {
  if (t.empty()) throw ConfigError("trace: nothing to average");
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<const TraceRow*>> groups;
  for (const TraceRow& r : t) {
    if (r.method != t.front().method) {
      throw ConfigError("trace: mixed methods cannot be averaged");
    }
    auto it = std::find(seeds.begin(), seeds.end(), r.seed);
    if (it == seeds.end()) {
      seeds.push_back(r.seed);
      groups.emplace_back();
      it = seeds.end() - 1;
    }
    groups[static_cast<std::size_t>(it - seeds.begin())].push_back(&r);
  }
  const std::size_t len = groups.front().size();
  for (const auto& g : groups) {
    if (g.size() != len) {
      throw ConfigError("trace: seed groups have unequal lengths");
    }
  }
  OptimizationTrace out;
  const double inv = 1.0 / static_cast<double>(groups.size());
  for (std::size_t i = 0; i < len; ++i) {
    TraceRow row;
    row.method = t.front().method;
    row.seed = 0;
    for (const auto& g : groups) {
      row.x_kl_nats += g[i]->x_kl_nats * inv;
      row.proxy_mean += g[i]->proxy_mean * inv;
      row.gold_mean += g[i]->gold_mean * inv;
    }
    out.push_back(std::move(row));
  }
  return out;
}

void save_trace(const OptimizationTrace& t, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("trace: cannot open " + file.string());
  out << "method,seed,x_kl_nats,proxy_mean,gold_mean\n";
  char buf[128];
  for (const TraceRow& r : t) {
    std::snprintf(buf, sizeof(buf), ",%llu,%.6f,%.6f,%.6f\n",
                  static_cast<unsigned long long>(r.seed), r.x_kl_nats,
                  r.proxy_mean, r.gold_mean);
    out << r.method << buf;
  }
  if (!out) throw IoError("trace: write failed for " + file.string());
}

OptimizationTrace load_trace(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("trace: cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) ||
      line != "method,seed,x_kl_nats,proxy_mean,gold_mean") {
    throw ParseError("trace: bad header in " + file.string());
  }
  OptimizationTrace out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    TraceRow r;
    std::string field;
    try {
      std::getline(ss, r.method, ',');
      std::getline(ss, field, ',');
      r.seed = std::stoull(field);
      std::getline(ss, field, ',');
      r.x_kl_nats = std::stod(field);
      std::getline(ss, field, ',');
      r.proxy_mean = std::stod(field);
      if (!std::getline(ss, field)) throw std::invalid_argument("short row");
      r.gold_mean = std::stod(field);
    } catch (const std::exception&) {
      throw ParseError("trace: bad row at " + file.string() + ":" +
                       std::to_string(lineno));
    }
    out.push_back(std::move(r));
  }
  return out;
}

BonConfig::BonConfig() {
  for (long n = 1; n <= 32768; n *= 2) grid.push_back(n);
  grid.push_back(60000);
}

void BonConfig::validate() const {
  if (grid.empty()) throw ConfigError("bon: empty n grid");
  long prev = 0;
  for (long n : grid) {
    if (n < 1) throw ConfigError("bon: n must be >= 1");
    if (n <= prev) throw ConfigError("bon: grid must be strictly increasing");
    prev = n;
  }
  if (prompts < 1) throw ConfigError("bon: prompts must be >= 1");
  if (jobs < 1) throw ConfigError("bon: jobs must be >= 1");
}

namespace {

// Streams grid.back() samples once, recording the running argmax at every
// grid point. Strict '>' keeps the first occurrence on ties.
std::vector<BonPick> bon_stream(const GaussianPolicy& policy, const World& w,
                                std::span<const double> prompt_x,
                                std::span<const long> grid, const Proxy& proxy,
                                std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BonPick> out;
  out.reserve(grid.size());
  BonPick best;
  best.proxy_score = -std::numeric_limits<double>::infinity();
  std::size_t g = 0;
  for (long j = 0; j < grid.back() && g < grid.size(); ++j) {
    PolicySample s = sample_response(policy, w, rng);
    const double p = proxy.score(prompt_x, s.response);
    if (p > best.proxy_score) {
      best.proxy_score = p;
      best.response = std::move(s.response);
    }
    while (g < grid.size() && j + 1 == grid[g]) {
      BonPick pick = best;
      pick.gold_score = w.gold_reward(pick.response);
      out.push_back(std::move(pick));
      ++g;
    }
  }
  return out;
}

}  // namespace

BonPick bon_select(const GaussianPolicy& policy, const World& w,
                   std::span<const double> prompt_x, long n,
                   const Proxy& proxy, std::uint64_t seed) {
  policy.validate();
  if (n < 1) throw ConfigError("bon: n must be >= 1");
  const long grid[] = {n};
  return bon_stream(policy, w, prompt_x, grid, proxy, seed).front();
}

std::vector<std::vector<double>> make_prompts(const World& w, int category,
                                              int count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("bon: prompt count must be >= 1");
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(w.make_prompt(
        category, derive_seed({seed, kTagPromptGen,
                               static_cast<std::uint64_t>(i)})));
  }
  return out;
}

OptimizationTrace bon_sweep(const GaussianPolicy& policy, const World& w,
                            const std::vector<std::vector<double>>& prompts,
                            const Proxy& proxy, const BonConfig& cfg) {
  policy.validate();
  cfg.validate();
  if (prompts.empty()) throw ConfigError("bon: no prompts");

  const std::size_t np = prompts.size();
  std::vector<std::vector<BonPick>> picks(np);
  const int workers =
      std::max(1, std::min<int>(cfg.jobs, static_cast<int>(np)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= np) return;
      try {
        picks[i] = bon_stream(
            policy, w, prompts[i], cfg.grid, proxy,
            derive_seed({cfg.seed, kTagBon, static_cast<std::uint64_t>(i)}));
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> ts;
    for (int t = 0; t < workers; ++t) ts.emplace_back(run);
    for (auto& t : ts) t.join();
  }
  if (err) std::rethrow_exception(err);

  OptimizationTrace trace;
  const double inv = 1.0 / static_cast<double>(np);
  for (std::size_t g = 0; g < cfg.grid.size(); ++g) {
    TraceRow row;
    row.method = proxy.name;
    row.seed = cfg.seed;
    row.x_kl_nats = kl_bon(cfg.grid[g]);
    for (const auto& pp : picks) {
      row.proxy_mean += pp[g].proxy_score * inv;
      row.gold_mean += pp[g].gold_score * inv;
    }
    trace.push_back(std::move(row));
  }
  return trace;
}

void PpoConfig::validate() const {
  if (steps < 1) throw ConfigError("ppo: steps must be >= 1");
  if (batch < 1) throw ConfigError("ppo: batch must be >= 1");
  if (beta < 0.0) throw ConfigError("ppo: beta must be >= 0");
  if (!(clip > 0.0)) throw ConfigError("ppo: clip must be > 0");
  if (lr < 0.0) throw ConfigError("ppo: lr must be >= 0");
  if (inner_epochs < 1) throw ConfigError("ppo: inner_epochs must be >= 1");
  if (seeds < 1) throw ConfigError("ppo: seeds must be >= 1");
}

namespace {

struct PpoBatch {
  std::vector<std::vector<double>> raw;
  std::vector<double> logp_old;
  std::vector<double> logp_init;
  std::vector<double> advantage;
  double proxy_mean = 0.0;
  double gold_mean = 0.0;
};

PpoBatch draw_batch(const GaussianPolicy& cur, const GaussianPolicy& init,
                    const World& w,
                    const std::vector<std::vector<double>>& prompts,
                    const Proxy& proxy, const PpoConfig& cfg, Rng& rng) {
  PpoBatch b;
  std::vector<double> shaped;
  const double inv = 1.0 / static_cast<double>(cfg.batch);
  for (int i = 0; i < cfg.batch; ++i) {
    const std::size_t pi = rng.index(prompts.size());
    PolicySample s = sample_response(cur, w, rng);
    const double r = proxy.score(prompts[pi], s.response);
    b.proxy_mean += r * inv;
    b.gold_mean += w.gold_reward(s.response) * inv;
    const double lp = policy_log_prob(cur, s.raw);
    const double li = policy_log_prob(init, s.raw);
    const double dl = lp - li;
    shaped.push_back(ppo_reward(r, 0.5 * dl * dl, cfg.beta));
    b.logp_old.push_back(lp);
    b.logp_init.push_back(li);
    b.raw.push_back(std::move(s.raw));
  }
  double mean = 0.0;
  for (double v : shaped) mean += v * inv;
  for (double v : shaped) b.advantage.push_back(v - mean);
  return b;
}

}  // namespace

OptimizationTrace ppo_run(const GaussianPolicy& init, const World& w,
                          const std::vector<std::vector<double>>& prompts,
                          const Proxy& proxy, const PpoConfig& cfg) {
  init.validate();
  cfg.validate();
  if (prompts.empty()) throw ConfigError("ppo: no prompts");

  OptimizationTrace trace;
  const int dim = static_cast<int>(init.mu.size());
  for (int s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t run_seed =
        derive_seed({cfg.seed, kTagPpo, static_cast<std::uint64_t>(s)});
    Rng rng(run_seed);
    GaussianPolicy cur = init;
    Mat mu(dim, 1);
    Mat logsig(dim, 1);
    for (int j = 0; j < dim; ++j) {
      mu.at(j, 0) = init.mu[j];
      logsig.at(j, 0) = std::log(init.sigma[j]);
    }
    Mat gmu(dim, 1);
    Mat glogsig(dim, 1);
    Mat* params[] = {&mu, &logsig};
    const Mat* grads[] = {&gmu, &glogsig};
    AdamOptimizer opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

    auto sync = [&] {
      for (int j = 0; j < dim; ++j) {
        cur.mu[j] = mu.at(j, 0);
        cur.sigma[j] = std::exp(logsig.at(j, 0));
      }
    };
    auto log_row = [&](const PpoBatch& b) {
      TraceRow row;
      row.method = proxy.name;
      row.seed = run_seed;
      row.x_kl_nats = gaussian_kl(cur, init);
      row.proxy_mean = b.proxy_mean;
      row.gold_mean = b.gold_mean;
      trace.push_back(std::move(row));
    };

    for (int step = 0; step < cfg.steps; ++step) {
      PpoBatch b = draw_batch(cur, init, w, prompts, proxy, cfg, rng);
      log_row(b);
      const double inv = 1.0 / static_cast<double>(cfg.batch);
      for (int ep = 0; ep < cfg.inner_epochs; ++ep) {
        std::fill(gmu.data(), gmu.data() + gmu.size(), 0.0);
        std::fill(glogsig.data(), glogsig.data() + glogsig.size(), 0.0);
        for (int i = 0; i < cfg.batch; ++i) {
          const double lp = policy_log_prob(cur, b.raw[i]);
          const double rho = std::exp(lp - b.logp_old[i]);
          const double a = b.advantage[i];
          const double clipped =
              std::clamp(rho, 1.0 - cfg.clip, 1.0 + cfg.clip) * a;
          // Surrogate term: zero gradient on the clipped branch.
          double coef = (rho * a > clipped) ? 0.0 : -rho * a * inv;
          // Direct gradient of the penalty beta*0.5*(lp - lp_init)^2,
          // which depends on the live parameters, not just the samples.
          coef += cfg.beta * (lp - b.logp_init[i]) * inv;
          if (coef == 0.0) continue;
          for (int j = 0; j < dim; ++j) {
            const double z = (b.raw[i][j] - cur.mu[j]) / cur.sigma[j];
            gmu.at(j, 0) += coef * z / cur.sigma[j];
            glogsig.at(j, 0) += coef * (z * z - 1.0);
          }
        }
        opt.step(params, grads);
        sync();
      }
      for (int j = 0; j < dim; ++j) {
        if (!std::isfinite(mu.at(j, 0)) || !std::isfinite(logsig.at(j, 0))) {
          throw DivergenceError("ppo: non-finite parameters at step " +
                                std::to_string(step));
        }
      }
    }
    // Final fresh-batch evaluation of the trained policy.
    PpoBatch b = draw_batch(cur, init, w, prompts, proxy, cfg, rng);
    log_row(b);
  }
  return trace;
}

}  // namespace dmoerm
