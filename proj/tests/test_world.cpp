// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/world.hpp"

using namespace dmoerm;

namespace {

const World& default_world() {
  static World w = World::build(42, WorldConfig{});
  return w;
}

// Least squares via Gaussian elimination with partial pivoting; good
// enough to probe feature informativeness.
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < n; ++r) {
      double f = a[r][col] / a[col][col];
      for (int k = col; k < n; ++k) a[r][k] -= f * a[col][k];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double v = b[r];
    for (int k = r + 1; k < n; ++k) v -= a[r][k] * x[k];
    x[r] = v / a[r][r];
  }
  return x;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("world build is deterministic in seed and config") {
  WorldConfig cfg;
  World a = World::build(7, cfg);
  World b = World::build(7, cfg);
  World c = World::build(8, cfg);
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != c.checksum());
  CHECK(a.tau_overall() == b.tau_overall());
  CHECK(a.tau_overall() > 0.0);
  CHECK(a.tau_capability() > 0.0);
}

TEST_CASE("gold reward: corner normalization and [0,1] range") {
  const World& w = default_world();
  for (int cat = 0; cat < kNumCategories; ++cat) {
    const int n = w.capability_count(cat);
    std::vector<double> zeros(n, 0.0), ones(n, 1.0);
    CHECK(w.gold_from_latents(cat, zeros) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(w.gold_from_latents(cat, ones) == doctest::Approx(1.0).epsilon(1e-12));
  }
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    int cat = static_cast<int>(rng.index(kNumCategories));
    std::vector<double> c(w.capability_count(cat));
    for (double& v : c) v = rng.beta22();
    double g = w.gold_from_latents(cat, c);
    REQUIRE(g >= 0.0);
    REQUIRE(g <= 1.0);
  }
}

TEST_CASE("gold reward is strictly monotone in every latent coordinate") {
  const World& w = default_world();
  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    int cat = static_cast<int>(rng.index(kNumCategories));
    const int n = w.capability_count(cat);
    std::vector<double> c(n);
    for (double& v : c) v = 0.95 * rng.uniform();
    int j = static_cast<int>(rng.index(n));
    double g0 = w.gold_from_latents(cat, c);
    c[j] += 0.01 + 0.04 * rng.uniform();
    double g1 = w.gold_from_latents(cat, c);
    REQUIRE(g1 > g0);
  }
}

TEST_CASE("features carry the latents: linear probe R^2 >= 0.5 per dim") {
  const World& w = default_world();
  const int cat = static_cast<int>(TaskCategory::kRoleplay);
  const int n_cap = w.capability_count(cat);
  const int d = w.config().feature_dim;
  const int N = 400;
  Rng rng(14);
  std::vector<std::vector<double>> xs;
  std::vector<std::vector<double>> cs;
  for (int i = 0; i < N; ++i) {
    std::vector<double> c(n_cap);
    for (double& v : c) v = rng.beta22();
    ResponseRecord r = w.make_response(cat, c, rng.next_u64());
    xs.push_back(r.x);
    cs.push_back(c);
  }
  // Regress each latent dim on [x, 1].
  const int p = d + 1;
  for (int dim = 0; dim < n_cap; ++dim) {
    std::vector<std::vector<double>> xtx(p, std::vector<double>(p, 0.0));
    std::vector<double> xty(p, 0.0);
    double y_mean = 0.0;
    for (int i = 0; i < N; ++i) y_mean += cs[i][dim];
    y_mean /= N;
    for (int i = 0; i < N; ++i) {
      std::vector<double> row = xs[i];
      row.push_back(1.0);
      for (int a = 0; a < p; ++a) {
        xty[a] += row[a] * cs[i][dim];
        for (int b = 0; b < p; ++b) xtx[a][b] += row[a] * row[b];
      }
    }
    for (int a = 0; a < p; ++a) xtx[a][a] += 1e-8;
    std::vector<double> beta = solve(xtx, xty);
    double sse = 0.0, sst = 0.0;
    for (int i = 0; i < N; ++i) {
      double pred = beta[d];
      for (int a = 0; a < d; ++a) pred += beta[a] * xs[i][a];
      sse += (cs[i][dim] - pred) * (cs[i][dim] - pred);
      sst += (cs[i][dim] - y_mean) * (cs[i][dim] - y_mean);
    }
    double r2 = 1.0 - sse / sst;
    CHECK(r2 >= 0.5);
  }
}

TEST_CASE("sample_dataset: split law, ids, permutations, determinism") {
  const World& w = default_world();
  std::vector<int> sizes{10, 10, 10, 10, 10};
  PreferenceDataset ds = w.sample_dataset(sizes, 2, 900, 0.2);
  CHECK(ds.k_resp == 2);
  CHECK(ds.samples.size() == 50);
  for (int cat = 0; cat < kNumCategories; ++cat) {
    CHECK(ds.count(Split::kTest, cat) == 2);
    CHECK(ds.count(Split::kPhase1, cat) == 5);  // round(8 * 0.6)
    CHECK(ds.count(Split::kPhase3, cat) == 3);
  }
  std::set<int> ids;
  for (const auto& s : ds.samples) {
    ids.insert(s.id);
    REQUIRE(s.responses.size() == 2);
    std::set<int> lo(s.label_order.begin(), s.label_order.end());
    std::set<int> go(s.gold_order.begin(), s.gold_order.end());
    CHECK(lo == std::set<int>{0, 1});
    CHECK(go == std::set<int>{0, 1});
    CHECK(s.prompt_x.size() == static_cast<std::size_t>(w.config().prompt_dim));
    for (const auto& r : s.responses) {
      CHECK(r.x.size() == static_cast<std::size_t>(w.config().feature_dim));
      // Gold scores within a sample are separated, so gold order is strict.
      CHECK(r.latents.size() > 0);
    }
    double g0 = w.gold_reward(s.responses[s.gold_order[0]]);
    double g1 = w.gold_reward(s.responses[s.gold_order[1]]);
    CHECK(g0 > g1);
  }
  CHECK(ids.size() == 50);

  PreferenceDataset ds2 = w.sample_dataset(sizes, 2, 900, 0.2);
  PreferenceDataset ds3 = w.sample_dataset(sizes, 2, 901, 0.2);
  CHECK(ds2.samples[7].responses[1].x == ds.samples[7].responses[1].x);
  CHECK(ds3.samples[7].responses[1].x != ds.samples[7].responses[1].x);

  CHECK_THROWS_AS(w.sample_dataset({1, 1}, 2, 1), ConfigError);
  CHECK_THROWS_AS(w.sample_dataset(sizes, 1, 1), ConfigError);
}

TEST_CASE("annotator on an equal-gold pair is a fair coin") {
  const World& w = default_world();
  const int cat = 0;
  std::vector<double> c(w.capability_count(cat), 0.4);
  ResponseRecord a = w.make_response(cat, c, 1);
  ResponseRecord b = w.make_response(cat, c, 2);
  int prefer_a = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    prefer_a += w.annotate_overall(a, b, derive_seed({55, (std::uint64_t)i}));
  double rate = static_cast<double>(prefer_a) / n;
  CHECK(rate > 0.47);
  CHECK(rate < 0.53);
}

TEST_CASE("annotator pairwise rate matches the logistic model") {
  const World& w = default_world();
  const int cat = 1;
  Rng rng(77);
  auto ca = w.make_response(cat, {0.8, 0.6, 0.7, 0.5, 0.6, 0.7}, rng.next_u64());
  auto cb = w.make_response(cat, {0.3, 0.4, 0.5, 0.4, 0.3, 0.5}, rng.next_u64());
  const double want =
      1.0 / (1.0 + std::exp(-(w.gold_reward(ca) - w.gold_reward(cb)) / w.tau_overall()));
  int prefer_a = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    prefer_a += w.annotate_overall(ca, cb, derive_seed({66, (std::uint64_t)i}));
  CHECK(static_cast<double>(prefer_a) / n == doctest::Approx(want).epsilon(0.03));

  // Ranking marginals agree with the pairwise model.
  std::vector<ResponseRecord> rs{ca, cb};
  int rank_a_first = 0;
  for (int i = 0; i < n; ++i)
    rank_a_first +=
        w.annotate_ranking(rs, derive_seed({67, (std::uint64_t)i}))[0] == 0;
  CHECK(static_cast<double>(rank_a_first) / n == doctest::Approx(want).epsilon(0.03));
}

TEST_CASE("calibrated agreement lands on the targets") {
  const World& w = default_world();
  PreferenceDataset ds = w.sample_dataset({120, 120, 120, 120, 120}, 4, 4242, 0.0);
  int agree_o = 0, n_o = 0;
  int agree_c = 0, n_c = 0;
  std::uint64_t t = 0;
  for (const auto& s : ds.samples) {
    for (std::size_t i = 0; i < s.responses.size(); ++i)
      for (std::size_t j = i + 1; j < s.responses.size(); ++j) {
        bool a1 = w.annotate_overall(s.responses[i], s.responses[j],
                                     derive_seed({9001, t}));
        bool a2 = w.annotate_overall(s.responses[i], s.responses[j],
                                     derive_seed({9002, t}));
        agree_o += a1 == a2;
        ++n_o;
        int cap = static_cast<int>(t % w.capability_count(s.category));
        bool c1 = w.annotate_capability(cap, s.responses[i], s.responses[j],
                                        derive_seed({9003, t}));
        bool c2 = w.annotate_capability(cap, s.responses[i], s.responses[j],
                                        derive_seed({9004, t}));
        agree_c += c1 == c2;
        ++n_c;
        ++t;
      }
  }
  double rate_o = static_cast<double>(agree_o) / n_o;
  double rate_c = static_cast<double>(agree_c) / n_c;
  CHECK(rate_o == doctest::Approx(w.config().agreement_overall).epsilon(0.025));
  CHECK(rate_c > 0.80);
  CHECK(rate_c < 0.86);
  CHECK(rate_c > rate_o);
}

TEST_CASE("overall-taxonomy projection stays in range and is monotone") {
  const World& w = default_world();
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    int cat = static_cast<int>(rng.index(kNumCategories));
    const int n = w.capability_count(cat);
    std::vector<double> c(n);
    for (double& v : c) v = rng.uniform();
    for (int j = 0; j < 5; ++j) {
      double v = w.capability_value(cat, c, j, true);
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
    int bump = static_cast<int>(rng.index(n));
    std::vector<double> c2 = c;
    c2[bump] = std::min(1.0, c2[bump] + 0.1);
    for (int j = 0; j < 5; ++j)
      CHECK(w.capability_value(cat, c2, j, true) >=
            w.capability_value(cat, c, j, true));
  }
  std::vector<double> c(w.capability_count(0), 0.5);
  CHECK_THROWS_AS(w.capability_value(0, c, 99, false), ConfigError);
}

TEST_CASE("dataset files round-trip; gold side is separate and optional") {
  const World& w = default_world();
  PreferenceDataset ds = w.sample_dataset({6, 6, 6, 6, 6}, 3, 1100, 0.3);
  auto dir = std::filesystem::temp_directory_path() / "dmoerm_world_io";
  save_dataset(ds, dir);
  save_dataset(ds, dir);  // idempotent, byte-identical
  std::string bytes1 = file_bytes(dir / "dataset.jsonl");
  auto dir2 = std::filesystem::temp_directory_path() / "dmoerm_world_io2";
  save_dataset(ds, dir2);
  CHECK(file_bytes(dir2 / "dataset.jsonl") == bytes1);
  CHECK(file_bytes(dir2 / "gold.jsonl") == file_bytes(dir / "gold.jsonl"));

  PreferenceDataset vis = load_visible_dataset(dir);
  REQUIRE(vis.samples.size() == ds.samples.size());
  CHECK(vis.k_resp == 3);
  for (std::size_t i = 0; i < vis.samples.size(); ++i) {
    const auto& a = ds.samples[i];
    const auto& b = vis.samples[i];
    CHECK(a.id == b.id);
    CHECK(a.category == b.category);
    CHECK(a.split == b.split);
    CHECK(a.label_order == b.label_order);
    CHECK(a.prompt_x == b.prompt_x);
    REQUIRE(a.responses.size() == b.responses.size());
    for (std::size_t r = 0; r < a.responses.size(); ++r) {
      CHECK(a.responses[r].x == b.responses[r].x);
      CHECK(b.responses[r].latents.empty());
    }
    CHECK(b.gold_order.empty());
  }
  // Training-side records cannot reach gold.
  CHECK_THROWS_AS(w.gold_reward(vis.samples[0].responses[0]), StateError);

  load_gold_side(dir, vis);
  for (std::size_t i = 0; i < vis.samples.size(); ++i) {
    CHECK(vis.samples[i].gold_order == ds.samples[i].gold_order);
    CHECK(w.gold_reward(vis.samples[i].responses[0]) ==
          w.gold_reward(ds.samples[i].responses[0]));
  }
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("disturbance combos cover singles, pairs and the triple") {
  auto combos = World::disturbance_combos();
  REQUIRE(combos.size() == 7);
  CHECK(combos[0].name == "roleplay");
  CHECK(combos[3].name == "roleplay+chitchat");
  CHECK(combos[6].name == "roleplay+chitchat+text_creation");
  CHECK(combos[6].categories.size() == 3);
  for (const auto& c : combos) {
    for (int cat : c.categories) {
      CHECK(cat >= 0);
      CHECK(cat < kNumCategories);
    }
  }
}

TEST_CASE("world config validation names fields") {
  WorldConfig cfg;
  cfg.feature_dim = 0;
  cfg.agreement_overall = 0.4;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("feature_dim") != std::string::npos);
    CHECK(msg.find("agreement_overall") != std::string::npos);
  }
}
