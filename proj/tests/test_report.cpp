// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dmoerm/errors.hpp"
#include "dmoerm/report.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/taxonomy.hpp"

using namespace dmoerm;

namespace {

const World& fast_world() {
  static World w = [] {
    WorldConfig wc;
    wc.tau_overall = 0.10;
    wc.tau_capability = 0.08;
    return World::build(11, wc);
  }();
  return w;
}

Proxy const_proxy(double v) {
  return Proxy{"const", [v](std::span<const double>, const ResponseRecord&) {
                 return v;
               }};
}

// Deterministic pseudo-random scorer keyed on the response bytes.
Proxy hash_proxy() {
  return Proxy{"hash", [](std::span<const double>, const ResponseRecord& r) {
                 std::uint64_t h = 1469598103934665603ULL;
                 for (double v : r.x) {
                   unsigned char b[sizeof(double)];
                   std::memcpy(b, &v, sizeof(double));
                   for (unsigned char c : b) {
                     h ^= c;
                     h *= 1099511628211ULL;
                   }
                 }
                 return static_cast<double>(h >> 11) * 0x1.0p-53;
               }};
}

std::filesystem::path fresh_dir(const std::string& stem) {
  auto p = std::filesystem::temp_directory_path() /
           (stem + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

OptimizationTrace toy_trace(const std::vector<double>& xs,
                            const std::vector<double>& golds) {
  OptimizationTrace t;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    t.push_back({"toy", 1, xs[i], golds[i] + 0.1, golds[i]});
  }
  return t;
}

}  // namespace

TEST_CASE("constant scorer earns exactly half credit everywhere") {
  PreferenceDataset ds =
      fast_world().sample_dataset({20, 20, 20, 20, 20}, 3, 5);
  ConsistencyReport rep = consistency_accuracy(const_proxy(0.4), ds);
  CHECK(rep.overall == 0.5);
  for (int c = 0; c < kNumCategories; ++c) {
    CHECK(rep.per_category[c] == 0.5);
    CHECK(rep.pairs_per_category[c] > 0);
  }
  // k=3 responses -> 3 pairs per test sample.
  CHECK(rep.pairs_total == 3 * ds.count(Split::kTest));
}

TEST_CASE("a random scorer sits at chance") {
  PreferenceDataset ds =
      fast_world().sample_dataset({280, 280, 280, 280, 280}, 4, 6);
  ConsistencyReport rep = consistency_accuracy(hash_proxy(), ds);
  CHECK(rep.pairs_total >= 2000);
  CHECK(rep.overall == doctest::Approx(0.5).epsilon(0.06));
  CHECK(std::abs(rep.overall - 0.5) < 0.03);
}

TEST_CASE("the gold oracle scores at the label-noise ceiling") {
  const World& w = fast_world();
  PreferenceDataset ds = w.sample_dataset({120, 120, 120, 120, 120}, 4, 7);
  ConsistencyReport rep = consistency_accuracy(proxy_from_gold(w), ds);

  // Independent tally: agreement of the annotator labels with gold order.
  double credit = 0.0;
  long pairs = 0;
  for (const PreferenceSample& s : ds.samples) {
    if (s.split != Split::kTest) continue;
    for (std::size_t i = 0; i < s.label_order.size(); ++i) {
      for (std::size_t j = i + 1; j < s.label_order.size(); ++j) {
        const double gw = w.gold_reward(
            s.responses[static_cast<std::size_t>(s.label_order[i])]);
        const double gl = w.gold_reward(
            s.responses[static_cast<std::size_t>(s.label_order[j])]);
        credit += gw > gl ? 1.0 : (gw == gl ? 0.5 : 0.0);
        ++pairs;
      }
    }
  }
  CHECK(rep.pairs_total == pairs);
  CHECK(rep.overall == credit / static_cast<double>(pairs));
  // Labels are noisy, so even the gold scorer cannot reach 1.0.
  CHECK(rep.overall < 0.98);
  CHECK(rep.overall > 0.6);
}

TEST_CASE("accuracy is invariant under strictly increasing transforms") {
  PreferenceDataset ds =
      fast_world().sample_dataset({30, 30, 30, 30, 30}, 3, 8);
  Proxy base = hash_proxy();
  Proxy affine{"affine",
               [&base](std::span<const double> p, const ResponseRecord& r) {
                 return 3.0 * base.score(p, r) + 11.0;
               }};
  Proxy expo{"expo",
             [&base](std::span<const double> p, const ResponseRecord& r) {
               return std::exp(base.score(p, r));
             }};
  ConsistencyReport a = consistency_accuracy(base, ds);
  ConsistencyReport b = consistency_accuracy(affine, ds);
  ConsistencyReport c = consistency_accuracy(expo, ds);
  CHECK(a.overall == b.overall);
  CHECK(a.overall == c.overall);
  for (int k = 0; k < kNumCategories; ++k) {
    CHECK(a.per_category[k] == b.per_category[k]);
    CHECK(a.per_category[k] == c.per_category[k]);
  }
}

TEST_CASE("degenerate evaluation inputs raise") {
  const World& w = fast_world();
  PreferenceDataset no_test = w.sample_dataset({10, 0, 0, 0, 0}, 3, 9, 0.0);
  CHECK_THROWS_AS(consistency_accuracy(const_proxy(0.0), no_test),
                  ConfigError);

  PreferenceDataset unlabeled;
  unlabeled.k_resp = 2;
  PreferenceSample s;
  s.id = 0;
  s.split = Split::kTest;
  s.prompt_x = {0.0};
  s.responses.resize(2);
  unlabeled.samples.push_back(s);
  CHECK_THROWS_AS(consistency_accuracy(const_proxy(0.0), unlabeled),
                  StateError);
}

TEST_CASE("disturbance matrix shape, labels, and reproducibility") {
  const World& w = fast_world();
  TrainConfig tc;
  tc.lr = 5e-3;
  tc.max_steps = 60;
  tc.eval_every = 20;
  tc.patience = 3;
  Trainer trainer = single_rm_trainer(ModelConfig{}, tc);

  DisturbanceMatrix m = disturbance_matrix(w, trainer, 30, 3, 21);
  REQUIRE(m.combos.size() == 7);
  REQUIRE(m.test_categories.size() == 3);
  CHECK(m.acc.rows == 7);
  CHECK(m.acc.cols == 3);
  CHECK(m.combos[0].categories.size() == 1);
  CHECK(m.combos[6].categories.size() == 3);
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 3; ++c) {
      CHECK(m.acc.at(r, c) >= 0.0);
      CHECK(m.acc.at(r, c) <= 1.0);
    }
  }

  DisturbanceMatrix again = disturbance_matrix(w, trainer, 30, 3, 21);
  CHECK(bytes_checksum(m.acc) == bytes_checksum(again.acc));
  DisturbanceMatrix other = disturbance_matrix(w, trainer, 30, 3, 22);
  CHECK(bytes_checksum(m.acc) != bytes_checksum(other.acc));

  CHECK_THROWS_AS(disturbance_matrix(w, trainer, 2, 3, 21), ConfigError);
}

TEST_CASE("overoptimization metrics from hand-built traces") {
  OptimizationTrace t = toy_trace({0.0, 1.0, 2.0}, {0.5, 0.7, 0.6});
  OveroptMetrics m = overopt_metrics(t);
  CHECK(m.peak_gold == 0.7);
  CHECK(m.peak_kl == 1.0);
  CHECK(m.final_gold == 0.6);
  CHECK(m.regression == doctest::Approx(0.1).epsilon(1e-12));

  OveroptMetrics mono =
      overopt_metrics(toy_trace({0.0, 1.0, 2.0}, {0.1, 0.2, 0.3}));
  CHECK(mono.regression == 0.0);
  CHECK(mono.peak_kl == 2.0);

  // Ties keep the first peak position.
  OveroptMetrics tie =
      overopt_metrics(toy_trace({0.0, 1.0, 2.0}, {0.4, 0.7, 0.7}));
  CHECK(tie.peak_kl == 1.0);
  CHECK(tie.regression == 0.0);

  CHECK_THROWS_AS(overopt_metrics(OptimizationTrace{}), ConfigError);

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    OptimizationTrace fuzz;
    const int len = 1 + static_cast<int>(rng.index(10));
    for (int j = 0; j < len; ++j) {
      fuzz.push_back({"f", 1, static_cast<double>(j), 0.0, rng.uniform()});
    }
    CHECK(overopt_metrics(fuzz).regression >= 0.0);
  }
}

TEST_CASE("report emission round-trips and stays byte-stable") {
  auto dir = fresh_dir("report-emit");
  std::vector<ReportTable> tables;
  tables.push_back(
      {"consistency",
       {{"dmoerm", "roleplay", "consistency", 0.712500, 5, 0.013250},
        {"single", "overall", "consistency", 0.581250, 5, 0.021000}}});
  tables.push_back({"empty", {}});

  OptimizationTrace tr;
  tr.push_back({"single", 3, 0.0, 0.25, 0.5});
  tr.push_back({"single", 3, 10.002117, 0.5, 0.625});
  std::vector<NamedTrace> traces = {{"bon_single", tr}};

  emit_report(tables, traces, dir);

  auto rows = load_report_table(dir / "consistency.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "dmoerm");
  CHECK(rows[0].category == "roleplay");
  CHECK(rows[0].metric == "consistency");
  CHECK(rows[0].value == 0.712500);
  CHECK(rows[0].seeds == 5);
  CHECK(rows[0].dispersion == 0.013250);
  CHECK(rows[1].value == 0.581250);

  CHECK(file_bytes(dir / "empty.csv") == "method,category,metric,value,seeds,std\n");

  const std::string gold = file_bytes(dir / "bon_single_gold.dat");
  CHECK(gold.rfind("# xscale=sqrt\n", 0) == 0);
  CHECK(gold.find("0.000000 0.500000\n") != std::string::npos);
  CHECK(gold.find("10.002117 0.625000\n") != std::string::npos);
  const std::string proxy = file_bytes(dir / "bon_single_proxy.dat");
  CHECK(proxy.find("10.002117 0.500000\n") != std::string::npos);
  OptimizationTrace back = load_trace(dir / "bon_single.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].gold_mean == 0.625);

  // Re-emission is byte-identical.
  const std::string before = file_bytes(dir / "consistency.csv");
  emit_report(tables, traces, dir);
  CHECK(file_bytes(dir / "consistency.csv") == before);
  CHECK(file_bytes(dir / "bon_single_gold.dat") == gold);

  std::filesystem::remove_all(dir);
}

TEST_CASE("emission rejects bad rows and unwritable targets") {
  auto dir = fresh_dir("report-bad");
  std::vector<ReportTable> nan_table = {
      {"t", {{"m", "c", "x", std::nan(""), 1, 0.0}}}};
  CHECK_THROWS_AS(emit_report(nan_table, {}, dir), ConfigError);
  std::vector<ReportTable> zero_seeds = {{"t", {{"m", "c", "x", 0.5, 0, 0.0}}}};
  CHECK_THROWS_AS(emit_report(zero_seeds, {}, dir), ConfigError);
  std::filesystem::remove_all(dir);

  auto blocker = fresh_dir("report-file");
  {
    std::ofstream f(blocker);
    f << "x";
  }
  CHECK_THROWS_AS(emit_report({{"t", {}}}, {}, blocker / "sub"), IoError);
  std::filesystem::remove(blocker);
}

TEST_CASE("report table parser flags malformed files") {
  auto dir = fresh_dir("report-parse");
  std::filesystem::create_directories(dir);
  auto p = dir / "bad.csv";
  {
    std::ofstream out(p);
    out << "wrong,header\n";
  }
  CHECK_THROWS_AS(load_report_table(p), ParseError);
  {
    std::ofstream out(p);
    out << "method,category,metric,value,seeds,std\n";
    out << "m,c,x,abc,1,0.0\n";
  }
  CHECK_THROWS_AS(load_report_table(p), ParseError);
  CHECK_THROWS_AS(load_report_table(dir / "missing.csv"), IoError);
  std::filesystem::remove_all(dir);
}
