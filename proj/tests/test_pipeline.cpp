// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "dmoerm/errors.hpp"
#include "dmoerm/labeler.hpp"
#include "dmoerm/pipeline.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/world.hpp"

using namespace dmoerm;
namespace fs = std::filesystem;

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

std::uint64_t net_checksum(const RewardNet& net) {
  std::vector<const Mat*> ms;
  for (const AffineLayer& l : net.backbone.layers) {
    ms.push_back(&l.W);
    ms.push_back(&l.b);
  }
  ms.push_back(&net.base_head.w);
  ms.push_back(&net.base_head.b);
  for (const LoraAdapter& a : net.adapters)
    for (const LoraAdapter::LayerAB& l : a.layers) {
      ms.push_back(&l.A);
      ms.push_back(&l.B);
    }
  for (const ValueHead& h : net.heads) {
    ms.push_back(&h.w);
    ms.push_back(&h.b);
  }
  if (net.has_experts()) {
    ms.push_back(&net.agg.W0);
    ms.push_back(&net.agg.b0);
    ms.push_back(&net.agg.slope);
    ms.push_back(&net.agg.W1);
    ms.push_back(&net.agg.b1);
  }
  return bytes_checksum(ms);
}

PreferenceDataset tiny_data() {
  static PreferenceDataset ds = visible_only(
      fast_world().sample_dataset({24, 24, 24, 24, 24}, 3, 71));
  return ds;
}

std::vector<CapabilityDataset> tiny_caps() {
  static std::vector<CapabilityDataset> caps = [] {
    OracleBackend oracle(fast_world(), 0.0, 0.0);
    PreferenceDataset full = fast_world().sample_dataset(
        {24, 24, 24, 24, 24}, 3, 71);
    std::vector<CapabilityDataset> out;
    for (int c = 0; c < kNumCategories; ++c)
      out.push_back(label_capability_dataset(
          oracle, full, c, fast_world().taxonomy(), false, 7));
    return out;
  }();
  return caps;
}

PhaseConfig tiny_phases() {
  PhaseConfig pc;
  pc.lr1 = 3e-6;  // x scale -> 3e-3, the rate the small nets learn at
  pc.lr2 = 5e-6;
  pc.lr3 = 2e-6;
  pc.max_steps = 80;
  pc.eval_every = 40;
  pc.patience = 2;
  return pc;
}

const DmoermModel& tiny_model(DmoermStats* stats_out = nullptr) {
  static DmoermStats stats;
  static DmoermModel m =
      train_dmoerm(tiny_data(), tiny_caps(), ModelConfig{}, tiny_phases(), 5,
                   &stats);
  if (stats_out) *stats_out = stats;
  return m;
}

fs::path fresh_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("phase schedule keeps the 1:500:10 rate ratio") {
  PhaseConfig pc;
  CHECK(pc.lr1 == 1e-7);
  CHECK(pc.lr2 == 5e-5);
  CHECK(pc.lr3 == 1e-6);
  CHECK(pc.lr_scale == 1e3);
  CHECK(pc.batch == 1);
  CHECK(pc.max_steps == 3000);
  CHECK(pc.eval_every == 100);
  CHECK(pc.patience == 20);

  TrainConfig c1 = phase_train_config(pc, 1, 9);
  TrainConfig c2 = phase_train_config(pc, 2, 9);
  TrainConfig c3 = phase_train_config(pc, 3, 9);
  CHECK(c1.lr == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(c2.lr / c1.lr == doctest::Approx(500.0).epsilon(1e-9));
  CHECK(c3.lr / c1.lr == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(c1.seed == 9);
  CHECK(c1.batch == pc.batch);
  CHECK(c1.max_steps == pc.max_steps);

  CHECK_THROWS_AS(phase_train_config(pc, 0, 1), ConfigError);
  CHECK_THROWS_AS(phase_train_config(pc, 4, 1), ConfigError);
}

TEST_CASE("phase config validation names the offending fields") {
  PhaseConfig pc;
  pc.lr_scale = 0.0;
  try {
    pc.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lr_scale") != std::string::npos);
  }
  pc = PhaseConfig{};
  pc.val_fraction = 1.0;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc = PhaseConfig{};
  pc.lr2 = -1.0;
  try {
    pc.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lr2") != std::string::npos);
  }
}

TEST_CASE("full pipeline trains one inner model per category") {
  DmoermStats stats;
  const DmoermModel& m = tiny_model(&stats);
  REQUIRE(m.inner.size() == static_cast<std::size_t>(kNumCategories));
  for (int c = 0; c < kNumCategories; ++c) {
    CHECK(m.inner[c].has_experts());
    CHECK(m.inner[c].num_experts() == fast_world().capability_count(c));
  }
  CHECK(m.router.frozen);
  REQUIRE(stats.per_category.size() == static_cast<std::size_t>(kNumCategories));
  for (int c = 0; c < kNumCategories; ++c) {
    CHECK(stats.per_category[c].phase1.steps > 0);
    CHECK(stats.per_category[c].phase2.size() ==
          static_cast<std::size_t>(fast_world().capability_count(c)));
    CHECK(stats.per_category[c].phase3.steps > 0);
  }
  CHECK(stats.router_accuracy > 0.9);
}

TEST_CASE("pipeline rejects mismatched capability datasets") {
  std::vector<CapabilityDataset> caps = tiny_caps();
  std::swap(caps[0], caps[1]);
  CHECK_THROWS_AS(train_dmoerm(tiny_data(), caps, ModelConfig{}, tiny_phases(), 1),
                  ConfigError);

  caps = tiny_caps();
  caps[2].overall_taxonomy = true;
  CHECK_THROWS_AS(train_dmoerm(tiny_data(), caps, ModelConfig{}, tiny_phases(), 1),
                  ConfigError);

  caps = tiny_caps();
  caps.pop_back();
  CHECK_THROWS_AS(train_dmoerm(tiny_data(), caps, ModelConfig{}, tiny_phases(), 1),
                  ConfigError);
}

TEST_CASE("the ablation trains one model under the overall taxonomy") {
  OracleBackend oracle(fast_world(), 0.0, 0.0);
  PreferenceDataset full =
      fast_world().sample_dataset({12, 12, 12, 12, 12}, 3, 77);
  CapabilityDataset overall = label_capability_dataset(
      oracle, full, -1, fast_world().taxonomy(), true, 7);

  PhaseConfig pc = tiny_phases();
  pc.max_steps = 40;
  const RewardNet net = train_dmoerm_wo_outer(visible_only(full), overall,
                                              ModelConfig{}, pc, 3);
  CHECK(net.num_experts() ==
        static_cast<int>(fast_world().taxonomy().overall.size()));

  // Category-taxonomy labels are rejected by the ablation.
  CHECK_THROWS_AS(train_dmoerm_wo_outer(visible_only(full), tiny_caps()[0],
                                        ModelConfig{}, pc, 3),
                  ConfigError);
}

TEST_CASE("identical seeds reproduce the pipeline bit for bit") {
  PhaseConfig pc = tiny_phases();
  pc.max_steps = 40;
  PreferenceDataset ds = tiny_data();
  std::vector<CapabilityDataset> caps = tiny_caps();

  DmoermModel a = train_dmoerm(ds, caps, ModelConfig{}, pc, 21);
  DmoermModel b = train_dmoerm(ds, caps, ModelConfig{}, pc, 21);
  DmoermModel c = train_dmoerm(ds, caps, ModelConfig{}, pc, 22);
  for (int i = 0; i < kNumCategories; ++i)
    CHECK(net_checksum(a.inner[i]) == net_checksum(b.inner[i]));
  CHECK(bytes_checksum(std::vector<const Mat*>{&a.router.W, &a.router.b}) ==
        bytes_checksum(std::vector<const Mat*>{&b.router.W, &b.router.b}));
  bool any_diff = false;
  for (int i = 0; i < kNumCategories; ++i)
    any_diff = any_diff || net_checksum(a.inner[i]) != net_checksum(c.inner[i]);
  CHECK(any_diff);
}

TEST_CASE("model directories round-trip and rebuild matching scorers") {
  const DmoermModel& m = tiny_model();
  const fs::path dir = fresh_dir("dmoerm_pipe_roundtrip");
  save_dmoerm(m, dir);
  CHECK(model_type(dir) == "dmoerm");

  const DmoermModel loaded = load_dmoerm(dir);
  CHECK(loaded.router.frozen);
  const Proxy p = load_model_proxy(dir);
  CHECK(p.name == "dmoerm");

  std::vector<const RewardNet*> nets;
  for (const RewardNet& n : m.inner) nets.push_back(&n);
  Rng rng(99);
  const PreferenceDataset ds = tiny_data();
  for (int t = 0; t < 20; ++t) {
    const PreferenceSample& s = ds.samples[rng.index(ds.samples.size())];
    const ResponseRecord& r = s.responses[rng.index(s.responses.size())];
    CHECK(p.score(s.prompt_x, r) ==
          dmoerm_reward(m.router, nets, s.prompt_x, r.x));
  }
  fs::remove_all(dir);
}

TEST_CASE("single and ensemble directories carry their descriptors") {
  ModelConfig mc;
  const fs::path sdir = fresh_dir("dmoerm_pipe_single");
  RewardNet net = make_base_net(mc, 3);
  save_single(net, sdir, "single");
  CHECK(model_type(sdir) == "single");
  Proxy sp = load_model_proxy(sdir);
  CHECK(sp.name == "single");
  ResponseRecord r;
  r.x.assign(mc.input_dim, 0.25);
  CHECK(sp.score({}, r) == reward(net, r.x));

  save_single(net, sdir, "dmoerm-wo-outer");
  CHECK(load_model_proxy(sdir).name == "dmoerm-wo-outer");

  EnsembleRM e;
  e.members.push_back(make_base_net(mc, 4));
  e.members.push_back(make_base_net(mc, 5));
  e.kind = EnsembleKind::kUwo;
  e.lambda = 0.7;
  e.mean_minus_std = true;
  const fs::path edir = fresh_dir("dmoerm_pipe_ens");
  save_ensemble(e, edir);
  const EnsembleRM le = load_ensemble(edir);
  CHECK(le.members.size() == 2);
  CHECK(le.kind == EnsembleKind::kUwo);
  CHECK(le.lambda == 0.7);
  CHECK(le.mean_minus_std);
  CHECK(le.score(r.x) == e.score(r.x));
  CHECK(load_model_proxy(edir).name == "ensemble-uwo");

  fs::remove_all(sdir);
  fs::remove_all(edir);
}

TEST_CASE("descriptor problems raise precise errors") {
  const fs::path dir = fresh_dir("dmoerm_pipe_baddesc");
  CHECK_THROWS_AS(load_model_proxy(dir), IoError);  // nothing there

  fs::create_directories(dir);
  std::ofstream(dir / "model.json") << "not json";
  CHECK_THROWS_AS(load_model_proxy(dir), ParseError);

  std::ofstream(dir / "model.json", std::ios::trunc)
      << "{\"type\": \"frobnicator\"}";
  CHECK_THROWS_AS(load_model_proxy(dir), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("owned scorers validate their inputs") {
  CHECK_THROWS_AS(proxy_from_owned_net("x", nullptr), ConfigError);
  CHECK_THROWS_AS(proxy_from_owned_ensemble("x", nullptr), ConfigError);
  CHECK_THROWS_AS(proxy_from_dmoerm_model(nullptr), ConfigError);
  auto short_model = std::make_shared<DmoermModel>();
  CHECK_THROWS_AS(proxy_from_dmoerm_model(short_model), ConfigError);
}
