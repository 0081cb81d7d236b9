// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/pipeline.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <utility>

#include "dmoerm/checkpoint.hpp"
#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/taxonomy.hpp"

namespace dmoerm {
namespace {

using nlohmann::json;

constexpr std::uint64_t kTagBase = 0x62617365;    // backbone init + phase 1
constexpr std::uint64_t kTagExpert = 0x65787074;  // phase 2
constexpr std::uint64_t kTagAgg = 0x61676772;     // phase 3
constexpr std::uint64_t kTagRouter = 0x726f7574;

void check_positive(double v, const char* field, std::string& msg) {
  if (!(v > 0.0)) msg += std::string(msg.empty() ? "" : "; ") + field;
}

json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

void write_descriptor(const std::filesystem::path& dir, const std::string& type,
                      const json& extra = json::object()) {
  json j = extra;
  j["type"] = type;
  write_json_file(j, dir / "model.json");
}

json read_descriptor(const std::filesystem::path& dir) {
  const std::filesystem::path file = dir / "model.json";
  if (!std::filesystem::exists(file))
    throw IoError("no model descriptor at " + file.string());
  json j = read_json_file(file);
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    throw ParseError(file.string() + ": missing \"type\"");
  return j;
}

}  // namespace

void PhaseConfig::validate() const {
  std::string bad;
  if (lr1 < 0.0) bad += "lr1";
  if (lr2 < 0.0) bad += std::string(bad.empty() ? "" : "; ") + "lr2";
  if (lr3 < 0.0) bad += std::string(bad.empty() ? "" : "; ") + "lr3";
  check_positive(lr_scale, "lr_scale", bad);
  check_positive(batch, "batch", bad);
  check_positive(max_steps, "max_steps", bad);
  check_positive(eval_every, "eval_every", bad);
  check_positive(patience, "patience", bad);
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    bad += std::string(bad.empty() ? "" : "; ") + "val_fraction";
  if (!bad.empty()) throw ConfigError("PhaseConfig: bad field(s): " + bad);
  router.validate();
}

TrainConfig phase_train_config(const PhaseConfig& pc, int phase,
                               std::uint64_t seed) {
  pc.validate();
  double lr = 0.0;
  switch (phase) {
    case 1: lr = pc.lr1; break;
    case 2: lr = pc.lr2; break;
    case 3: lr = pc.lr3; break;
    default:
      throw ConfigError("phase_train_config: phase must be 1, 2, or 3");
  }
  TrainConfig cfg;
  cfg.lr = lr * pc.lr_scale;
  cfg.batch = pc.batch;
  cfg.max_steps = pc.max_steps;
  cfg.eval_every = pc.eval_every;
  cfg.patience = pc.patience;
  cfg.val_fraction = pc.val_fraction;
  cfg.seed = seed;
  return cfg;
}

DmoermModel train_dmoerm(const PreferenceDataset& ds,
                         std::span<const CapabilityDataset> caps,
                         const ModelConfig& mc, const PhaseConfig& pc,
                         std::uint64_t seed, DmoermStats* stats) {
  mc.validate();
  pc.validate();
  if (caps.size() != static_cast<std::size_t>(kNumCategories))
    throw ConfigError("train_dmoerm: need one capability dataset per category");
  for (int c = 0; c < kNumCategories; ++c) {
    if (caps[c].category != c || caps[c].overall_taxonomy)
      throw ConfigError(std::string("train_dmoerm: capability dataset ") +
                        std::to_string(c) + " is not the " + category_name(c) +
                        " category taxonomy");
  }

  DmoermModel m;
  m.inner.reserve(kNumCategories);
  if (stats) stats->per_category.clear();
  for (int c = 0; c < kNumCategories; ++c) {
    RewardNet net = make_base_net(mc, derive_seed({seed, kTagBase, (std::uint64_t)c}));
    CategoryStats cs;
    cs.phase1 = train_base(
        net, ds, {Split::kPhase1}, c,
        phase_train_config(pc, 1, derive_seed({seed, kTagBase, (std::uint64_t)c, 1})));
    cs.phase2 = train_experts(
        net, mc, ds, caps[c], {Split::kPhase1},
        phase_train_config(pc, 2, derive_seed({seed, kTagExpert, (std::uint64_t)c})));
    cs.phase3 = train_aggregator(
        net, ds, {Split::kPhase3}, c,
        phase_train_config(pc, 3, derive_seed({seed, kTagAgg, (std::uint64_t)c})));
    if (stats) stats->per_category.push_back(std::move(cs));
    m.inner.push_back(std::move(net));
  }

  RouterConfig rc = pc.router;
  rc.seed = derive_seed({seed, kTagRouter});
  const std::vector<PromptExample> ex =
      router_examples(ds, {Split::kPhase1, Split::kPhase3});
  m.router = train_router(ex, rc);
  if (stats) stats->router_accuracy = router_accuracy(m.router, ex);
  return m;
}

RewardNet train_dmoerm_wo_outer(const PreferenceDataset& ds,
                                const CapabilityDataset& overall_caps,
                                const ModelConfig& mc, const PhaseConfig& pc,
                                std::uint64_t seed, CategoryStats* stats) {
  mc.validate();
  pc.validate();
  if (!overall_caps.overall_taxonomy)
    throw ConfigError(
        "train_dmoerm_wo_outer: capability labels must use the overall "
        "taxonomy");
  RewardNet net = make_base_net(mc, derive_seed({seed, kTagBase}));
  TrainStats p1 = train_base(net, ds, {Split::kPhase1}, std::nullopt,
                             phase_train_config(pc, 1, derive_seed({seed, kTagBase, 1})));
  std::vector<TrainStats> p2 =
      train_experts(net, mc, ds, overall_caps, {Split::kPhase1},
                    phase_train_config(pc, 2, derive_seed({seed, kTagExpert})));
  TrainStats p3 = train_aggregator(net, ds, {Split::kPhase3}, std::nullopt,
                                   phase_train_config(pc, 3, derive_seed({seed, kTagAgg})));
  if (stats) {
    stats->phase1 = std::move(p1);
    stats->phase2 = std::move(p2);
    stats->phase3 = std::move(p3);
  }
  return net;
}

Proxy proxy_from_dmoerm_model(std::shared_ptr<const DmoermModel> m) {
  if (!m) throw ConfigError("proxy_from_dmoerm_model: null model");
  if (m->inner.size() != static_cast<std::size_t>(kNumCategories))
    throw ConfigError("proxy_from_dmoerm_model: expected one inner model per "
                      "category");
  return Proxy{"dmoerm",
               [m](std::span<const double> prompt_x, const ResponseRecord& r) {
                 std::vector<const RewardNet*> nets;
                 nets.reserve(m->inner.size());
                 for (const RewardNet& n : m->inner) nets.push_back(&n);
                 return dmoerm_reward(m->router, nets, prompt_x, r.x);
               }};
}

Proxy proxy_from_owned_net(std::string name,
                           std::shared_ptr<const RewardNet> n) {
  if (!n) throw ConfigError("proxy_from_owned_net: null net");
  return Proxy{std::move(name),
               [n](std::span<const double>, const ResponseRecord& r) {
                 return reward(*n, r.x);
               }};
}

Proxy proxy_from_owned_ensemble(std::string name,
                                std::shared_ptr<const EnsembleRM> e) {
  if (!e) throw ConfigError("proxy_from_owned_ensemble: null ensemble");
  e->validate();
  return Proxy{std::move(name),
               [e](std::span<const double>, const ResponseRecord& r) {
                 return e->score(r.x);
               }};
}

void save_dmoerm(const DmoermModel& m, const std::filesystem::path& dir) {
  if (m.inner.size() != static_cast<std::size_t>(kNumCategories))
    throw ConfigError("save_dmoerm: expected one inner model per category");
  std::filesystem::create_directories(dir);
  save_router(m.router, dir / "router.ckpt");
  for (int c = 0; c < kNumCategories; ++c)
    to_checkpoint(m.inner[c])
        .save(dir / (std::string("inner_") + category_name(c) + ".ckpt"));
  write_descriptor(dir, "dmoerm");
}

DmoermModel load_dmoerm(const std::filesystem::path& dir) {
  DmoermModel m;
  m.router = load_router(dir / "router.ckpt");
  m.inner.reserve(kNumCategories);
  for (int c = 0; c < kNumCategories; ++c)
    m.inner.push_back(reward_net_from_checkpoint(Checkpoint::load(
        dir / (std::string("inner_") + category_name(c) + ".ckpt"))));
  return m;
}

void save_single(const RewardNet& net, const std::filesystem::path& dir,
                 const std::string& type) {
  std::filesystem::create_directories(dir);
  to_checkpoint(net).save(dir / "model.ckpt");
  write_descriptor(dir, type);
}

RewardNet load_single(const std::filesystem::path& dir) {
  return reward_net_from_checkpoint(Checkpoint::load(dir / "model.ckpt"));
}

void save_ensemble(const EnsembleRM& e, const std::filesystem::path& dir) {
  e.validate();
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < e.members.size(); ++i)
    to_checkpoint(e.members[i])
        .save(dir / ("member_" + std::to_string(i) + ".ckpt"));
  json j;
  j["members"] = e.members.size();
  j["kind"] = ensemble_kind_name(e.kind);
  j["lambda"] = e.lambda;
  j["mean_minus_std"] = e.mean_minus_std;
  write_descriptor(dir, "ensemble", j);
}

EnsembleRM load_ensemble(const std::filesystem::path& dir) {
  const json j = read_descriptor(dir);
  EnsembleRM e;
  try {
    const std::size_t n = j.at("members").get<std::size_t>();
    e.kind = ensemble_kind_from_name(j.at("kind").get<std::string>());
    e.lambda = j.at("lambda").get<double>();
    e.mean_minus_std = j.at("mean_minus_std").get<bool>();
    e.members.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      e.members.push_back(reward_net_from_checkpoint(Checkpoint::load(
          dir / ("member_" + std::to_string(i) + ".ckpt"))));
  } catch (const json::exception& ex) {
    throw ParseError((dir / "model.json").string() + ": " + ex.what());
  }
  e.validate();
  return e;
}

std::string model_type(const std::filesystem::path& dir) {
  return read_descriptor(dir)["type"].get<std::string>();
}

Proxy load_model_proxy(const std::filesystem::path& dir) {
  const std::string type = model_type(dir);
  if (type == "dmoerm") {
    auto m = std::make_shared<DmoermModel>(load_dmoerm(dir));
    return proxy_from_dmoerm_model(std::move(m));
  }
  if (type == "single" || type == "dmoerm-wo-outer") {
    auto n = std::make_shared<RewardNet>(load_single(dir));
    return proxy_from_owned_net(type, std::move(n));
  }
  if (type == "ensemble") {
    auto e = std::make_shared<EnsembleRM>(load_ensemble(dir));
    std::string name =
        std::string("ensemble-") + ensemble_kind_name(e->kind);
    return proxy_from_owned_ensemble(std::move(name), std::move(e));
  }
  throw ParseError((dir / "model.json").string() + ": unknown type \"" + type +
                   "\"");
}

}  // namespace dmoerm
