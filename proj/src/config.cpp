// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/config.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dmoerm/errors.hpp"
#include "dmoerm/taxonomy.hpp"

namespace dmoerm {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const char* want) {
  throw ConfigError("config: " + path + ": expected " + want);
}

double as_num(const json& v, const std::string& path) {
  if (!v.is_number()) bad(path, "a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) bad(path, "an integer");
  return v.get<int>();
}

long as_long(const json& v, const std::string& path) {
  if (!v.is_number_integer()) bad(path, "an integer");
  return v.get<long>();
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    bad(path, "a nonnegative integer");
  return v.get<std::uint64_t>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) bad(path, "a boolean");
  return v.get<bool>();
}

std::string as_str(const json& v, const std::string& path) {
  if (!v.is_string()) bad(path, "a string");
  return v.get<std::string>();
}

std::vector<int> as_int_array(const json& v, const std::string& path) {
  if (!v.is_array()) bad(path, "an array of integers");
  std::vector<int> out;
  for (const json& e : v) out.push_back(as_int(e, path + "[]"));
  return out;
}

void apply_world(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "seed") rc.world_seed = as_u64(v, p);
    else if (k == "prompt_dim") rc.world.prompt_dim = as_int(v, p);
    else if (k == "feature_dim") rc.world.feature_dim = as_int(v, p);
    else if (k == "feature_noise") rc.world.feature_noise = as_num(v, p);
    else if (k == "prompt_noise") rc.world.prompt_noise = as_num(v, p);
    else if (k == "gold_hidden") rc.world.gold_hidden = as_int(v, p);
    else if (k == "interaction_strength") rc.world.interaction_strength = as_num(v, p);
    else if (k == "agreement_overall") rc.world.agreement_overall = as_num(v, p);
    else if (k == "agreement_capability") rc.world.agreement_capability = as_num(v, p);
    else if (k == "tau_overall") rc.world.tau_overall = as_num(v, p);
    else if (k == "tau_capability") rc.world.tau_capability = as_num(v, p);
    else if (k == "calib_samples") rc.world.calib_samples = as_int(v, p);
    else if (k == "calib_k") rc.world.calib_k = as_int(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

void apply_gen(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "sizes") rc.gen.sizes = as_int_array(v, p);
    else if (k == "per_category") rc.gen.per_category = as_int(v, p);
    else if (k == "k_resp") rc.gen.k_resp = as_int(v, p);
    else if (k == "test_fraction") rc.gen.test_fraction = as_num(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

void apply_label(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "backend") rc.label.backend = as_str(v, p);
    else if (k == "position_bias") rc.label.position_bias = as_num(v, p);
    else if (k == "tau") rc.label.tau = as_num(v, p);
    else if (k == "endpoint") rc.label.remote.endpoint = as_str(v, p);
    else if (k == "model") rc.label.remote.model = as_str(v, p);
    else if (k == "auth_env") rc.label.remote.auth_env = as_str(v, p);
    else if (k == "timeout_s") rc.label.remote.timeout_s = as_num(v, p);
    else if (k == "max_retries") rc.label.remote.max_retries = as_int(v, p);
    else if (k == "rate_per_s") rc.label.remote.rate_per_s = as_num(v, p);
    else if (k == "burst") rc.label.remote.burst = as_int(v, p);
    else if (k == "max_in_flight") rc.label.remote.max_in_flight = as_int(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

void apply_model(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "input_dim") rc.model.input_dim = as_int(v, p);
    else if (k == "hidden") rc.model.hidden = as_int_array(v, p);
    else if (k == "code_dim") rc.model.code_dim = as_int(v, p);
    else if (k == "lora_rank_cap") rc.model.lora_rank_cap = as_int(v, p);
    else if (k == "lora_dropout") rc.model.lora_dropout = as_num(v, p);
    else if (k == "agg_hidden") rc.model.agg_hidden = as_int(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

void apply_phases(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "lr1") rc.phases.lr1 = as_num(v, p);
    else if (k == "lr2") rc.phases.lr2 = as_num(v, p);
    else if (k == "lr3") rc.phases.lr3 = as_num(v, p);
    else if (k == "lr_scale") rc.phases.lr_scale = as_num(v, p);
    else if (k == "batch") rc.phases.batch = as_int(v, p);
    else if (k == "max_steps") rc.phases.max_steps = as_int(v, p);
    else if (k == "eval_every") rc.phases.eval_every = as_int(v, p);
    else if (k == "patience") rc.phases.patience = as_int(v, p);
    else if (k == "val_fraction") rc.phases.val_fraction = as_num(v, p);
    else if (k == "router_lr") rc.phases.router.lr = as_num(v, p);
    else if (k == "router_steps") rc.phases.router.steps = as_int(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

void apply_train(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "lr") rc.train.lr = as_num(v, p);
    else if (k == "batch") rc.train.batch = as_int(v, p);
    else if (k == "max_steps") rc.train.max_steps = as_int(v, p);
    else if (k == "eval_every") rc.train.eval_every = as_int(v, p);
    else if (k == "patience") rc.train.patience = as_int(v, p);
    else if (k == "val_fraction") rc.train.val_fraction = as_num(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

void apply_ensemble(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "members") rc.ensemble.members = as_int(v, p);
    else if (k == "lambda") rc.ensemble.lambda = as_num(v, p);
    else if (k == "mean_minus_std") rc.ensemble.mean_minus_std = as_bool(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

void apply_bon(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "n_max") rc.bon_n_max = as_long(v, p);
    else if (k == "prompts") rc.bon_prompts = as_int(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

void apply_ppo(RunConfig& rc, const json& obj, const std::string& at) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = at + "." + k;
    if (k == "steps") rc.ppo.steps = as_int(v, p);
    else if (k == "batch") rc.ppo.batch = as_int(v, p);
    else if (k == "beta") rc.ppo.beta = as_num(v, p);
    else if (k == "clip") rc.ppo.clip = as_num(v, p);
    else if (k == "lr") rc.ppo.lr = as_num(v, p);
    else if (k == "inner_epochs") rc.ppo.inner_epochs = as_int(v, p);
    else if (k == "seeds") rc.ppo.seeds = as_int(v, p);
    else throw ConfigError("config: unknown key " + p);
  }
}

json config_to_json(const RunConfig& rc) {
  json j;
  j["world"] = {{"seed", rc.world_seed},
                {"prompt_dim", rc.world.prompt_dim},
                {"feature_dim", rc.world.feature_dim},
                {"feature_noise", rc.world.feature_noise},
                {"prompt_noise", rc.world.prompt_noise},
                {"gold_hidden", rc.world.gold_hidden},
                {"interaction_strength", rc.world.interaction_strength},
                {"agreement_overall", rc.world.agreement_overall},
                {"agreement_capability", rc.world.agreement_capability},
                {"tau_overall", rc.world.tau_overall},
                {"tau_capability", rc.world.tau_capability},
                {"calib_samples", rc.world.calib_samples},
                {"calib_k", rc.world.calib_k}};
  j["gen"] = {{"sizes", rc.gen.sizes},
              {"per_category", rc.gen.per_category},
              {"k_resp", rc.gen.k_resp},
              {"test_fraction", rc.gen.test_fraction}};
  j["label"] = {{"backend", rc.label.backend},
                {"position_bias", rc.label.position_bias},
                {"tau", rc.label.tau},
                {"endpoint", rc.label.remote.endpoint},
                {"model", rc.label.remote.model},
                {"auth_env", rc.label.remote.auth_env},
                {"timeout_s", rc.label.remote.timeout_s},
                {"max_retries", rc.label.remote.max_retries},
                {"rate_per_s", rc.label.remote.rate_per_s},
                {"burst", rc.label.remote.burst},
                {"max_in_flight", rc.label.remote.max_in_flight}};
  j["model"] = {{"input_dim", rc.model.input_dim},
                {"hidden", rc.model.hidden},
                {"code_dim", rc.model.code_dim},
                {"lora_rank_cap", rc.model.lora_rank_cap},
                {"lora_dropout", rc.model.lora_dropout},
                {"agg_hidden", rc.model.agg_hidden}};
  j["phases"] = {{"lr1", rc.phases.lr1},
                 {"lr2", rc.phases.lr2},
                 {"lr3", rc.phases.lr3},
                 {"lr_scale", rc.phases.lr_scale},
                 {"batch", rc.phases.batch},
                 {"max_steps", rc.phases.max_steps},
                 {"eval_every", rc.phases.eval_every},
                 {"patience", rc.phases.patience},
                 {"val_fraction", rc.phases.val_fraction},
                 {"router_lr", rc.phases.router.lr},
                 {"router_steps", rc.phases.router.steps}};
  j["train"] = {{"lr", rc.train.lr},
                {"batch", rc.train.batch},
                {"max_steps", rc.train.max_steps},
                {"eval_every", rc.train.eval_every},
                {"patience", rc.train.patience},
                {"val_fraction", rc.train.val_fraction}};
  j["ensemble"] = {{"members", rc.ensemble.members},
                   {"lambda", rc.ensemble.lambda},
                   {"mean_minus_std", rc.ensemble.mean_minus_std}};
  j["bon"] = {{"n_max", rc.bon_n_max}, {"prompts", rc.bon_prompts}};
  j["ppo"] = {{"steps", rc.ppo.steps},
              {"batch", rc.ppo.batch},
              {"beta", rc.ppo.beta},
              {"clip", rc.ppo.clip},
              {"lr", rc.ppo.lr},
              {"inner_epochs", rc.ppo.inner_epochs},
              {"seeds", rc.ppo.seeds}};
  return j;
}

}  // namespace

std::vector<int> GenConfig::resolved_sizes() const {
  if (!sizes.empty()) return sizes;
  return std::vector<int>(kNumCategories, per_category);
}

void GenConfig::validate() const {
  if (!sizes.empty() && sizes.size() != static_cast<std::size_t>(kNumCategories))
    throw ConfigError("gen.sizes: need one entry per category");
  for (int s : sizes)
    if (s < 0) throw ConfigError("gen.sizes: entries must be >= 0");
  if (sizes.empty() && per_category < 1)
    throw ConfigError("gen.per_category: must be >= 1");
  if (k_resp < 2) throw ConfigError("gen.k_resp: must be >= 2");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("gen.test_fraction: must be in (0, 1)");
}

void LabelConfig::validate() const {
  if (backend != "oracle" && backend != "remote")
    throw ConfigError("label.backend: must be \"oracle\" or \"remote\"");
  if (!(position_bias >= 0.0 && position_bias <= 1.0))
    throw ConfigError("label.position_bias: must be in [0, 1]");
}

void EnsembleConfig::validate() const {
  if (members < 2) throw ConfigError("ensemble.members: must be >= 2");
  if (lambda < 0.0) throw ConfigError("ensemble.lambda: must be >= 0");
}

BonConfig RunConfig::bon_config() const {
  if (bon_n_max < 1) throw ConfigError("bon.n_max: must be >= 1");
  BonConfig b;
  b.grid.clear();
  for (long n = 1; n <= bon_n_max && n <= 32768; n *= 2) b.grid.push_back(n);
  if (b.grid.empty() || b.grid.back() != bon_n_max) b.grid.push_back(bon_n_max);
  b.prompts = bon_prompts;
  b.validate();
  return b;
}

void RunConfig::validate() const {
  world.validate();
  gen.validate();
  label.validate();
  model.validate();
  phases.validate();
  train.validate();
  ensemble.validate();
  bon_config();
  ppo.validate();
}

void apply_config_json(RunConfig& rc, const std::string& json_text,
                       const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: " + origin + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!v.is_object())
      throw ConfigError("config: " + origin + ": section \"" + k +
                        "\" must be an object");
    if (k == "world") apply_world(rc, v, k);
    else if (k == "gen") apply_gen(rc, v, k);
    else if (k == "label") apply_label(rc, v, k);
    else if (k == "model") apply_model(rc, v, k);
    else if (k == "phases") apply_phases(rc, v, k);
    else if (k == "train") apply_train(rc, v, k);
    else if (k == "ensemble") apply_ensemble(rc, v, k);
    else if (k == "bon") apply_bon(rc, v, k);
    else if (k == "ppo") apply_ppo(rc, v, k);
    else throw ConfigError("config: unknown section \"" + k + "\"");
  }
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("config: cannot open " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig rc;
  apply_config_json(rc, ss.str(), file.string());
  return rc;
}

std::string run_config_json(const RunConfig& rc) {
  return config_to_json(rc).dump(2) + "\n";
}

std::string current_timestamp() {
  std::time_t t = 0;
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH"))
    t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
  else
    t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void save_manifest(const RunManifest& m, const std::filesystem::path& file) {
  json j;
  j["command"] = m.command;
  j["args"] = m.args;
  j["version"] = m.version;
  j["created"] = m.created;
  j["seed"] = m.seed;
  j["jobs"] = m.jobs;
  try {
    j["config"] = json::parse(m.config_json);
  } catch (const json::exception& e) {
    throw ConfigError("manifest: config snapshot is not valid JSON: " +
                      std::string(e.what()));
  }
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

RunManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    m.version = j.at("version").get<std::string>();
    m.created = j.at("created").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.jobs = j.at("jobs").get<int>();
    m.config_json = j.at("config").dump(2) + "\n";
    m.inputs = j.at("inputs").get<std::vector<std::string>>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  return m;
}

World world_from_manifest(const std::filesystem::path& dir) {
  const RunManifest m = load_manifest(dir / "manifest.json");
  RunConfig rc;
  apply_config_json(rc, m.config_json, (dir / "manifest.json").string());
  return World::build(rc.world_seed, rc.world);
}

}  // namespace dmoerm
