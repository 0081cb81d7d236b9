// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmoerm/config.hpp"
#include "dmoerm/errors.hpp"
#include "dmoerm/labeler.hpp"
#include "dmoerm/optimize.hpp"
#include "dmoerm/pipeline.hpp"
#include "dmoerm/report.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/taxonomy.hpp"
#include "dmoerm/training.hpp"
#include "dmoerm/world.hpp"

namespace dmoerm {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kTagLabel = 0x6c626c73;   // per-taxonomy label seeds
constexpr std::uint64_t kTagSingle = 0x736e676c;  // single-model baseline

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

int parse_category(const std::string& s) {
  try {
    return static_cast<int>(category_from_name(s));
  } catch (const ConfigError&) {
  }
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos == s.size() && v >= 0 && v < kNumCategories) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("unknown category \"" + s + "\"");
}

RunConfig base_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  return load_run_config(config_path);
}

RunManifest make_manifest(std::string command,
                          const std::vector<std::string>& args,
                          std::uint64_t seed, int jobs, const RunConfig& rc,
                          std::vector<std::string> inputs,
                          std::vector<std::string> outputs) {
  RunManifest m;
  m.command = std::move(command);
  m.args = args;
  m.created = current_timestamp();
  m.seed = seed;
  m.jobs = jobs;
  m.config_json = run_config_json(rc);
  m.inputs = std::move(inputs);
  m.outputs = std::move(outputs);
  return m;
}

// ---------------------------------------------------------------- gen ----

void run_gen(const RunConfig& rc, std::uint64_t seed, const fs::path& out,
             const std::vector<std::string>& args) {
  rc.world.validate();
  rc.gen.validate();
  const World w = World::build(rc.world_seed, rc.world);
  const PreferenceDataset ds = w.sample_dataset(
      rc.gen.resolved_sizes(), rc.gen.k_resp, seed, rc.gen.test_fraction);
  fs::create_directories(out);
  save_dataset(ds, out);
  save_manifest(make_manifest("gen", args, seed, 1, rc, {},
                              {"dataset.jsonl", "gold.jsonl"}),
                out / "manifest.json");
  std::cout << "gen: " << ds.samples.size() << " samples (k=" << ds.k_resp
            << ") -> " << out.string() << "\n";
}

// -------------------------------------------------------------- label ----

void run_label(const RunConfig& rc, std::uint64_t seed, int jobs,
               const fs::path& data, const fs::path& out,
               const std::string& category_sel, const std::string& cache_path,
               const std::vector<std::string>& args) {
  rc.label.validate();
  const World w = world_from_manifest(data);
  PreferenceDataset ds = load_visible_dataset(data);
  load_gold_side(data, ds);  // judges consult the gold side; trainers never do

  std::unique_ptr<LabelerBackend> backend;
  if (rc.label.backend == "oracle") {
    if (rc.label.tau < 0.0)
      backend = std::make_unique<OracleBackend>(
          OracleBackend::calibrated(w, rc.label.position_bias));
    else
      backend = std::make_unique<OracleBackend>(w, rc.label.position_bias,
                                                rc.label.tau);
  } else {
    backend = std::make_unique<RemoteBackend>(rc.label.remote);
  }

  std::optional<VerdictCache> cache;
  if (!cache_path.empty()) cache.emplace(cache_path);

  struct Target {
    int category;  // -1 -> overall taxonomy
    std::string file;
  };
  std::vector<Target> targets;
  if (category_sel == "all") {
    for (int c = 0; c < kNumCategories; ++c)
      targets.push_back({c, std::string(category_name(c)) + ".jsonl"});
  } else if (category_sel == "overall") {
    targets.push_back({-1, "overall.jsonl"});
  } else {
    const int c = parse_category(category_sel);
    targets.push_back({c, std::string(category_name(c)) + ".jsonl"});
  }

  fs::create_directories(out);
  std::vector<std::string> outputs;
  for (const Target& t : targets) {
    const bool overall = t.category < 0;
    const std::uint64_t sub = derive_seed(
        {seed, kTagLabel, static_cast<std::uint64_t>(t.category + 1)});
    const CapabilityDataset cd = label_capability_dataset(
        *backend, ds, overall ? -1 : t.category, w.taxonomy(), overall, sub,
        cache ? &*cache : nullptr, jobs);
    save_capability_dataset(cd, out / t.file);
    outputs.push_back(t.file);
    std::cout << "label: " << t.file << " retained " << cd.coverage.retained
              << "/" << cd.coverage.total << " (discarded "
              << cd.coverage.discarded << ", unlabeled "
              << cd.coverage.unlabeled << ")\n";
  }
  std::vector<std::string> inputs = {(data / "dataset.jsonl").string(),
                                     (data / "gold.jsonl").string()};
  if (!cache_path.empty()) inputs.push_back(cache_path);
  save_manifest(
      make_manifest("label", args, seed, jobs, rc, inputs, outputs),
      out / "manifest.json");
}

// -------------------------------------------------------------- train ----

void print_stats(const std::string& what, const TrainStats& st) {
  std::cout << "  " << what << ": steps " << st.steps << ", val acc "
            << fmt(st.initial_val_acc) << " -> " << fmt(st.best_val_acc)
            << "\n";
}

void run_train(const std::string& variant, const RunConfig& rc,
               std::uint64_t seed, const fs::path& data,
               const std::string& labels, const fs::path& out,
               const std::vector<std::string>& args) {
  const PreferenceDataset ds = load_visible_dataset(data);
  std::vector<std::string> inputs = {(data / "dataset.jsonl").string()};
  std::vector<std::string> outputs = {"model.json"};

  if (variant == "dmoerm") {
    if (labels.empty())
      throw ConfigError("train dmoerm: --labels is required");
    std::vector<CapabilityDataset> caps;
    for (int c = 0; c < kNumCategories; ++c) {
      const fs::path f =
          fs::path(labels) / (std::string(category_name(c)) + ".jsonl");
      caps.push_back(load_capability_dataset(f));
      inputs.push_back(f.string());
    }
    DmoermStats st;
    const DmoermModel m =
        train_dmoerm(ds, caps, rc.model, rc.phases, seed, &st);
    save_dmoerm(m, out);
    outputs.push_back("router.ckpt");
    for (int c = 0; c < kNumCategories; ++c)
      outputs.push_back(std::string("inner_") + category_name(c) + ".ckpt");
    for (int c = 0; c < kNumCategories; ++c) {
      std::cout << "train dmoerm [" << category_name(c) << "]\n";
      print_stats("phase1", st.per_category[c].phase1);
      for (std::size_t e = 0; e < st.per_category[c].phase2.size(); ++e)
        print_stats("phase2/" + std::to_string(e),
                    st.per_category[c].phase2[e]);
      print_stats("phase3", st.per_category[c].phase3);
    }
    std::cout << "  router acc " << fmt(st.router_accuracy) << "\n";
  } else if (variant == "dmoerm-wo-outer") {
    if (labels.empty())
      throw ConfigError("train dmoerm-wo-outer: --labels is required");
    const fs::path f = fs::path(labels) / "overall.jsonl";
    const CapabilityDataset cd = load_capability_dataset(f);
    inputs.push_back(f.string());
    CategoryStats st;
    const RewardNet net =
        train_dmoerm_wo_outer(ds, cd, rc.model, rc.phases, seed, &st);
    save_single(net, out, "dmoerm-wo-outer");
    outputs.push_back("model.ckpt");
    print_stats("phase1", st.phase1);
    print_stats("phase3", st.phase3);
  } else if (variant == "single") {
    rc.train.validate();
    RewardNet net = make_base_net(rc.model, derive_seed({seed, kTagSingle}));
    TrainConfig tc = rc.train;
    tc.seed = derive_seed({seed, kTagSingle, 1});
    const TrainStats st = train_single_rm(net, ds, tc);
    save_single(net, out, "single");
    outputs.push_back("model.ckpt");
    print_stats("single", st);
  } else {
    throw ConfigError("train: unknown variant \"" + variant + "\"");
  }

  save_manifest(make_manifest("train " + variant, args, seed, 1, rc, inputs,
                              outputs),
                out / "manifest.json");
}

void run_train_ensemble(const RunConfig& rc, std::uint64_t seed,
                        const fs::path& data, const fs::path& out,
                        EnsembleKind kind,
                        const std::vector<std::string>& args) {
  rc.train.validate();
  rc.ensemble.validate();
  const PreferenceDataset ds = load_visible_dataset(data);
  EnsembleSpec spec;
  spec.members = rc.ensemble.members;
  spec.model = rc.model;
  spec.train = rc.train;
  spec.seed = seed;
  EnsembleRM e;
  e.members = train_ensemble(spec, ds);
  e.kind = kind;
  e.lambda = rc.ensemble.lambda;
  e.mean_minus_std = rc.ensemble.mean_minus_std;
  save_ensemble(e, out);
  std::cout << "train ensemble: " << e.members.size() << " members, kind "
            << ensemble_kind_name(kind) << "\n";
  std::vector<std::string> outputs = {"model.json"};
  for (int i = 0; i < spec.members; ++i)
    outputs.push_back("member_" + std::to_string(i) + ".ckpt");
  save_manifest(make_manifest("train ensemble", args, seed, 1, rc,
                              {(data / "dataset.jsonl").string()}, outputs),
                out / "manifest.json");
}

// ---------------------------------------------------------------- eval ----

void run_eval_consistency(const RunConfig& rc, const fs::path& model_dir,
                          const fs::path& data, const fs::path& out,
                          const std::vector<std::string>& args) {
  const Proxy proxy = load_model_proxy(model_dir);
  const PreferenceDataset ds = load_visible_dataset(data);
  const ConsistencyReport cr = consistency_accuracy(proxy, ds, Split::kTest);

  ReportTable t;
  t.name = "consistency";
  for (int c = 0; c < kNumCategories; ++c) {
    if (cr.pairs_per_category[c] == 0) continue;
    t.rows.push_back(
        {proxy.name, category_name(c), "consistency_accuracy",
         cr.per_category[c], 1, 0.0});
  }
  t.rows.push_back(
      {proxy.name, "overall", "consistency_accuracy", cr.overall, 1, 0.0});
  emit_report({t}, {}, out);
  save_manifest(make_manifest("eval consistency", args, 0, 1, rc,
                              {model_dir.string(),
                               (data / "dataset.jsonl").string()},
                              {"consistency.csv"}),
                out / "manifest.json");
  std::cout << "eval consistency: overall " << fmt(cr.overall) << " over "
            << cr.pairs_total << " pairs\n";
}

void run_eval_disturbance(const RunConfig& rc, std::uint64_t seed,
                          const fs::path& data, const fs::path& out,
                          int per_category,
                          const std::vector<std::string>& args) {
  rc.train.validate();
  const World w = world_from_manifest(data);
  const Trainer trainer = single_rm_trainer(rc.model, rc.train);
  const DisturbanceMatrix dm =
      disturbance_matrix(w, trainer, per_category, rc.gen.k_resp, seed);

  ReportTable t;
  t.name = "disturbance";
  for (std::size_t i = 0; i < dm.combos.size(); ++i)
    for (std::size_t j = 0; j < dm.test_categories.size(); ++j)
      t.rows.push_back({dm.combos[i].name,
                        category_name(dm.test_categories[j]),
                        "consistency_accuracy", dm.acc.at(i, j), 1, 0.0});
  emit_report({t}, {}, out);
  save_manifest(make_manifest("eval disturbance", args, seed, 1, rc,
                              {(data / "manifest.json").string()},
                              {"disturbance.csv"}),
                out / "manifest.json");
  std::cout << "eval disturbance: " << dm.combos.size() << " combos x "
            << dm.test_categories.size() << " categories -> "
            << (out / "disturbance.csv").string() << "\n";
}

// ------------------------------------------------------------ optimize ----

Proxy resolve_proxy(const std::string& proxy_sel, const fs::path& model_dir,
                    const World& w) {
  if (proxy_sel == "gold") return proxy_from_gold(w);
  std::string want;
  if (!proxy_sel.empty()) {
    static const std::vector<std::pair<std::string, std::string>> expect = {
        {"single", "single"},
        {"dmoerm", "dmoerm"},
        {"dmoerm-wo-outer", "dmoerm-wo-outer"},
        {"mean", "ensemble-mean"},
        {"wco", "ensemble-wco"},
        {"uwo", "ensemble-uwo"},
    };
    for (const auto& [sel, name] : expect)
      if (sel == proxy_sel) want = name;
    if (want.empty())
      throw ConfigError("optimize: unknown proxy \"" + proxy_sel + "\"");
  }
  if (model_dir.empty())
    throw ConfigError("optimize: --model is required unless --proxy gold");
  Proxy p = load_model_proxy(model_dir);
  if (!want.empty() && p.name != want)
    throw ConfigError("optimize: model at " + model_dir.string() + " is \"" +
                      p.name + "\", not \"" + want + "\"");
  return p;
}

void run_optimize(const std::string& method, const RunConfig& rc,
                  std::uint64_t seed, int jobs, const fs::path& data,
                  const fs::path& model_dir, const std::string& proxy_sel,
                  int category, const fs::path& out,
                  const std::vector<std::string>& args) {
  const World w = world_from_manifest(data);
  const Proxy proxy = resolve_proxy(proxy_sel, model_dir, w);
  const GaussianPolicy policy = init_policy(w, category);
  const std::vector<std::vector<double>> prompts =
      make_prompts(w, category, rc.bon_prompts, seed);

  OptimizationTrace trace;
  if (method == "bon") {
    BonConfig bc = rc.bon_config();
    bc.seed = seed;
    bc.jobs = jobs;
    trace = bon_sweep(policy, w, prompts, proxy, bc);
  } else {
    PpoConfig pc = rc.ppo;
    pc.seed = seed;
    pc.validate();
    trace = ppo_run(policy, w, prompts, proxy, pc);
  }

  fs::create_directories(out);
  save_trace(trace, out / "trace.csv");
  std::vector<std::string> inputs = {(data / "manifest.json").string()};
  if (!model_dir.empty()) inputs.push_back(model_dir.string());
  save_manifest(make_manifest("optimize " + method, args, seed, jobs, rc,
                              inputs, {"trace.csv"}),
                out / "manifest.json");
  const TraceRow& last = trace.back();
  std::cout << "optimize " << method << ": " << trace.size()
            << " rows; last kl " << fmt(last.x_kl_nats) << ", proxy "
            << fmt(last.proxy_mean) << ", gold " << fmt(last.gold_mean)
            << "\n";
}

// -------------------------------------------------------------- report ----

void run_report(const RunConfig& rc, const std::vector<std::string>& traces,
                const fs::path& out, const std::vector<std::string>& args) {
  if (traces.empty()) throw ConfigError("report: at least one --trace");
  ReportTable t;
  t.name = "overoptimization";
  std::vector<NamedTrace> named;
  std::vector<std::string> outputs = {"overoptimization.csv"};
  for (const std::string& p : traces) {
    const OptimizationTrace raw = load_trace(p);
    const OptimizationTrace avg = average_trace(raw);
    std::string name =
        raw.empty() ? fs::path(p).stem().string() : raw.front().method;
    for (const NamedTrace& existing : named)
      if (existing.name == name) name += "_" + std::to_string(named.size());
    const OveroptMetrics om = overopt_metrics(avg);
    t.rows.push_back({name, "all", "peak_gold", om.peak_gold, 1, 0.0});
    t.rows.push_back({name, "all", "peak_kl", om.peak_kl, 1, 0.0});
    t.rows.push_back({name, "all", "final_gold", om.final_gold, 1, 0.0});
    t.rows.push_back({name, "all", "gold_regression", om.regression, 1, 0.0});
    named.push_back({name, avg});
    outputs.push_back(name + ".csv");
    outputs.push_back(name + "_proxy.dat");
    outputs.push_back(name + "_gold.dat");
    std::cout << "report: " << name << " peak_gold " << fmt(om.peak_gold)
              << " at kl " << fmt(om.peak_kl) << ", final "
              << fmt(om.final_gold) << ", regression " << fmt(om.regression)
              << "\n";
  }
  emit_report({t}, named, out);
  save_manifest(
      make_manifest("report", args, 0, 1, rc, traces, outputs),
      out / "manifest.json");
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);

  CLI::App app{
      "dmoerm: a desk-scale laboratory for double-layer mixture-of-experts "
      "reward models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // gen -------------------------------------------------------------------
  struct {
    std::string config, out;
    std::uint64_t seed = 0, world_seed = 0;
    int per_category = 0, k = 0;
    double test_fraction = 0.0;
    std::vector<int> sizes;
  } g;
  CLI::App* gen = app.add_subcommand("gen", "Sample a preference dataset");
  gen->add_option("--config", g.config, "JSON config file");
  gen->add_option("--out", g.out, "output directory")->required();
  gen->add_option("--seed", g.seed, "dataset sampling seed");
  CLI::Option* g_ws = gen->add_option("--world-seed", g.world_seed,
                                      "world construction seed");
  CLI::Option* g_pc = gen->add_option("--per-category", g.per_category,
                                      "samples per category");
  CLI::Option* g_k = gen->add_option("--k", g.k, "responses per prompt");
  CLI::Option* g_tf = gen->add_option("--test-fraction", g.test_fraction,
                                      "held-out share in (0,1)");
  CLI::Option* g_sz = gen->add_option("--sizes", g.sizes,
                                      "per-category counts, comma-separated")
                          ->delimiter(',');
  gen->callback([&] {
    RunConfig rc = base_config(g.config);
    if (*g_ws) rc.world_seed = g.world_seed;
    if (*g_pc) rc.gen.per_category = g.per_category;
    if (*g_k) rc.gen.k_resp = g.k;
    if (*g_tf) rc.gen.test_fraction = g.test_fraction;
    if (*g_sz) rc.gen.sizes = g.sizes;
    run_gen(rc, g.seed, g.out, args);
  });

  // label -----------------------------------------------------------------
  struct {
    std::string config, data, out, category = "all", cache, backend, endpoint,
                judge_model;
    std::uint64_t seed = 0;
    int jobs = 1;
    double position_bias = 0.0, tau = 0.0;
  } l;
  CLI::App* label =
      app.add_subcommand("label", "Judge capability-point response pairs");
  label->add_option("--config", l.config, "JSON config file");
  label->add_option("--data", l.data, "dataset directory (from gen)")
      ->required();
  label->add_option("--out", l.out, "labels directory")->required();
  label->add_option("--seed", l.seed, "judging seed");
  label->add_option("--jobs", l.jobs, "worker threads");
  label->add_option("--category", l.category,
                    "category name/id, \"all\", or \"overall\"");
  label->add_option("--cache", l.cache, "verdict cache file (JSONL)");
  CLI::Option* l_be = label->add_option("--backend", l.backend,
                                        "judge backend: oracle or remote");
  CLI::Option* l_pb = label->add_option("--position-bias", l.position_bias,
                                        "oracle first-slot bias in [0,1]");
  CLI::Option* l_tau =
      label->add_option("--tau", l.tau, "oracle noise (<0 = calibrated)");
  CLI::Option* l_ep =
      label->add_option("--endpoint", l.endpoint, "remote judge URL");
  CLI::Option* l_jm =
      label->add_option("--judge-model", l.judge_model, "remote model name");
  label->callback([&] {
    RunConfig rc = base_config(l.config);
    if (*l_be) rc.label.backend = l.backend;
    if (*l_pb) rc.label.position_bias = l.position_bias;
    if (*l_tau) rc.label.tau = l.tau;
    if (*l_ep) rc.label.remote.endpoint = l.endpoint;
    if (*l_jm) rc.label.remote.model = l.judge_model;
    run_label(rc, l.seed, l.jobs, l.data, l.out, l.category, l.cache, args);
  });

  // train -----------------------------------------------------------------
  CLI::App* train = app.add_subcommand("train", "Fit reward models");
  train->require_subcommand(1);
  struct TrainOpts {
    std::string config, data, labels, out, kind = "mean";
    std::uint64_t seed = 0;
    int members = 0;
    double lambda = 0.0;
    CLI::Option* o_members = nullptr;
    CLI::Option* o_lambda = nullptr;
  };
  auto train_opts = std::make_shared<std::vector<TrainOpts>>();
  train_opts->reserve(4);
  const std::vector<std::pair<std::string, std::string>> variants = {
      {"dmoerm", "Per-category inner models plus the prompt router"},
      {"dmoerm-wo-outer", "One inner model over all categories (no router)"},
      {"single", "Plain backbone + head baseline"},
      {"ensemble", "Seed-varied committee of single models"},
  };
  for (const auto& [vname, vdesc] : variants) {
    train_opts->emplace_back();
    TrainOpts& o = train_opts->back();
    CLI::App* cmd = train->add_subcommand(vname, vdesc);
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--data", o.data, "dataset directory")->required();
    cmd->add_option("--out", o.out, "model directory")->required();
    cmd->add_option("--seed", o.seed, "training seed");
    if (vname == "dmoerm" || vname == "dmoerm-wo-outer")
      cmd->add_option("--labels", o.labels, "labels directory")->required();
    if (vname == "ensemble") {
      cmd->add_option("--kind", o.kind, "aggregation: mean, wco, or uwo");
      o.o_members =
          cmd->add_option("--members", o.members, "committee size (>= 2)");
      o.o_lambda =
          cmd->add_option("--lambda", o.lambda, "uncertainty discount");
    }
    const std::string variant = vname;
    cmd->callback([&o, variant, &args] {
      RunConfig rc = base_config(o.config);
      if (variant == "ensemble") {
        if (o.o_members->count()) rc.ensemble.members = o.members;
        if (o.o_lambda->count()) rc.ensemble.lambda = o.lambda;
        run_train_ensemble(rc, o.seed, o.data, o.out,
                           ensemble_kind_from_name(o.kind), args);
      } else {
        run_train(variant, rc, o.seed, o.data, o.labels, o.out, args);
      }
    });
  }

  // eval ------------------------------------------------------------------
  CLI::App* eval = app.add_subcommand("eval", "Score trained models");
  eval->require_subcommand(1);
  struct {
    std::string config, model, data, out;
  } ec;
  CLI::App* evc = eval->add_subcommand(
      "consistency", "Label agreement of a model on the test split");
  evc->add_option("--config", ec.config, "JSON config file");
  evc->add_option("--model", ec.model, "model directory")->required();
  evc->add_option("--data", ec.data, "dataset directory")->required();
  evc->add_option("--out", ec.out, "report directory")->required();
  evc->callback([&] {
    run_eval_consistency(base_config(ec.config), ec.model, ec.data, ec.out,
                         args);
  });

  struct {
    std::string config, data, out;
    std::uint64_t seed = 0;
    int per_category = 120;
  } ed;
  CLI::App* evd = eval->add_subcommand(
      "disturbance", "Cross-category training-mix accuracy matrix");
  evd->add_option("--config", ed.config, "JSON config file");
  evd->add_option("--data", ed.data, "dataset directory (for its world)")
      ->required();
  evd->add_option("--out", ed.out, "report directory")->required();
  evd->add_option("--seed", ed.seed, "sampling/training seed");
  evd->add_option("--per-category", ed.per_category,
                  "samples per category for the matrix");
  evd->callback([&] {
    run_eval_disturbance(base_config(ed.config), ed.seed, ed.data, ed.out,
                         ed.per_category, args);
  });

  // optimize --------------------------------------------------------------
  CLI::App* opt =
      app.add_subcommand("optimize", "Optimize a policy against a proxy");
  opt->require_subcommand(1);
  struct OptOpts {
    std::string config, data, model, proxy, category = "roleplay", out;
    std::uint64_t seed = 0;
    int jobs = 1;
    long n_max = 0;
    int prompts = 0, steps = 0, ppo_seeds = 0, batch = 0;
    double beta = 0.0, clip = 0.0, lr = 0.0;
  };
  auto opt_opts = std::make_shared<std::vector<OptOpts>>();
  opt_opts->reserve(2);
  for (const std::string method : {"bon", "ppo"}) {
    opt_opts->emplace_back();
    OptOpts& o = opt_opts->back();
    CLI::App* cmd = opt->add_subcommand(
        method, method == std::string("bon")
                    ? "Best-of-n selection sweep over a sample-size grid"
                    : "Clipped policy-gradient run with a divergence penalty");
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--data", o.data, "dataset directory (for its world)")
        ->required();
    cmd->add_option("--model", o.model, "model directory");
    cmd->add_option("--proxy", o.proxy,
                    "scorer: gold, single, dmoerm, dmoerm-wo-outer, mean, "
                    "wco, or uwo");
    cmd->add_option("--category", o.category, "task category for prompts");
    cmd->add_option("--out", o.out, "output directory")->required();
    cmd->add_option("--seed", o.seed, "sampling seed");
    CLI::Option* o_prompts =
        cmd->add_option("--prompts", o.prompts, "prompt pool size");
    CLI::Option *o_nmax = nullptr, *o_steps = nullptr, *o_batch = nullptr,
                *o_beta = nullptr, *o_clip = nullptr, *o_lr = nullptr,
                *o_seeds = nullptr;
    if (method == std::string("bon")) {
      cmd->add_option("--jobs", o.jobs, "worker threads");
      o_nmax = cmd->add_option("--n-max", o.n_max, "largest best-of-n size");
    } else {
      o_steps = cmd->add_option("--steps", o.steps, "optimizer steps");
      o_batch = cmd->add_option("--batch", o.batch, "samples per step");
      o_beta = cmd->add_option("--beta", o.beta, "divergence penalty weight");
      o_clip = cmd->add_option("--clip", o.clip, "surrogate clip range");
      o_lr = cmd->add_option("--lr", o.lr, "learning rate");
      o_seeds = cmd->add_option("--ppo-seeds", o.ppo_seeds, "independent runs");
    }
    const std::string m = method;
    cmd->callback([&o, m, o_prompts, o_nmax, o_steps, o_batch, o_beta, o_clip,
                   o_lr, o_seeds, &args] {
      RunConfig rc = base_config(o.config);
      if (o_prompts->count()) rc.bon_prompts = o.prompts;
      if (o_nmax && o_nmax->count()) rc.bon_n_max = o.n_max;
      if (o_steps && o_steps->count()) rc.ppo.steps = o.steps;
      if (o_batch && o_batch->count()) rc.ppo.batch = o.batch;
      if (o_beta && o_beta->count()) rc.ppo.beta = o.beta;
      if (o_clip && o_clip->count()) rc.ppo.clip = o.clip;
      if (o_lr && o_lr->count()) rc.ppo.lr = o.lr;
      if (o_seeds && o_seeds->count()) rc.ppo.seeds = o.ppo_seeds;
      run_optimize(m, rc, o.seed, o.jobs, o.data, o.model, o.proxy,
                   parse_category(o.category), o.out, args);
    });
  }

  // report ----------------------------------------------------------------
  struct {
    std::string config, out;
    std::vector<std::string> traces;
  } r;
  CLI::App* rep =
      app.add_subcommand("report", "Summarize optimization traces");
  rep->add_option("--config", r.config, "JSON config file");
  rep->add_option("--trace", r.traces, "trace CSV (repeatable)")
      ->take_all();
  rep->add_option("--out", r.out, "report directory")->required();
  rep->callback(
      [&] { run_report(base_config(r.config), r.traces, r.out, args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dmoerm
