// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>

#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"

namespace dmoerm {

namespace {

constexpr std::uint64_t kTagShuffle = 0x73687566ULL;
constexpr std::uint64_t kTagValSplit = 0x76616c73ULL;
constexpr std::uint64_t kTagDropout = 0x64726f70ULL;
constexpr std::uint64_t kTagAttach = 0x61747463ULL;
constexpr std::uint64_t kTagExpert = 0x65787074ULL;
constexpr std::uint64_t kTagMember = 0x6d626572ULL;

double log_sigmoid_scalar(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

void require_visible(const PreferenceDataset& ds, const char* who) {
  for (const PreferenceSample& s : ds.samples) {
    bool dirty = !s.gold_order.empty();
    for (const ResponseRecord& r : s.responses) dirty = dirty || !r.latents.empty();
    if (dirty)
      throw StateError(std::string(who) +
                       ": dataset still carries gold-side data (sample " +
                       std::to_string(s.id) + "); strip it with visible_only()");
  }
}

bool in_splits(Split s, const std::vector<Split>& splits) {
  return std::find(splits.begin(), splits.end(), s) != splits.end();
}

std::vector<int> ranked_pool(const PreferenceDataset& ds,
                             const std::vector<Split>& splits,
                             std::optional<int> category) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const PreferenceSample& s = ds.samples[i];
    if (!in_splits(s.split, splits)) continue;
    if (category && s.category != *category) continue;
    idx.push_back(static_cast<int>(i));
  }
  return idx;
}

struct ItemSplit {
  std::vector<int> train;
  std::vector<int> val;
};

// Deterministic validation carve-out; tiny pools validate on themselves.
ItemSplit carve_validation(std::vector<int> items, double val_fraction,
                           std::uint64_t seed) {
  ItemSplit out;
  const int n = static_cast<int>(items.size());
  if (val_fraction <= 0.0 || n < 4) {
    out.train = items;
    out.val = std::move(items);
    return out;
  }
  Rng rng(seed);
  rng.shuffle(items);
  int n_val = static_cast<int>(std::llround(n * val_fraction));
  n_val = std::clamp(n_val, 1, n - 1);
  out.val.assign(items.begin(), items.begin() + n_val);
  out.train.assign(items.begin() + n_val, items.end());
  return out;
}

struct StepOut {
  double loss = 0.0;
  double acc = 0.0;
  std::vector<Mat> grads;
};

// Shared loop: batches from a reshuffled item stream, periodic validation
// accuracy, patience stop, best-snapshot restore.
TrainStats run_training(
    const TrainConfig& cfg, const std::vector<int>& train_items,
    const std::vector<Mat*>& params,
    const std::function<StepOut(std::span<const int>, int)>& step_fn,
    const std::function<double()>& eval_fn) {
  TrainStats st;
  if (train_items.empty()) return st;

  AdamOptimizer adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(derive_seed({cfg.seed, kTagShuffle}));
  std::vector<int> order = train_items;
  std::size_t cursor = order.size();

  std::vector<Mat> best;
  auto snapshot = [&] {
    best.clear();
    for (Mat* p : params) best.push_back(*p);
  };
  auto restore = [&] {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best[i];
  };

  st.initial_val_acc = eval_fn();
  st.best_val_acc = st.initial_val_acc;
  st.best_step = 0;
  snapshot();

  int since_best = 0;
  double acc_loss = 0.0, acc_acc = 0.0;
  int acc_n = 0;
  std::vector<int> batch(static_cast<std::size_t>(cfg.batch));
  for (int step = 1; step <= cfg.max_steps; ++step) {
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      batch[static_cast<std::size_t>(b)] = order[cursor++];
    }
    StepOut out = step_fn(batch, step);
    std::vector<const Mat*> gp;
    gp.reserve(out.grads.size());
    for (const Mat& g : out.grads) gp.push_back(&g);
    adam.step(params, gp);
    acc_loss += out.loss;
    acc_acc += out.acc;
    ++acc_n;
    st.steps = step;
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double v = eval_fn();
      st.history.push_back(
          MetricRow{step, acc_loss / acc_n, acc_acc / acc_n, v});
      acc_loss = acc_acc = 0.0;
      acc_n = 0;
      if (v > st.best_val_acc) {
        st.best_val_acc = v;
        st.best_step = step;
        snapshot();
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  restore();
  return st;
}

std::vector<Mat*> backbone_head_params(RewardNet& net) {
  std::vector<Mat*> ps;
  for (AffineLayer& l : net.backbone.layers) {
    ps.push_back(&l.W);
    ps.push_back(&l.b);
  }
  ps.push_back(&net.base_head.w);
  ps.push_back(&net.base_head.b);
  return ps;
}

std::vector<Tensor> backbone_head_leaves(const BackboneLeaves& bb,
                                         const HeadLeaves& hd) {
  std::vector<Tensor> ls;
  for (const auto& [W, b] : bb.layers) {
    ls.push_back(W);
    ls.push_back(b);
  }
  ls.push_back(hd.w);
  ls.push_back(hd.b);
  return ls;
}

std::vector<Mat> collect_grads(const Tape& tape,
                               const std::vector<Tensor>& leaves) {
  std::vector<Mat> gs;
  gs.reserve(leaves.size());
  for (Tensor t : leaves) gs.push_back(tape.grad(t));
  return gs;
}

std::vector<double> base_scores(const RewardNet& net,
                                const PreferenceSample& s) {
  std::vector<double> rs;
  rs.reserve(s.label_order.size());
  for (int r : s.label_order)
    rs.push_back(head_score(
        net.base_head,
        encode(net.backbone, s.responses[static_cast<std::size_t>(r)].x)));
  return rs;
}

}  // namespace

void TrainConfig::validate() const {
  std::string bad;
  auto flag = [&](const char* f) {
    if (!bad.empty()) bad += ", ";
    bad += f;
  };
  if (lr < 0.0 || !std::isfinite(lr)) flag("lr");
  if (batch < 1) flag("batch");
  if (max_steps < 0) flag("max_steps");
  if (eval_every < 1) flag("eval_every");
  if (patience < 1) flag("patience");
  if (val_fraction < 0.0 || val_fraction > 0.9) flag("val_fraction");
  if (!bad.empty()) throw ConfigError("TrainConfig: bad field(s): " + bad);
}

double pairwise_loss(std::span<const double> rewards_best_first) {
  const std::size_t k = rewards_best_first.size();
  if (k < 2)
    throw ConfigError("pairwise_loss needs at least 2 scores, got " +
                      std::to_string(k));
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      sum -= log_sigmoid_scalar(rewards_best_first[i] - rewards_best_first[j]);
      ++pairs;
    }
  return sum / pairs;
}

Tensor pairwise_loss(Tape& tape, std::span<const Tensor> rewards_best_first) {
  const std::size_t k = rewards_best_first.size();
  if (k < 2)
    throw ConfigError("pairwise_loss needs at least 2 scores, got " +
                      std::to_string(k));
  Tensor sum{};
  bool have = false;
  int pairs = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      Tensor term = tape.log_sigmoid(
          tape.sub(rewards_best_first[i], rewards_best_first[j]));
      sum = have ? tape.add(sum, term) : term;
      have = true;
      ++pairs;
    }
  return tape.scale(sum, -1.0 / pairs);
}

double ranked_pair_accuracy(std::span<const double> rewards_best_first) {
  const std::size_t k = rewards_best_first.size();
  if (k < 2)
    throw ConfigError("ranked_pair_accuracy needs at least 2 scores, got " +
                      std::to_string(k));
  double credit = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      if (rewards_best_first[i] > rewards_best_first[j])
        credit += 1.0;
      else if (rewards_best_first[i] == rewards_best_first[j])
        credit += 0.5;
      ++pairs;
    }
  return credit / pairs;
}

double sample_ranking_loss(const RewardNet& net, const PreferenceSample& s) {
  std::vector<double> rs;
  rs.reserve(s.label_order.size());
  for (int r : s.label_order)
    rs.push_back(reward(net, s.responses[static_cast<std::size_t>(r)].x));
  return pairwise_loss(rs);
}

double sample_pair_accuracy(const RewardNet& net, const PreferenceSample& s) {
  std::vector<double> rs;
  rs.reserve(s.label_order.size());
  for (int r : s.label_order)
    rs.push_back(reward(net, s.responses[static_cast<std::size_t>(r)].x));
  return ranked_pair_accuracy(rs);
}

double dataset_pair_accuracy(const RewardNet& net, const PreferenceDataset& ds,
                             const std::vector<Split>& splits,
                             std::optional<int> category) {
  double sum = 0.0;
  int n = 0;
  for (const PreferenceSample& s : ds.samples) {
    if (!in_splits(s.split, splits)) continue;
    if (category && s.category != *category) continue;
    sum += sample_pair_accuracy(net, s);
    ++n;
  }
  if (n == 0)
    throw ConfigError("dataset_pair_accuracy: no samples in chosen slice");
  return sum / n;
}

TrainStats train_base(RewardNet& net, const PreferenceDataset& ds,
                      const std::vector<Split>& splits,
                      std::optional<int> category, const TrainConfig& cfg) {
  cfg.validate();
  require_visible(ds, "train_base");
  const std::vector<int> pool = ranked_pool(ds, splits, category);
  if (pool.empty()) throw ConfigError("train_base: no samples in chosen slice");
  ItemSplit items = carve_validation(pool, cfg.val_fraction,
                                     derive_seed({cfg.seed, kTagValSplit}));

  auto eval_fn = [&]() {
    double sum = 0.0;
    for (int i : items.val)
      sum += ranked_pair_accuracy(
          base_scores(net, ds.samples[static_cast<std::size_t>(i)]));
    return sum / static_cast<double>(items.val.size());
  };

  auto step_fn = [&](std::span<const int> batch, int) {
    StepOut out;
    Tape tape;
    BackboneLeaves bb = lift(tape, net.backbone, true);
    HeadLeaves hd = lift(tape, net.base_head, true);
    Tensor total{};
    bool have = false;
    double acc_sum = 0.0;
    for (int i : batch) {
      const PreferenceSample& s = ds.samples[static_cast<std::size_t>(i)];
      std::vector<Tensor> rs;
      rs.reserve(s.label_order.size());
      for (int r : s.label_order) {
        Tensor x = tape.leaf(
            Mat::column(s.responses[static_cast<std::size_t>(r)].x), false);
        rs.push_back(tape_head(tape, hd, tape_encode(tape, bb, x)));
      }
      std::vector<double> vals;
      vals.reserve(rs.size());
      for (Tensor t : rs) vals.push_back(tape.value(t).item());
      acc_sum += ranked_pair_accuracy(vals);
      Tensor loss = pairwise_loss(tape, rs);
      total = have ? tape.add(total, loss) : loss;
      have = true;
    }
    if (batch.size() > 1)
      total = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
    tape.backward(total);
    out.loss = tape.value(total).item();
    out.acc = acc_sum / static_cast<double>(batch.size());
    out.grads = collect_grads(tape, backbone_head_leaves(bb, hd));
    return out;
  };

  return run_training(cfg, items.train, backbone_head_params(net), step_fn,
                      eval_fn);
}

std::vector<TrainStats> train_experts(RewardNet& net, const ModelConfig& mc,
                                      const PreferenceDataset& ds,
                                      const CapabilityDataset& cd,
                                      const std::vector<Split>& splits,
                                      const TrainConfig& cfg) {
  cfg.validate();
  require_visible(ds, "train_experts");
  if (cd.points.empty())
    throw ConfigError("train_experts: capability dataset has no points");
  if (cd.pairs.size() != cd.points.size())
    throw ConfigError("train_experts: pairs/points size mismatch");

  std::unordered_map<int, const PreferenceSample*> by_id;
  for (const PreferenceSample& s : ds.samples) by_id.emplace(s.id, &s);
  auto sample_of = [&](int id) -> const PreferenceSample& {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw ConfigError("train_experts: pair references unknown sample " +
                        std::to_string(id));
    return *it->second;
  };

  // Per-point training pools; an empty pool means the point has no signal
  // to fit, which the caller must know about.
  std::vector<std::vector<int>> pools(cd.points.size());
  for (std::size_t e = 0; e < cd.points.size(); ++e) {
    for (std::size_t p = 0; p < cd.pairs[e].size(); ++p)
      if (in_splits(sample_of(cd.pairs[e][p].sample_id).split, splits))
        pools[e].push_back(static_cast<int>(p));
    if (pools[e].empty())
      throw ConfigError("train_experts: no labeled pairs for capability point '" +
                        cd.points[e] + "'");
  }

  attach_experts(net, mc, static_cast<int>(cd.points.size()),
                 derive_seed({cfg.seed, kTagAttach}));

  std::vector<TrainStats> all;
  all.reserve(cd.points.size());
  for (std::size_t e = 0; e < cd.points.size(); ++e) {
    TrainConfig ec = cfg;
    ec.seed = derive_seed({cfg.seed, kTagExpert, static_cast<std::uint64_t>(e)});
    ItemSplit items = carve_validation(pools[e], ec.val_fraction,
                                       derive_seed({ec.seed, kTagValSplit}));

    LoraAdapter& adapter = net.adapters[e];
    ValueHead& head = net.heads[e];
    std::vector<Mat*> params;
    for (LoraAdapter::LayerAB& l : adapter.layers) {
      params.push_back(&l.A);
      params.push_back(&l.B);
    }
    params.push_back(&head.w);
    params.push_back(&head.b);

    auto pair_xs = [&, e](int p) {
      const CapabilityPair& cp = cd.pairs[e][static_cast<std::size_t>(p)];
      const PreferenceSample& s = sample_of(cp.sample_id);
      return std::make_pair(
          std::span<const double>(
              s.responses[static_cast<std::size_t>(cp.winner)].x),
          std::span<const double>(
              s.responses[static_cast<std::size_t>(cp.loser)].x));
    };

    auto eval_fn = [&]() {
      double credit = 0.0;
      for (int p : items.val) {
        auto [xw, xl] = pair_xs(p);
        const double rw =
            head_score(head, encode_with_lora(net.backbone, adapter, xw));
        const double rl =
            head_score(head, encode_with_lora(net.backbone, adapter, xl));
        credit += rw > rl ? 1.0 : (rw == rl ? 0.5 : 0.0);
      }
      return credit / static_cast<double>(items.val.size());
    };

    auto step_fn = [&](std::span<const int> batch, int step) {
      StepOut out;
      Tape tape;
      BackboneLeaves bb = lift(tape, net.backbone, false);
      AdapterLeaves ad = lift(tape, adapter, true);
      HeadLeaves hd = lift(tape, head, true);
      Rng drop_rng(
          derive_seed({ec.seed, kTagDropout, static_cast<std::uint64_t>(step)}));
      Tensor total{};
      bool have = false;
      double credit = 0.0;
      for (int p : batch) {
        auto [xw, xl] = pair_xs(p);
        Tensor zw = tape_encode_with_lora(tape, bb, ad, adapter,
                                          tape.leaf(Mat::column(xw), false),
                                          true, &drop_rng);
        Tensor zl = tape_encode_with_lora(tape, bb, ad, adapter,
                                          tape.leaf(Mat::column(xl), false),
                                          true, &drop_rng);
        Tensor rw = tape_head(tape, hd, zw);
        Tensor rl = tape_head(tape, hd, zl);
        const double vw = tape.value(rw).item();
        const double vl = tape.value(rl).item();
        credit += vw > vl ? 1.0 : (vw == vl ? 0.5 : 0.0);
        Tensor loss = tape.scale(tape.log_sigmoid(tape.sub(rw, rl)), -1.0);
        total = have ? tape.add(total, loss) : loss;
        have = true;
      }
      if (batch.size() > 1)
        total = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
      tape.backward(total);
      std::vector<Tensor> leaves;
      for (const auto& [A, B] : ad.layers) {
        leaves.push_back(A);
        leaves.push_back(B);
      }
      leaves.push_back(hd.w);
      leaves.push_back(hd.b);
      out.loss = tape.value(total).item();
      out.acc = credit / static_cast<double>(batch.size());
      out.grads = collect_grads(tape, leaves);
      return out;
    };

    all.push_back(run_training(ec, items.train, params, step_fn, eval_fn));
  }
  return all;
}

TrainStats train_aggregator(RewardNet& net, const PreferenceDataset& ds,
                            const std::vector<Split>& splits,
                            std::optional<int> category,
                            const TrainConfig& cfg) {
  cfg.validate();
  require_visible(ds, "train_aggregator");
  if (!net.has_experts())
    throw StateError("train_aggregator: net has no experts to aggregate");
  const std::vector<int> pool = ranked_pool(ds, splits, category);
  if (pool.empty())
    throw ConfigError("train_aggregator: no samples in chosen slice");
  ItemSplit items = carve_validation(pool, cfg.val_fraction,
                                     derive_seed({cfg.seed, kTagValSplit}));

  std::vector<Mat*> params = {&net.agg.W0, &net.agg.b0, &net.agg.slope,
                              &net.agg.W1, &net.agg.b1};

  auto eval_fn = [&]() {
    double sum = 0.0;
    for (int i : items.val)
      sum += sample_pair_accuracy(net, ds.samples[static_cast<std::size_t>(i)]);
    return sum / static_cast<double>(items.val.size());
  };

  auto step_fn = [&](std::span<const int> batch, int) {
    StepOut out;
    Tape tape;
    BackboneLeaves bb = lift(tape, net.backbone, false);
    std::vector<AdapterLeaves> ads;
    ads.reserve(net.adapters.size());
    for (const LoraAdapter& a : net.adapters) ads.push_back(lift(tape, a, false));
    AggLeaves ag = lift(tape, net.agg, true);
    Tensor total{};
    bool have = false;
    double acc_sum = 0.0;
    for (int i : batch) {
      const PreferenceSample& s = ds.samples[static_cast<std::size_t>(i)];
      std::vector<Tensor> rs;
      rs.reserve(s.label_order.size());
      for (int r : s.label_order) {
        Tensor x = tape.leaf(
            Mat::column(s.responses[static_cast<std::size_t>(r)].x), false);
        std::vector<Tensor> zs;
        zs.reserve(net.adapters.size());
        for (std::size_t e = 0; e < net.adapters.size(); ++e)
          zs.push_back(tape_encode_with_lora(tape, bb, ads[e], net.adapters[e],
                                             x, false, nullptr));
        rs.push_back(tape_aggregate(tape, ag, zs));
      }
      std::vector<double> vals;
      vals.reserve(rs.size());
      for (Tensor t : rs) vals.push_back(tape.value(t).item());
      acc_sum += ranked_pair_accuracy(vals);
      Tensor loss = pairwise_loss(tape, rs);
      total = have ? tape.add(total, loss) : loss;
      have = true;
    }
    if (batch.size() > 1)
      total = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
    tape.backward(total);
    const std::vector<Tensor> leaves = {ag.W0, ag.b0, ag.slope, ag.W1, ag.b1};
    out.loss = tape.value(total).item();
    out.acc = acc_sum / static_cast<double>(batch.size());
    out.grads = collect_grads(tape, leaves);
    return out;
  };

  return run_training(cfg, items.train, params, step_fn, eval_fn);
}

TrainStats train_single_rm(RewardNet& net, const PreferenceDataset& ds,
                           const TrainConfig& cfg) {
  if (net.has_experts())
    throw StateError("train_single_rm: expected a plain backbone+head net");
  return train_base(net, ds, {Split::kPhase1, Split::kPhase3}, std::nullopt,
                    cfg);
}

std::vector<RewardNet> train_ensemble(const EnsembleSpec& spec,
                                      const PreferenceDataset& ds) {
  if (spec.members < 2)
    throw ConfigError("train_ensemble: need at least 2 members, got " +
                      std::to_string(spec.members));
  std::vector<RewardNet> members;
  members.reserve(static_cast<std::size_t>(spec.members));
  for (int m = 0; m < spec.members; ++m) {
    RewardNet net = make_base_net(
        spec.model, derive_seed({spec.seed, kTagMember,
                                 static_cast<std::uint64_t>(m), 0x696eULL}));
    TrainConfig tc = spec.train;
    tc.seed = derive_seed(
        {spec.seed, kTagMember, static_cast<std::uint64_t>(m), 0x7368ULL});
    train_single_rm(net, ds, tc);
    members.push_back(std::move(net));
  }
  return members;
}

}  // namespace dmoerm
