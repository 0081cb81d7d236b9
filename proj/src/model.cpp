// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"

namespace dmoerm {

namespace {

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void sigmoid_inplace(Mat& m) {
  for (double& v : m.a) v = sigmoid_stable(v);
}

int layer_rank(const ModelConfig& cfg, int out, int in) {
  return std::max(1, std::min(cfg.lora_rank_cap, std::min(out, in) / 2));
}

}  // namespace

void ModelConfig::validate() const {
  std::string bad;
  auto flag = [&bad](const char* f) {
    if (!bad.empty()) bad += ", ";
    bad += f;
  };
  if (input_dim < 1) flag("input_dim");
  if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(),
                                    [](int h) { return h < 1; }))
    flag("hidden");
  if (code_dim < 1) flag("code_dim");
  if (lora_rank_cap < 1) flag("lora_rank_cap");
  if (lora_dropout < 0.0 || lora_dropout >= 1.0) flag("lora_dropout");
  if (agg_hidden < 0) flag("agg_hidden");
  if (!bad.empty()) throw ConfigError("invalid model config field(s): " + bad);
}

BackboneParams make_backbone(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed({seed, 0x6262ULL}));
  BackboneParams bb;
  int in = cfg.input_dim;
  std::vector<int> outs = cfg.hidden;
  outs.push_back(cfg.code_dim);
  for (int out : outs) {
    AffineLayer layer{Mat(out, in), Mat(out, 1)};
    fill_normal(layer.W, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    bb.layers.push_back(std::move(layer));
    in = out;
  }
  return bb;
}

ValueHead make_head(int code_dim, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x6864ULL}));
  ValueHead h{Mat(1, code_dim), Mat(1, 1)};
  fill_normal(h.w, rng, 1.0 / std::sqrt(static_cast<double>(code_dim)));
  return h;
}

ValueHead clone_head(const ValueHead& h) { return ValueHead{h.w, h.b}; }

LoraAdapter make_adapter(const ModelConfig& cfg, const BackboneParams& bb,
                         std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x6c6fULL}));
  LoraAdapter ad;
  ad.dropout = cfg.lora_dropout;
  for (const AffineLayer& layer : bb.layers) {
    const int out = layer.W.rows;
    const int in = layer.W.cols;
    const int r = layer_rank(cfg, out, in);
    LoraAdapter::LayerAB ab{Mat(r, in), Mat::zeros(out, r), r,
                            static_cast<double>(r)};
    fill_normal(ab.A, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    ad.layers.push_back(std::move(ab));
  }
  return ad;
}

int agg_hidden_dim(const ModelConfig& cfg, int num_experts) {
  if (cfg.agg_hidden > 0) return cfg.agg_hidden;
  return std::max(8, num_experts * cfg.code_dim / 2);
}

Aggregator make_aggregator(const ModelConfig& cfg, int num_experts,
                           std::uint64_t seed) {
  if (num_experts < 1)
    throw ConfigError("aggregator needs at least one expert, got " +
                      std::to_string(num_experts));
  Rng rng(derive_seed({seed, 0x6167ULL}));
  const int in = num_experts * cfg.code_dim;
  const int h = agg_hidden_dim(cfg, num_experts);
  Aggregator agg{Mat(h, in), Mat(h, 1), Mat::scalar(0.25), Mat(1, h), Mat(1, 1)};
  fill_normal(agg.W0, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  fill_normal(agg.W1, rng, 1.0 / std::sqrt(static_cast<double>(h)));
  return agg;
}

RewardNet make_base_net(const ModelConfig& cfg, std::uint64_t seed) {
  RewardNet net;
  net.backbone = make_backbone(cfg, seed);
  net.base_head = make_head(cfg.code_dim, derive_seed({seed, 0x6268ULL}));
  return net;
}

void attach_experts(RewardNet& net, const ModelConfig& cfg, int num_experts,
                    std::uint64_t seed) {
  if (net.has_experts())
    throw StateError("attach_experts: net already has " +
                     std::to_string(net.num_experts()) + " experts");
  if (num_experts < 1)
    throw ConfigError("attach_experts: num_experts must be >= 1, got " +
                      std::to_string(num_experts));
  for (int e = 0; e < num_experts; ++e) {
    net.adapters.push_back(make_adapter(
        cfg, net.backbone, derive_seed({seed, 0x6c6f7261ULL,
                                        static_cast<std::uint64_t>(e)})));
    net.heads.push_back(clone_head(net.base_head));
  }
  net.agg = make_aggregator(cfg, num_experts, derive_seed({seed, 0x61676772ULL}));
}

Mat encode(const BackboneParams& bb, std::span<const double> x) {
  if (static_cast<int>(x.size()) != bb.input_dim())
    throw ShapeError("encode: input (" + std::to_string(x.size()) +
                     "x1) vs backbone expecting (" +
                     std::to_string(bb.input_dim()) + "x1)");
  Mat h = Mat::column(x);
  for (const AffineLayer& layer : bb.layers) {
    h = add(matmul(layer.W, h), layer.b);
    sigmoid_inplace(h);
  }
  return h;
}

Mat encode_with_lora(const BackboneParams& bb, const LoraAdapter& ad,
                     std::span<const double> x) {
  if (ad.layers.size() != bb.layers.size())
    throw ShapeError("encode_with_lora: adapter covers " +
                     std::to_string(ad.layers.size()) + " layers, backbone has " +
                     std::to_string(bb.layers.size()));
  if (static_cast<int>(x.size()) != bb.input_dim())
    throw ShapeError("encode_with_lora: input (" + std::to_string(x.size()) +
                     "x1) vs backbone expecting (" +
                     std::to_string(bb.input_dim()) + "x1)");
  Mat h = Mat::column(x);
  for (std::size_t i = 0; i < bb.layers.size(); ++i) {
    const AffineLayer& layer = bb.layers[i];
    const LoraAdapter::LayerAB& ab = ad.layers[i];
    Mat base = add(matmul(layer.W, h), layer.b);
    Mat low = matmul(ab.B, matmul(ab.A, h));
    add_inplace(base, scale(low, ab.alpha / ab.rank));
    sigmoid_inplace(base);
    h = std::move(base);
  }
  return h;
}

double head_score(const ValueHead& h, const Mat& z) {
  return sigmoid_stable(add(matmul(h.w, z), h.b).item());
}

double aggregate(const Aggregator& agg, const std::vector<Mat>& zs) {
  if (zs.empty()) throw ShapeError("aggregate: no expert codes given");
  int total = 0;
  for (const Mat& z : zs) total += z.rows;
  if (total != agg.W0.cols)
    throw ShapeError("aggregate: concatenated codes (" + std::to_string(total) +
                     "x1) vs W0 " + agg.W0.shape_str());
  Mat z(total, 1);
  int row = 0;
  for (const Mat& part : zs)
    for (int i = 0; i < part.rows; ++i) z.at(row++, 0) = part.at(i, 0);
  Mat h = add(matmul(agg.W0, z), agg.b0);
  const double s = agg.slope.item();
  for (double& v : h.a)
    if (v <= 0.0) v *= s;
  return sigmoid_stable(add(matmul(agg.W1, h), agg.b1).item());
}

double reward(const RewardNet& net, std::span<const double> x) {
  if (!net.has_experts()) return head_score(net.base_head, encode(net.backbone, x));
  return capability_readout(net, x).reward;
}

CapabilityReadout capability_readout(const RewardNet& net,
                                     std::span<const double> x) {
  if (!net.has_experts())
    throw StateError("capability_readout: net has no experts attached");
  if (net.heads.size() != net.adapters.size())
    throw StateError("capability_readout: " + std::to_string(net.adapters.size()) +
                     " adapters vs " + std::to_string(net.heads.size()) + " heads");
  CapabilityReadout out;
  std::vector<Mat> zs;
  zs.reserve(net.adapters.size());
  for (std::size_t i = 0; i < net.adapters.size(); ++i) {
    zs.push_back(encode_with_lora(net.backbone, net.adapters[i], x));
    out.expert_scores.push_back(head_score(net.heads[i], zs.back()));
  }
  out.reward = aggregate(net.agg, zs);
  return out;
}

BackboneLeaves lift(Tape& tape, const BackboneParams& bb, bool requires_grad) {
  BackboneLeaves out;
  for (const AffineLayer& layer : bb.layers)
    out.layers.emplace_back(tape.leaf(layer.W, requires_grad),
                            tape.leaf(layer.b, requires_grad));
  return out;
}

AdapterLeaves lift(Tape& tape, const LoraAdapter& ad, bool requires_grad) {
  AdapterLeaves out;
  for (const LoraAdapter::LayerAB& ab : ad.layers)
    out.layers.emplace_back(tape.leaf(ab.A, requires_grad),
                            tape.leaf(ab.B, requires_grad));
  return out;
}

HeadLeaves lift(Tape& tape, const ValueHead& h, bool requires_grad) {
  return HeadLeaves{tape.leaf(h.w, requires_grad), tape.leaf(h.b, requires_grad)};
}

AggLeaves lift(Tape& tape, const Aggregator& agg, bool requires_grad) {
  return AggLeaves{tape.leaf(agg.W0, requires_grad), tape.leaf(agg.b0, requires_grad),
                   tape.leaf(agg.slope, requires_grad),
                   tape.leaf(agg.W1, requires_grad), tape.leaf(agg.b1, requires_grad)};
}

Tensor tape_encode(Tape& tape, const BackboneLeaves& bb, Tensor x) {
  Tensor h = x;
  for (const auto& [W, b] : bb.layers)
    h = tape.sigmoid(tape.add(tape.matmul(W, h), b));
  return h;
}

Tensor tape_encode_with_lora(Tape& tape, const BackboneLeaves& bb,
                             const AdapterLeaves& ad, const LoraAdapter& meta,
                             Tensor x, bool train, Rng* rng) {
  if (ad.layers.size() != bb.layers.size())
    throw ShapeError("tape_encode_with_lora: adapter covers " +
                     std::to_string(ad.layers.size()) + " layers, backbone has " +
                     std::to_string(bb.layers.size()));
  Tensor h = x;
  for (std::size_t i = 0; i < bb.layers.size(); ++i) {
    const auto& [W, b] = bb.layers[i];
    const auto& [A, B] = ad.layers[i];
    Tensor base = tape.add(tape.matmul(W, h), b);
    Tensor drop = h;
    if (train && meta.dropout > 0.0) {
      if (rng == nullptr)
        throw StateError("tape_encode_with_lora: dropout requires an rng");
      drop = tape.dropout(h, meta.dropout, *rng);
    }
    Tensor low = tape.scale(tape.matmul(B, tape.matmul(A, drop)),
                            meta.layers[i].alpha / meta.layers[i].rank);
    h = tape.sigmoid(tape.add(base, low));
  }
  return h;
}

Tensor tape_head(Tape& tape, const HeadLeaves& h, Tensor z) {
  return tape.sigmoid(tape.add(tape.matmul(h.w, z), h.b));
}

Tensor tape_aggregate(Tape& tape, const AggLeaves& agg,
                      std::span<const Tensor> zs) {
  Tensor z = tape.concat_rows(zs);
  Tensor h = tape.prelu(tape.add(tape.matmul(agg.W0, z), agg.b0), agg.slope);
  return tape.sigmoid(tape.add(tape.matmul(agg.W1, h), agg.b1));
}

}  // namespace dmoerm
