// SPDX-License-Identifier: Apache-2.0
//
// The two-layer reward model. A shared sigmoid-MLP backbone encodes a
// response into a code vector z. Per capability point there is a low-rank
// adapter pair (A, B) on every backbone layer plus a scalar value head; the
// aggregator MLP maps the concatenated expert codes to the final reward.
// All scores pass through a sigmoid, so rewards live in (0, 1).

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dmoerm/autodiff.hpp"
#include "dmoerm/mat.hpp"

namespace dmoerm {

class Rng;

struct ModelConfig {
  int input_dim = 32;
  std::vector<int> hidden = {64, 32};
  int code_dim = 16;
  int lora_rank_cap = 32;   // per-layer rank = min(cap, min(out,in)/2), >= 1
  double lora_dropout = 0.05;
  int agg_hidden = 0;       // 0 -> num_experts*code_dim/2, floor 8

  void validate() const;  // throws ConfigError naming each bad field
};

struct AffineLayer {
  Mat W;  // out x in
  Mat b;  // out x 1
};

struct BackboneParams {
  std::vector<AffineLayer> layers;
  int input_dim() const { return layers.front().W.cols; }
  int code_dim() const { return layers.back().W.rows; }
};

// Low-rank residual on every backbone layer: delta_W = (alpha/rank) * B * A,
// with B zero-initialized so a fresh adapter is an exact no-op.
struct LoraAdapter {
  struct LayerAB {
    Mat A;  // rank x in
    Mat B;  // out x rank
    int rank = 0;
    double alpha = 0.0;
  };
  std::vector<LayerAB> layers;
  double dropout = 0.0;
};

struct ValueHead {
  Mat w;  // 1 x code_dim
  Mat b;  // 1 x 1
};

struct Aggregator {
  Mat W0;     // h x (n*code_dim)
  Mat b0;     // h x 1
  Mat slope;  // 1 x 1 learnable PReLU slope
  Mat W1;     // 1 x h
  Mat b1;     // 1 x 1
};

struct RewardNet {
  BackboneParams backbone;
  ValueHead base_head;
  std::vector<LoraAdapter> adapters;  // one per capability point, or empty
  std::vector<ValueHead> heads;       // parallel to adapters
  Aggregator agg;

  int num_experts() const { return static_cast<int>(adapters.size()); }
  bool has_experts() const { return !adapters.empty(); }
};

// Factories. All randomness comes from the given seed.
BackboneParams make_backbone(const ModelConfig& cfg, std::uint64_t seed);
ValueHead make_head(int code_dim, std::uint64_t seed);
ValueHead clone_head(const ValueHead& h);
LoraAdapter make_adapter(const ModelConfig& cfg, const BackboneParams& bb,
                         std::uint64_t seed);
Aggregator make_aggregator(const ModelConfig& cfg, int num_experts,
                           std::uint64_t seed);
// Backbone plus base head only; experts are attached during training.
RewardNet make_base_net(const ModelConfig& cfg, std::uint64_t seed);
int agg_hidden_dim(const ModelConfig& cfg, int num_experts);
// Adds num_experts fresh adapters (exact no-ops), per-expert heads cloned
// from the base head, and a new aggregator. StateError if experts exist.
void attach_experts(RewardNet& net, const ModelConfig& cfg, int num_experts,
                    std::uint64_t seed);

// Plain (tape-free) forwards used for inference.
Mat encode(const BackboneParams& bb, std::span<const double> x);
Mat encode_with_lora(const BackboneParams& bb, const LoraAdapter& ad,
                     std::span<const double> x);
double head_score(const ValueHead& h, const Mat& z);
double aggregate(const Aggregator& agg, const std::vector<Mat>& zs);

struct CapabilityReadout {
  std::vector<double> expert_scores;
  double reward = 0.0;
};

// Final reward: expert path when adapters exist, else base head.
double reward(const RewardNet& net, std::span<const double> x);
// Per-expert scores plus final reward; requires experts (StateError).
CapabilityReadout capability_readout(const RewardNet& net,
                                     std::span<const double> x);

// Tape-side mirrors for training. Leaves are created per component so
// optimizers can pick exactly the parameter subset a phase updates.
struct BackboneLeaves {
  std::vector<std::pair<Tensor, Tensor>> layers;  // (W, b)
};
struct AdapterLeaves {
  std::vector<std::pair<Tensor, Tensor>> layers;  // (A, B)
};
struct HeadLeaves {
  Tensor w, b;
};
struct AggLeaves {
  Tensor W0, b0, slope, W1, b1;
};

BackboneLeaves lift(Tape& tape, const BackboneParams& bb, bool requires_grad);
AdapterLeaves lift(Tape& tape, const LoraAdapter& ad, bool requires_grad);
HeadLeaves lift(Tape& tape, const ValueHead& h, bool requires_grad);
AggLeaves lift(Tape& tape, const Aggregator& agg, bool requires_grad);

Tensor tape_encode(Tape& tape, const BackboneLeaves& bb, Tensor x);
// train=true applies dropout on the adapter input path, drawing masks from
// rng; eval mode never touches rng.
Tensor tape_encode_with_lora(Tape& tape, const BackboneLeaves& bb,
                             const AdapterLeaves& ad, const LoraAdapter& meta,
                             Tensor x, bool train, Rng* rng);
Tensor tape_head(Tape& tape, const HeadLeaves& h, Tensor z);
Tensor tape_aggregate(Tape& tape, const AggLeaves& agg,
                      std::span<const Tensor> zs);

}  // namespace dmoerm
