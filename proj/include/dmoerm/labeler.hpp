// SPDX-License-Identifier: Apache-2.0
//
// Capability labeling. A pair of responses is judged twice per capability
// point, once in each presentation order; only pairs where both calls name
// the same underlying response are retained, which cancels position bias.
// Backends: a world-side oracle (position bias + logistic judgment noise)
// and a remote chat-completions endpoint. Verdicts go through an
// append-only JSONL cache keyed by the exact rendered prompt.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmoerm/taxonomy.hpp"
#include "dmoerm/world.hpp"

namespace dmoerm {

enum class Choice { kFirst, kSecond };
const char* choice_name(Choice c);

struct LabelRequest {
  std::string query_text;
  std::string capability;  // point name, printed into the prompt
  int capability_index = 0;
  bool overall_taxonomy = false;
  const ResponseRecord* first = nullptr;   // underlying side A
  const ResponseRecord* second = nullptr;  // underlying side B
  std::string first_text;
  std::string second_text;
};

// Fixed template; swapped=true presents side B as response 1.
std::string build_prompt(const LabelRequest& req, bool swapped);

// Deterministic numeric rendering used for prompts and cache keys.
std::string render_features(std::span<const double> xs);

class LabelerBackend {
 public:
  virtual ~LabelerBackend() = default;
  // Judges the pair as presented. Throws TransportError on delivery
  // failure and ParseError when the reply names neither response.
  virtual Choice judge_once(const LabelRequest& req, bool swapped,
                            std::uint64_t seed) = 0;
  // Upper bound on concurrent judge_once calls the backend tolerates.
  virtual int max_concurrency() const { return 1 << 20; }
};

// Noisy-gold judge. With probability position_bias it answers "first"
// unconditionally; otherwise it prefers the presented-first response with
// probability sigma(gap / tau), gap measured on the requested capability.
// tau <= 0 means noise-free sign judgment (ties are a fair coin).
class OracleBackend : public LabelerBackend {
 public:
  OracleBackend(const World& world, double position_bias, double tau);
  static OracleBackend calibrated(const World& world, double position_bias);
  Choice judge_once(const LabelRequest& req, bool swapped,
                    std::uint64_t seed) override;

 private:
  const World& world_;
  double position_bias_;
  double tau_;
};

struct RemoteConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/v1/chat/completions
  std::string model = "judge-1";
  std::string auth_env = "DMOERM_API_TOKEN";  // env var holding the bearer token
  double timeout_s = 10.0;
  int max_retries = 2;      // additional attempts after the first
  double rate_per_s = 2.0;  // token bucket refill rate
  int burst = 2;
  int max_in_flight = 4;
};

class RemoteBackend : public LabelerBackend {
 public:
  explicit RemoteBackend(RemoteConfig cfg);
  ~RemoteBackend() override;
  Choice judge_once(const LabelRequest& req, bool swapped,
                    std::uint64_t seed) override;
  int max_concurrency() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Thread-safe verdict cache over an append-only JSONL file. Keys are
// order-sensitive, so the swapped call has its own entry.
class VerdictCache {
 public:
  explicit VerdictCache(std::filesystem::path file);
  static std::string key_for(const LabelRequest& req, bool swapped);
  std::optional<Choice> get(const std::string& key) const;
  void put(const std::string& key, Choice v);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Choice> map_;
};

struct LabelVerdict {
  Choice call1 = Choice::kFirst;  // presented (A, B)
  Choice call2 = Choice::kFirst;  // presented (B, A)
  bool consistent = false;
  enum class Final { kA, kB, kDiscarded } final = Final::kDiscarded;
};

// Two swapped calls through the cache; derives one sub-seed per call.
LabelVerdict judge_swapped_pair(LabelerBackend& backend, const LabelRequest& req,
                                std::uint64_t seed, VerdictCache* cache);

struct CapabilityPair {
  int sample_id = 0;
  int winner = 0;  // response index within the sample
  int loser = 0;
};

struct LabelCoverage {
  long total = 0;      // (pair, point) combinations attempted
  long retained = 0;
  long discarded = 0;  // inconsistent under swap
  long unlabeled = 0;  // transport/parse failure after retries
};

struct CapabilityDataset {
  int category = -1;  // -1 when labeled under the overall taxonomy
  bool overall_taxonomy = false;
  std::vector<std::string> points;
  std::vector<std::vector<CapabilityPair>> pairs;  // retained, per point
  LabelCoverage coverage;
};

// Labels every within-sample response pair of the given category (phase-1
// and phase-3 splits; the test split is never labeled) on every capability
// point. jobs > 1 runs a worker pool bounded by the backend's
// max_concurrency; results are deterministic regardless of scheduling.
CapabilityDataset label_capability_dataset(LabelerBackend& backend,
                                           const PreferenceDataset& ds,
                                           int category,
                                           const CapabilityTaxonomy& tax,
                                           bool overall_taxonomy,
                                           std::uint64_t seed,
                                           VerdictCache* cache = nullptr,
                                           int jobs = 1);

// JSONL round-trip for labeled datasets (the CLI boundary between the
// label and train stages).
void save_capability_dataset(const CapabilityDataset& cd,
                             const std::filesystem::path& file);
CapabilityDataset load_capability_dataset(const std::filesystem::path& file);

}  // namespace dmoerm
