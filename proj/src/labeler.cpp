// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/labeler.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"

namespace dmoerm {

namespace {

using nlohmann::json;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace

const char* choice_name(Choice c) {
  return c == Choice::kFirst ? "first" : "second";
}

std::string render_features(std::span<const double> xs) {
  std::string out = "[";
  char buf[32];
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", xs[i]);
    if (i > 0) out += ", ";
    out += buf;
  }
  out += "]";
  return out;
}

std::string build_prompt(const LabelRequest& req, bool swapped) {
  const std::string& r1 = swapped ? req.second_text : req.first_text;
  const std::string& r2 = swapped ? req.first_text : req.second_text;
  std::string p;
  p += "Given a query and two responses, determine which of response 1 and "
       "response 2 is better in terms of [";
  p += req.capability;
  p += "]. Reply with the digit 1 or 2 only.\n";
  p += "[Query]: " + req.query_text + "\n";
  p += "[Response 1]: " + r1 + "\n";
  p += "[Response 2]: " + r2;
  return p;
}

OracleBackend::OracleBackend(const World& world, double position_bias, double tau)
    : world_(world), position_bias_(position_bias), tau_(tau) {
  if (position_bias < 0.0 || position_bias > 1.0)
    throw ConfigError("oracle: position_bias must be in [0,1], got " +
                      std::to_string(position_bias));
}

OracleBackend OracleBackend::calibrated(const World& world, double position_bias) {
  return OracleBackend(world, position_bias, world.tau_capability());
}

Choice OracleBackend::judge_once(const LabelRequest& req, bool swapped,
                                 std::uint64_t seed) {
  if (req.first == nullptr || req.second == nullptr)
    throw StateError("oracle: request carries no response records");
  const ResponseRecord* p1 = swapped ? req.second : req.first;
  const ResponseRecord* p2 = swapped ? req.first : req.second;
  if (p1->latents.empty() || p2->latents.empty())
    throw StateError("oracle: records carry no latents (visible-only data)");
  Rng rng(seed);
  if (rng.uniform() < position_bias_) return Choice::kFirst;
  const double v1 = world_.capability_value(p1->category, p1->latents,
                                            req.capability_index, req.overall_taxonomy);
  const double v2 = world_.capability_value(p2->category, p2->latents,
                                            req.capability_index, req.overall_taxonomy);
  double p;
  if (tau_ > 0.0) {
    p = sigmoid((v1 - v2) / tau_);
  } else {
    p = v1 > v2 ? 1.0 : (v1 < v2 ? 0.0 : 0.5);
  }
  return rng.uniform() < p ? Choice::kFirst : Choice::kSecond;
}

// ---------------------------------------------------------------------------
// Remote backend

struct RemoteBackend::Impl {
  RemoteConfig cfg;
  std::string base;
  std::string path;
  std::string token;

  std::mutex bucket_mu;
  double tokens;
  std::chrono::steady_clock::time_point last_refill;

  explicit Impl(RemoteConfig c) : cfg(std::move(c)) {
    if (cfg.endpoint.rfind("https://", 0) == 0)
      throw ConfigError("remote labeler: https endpoints are not supported; "
                        "use a plain http endpoint");
    if (cfg.endpoint.rfind("http://", 0) != 0)
      throw ConfigError("remote labeler: endpoint must start with http://, got '" +
                        cfg.endpoint + "'");
    const std::size_t authority = 7;  // past "http://"
    const std::size_t slash = cfg.endpoint.find('/', authority);
    base = slash == std::string::npos ? cfg.endpoint : cfg.endpoint.substr(0, slash);
    path = slash == std::string::npos ? "/" : cfg.endpoint.substr(slash);
    if (const char* t = std::getenv(cfg.auth_env.c_str()); t != nullptr && *t != '\0')
      token = t;
    tokens = static_cast<double>(cfg.burst);
    last_refill = std::chrono::steady_clock::now();
  }

  // Token bucket: blocks until a request slot is available.
  void acquire() {
    for (;;) {
      double wait_s = 0.0;
      {
        std::lock_guard<std::mutex> lock(bucket_mu);
        const auto now = std::chrono::steady_clock::now();
        const double elapsed =
            std::chrono::duration<double>(now - last_refill).count();
        tokens = std::min(static_cast<double>(cfg.burst),
                          tokens + elapsed * cfg.rate_per_s);
        last_refill = now;
        if (tokens >= 1.0) {
          tokens -= 1.0;
          return;
        }
        wait_s = (1.0 - tokens) / cfg.rate_per_s;
      }
      std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    }
  }
};

RemoteBackend::RemoteBackend(RemoteConfig cfg)
    : impl_(std::make_unique<Impl>(std::move(cfg))) {}

RemoteBackend::~RemoteBackend() = default;

int RemoteBackend::max_concurrency() const { return impl_->cfg.max_in_flight; }

Choice RemoteBackend::judge_once(const LabelRequest& req, bool swapped,
                                 std::uint64_t seed) {
  json body;
  body["model"] = impl_->cfg.model;
  body["messages"] = json::array(
      {json{{"role", "user"}, {"content", build_prompt(req, swapped)}}});
  body["temperature"] = 0;
  body["seed"] = seed;
  const std::string payload = body.dump();

  std::string failure;
  bool parse_failure = false;
  const int attempts = 1 + std::max(0, impl_->cfg.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    impl_->acquire();
    httplib::Client client(impl_->base);
    client.set_connection_timeout(std::chrono::duration<double>(impl_->cfg.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(impl_->cfg.timeout_s));
    httplib::Headers headers;
    if (!impl_->token.empty())
      headers.emplace("Authorization", "Bearer " + impl_->token);
    auto res = client.Post(impl_->path, headers, payload, "application/json");
    if (!res) {
      failure = "transport: " + httplib::to_string(res.error());
      parse_failure = false;
      continue;
    }
    if (res->status != 200) {
      failure = "transport: HTTP " + std::to_string(res->status);
      parse_failure = false;
      continue;
    }
    std::string content;
    try {
      json reply = json::parse(res->body);
      if (reply.contains("choices") && !reply["choices"].empty()) {
        const json& c0 = reply["choices"][0];
        if (c0.contains("message") && c0["message"].contains("content"))
          content = c0["message"]["content"].get<std::string>();
        else if (c0.contains("text"))
          content = c0["text"].get<std::string>();
      } else if (reply.contains("content")) {
        content = reply["content"].get<std::string>();
      } else if (reply.contains("text")) {
        content = reply["text"].get<std::string>();
      }
    } catch (const json::exception& e) {
      failure = std::string("parse: reply is not valid JSON: ") + e.what();
      parse_failure = true;
      continue;
    }
    for (char ch : content) {
      if (ch == '1') return Choice::kFirst;
      if (ch == '2') return Choice::kSecond;
    }
    failure = "parse: reply names neither response: '" +
              content.substr(0, 64) + "'";
    parse_failure = true;
  }
  if (parse_failure) throw ParseError("remote labeler: " + failure);
  throw TransportError("remote labeler: " + failure);
}

// ---------------------------------------------------------------------------
// Cache

VerdictCache::VerdictCache(std::filesystem::path file) : path_(std::move(file)) {
  std::ifstream in(path_);
  if (!in) return;  // fresh cache
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("cache " + path_.string() + " line " +
                       std::to_string(line_no) + ": " + e.what());
    }
    const std::string verdict = row.at("verdict").get<std::string>();
    if (verdict != "first" && verdict != "second")
      throw ParseError("cache " + path_.string() + " line " +
                       std::to_string(line_no) + ": bad verdict '" + verdict + "'");
    map_.emplace(row.at("key").get<std::string>(),
                 verdict == "first" ? Choice::kFirst : Choice::kSecond);
  }
}

std::string VerdictCache::key_for(const LabelRequest& req, bool swapped) {
  return hex64(fnv1a(build_prompt(req, swapped)));
}

std::optional<Choice> VerdictCache::get(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

void VerdictCache::put(const std::string& key, Choice v) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!map_.emplace(key, v).second) return;  // already known
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cache: cannot append to " + path_.string());
  json row;
  row["key"] = key;
  row["verdict"] = choice_name(v);
  row["ts"] = static_cast<long long>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch()).count());
  out << row.dump() << "\n";
}

std::size_t VerdictCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return map_.size();
}

// ---------------------------------------------------------------------------
// Swap-filtered labeling

LabelVerdict judge_swapped_pair(LabelerBackend& backend, const LabelRequest& req,
                                std::uint64_t seed, VerdictCache* cache) {
  auto one = [&](bool swapped, std::uint64_t s) {
    std::string key;
    if (cache != nullptr) {
      key = VerdictCache::key_for(req, swapped);
      if (auto hit = cache->get(key)) return *hit;
    }
    Choice c = backend.judge_once(req, swapped, s);
    if (cache != nullptr) cache->put(key, c);
    return c;
  };
  LabelVerdict v;
  v.call1 = one(false, derive_seed({seed, 1}));
  v.call2 = one(true, derive_seed({seed, 2}));
  const bool names_a_1 = v.call1 == Choice::kFirst;
  const bool names_a_2 = v.call2 == Choice::kSecond;
  v.consistent = names_a_1 == names_a_2;
  v.final = v.consistent
                ? (names_a_1 ? LabelVerdict::Final::kA : LabelVerdict::Final::kB)
                : LabelVerdict::Final::kDiscarded;
  return v;
}

namespace {

struct WorkItem {
  std::size_t sample_idx;
  int i, j;
  int point;
  std::uint64_t seed;
};

enum class ItemStatus { kRetained, kDiscarded, kUnlabeled };

struct ItemResult {
  ItemStatus status = ItemStatus::kUnlabeled;
  int winner = 0, loser = 0;
};

}  // namespace

CapabilityDataset label_capability_dataset(LabelerBackend& backend,
                                           const PreferenceDataset& ds,
                                           int category,
                                           const CapabilityTaxonomy& tax,
                                           bool overall_taxonomy,
                                           std::uint64_t seed,
                                           VerdictCache* cache, int jobs) {
  if (!overall_taxonomy && (category < 0 || category >= kNumCategories))
    throw ConfigError("label_capability_dataset: category " +
                      std::to_string(category) + " out of range");
  CapabilityDataset cd;
  cd.category = overall_taxonomy ? -1 : category;
  cd.overall_taxonomy = overall_taxonomy;
  cd.points = overall_taxonomy ? tax.overall : tax.points(category);
  cd.pairs.resize(cd.points.size());

  // Pre-render prompt fragments once per sample.
  std::vector<std::size_t> use;
  for (std::size_t s = 0; s < ds.samples.size(); ++s) {
    const PreferenceSample& smp = ds.samples[s];
    if (smp.split == Split::kTest) continue;
    if (!overall_taxonomy && smp.category != category) continue;
    use.push_back(s);
  }
  std::vector<std::string> query_text(ds.samples.size());
  std::vector<std::vector<std::string>> resp_text(ds.samples.size());
  for (std::size_t s : use) {
    const PreferenceSample& smp = ds.samples[s];
    query_text[s] = render_features(smp.prompt_x);
    for (const ResponseRecord& r : smp.responses)
      resp_text[s].push_back(render_features(r.x));
  }

  std::vector<WorkItem> items;
  for (std::size_t s : use) {
    const PreferenceSample& smp = ds.samples[s];
    const int k = static_cast<int>(smp.responses.size());
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j)
        for (int p = 0; p < static_cast<int>(cd.points.size()); ++p)
          items.push_back(WorkItem{
              s, i, j, p,
              derive_seed({seed, static_cast<std::uint64_t>(smp.id),
                           static_cast<std::uint64_t>(i),
                           static_cast<std::uint64_t>(j),
                           static_cast<std::uint64_t>(p)})});
  }

  std::vector<ItemResult> results(items.size());
  auto run_item = [&](std::size_t idx) {
    const WorkItem& it = items[idx];
    const PreferenceSample& smp = ds.samples[it.sample_idx];
    LabelRequest req;
    req.query_text = query_text[it.sample_idx];
    req.capability = cd.points[it.point];
    req.capability_index = it.point;
    req.overall_taxonomy = overall_taxonomy;
    req.first = &smp.responses[it.i];
    req.second = &smp.responses[it.j];
    req.first_text = resp_text[it.sample_idx][it.i];
    req.second_text = resp_text[it.sample_idx][it.j];
    ItemResult& out = results[idx];
    try {
      LabelVerdict v = judge_swapped_pair(backend, req, it.seed, cache);
      if (v.final == LabelVerdict::Final::kDiscarded) {
        out.status = ItemStatus::kDiscarded;
      } else {
        out.status = ItemStatus::kRetained;
        out.winner = v.final == LabelVerdict::Final::kA ? it.i : it.j;
        out.loser = v.final == LabelVerdict::Final::kA ? it.j : it.i;
      }
    } catch (const TransportError&) {
      out.status = ItemStatus::kUnlabeled;
    } catch (const ParseError&) {
      out.status = ItemStatus::kUnlabeled;
    }
  };

  const int workers =
      std::max(1, std::min(jobs, backend.max_concurrency()));
  if (workers == 1 || items.size() < 2) {
    for (std::size_t idx = 0; idx < items.size(); ++idx) run_item(idx);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_err;
    std::mutex err_mu;
    auto worker = [&] {
      for (;;) {
        const std::size_t idx = next.fetch_add(1);
        if (idx >= items.size()) return;
        try {
          run_item(idx);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_err) first_err = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_err) std::rethrow_exception(first_err);
  }

  for (std::size_t idx = 0; idx < items.size(); ++idx) {
    const WorkItem& it = items[idx];
    const ItemResult& r = results[idx];
    ++cd.coverage.total;
    switch (r.status) {
      case ItemStatus::kRetained:
        ++cd.coverage.retained;
        cd.pairs[it.point].push_back(CapabilityPair{
            ds.samples[it.sample_idx].id, r.winner, r.loser});
        break;
      case ItemStatus::kDiscarded:
        ++cd.coverage.discarded;
        break;
      case ItemStatus::kUnlabeled:
        ++cd.coverage.unlabeled;
        break;
    }
  }
  return cd;
}

void save_capability_dataset(const CapabilityDataset& cd,
                             const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("save_capability_dataset: cannot open " + file.string());
  json head;
  head["category"] = cd.category;
  head["overall_taxonomy"] = cd.overall_taxonomy;
  head["points"] = cd.points;
  json cov;
  cov["total"] = cd.coverage.total;
  cov["retained"] = cd.coverage.retained;
  cov["discarded"] = cd.coverage.discarded;
  cov["unlabeled"] = cd.coverage.unlabeled;
  head["coverage"] = cov;
  out << head.dump() << "\n";
  for (std::size_t p = 0; p < cd.pairs.size(); ++p)
    for (const CapabilityPair& pr : cd.pairs[p]) {
      json row;
      row["point"] = p;
      row["sample"] = pr.sample_id;
      row["winner"] = pr.winner;
      row["loser"] = pr.loser;
      out << row.dump() << "\n";
    }
  if (!out) throw IoError("save_capability_dataset: write failed: " + file.string());
}

CapabilityDataset load_capability_dataset(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("load_capability_dataset: cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("load_capability_dataset: empty file " + file.string());
  CapabilityDataset cd;
  try {
    json head = json::parse(line);
    cd.category = head.at("category").get<int>();
    cd.overall_taxonomy = head.at("overall_taxonomy").get<bool>();
    cd.points = head.at("points").get<std::vector<std::string>>();
    const json& cov = head.at("coverage");
    cd.coverage.total = cov.at("total").get<long>();
    cd.coverage.retained = cov.at("retained").get<long>();
    cd.coverage.discarded = cov.at("discarded").get<long>();
    cd.coverage.unlabeled = cov.at("unlabeled").get<long>();
  } catch (const json::exception& e) {
    throw ParseError("load_capability_dataset: bad header: " + std::string(e.what()));
  }
  cd.pairs.resize(cd.points.size());
  int line_no = 1;
  long rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json row = json::parse(line);
      const int p = row.at("point").get<int>();
      if (p < 0 || p >= static_cast<int>(cd.points.size()))
        throw ParseError("point index out of range");
      cd.pairs[p].push_back(CapabilityPair{row.at("sample").get<int>(),
                                           row.at("winner").get<int>(),
                                           row.at("loser").get<int>()});
      ++rows;
    } catch (const json::exception& e) {
      throw ParseError("load_capability_dataset line " + std::to_string(line_no) +
                       ": " + e.what());
    }
  }
  if (rows != cd.coverage.retained)
    throw ParseError("load_capability_dataset: header claims " +
                     std::to_string(cd.coverage.retained) + " retained rows, file has " +
                     std::to_string(rows));
  return cd;
}

}  // namespace dmoerm
