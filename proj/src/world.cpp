// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"

namespace dmoerm {

namespace {

using nlohmann::json;

constexpr std::uint64_t kTagWorld = 0x776f726c64ULL;
constexpr std::uint64_t kTagData = 0x64617461ULL;
constexpr std::uint64_t kTagLabel = 0x6c61626cULL;
constexpr std::uint64_t kTagCalib = 0x63616c69ULL;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Expected agreement of two independent annotators on one pair whose
// per-annotator preference probability is s: both pick the same side with
// probability s^2 + (1-s)^2.
double expected_agreement(const std::vector<double>& gaps, double tau) {
  double acc = 0.0;
  for (double g : gaps) {
    const double s = sigmoid(g / tau);
    acc += s * s + (1.0 - s) * (1.0 - s);
  }
  return acc / static_cast<double>(gaps.size());
}

// Agreement is strictly decreasing in tau (toward 1/2), so bisection is
// exact. Gaps must be positive.
double calibrate_tau(const std::vector<double>& gaps, double target) {
  if (gaps.empty()) throw ConfigError("tau calibration: no gaps collected");
  if (target <= 0.5 || target >= 1.0)
    throw ConfigError("tau calibration: target agreement must be in (0.5, 1), got " +
                      std::to_string(target));
  double lo = 1e-9, hi = 1e6;
  if (expected_agreement(gaps, hi) > target)
    throw ConfigError("tau calibration: target agreement unreachable (too low)");
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (expected_agreement(gaps, mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

void WorldConfig::validate() const {
  std::string bad;
  auto flag = [&bad](const char* f) {
    if (!bad.empty()) bad += ", ";
    bad += f;
  };
  if (prompt_dim < 1) flag("prompt_dim");
  if (feature_dim < 1) flag("feature_dim");
  if (feature_noise < 0.0) flag("feature_noise");
  if (prompt_noise < 0.0) flag("prompt_noise");
  if (gold_hidden < 1) flag("gold_hidden");
  if (interaction_strength < 0.0) flag("interaction_strength");
  if (agreement_overall <= 0.5 || agreement_overall >= 1.0) flag("agreement_overall");
  if (agreement_capability <= 0.5 || agreement_capability >= 1.0)
    flag("agreement_capability");
  if (tau_overall < 0.0) flag("tau_overall");
  if (tau_capability < 0.0) flag("tau_capability");
  if (calib_samples < 2) flag("calib_samples");
  if (calib_k < 2) flag("calib_k");
  if (!bad.empty()) throw ConfigError("invalid world config field(s): " + bad);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kPhase1: return "phase1";
    case Split::kPhase3: return "phase3";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Split split_from_name(const std::string& name) {
  if (name == "phase1") return Split::kPhase1;
  if (name == "phase3") return Split::kPhase3;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split name: '" + name + "'");
}

int PreferenceDataset::count(Split s, std::optional<int> category) const {
  int n = 0;
  for (const auto& sample : samples)
    if (sample.split == s && (!category || sample.category == *category)) ++n;
  return n;
}

PreferenceDataset visible_only(const PreferenceDataset& ds) {
  PreferenceDataset out = ds;
  for (PreferenceSample& s : out.samples) {
    s.gold_order.clear();
    for (ResponseRecord& r : s.responses) r.latents.clear();
  }
  return out;
}

World World::build(std::uint64_t seed, const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.seed_ = seed;
  w.cfg_ = cfg;
  w.taxonomy_ = CapabilityTaxonomy::defaults();
  const int overall_n = static_cast<int>(w.taxonomy_.overall.size());

  for (int cat = 0; cat < kNumCategories; ++cat) {
    Rng rng(derive_seed({seed, kTagWorld, static_cast<std::uint64_t>(cat)}));
    const int n = w.taxonomy_.count(cat);
    CategoryParams p;
    p.feature_map = Mat(cfg.feature_dim, n);
    fill_normal(p.feature_map, rng, 1.0);
    p.feature_offset = Mat(cfg.feature_dim, 1);
    fill_normal(p.feature_offset, rng, 1.0);
    p.prompt_center = Mat(cfg.prompt_dim, 1);
    fill_normal(p.prompt_center, rng, 1.0);

    p.gold_u = Mat(cfg.gold_hidden, n);
    for (double& v : p.gold_u.a) v = std::fabs(rng.normal());
    p.gold_d = Mat(cfg.gold_hidden, 1);
    for (double& v : p.gold_d.a) v = rng.normal() - 2.0;
    p.gold_v = Mat(cfg.gold_hidden, 1);
    for (double& v : p.gold_v.a)
      v = std::fabs(rng.normal()) / static_cast<double>(cfg.gold_hidden);
    p.gold_q = Mat(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) p.gold_q.at(i, j) = std::fabs(rng.normal());

    p.overall_proj = Mat(overall_n, n);
    for (int i = 0; i < overall_n; ++i) {
      double row_sum = 0.0;
      for (int j = 0; j < n; ++j) {
        p.overall_proj.at(i, j) = std::fabs(rng.normal()) + 0.1;
        row_sum += p.overall_proj.at(i, j);
      }
      for (int j = 0; j < n; ++j) p.overall_proj.at(i, j) /= row_sum;
    }

    std::vector<double> corner(n, 0.0);
    p.g_lo = w.gold_raw(p, corner);
    std::fill(corner.begin(), corner.end(), 1.0);
    p.g_hi = w.gold_raw(p, corner);
    w.cats_.push_back(std::move(p));
  }

  w.calibrate(seed);
  return w;
}

double World::gold_raw(const CategoryParams& p, std::span<const double> c) const {
  const int n = p.gold_u.cols;
  double acc = 0.0;
  for (int h = 0; h < cfg_.gold_hidden; ++h) {
    double z = p.gold_d.at(h, 0);
    for (int j = 0; j < n; ++j) z += p.gold_u.at(h, j) * c[j];
    acc += p.gold_v.at(h, 0) * softplus(z);
  }
  double inter = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) inter += p.gold_q.at(i, j) * c[i] * c[j];
  return acc + cfg_.interaction_strength / static_cast<double>(n) * inter;
}

double World::gold_from_latents(int category, std::span<const double> c) const {
  const CategoryParams& p = cats_.at(category);
  if (static_cast<int>(c.size()) != p.gold_u.cols)
    throw ShapeError("gold_from_latents: latents (" + std::to_string(c.size()) +
                     "x1) vs category expecting (" +
                     std::to_string(p.gold_u.cols) + "x1)");
  return (gold_raw(p, c) - p.g_lo) / (p.g_hi - p.g_lo);
}

double World::gold_reward(const ResponseRecord& r) const {
  if (r.latents.empty())
    throw StateError("gold_reward: record carries no latents (visible-only data)");
  return gold_from_latents(r.category, r.latents);
}

double World::capability_value(int category, std::span<const double> c, int j,
                               bool overall_taxonomy) const {
  const CategoryParams& p = cats_.at(category);
  if (static_cast<int>(c.size()) != p.gold_u.cols)
    throw ShapeError("capability_value: latents (" + std::to_string(c.size()) +
                     "x1) vs category expecting (" +
                     std::to_string(p.gold_u.cols) + "x1)");
  if (!overall_taxonomy) {
    if (j < 0 || j >= p.gold_u.cols)
      throw ConfigError("capability_value: point " + std::to_string(j) +
                        " out of range for " + category_name(category));
    return c[j];
  }
  if (j < 0 || j >= p.overall_proj.rows)
    throw ConfigError("capability_value: overall point " + std::to_string(j) +
                      " out of range");
  double acc = 0.0;
  for (int k = 0; k < p.overall_proj.cols; ++k)
    acc += p.overall_proj.at(j, k) * c[k];
  return acc;
}

ResponseRecord World::make_response(int category, std::vector<double> latents,
                                    std::uint64_t noise_seed) const {
  const CategoryParams& p = cats_.at(category);
  if (static_cast<int>(latents.size()) != p.feature_map.cols)
    throw ShapeError("make_response: latents (" + std::to_string(latents.size()) +
                     "x1) vs category expecting (" +
                     std::to_string(p.feature_map.cols) + "x1)");
  Rng rng(noise_seed);
  ResponseRecord r;
  r.category = category;
  r.x.resize(cfg_.feature_dim);
  for (int i = 0; i < cfg_.feature_dim; ++i) {
    double v = p.feature_offset.at(i, 0);
    for (int j = 0; j < p.feature_map.cols; ++j)
      v += p.feature_map.at(i, j) * latents[j];
    r.x[i] = v + cfg_.feature_noise * rng.normal();
  }
  r.latents = std::move(latents);
  return r;
}

std::vector<double> World::make_prompt(int category, std::uint64_t seed) const {
  const CategoryParams& p = cats_.at(category);
  Rng rng(seed);
  std::vector<double> x(cfg_.prompt_dim);
  for (int i = 0; i < cfg_.prompt_dim; ++i)
    x[i] = p.prompt_center.at(i, 0) + cfg_.prompt_noise * rng.normal();
  return x;
}

std::vector<double> World::draw_latents(int category, Rng& rng) const {
  std::vector<double> c(taxonomy_.count(category));
  for (double& v : c) v = rng.beta22();
  return c;
}

PreferenceDataset World::sample_dataset(const std::vector<int>& sizes, int k_resp,
                                        std::uint64_t seed,
                                        double test_fraction) const {
  if (static_cast<int>(sizes.size()) != kNumCategories)
    throw ConfigError("sample_dataset: sizes has " + std::to_string(sizes.size()) +
                      " entries, want " + std::to_string(kNumCategories));
  if (k_resp < 2) throw ConfigError("sample_dataset: k_resp must be >= 2");
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw ConfigError("sample_dataset: test_fraction must be in [0, 1)");

  PreferenceDataset ds;
  ds.k_resp = k_resp;
  int next_id = 0;
  for (int cat = 0; cat < kNumCategories; ++cat) {
    const int n = sizes[cat];
    if (n < 0) throw ConfigError("sample_dataset: negative size for category " +
                                 std::to_string(cat));
    const int n_test = static_cast<int>(std::llround(n * test_fraction));
    const int pool = n - n_test;
    const int n_p1 = static_cast<int>(std::llround(pool * 0.6));
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed({seed, kTagData, static_cast<std::uint64_t>(cat),
                           static_cast<std::uint64_t>(i)}));
      PreferenceSample s;
      s.id = next_id++;
      s.category = cat;
      s.split = i < n_p1 ? Split::kPhase1
                         : (i < pool ? Split::kPhase3 : Split::kTest);
      s.prompt_x = make_prompt(cat, rng.next_u64());

      std::vector<double> golds;
      for (int r = 0; r < k_resp; ++r) {
        for (int attempt = 0;; ++attempt) {
          if (attempt >= 100)
            throw StateError("sample_dataset: could not separate gold scores");
          auto latents = draw_latents(cat, rng);
          double g = gold_from_latents(cat, latents);
          bool clash = false;
          for (double prev : golds)
            if (std::fabs(prev - g) < 1e-6) clash = true;
          if (clash) continue;
          s.responses.push_back(make_response(cat, std::move(latents), rng.next_u64()));
          golds.push_back(g);
          break;
        }
      }

      s.gold_order.resize(k_resp);
      std::iota(s.gold_order.begin(), s.gold_order.end(), 0);
      std::stable_sort(s.gold_order.begin(), s.gold_order.end(),
                       [&golds](int a, int b) { return golds[a] > golds[b]; });
      s.label_order = annotate_ranking(
          s.responses, derive_seed({seed, kTagLabel, static_cast<std::uint64_t>(cat),
                                    static_cast<std::uint64_t>(i), 0}));
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

bool World::annotate_overall(const ResponseRecord& a, const ResponseRecord& b,
                             std::uint64_t annotator_seed) const {
  const double p = sigmoid((gold_reward(a) - gold_reward(b)) / tau_overall_);
  Rng rng(annotator_seed);
  return rng.uniform() < p;
}

bool World::annotate_capability(int j, const ResponseRecord& a,
                                const ResponseRecord& b,
                                std::uint64_t annotator_seed,
                                bool overall_taxonomy) const {
  if (a.latents.empty() || b.latents.empty())
    throw StateError("annotate_capability: record carries no latents");
  if (a.category != b.category)
    throw ConfigError("annotate_capability: cross-category pair");
  const double va = capability_value(a.category, a.latents, j, overall_taxonomy);
  const double vb = capability_value(b.category, b.latents, j, overall_taxonomy);
  const double p = sigmoid((va - vb) / tau_capability_);
  Rng rng(annotator_seed);
  return rng.uniform() < p;
}

std::vector<int> World::annotate_ranking(const std::vector<ResponseRecord>& rs,
                                         std::uint64_t annotator_seed) const {
  Rng rng(annotator_seed);
  std::vector<double> util(rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i)
    util[i] = gold_reward(rs[i]) + tau_overall_ * rng.gumbel();
  std::vector<int> order(rs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&util](int a, int b) { return util[a] > util[b]; });
  return order;
}

void World::calibrate(std::uint64_t seed) {
  if (cfg_.tau_overall > 0.0 && cfg_.tau_capability > 0.0) {
    tau_overall_ = cfg_.tau_overall;
    tau_capability_ = cfg_.tau_capability;
    return;
  }
  std::vector<double> overall_gaps;
  std::vector<double> cap_gaps;
  for (int cat = 0; cat < kNumCategories; ++cat) {
    const int n_cap = taxonomy_.count(cat);
    for (int s = 0; s < cfg_.calib_samples; ++s) {
      Rng rng(derive_seed({seed, kTagCalib, static_cast<std::uint64_t>(cat),
                           static_cast<std::uint64_t>(s)}));
      std::vector<std::vector<double>> cs;
      std::vector<double> golds;
      for (int r = 0; r < cfg_.calib_k; ++r) {
        cs.push_back(draw_latents(cat, rng));
        golds.push_back(gold_from_latents(cat, cs.back()));
      }
      for (int i = 0; i < cfg_.calib_k; ++i)
        for (int j = i + 1; j < cfg_.calib_k; ++j) {
          overall_gaps.push_back(std::fabs(golds[i] - golds[j]));
          for (int d = 0; d < n_cap; ++d)
            cap_gaps.push_back(std::fabs(cs[i][d] - cs[j][d]));
        }
    }
  }
  tau_overall_ = cfg_.tau_overall > 0.0
                     ? cfg_.tau_overall
                     : calibrate_tau(overall_gaps, cfg_.agreement_overall);
  tau_capability_ = cfg_.tau_capability > 0.0
                        ? cfg_.tau_capability
                        : calibrate_tau(cap_gaps, cfg_.agreement_capability);
}

std::uint64_t World::checksum() const {
  std::vector<const Mat*> mats;
  for (const CategoryParams& p : cats_) {
    mats.push_back(&p.feature_map);
    mats.push_back(&p.feature_offset);
    mats.push_back(&p.prompt_center);
    mats.push_back(&p.gold_u);
    mats.push_back(&p.gold_d);
    mats.push_back(&p.gold_v);
    mats.push_back(&p.gold_q);
    mats.push_back(&p.overall_proj);
  }
  std::uint64_t h = bytes_checksum(std::span<const Mat* const>(mats.data(), mats.size()));
  h = mix64(h ^ seed_);
  std::uint64_t t;
  std::memcpy(&t, &tau_overall_, sizeof(t));
  h = mix64(h ^ t);
  std::memcpy(&t, &tau_capability_, sizeof(t));
  return mix64(h ^ t);
}

std::vector<DisturbanceCombo> World::disturbance_combos() {
  const int a = static_cast<int>(TaskCategory::kRoleplay);
  const int b = static_cast<int>(TaskCategory::kChitchat);
  const int c = static_cast<int>(TaskCategory::kTextCreation);
  auto name = [](std::vector<int> ids) {
    std::string s;
    for (int id : ids) {
      if (!s.empty()) s += "+";
      s += category_name(id);
    }
    return s;
  };
  std::vector<DisturbanceCombo> out;
  for (std::vector<int> ids : std::vector<std::vector<int>>{
           {a}, {b}, {c}, {a, b}, {a, c}, {b, c}, {a, b, c}})
    out.push_back(DisturbanceCombo{name(ids), ids});
  return out;
}

namespace {

json response_to_json(const ResponseRecord& r) { return json(r.x); }

}  // namespace

void save_dataset(const PreferenceDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream vis(dir / "dataset.jsonl", std::ios::trunc);
  std::ofstream gold(dir / "gold.jsonl", std::ios::trunc);
  if (!vis || !gold)
    throw IoError("save_dataset: cannot open output files in " + dir.string());
  for (const PreferenceSample& s : ds.samples) {
    json row;
    row["id"] = s.id;
    row["category"] = category_name(s.category);
    row["split"] = split_name(s.split);
    row["prompt"] = s.prompt_x;
    json rs = json::array();
    for (const ResponseRecord& r : s.responses) rs.push_back(response_to_json(r));
    row["responses"] = rs;
    row["label_order"] = s.label_order;
    vis << row.dump() << "\n";

    json grow;
    grow["id"] = s.id;
    json lats = json::array();
    for (const ResponseRecord& r : s.responses) lats.push_back(json(r.latents));
    grow["latents"] = lats;
    grow["gold_order"] = s.gold_order;
    gold << grow.dump() << "\n";
  }
  if (!vis || !gold) throw IoError("save_dataset: write failed in " + dir.string());
}

PreferenceDataset load_visible_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.jsonl");
  if (!in) throw IoError("load_visible_dataset: cannot open " +
                         (dir / "dataset.jsonl").string());
  PreferenceDataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("dataset.jsonl line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    PreferenceSample s;
    s.id = row.at("id").get<int>();
    s.category = static_cast<int>(category_from_name(row.at("category").get<std::string>()));
    s.split = split_from_name(row.at("split").get<std::string>());
    s.prompt_x = row.at("prompt").get<std::vector<double>>();
    for (const json& rx : row.at("responses")) {
      ResponseRecord r;
      r.x = rx.get<std::vector<double>>();
      r.category = s.category;
      s.responses.push_back(std::move(r));
    }
    s.label_order = row.at("label_order").get<std::vector<int>>();
    if (ds.k_resp == 0)
      ds.k_resp = static_cast<int>(s.responses.size());
    else if (ds.k_resp != static_cast<int>(s.responses.size()))
      throw ParseError("dataset.jsonl line " + std::to_string(line_no) +
                       ": inconsistent response count");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void load_gold_side(const std::filesystem::path& dir, PreferenceDataset& ds) {
  std::ifstream in(dir / "gold.jsonl");
  if (!in) throw IoError("load_gold_side: cannot open " + (dir / "gold.jsonl").string());
  std::unordered_map<int, PreferenceSample*> by_id;
  for (PreferenceSample& s : ds.samples) by_id[s.id] = &s;
  std::string line;
  int line_no = 0;
  int matched = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("gold.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    auto it = by_id.find(row.at("id").get<int>());
    if (it == by_id.end())
      throw ParseError("gold.jsonl line " + std::to_string(line_no) +
                       ": id not present in visible dataset");
    PreferenceSample& s = *it->second;
    const json& lats = row.at("latents");
    if (lats.size() != s.responses.size())
      throw ParseError("gold.jsonl line " + std::to_string(line_no) +
                       ": latent count mismatch");
    for (std::size_t i = 0; i < s.responses.size(); ++i)
      s.responses[i].latents = lats[i].get<std::vector<double>>();
    s.gold_order = row.at("gold_order").get<std::vector<int>>();
    ++matched;
  }
  if (matched != static_cast<int>(ds.samples.size()))
    throw ParseError("gold.jsonl covers " + std::to_string(matched) + " of " +
                     std::to_string(ds.samples.size()) + " samples");
}

}  // namespace dmoerm
