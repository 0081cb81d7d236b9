// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "dmoerm/errors.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/taxonomy.hpp"

namespace dmoerm {
namespace {

constexpr std::uint64_t kTagCombo = 0x636d626fULL;  // "cmbo"
constexpr std::uint64_t kTagData = 0x64617461ULL;   // "data"

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("report: cannot open " + file.string());
  out << text;
  if (!out) throw IoError("report: write failed for " + file.string());
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

ConsistencyReport consistency_accuracy(const Proxy& scorer,
                                       const PreferenceDataset& ds,
                                       Split split) {
  ConsistencyReport rep;
  rep.per_category.assign(kNumCategories,
                          std::numeric_limits<double>::quiet_NaN());
  rep.pairs_per_category.assign(kNumCategories, 0);
  std::vector<double> credit(kNumCategories, 0.0);
  double credit_total = 0.0;

  for (const PreferenceSample& s : ds.samples) {
    if (s.split != split) continue;
    if (s.label_order.size() < 2) {
      throw StateError("report: sample " + std::to_string(s.id) +
                       " has no label ranking");
    }
    std::vector<double> scores;
    scores.reserve(s.responses.size());
    for (const ResponseRecord& r : s.responses) {
      scores.push_back(scorer.score(s.prompt_x, r));
    }
    // label_order lists response indices, annotator-best first.
    for (std::size_t i = 0; i < s.label_order.size(); ++i) {
      for (std::size_t j = i + 1; j < s.label_order.size(); ++j) {
        const double sw = scores[static_cast<std::size_t>(s.label_order[i])];
        const double sl = scores[static_cast<std::size_t>(s.label_order[j])];
        const double c = sw > sl ? 1.0 : (sw == sl ? 0.5 : 0.0);
        credit[static_cast<std::size_t>(s.category)] += c;
        credit_total += c;
        ++rep.pairs_per_category[static_cast<std::size_t>(s.category)];
        ++rep.pairs_total;
      }
    }
  }
  if (rep.pairs_total == 0) {
    throw ConfigError("report: no labeled pairs in the requested split");
  }
  for (int c = 0; c < kNumCategories; ++c) {
    if (rep.pairs_per_category[c] > 0) {
      rep.per_category[c] =
          credit[c] / static_cast<double>(rep.pairs_per_category[c]);
    }
  }
  rep.overall = credit_total / static_cast<double>(rep.pairs_total);
  return rep;
}

Trainer single_rm_trainer(const ModelConfig& model, const TrainConfig& train) {
  return [model, train](const PreferenceDataset& ds,
                        std::uint64_t seed) -> Proxy {
    TrainConfig tc = train;
    tc.seed = seed;
    auto net = std::make_shared<RewardNet>(make_base_net(model, seed));
    train_single_rm(*net, ds, tc);
    return Proxy{"single",
                 [net](std::span<const double>, const ResponseRecord& r) {
                   return reward(*net, r.x);
                 }};
  };
}

DisturbanceMatrix disturbance_matrix(const World& w, const Trainer& trainer,
                                     int per_category, int k_resp,
                                     std::uint64_t seed) {
  if (per_category < 4) {
    throw ConfigError("report: need at least 4 samples per category");
  }
  DisturbanceMatrix m;
  m.combos = World::disturbance_combos();
  for (const DisturbanceCombo& c : m.combos) {
    if (c.categories.size() == 1) m.test_categories.push_back(c.categories[0]);
  }

  std::vector<int> sizes(kNumCategories, 0);
  for (int c : m.test_categories) sizes[static_cast<std::size_t>(c)] = per_category;
  PreferenceDataset full =
      w.sample_dataset(sizes, k_resp, derive_seed({seed, kTagData}));
  PreferenceDataset visible = visible_only(full);

  m.acc = Mat(static_cast<int>(m.combos.size()),
              static_cast<int>(m.test_categories.size()));
  for (std::size_t row = 0; row < m.combos.size(); ++row) {
    PreferenceDataset view;
    view.k_resp = visible.k_resp;
    for (const PreferenceSample& s : visible.samples) {
      const auto& cats = m.combos[row].categories;
      if (std::find(cats.begin(), cats.end(), s.category) != cats.end()) {
        view.samples.push_back(s);
      }
    }
    Proxy scorer = trainer(
        view, derive_seed({seed, kTagCombo, static_cast<std::uint64_t>(row)}));
    ConsistencyReport rep = consistency_accuracy(scorer, visible, Split::kTest);
    for (std::size_t col = 0; col < m.test_categories.size(); ++col) {
      m.acc.at(static_cast<int>(row), static_cast<int>(col)) =
          rep.per_category[static_cast<std::size_t>(m.test_categories[col])];
    }
  }
  return m;
}

OveroptMetrics overopt_metrics(const OptimizationTrace& trace) {
  if (trace.empty()) throw ConfigError("report: empty trace");
  OveroptMetrics m;
  m.peak_gold = -std::numeric_limits<double>::infinity();
  for (const TraceRow& r : trace) {
    if (r.gold_mean > m.peak_gold) {
      m.peak_gold = r.gold_mean;
      m.peak_kl = r.x_kl_nats;
    }
  }
  m.final_gold = trace.back().gold_mean;
  m.regression = m.peak_gold - m.final_gold;
  return m;
}

void emit_report(const std::vector<ReportTable>& tables,
                 const std::vector<NamedTrace>& traces,
                 const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("report: cannot create " + dir.string());

  for (const ReportTable& t : tables) {
    std::string text = "method,category,metric,value,seeds,std\n";
    for (const ReportRow& r : t.rows) {
      if (!std::isfinite(r.value) || !std::isfinite(r.dispersion)) {
        throw ConfigError("report: non-finite value in table " + t.name);
      }
      if (r.seeds < 1) {
        throw ConfigError("report: seeds must be >= 1 in table " + t.name);
      }
      text += r.method + "," + r.category + "," + r.metric + "," +
              fmt6(r.value) + "," + std::to_string(r.seeds) + "," +
              fmt6(r.dispersion) + "\n";
    }
    write_text(dir / (t.name + ".csv"), text);
  }

  for (const NamedTrace& nt : traces) {
    save_trace(nt.trace, dir / (nt.name + ".csv"));
    std::string proxy = "# xscale=sqrt\n";
    std::string gold = "# xscale=sqrt\n";
    for (const TraceRow& r : nt.trace) {
      proxy += fmt6(r.x_kl_nats) + " " + fmt6(r.proxy_mean) + "\n";
      gold += fmt6(r.x_kl_nats) + " " + fmt6(r.gold_mean) + "\n";
    }
    write_text(dir / (nt.name + "_proxy.dat"), proxy);
    write_text(dir / (nt.name + "_gold.dat"), gold);
  }
}

std::vector<ReportRow> load_report_table(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("report: cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != "method,category,metric,value,seeds,std") {
    throw ParseError("report: bad header in " + file.string());
  }
  std::vector<ReportRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ReportRow r;
    std::string field;
    try {
      std::getline(ss, r.method, ',');
      std::getline(ss, r.category, ',');
      std::getline(ss, r.metric, ',');
      std::getline(ss, field, ',');
      r.value = std::stod(field);
      std::getline(ss, field, ',');
      r.seeds = std::stol(field);
      if (!std::getline(ss, field)) throw std::invalid_argument("short row");
      r.dispersion = std::stod(field);
    } catch (const std::exception&) {
      throw ParseError("report: bad row at " + file.string() + ":" +
                       std::to_string(lineno));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace dmoerm
