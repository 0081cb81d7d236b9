// SPDX-License-Identifier: Apache-2.0
//
// Evaluation and artifact emission: ordering-consistency accuracy against
// annotator labels (per category and pooled), the train-set disturbance
// matrix, overoptimization summaries of traces, and deterministic CSV /
// plot-data output.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dmoerm/mat.hpp"
#include "dmoerm/model.hpp"
#include "dmoerm/optimize.hpp"
#include "dmoerm/training.hpp"
#include "dmoerm/world.hpp"

namespace dmoerm {

struct ReportRow {
  std::string method;
  std::string category;  // category name, or "overall"
  std::string metric;
  double value = 0.0;  // must be finite at emission
  long seeds = 1;      // >= 1
  double dispersion = 0.0;  // std over seeds
};

struct ReportTable {
  std::string name;  // file stem
  std::vector<ReportRow> rows;
};

struct NamedTrace {
  std::string name;  // file stem
  OptimizationTrace trace;
};

struct ConsistencyReport {
  std::vector<double> per_category;  // NaN where the split has no pairs
  std::vector<long> pairs_per_category;
  double overall = 0.0;
  long pairs_total = 0;
};

// Fraction of annotator-ranked response pairs whose score ordering agrees
// with the label; score ties earn half credit. ConfigError when the chosen
// split holds no labeled pairs.
ConsistencyReport consistency_accuracy(const Proxy& scorer,
                                       const PreferenceDataset& ds,
                                       Split split = Split::kTest);

// Builds one scorer from a visible training dataset.
using Trainer =
    std::function<Proxy(const PreferenceDataset& train, std::uint64_t seed)>;

// Trainer wrapping a fresh single reward net; the returned scorer owns it.
Trainer single_rm_trainer(const ModelConfig& model, const TrainConfig& train);

struct DisturbanceMatrix {
  std::vector<DisturbanceCombo> combos;  // row labels
  std::vector<int> test_categories;      // column labels
  Mat acc;                               // combos x categories
};

// Samples one dataset over the disturbance categories, trains the trainer
// on every train-set combination, and scores each category's test split.
DisturbanceMatrix disturbance_matrix(const World& w, const Trainer& trainer,
                                     int per_category, int k_resp,
                                     std::uint64_t seed);

struct OveroptMetrics {
  double peak_gold = 0.0;
  double peak_kl = 0.0;  // x position of the first gold peak
  double final_gold = 0.0;
  double regression = 0.0;  // peak_gold - final_gold, always >= 0
};

OveroptMetrics overopt_metrics(const OptimizationTrace& trace);

// Writes <name>.csv per table, and <name>.csv plus <name>_{proxy,gold}.dat
// plot files (two columns, square-root-x annotation) per trace. Creates the
// directory; identical inputs produce identical bytes.
void emit_report(const std::vector<ReportTable>& tables,
                 const std::vector<NamedTrace>& traces,
                 const std::filesystem::path& dir);

std::vector<ReportRow> load_report_table(const std::filesystem::path& file);

}  // namespace dmoerm
