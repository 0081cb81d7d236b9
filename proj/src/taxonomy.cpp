// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/taxonomy.hpp"

#include <algorithm>

#include "dmoerm/errors.hpp"

namespace dmoerm {

namespace {
constexpr const char* kNames[kNumCategories] = {
    "text_creation", "roleplay", "objective_qa", "subjective_qa", "chitchat"};
}

const char* category_name(TaskCategory c) { return category_name(static_cast<int>(c)); }

const char* category_name(int c) {
  if (c < 0 || c >= kNumCategories)
    throw ConfigError("category id out of range: " + std::to_string(c));
  return kNames[c];
}

TaskCategory category_from_name(const std::string& name) {
  for (int i = 0; i < kNumCategories; ++i)
    if (name == kNames[i]) return static_cast<TaskCategory>(i);
  throw ConfigError("unknown task category: '" + name + "'");
}

CapabilityTaxonomy CapabilityTaxonomy::defaults() {
  CapabilityTaxonomy t;
  t.per_category = {
      // text_creation
      {"intent conformity", "expressiveness", "readability", "content richness",
       "logic"},
      // roleplay
      {"personality and emotional investment", "conversational sense",
       "empathy ability", "manifestation of relationship traits",
       "personalized characteristic expression", "content richness"},
      // objective_qa
      {"correctness", "objectiveness", "reasoning ability", "logic",
       "depth of knowledge", "question specific"},
      // subjective_qa
      {"convincing ability", "logic", "viewpoint richness",
       "breadth of knowledge", "question specific"},
      // chitchat
      {"conversational sense", "proactivity", "emotion expression",
       "empathy ability", "content richness"},
  };
  t.overall = {"intent conformity", "logic", "conversational sense",
               "content richness", "readability"};
  return t;
}

const std::vector<std::string>& CapabilityTaxonomy::points(int category) const {
  if (category < 0 || category >= static_cast<int>(per_category.size()))
    throw ConfigError("taxonomy has no category " + std::to_string(category));
  return per_category[category];
}

int CapabilityTaxonomy::max_count() const {
  int m = 0;
  for (const auto& v : per_category) m = std::max(m, static_cast<int>(v.size()));
  return m;
}

}  // namespace dmoerm
