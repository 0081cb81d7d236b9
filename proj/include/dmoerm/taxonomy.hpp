// SPDX-License-Identifier: Apache-2.0
//
// Task categories and the capability points scored within each category.
// The "overall" point list is the category-agnostic fallback used when the
// task router is ablated away.

#pragma once

#include <string>
#include <vector>

namespace dmoerm {

enum class TaskCategory : int {
  kTextCreation = 0,
  kRoleplay = 1,
  kObjectiveQa = 2,
  kSubjectiveQa = 3,
  kChitchat = 4,
};

inline constexpr int kNumCategories = 5;

const char* category_name(TaskCategory c);
const char* category_name(int c);
TaskCategory category_from_name(const std::string& name);  // ConfigError if unknown

struct CapabilityTaxonomy {
  std::vector<std::vector<std::string>> per_category;  // indexed by TaskCategory
  std::vector<std::string> overall;

  static CapabilityTaxonomy defaults();

  const std::vector<std::string>& points(int category) const;
  int count(int category) const { return static_cast<int>(points(category).size()); }
  int max_count() const;
};

}  // namespace dmoerm
