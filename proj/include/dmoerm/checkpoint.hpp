// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container: ordered, named double matrices. Doubles are
// written raw (little-endian hosts), so save/load round-trips are bit-exact.

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dmoerm/mat.hpp"
#include "dmoerm/model.hpp"

namespace dmoerm {

struct Checkpoint {
  std::vector<std::pair<std::string, Mat>> entries;

  void add(std::string name, Mat m);
  const Mat* find(const std::string& name) const;
  const Mat& require(const std::string& name) const;  // IoError if missing

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

Checkpoint to_checkpoint(const RewardNet& net);
RewardNet reward_net_from_checkpoint(const Checkpoint& ck);

}  // namespace dmoerm
