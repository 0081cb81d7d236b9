// SPDX-License-Identifier: Apache-2.0

#include "dmoerm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "dmoerm/errors.hpp"

namespace dmoerm {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace

void Checkpoint::add(std::string name, Mat m) {
  if (find(name) != nullptr)
    throw IoError("checkpoint: duplicate entry '" + name + "'");
  entries.emplace_back(std::move(name), std::move(m));
}

const Mat* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : entries)
    if (n == name) return &m;
  return nullptr;
}

const Mat& Checkpoint::require(const std::string& name) const {
  const Mat* m = find(name);
  if (m == nullptr) throw IoError("checkpoint: missing entry '" + name + "'");
  return *m;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open for write: " + path.string());
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, m] : entries) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(m.rows));
    write_u32(os, static_cast<std::uint32_t>(m.cols));
    os.write(reinterpret_cast<const char*>(m.a.data()),
             static_cast<std::streamsize>(m.a.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint: write failed: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = read_u32(is, "version");
  if (version != kVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = read_u32(is, "entry count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw IoError("checkpoint: truncated entry name");
    const std::uint32_t rows = read_u32(is, "rows");
    const std::uint32_t cols = read_u32(is, "cols");
    Mat m(static_cast<int>(rows), static_cast<int>(cols));
    if (!is.read(reinterpret_cast<char*>(m.a.data()),
                 static_cast<std::streamsize>(m.a.size() * sizeof(double))))
      throw IoError("checkpoint: truncated data for '" + name + "'");
    ck.add(std::move(name), std::move(m));
  }
  return ck;
}

Checkpoint to_checkpoint(const RewardNet& net) {
  Checkpoint ck;
  for (std::size_t i = 0; i < net.backbone.layers.size(); ++i) {
    const std::string p = "backbone.L" + std::to_string(i);
    ck.add(p + ".W", net.backbone.layers[i].W);
    ck.add(p + ".b", net.backbone.layers[i].b);
  }
  ck.add("base_head.w", net.base_head.w);
  ck.add("base_head.b", net.base_head.b);
  for (std::size_t e = 0; e < net.adapters.size(); ++e) {
    const std::string p = "expert" + std::to_string(e);
    const LoraAdapter& ad = net.adapters[e];
    Mat alphas(1, static_cast<int>(ad.layers.size()));
    for (std::size_t i = 0; i < ad.layers.size(); ++i) {
      ck.add(p + ".L" + std::to_string(i) + ".A", ad.layers[i].A);
      ck.add(p + ".L" + std::to_string(i) + ".B", ad.layers[i].B);
      alphas.at(0, static_cast<int>(i)) = ad.layers[i].alpha;
    }
    ck.add(p + ".alpha", std::move(alphas));
    ck.add(p + ".dropout", Mat::scalar(ad.dropout));
    ck.add(p + ".head.w", net.heads[e].w);
    ck.add(p + ".head.b", net.heads[e].b);
  }
  if (net.has_experts()) {
    ck.add("agg.W0", net.agg.W0);
    ck.add("agg.b0", net.agg.b0);
    ck.add("agg.slope", net.agg.slope);
    ck.add("agg.W1", net.agg.W1);
    ck.add("agg.b1", net.agg.b1);
  }
  return ck;
}

RewardNet reward_net_from_checkpoint(const Checkpoint& ck) {
  RewardNet net;
  for (std::size_t i = 0;; ++i) {
    const std::string p = "backbone.L" + std::to_string(i);
    const Mat* W = ck.find(p + ".W");
    if (W == nullptr) break;
    net.backbone.layers.push_back(AffineLayer{*W, ck.require(p + ".b")});
  }
  if (net.backbone.layers.empty())
    throw IoError("checkpoint: no backbone layers found");
  net.base_head = ValueHead{ck.require("base_head.w"), ck.require("base_head.b")};
  for (std::size_t e = 0;; ++e) {
    const std::string p = "expert" + std::to_string(e);
    const Mat* a0 = ck.find(p + ".L0.A");
    if (a0 == nullptr) break;
    LoraAdapter ad;
    const Mat& alphas = ck.require(p + ".alpha");
    ad.dropout = ck.require(p + ".dropout").item();
    for (std::size_t i = 0; i < net.backbone.layers.size(); ++i) {
      const std::string lp = p + ".L" + std::to_string(i);
      LoraAdapter::LayerAB ab{ck.require(lp + ".A"), ck.require(lp + ".B"), 0, 0.0};
      ab.rank = ab.A.rows;
      ab.alpha = alphas.at(0, static_cast<int>(i));
      ad.layers.push_back(std::move(ab));
    }
    net.adapters.push_back(std::move(ad));
    net.heads.push_back(
        ValueHead{ck.require(p + ".head.w"), ck.require(p + ".head.b")});
  }
  if (net.has_experts()) {
    net.agg = Aggregator{ck.require("agg.W0"), ck.require("agg.b0"),
                         ck.require("agg.slope"), ck.require("agg.W1"),
                         ck.require("agg.b1")};
  }
  return net;
}

}  // namespace dmoerm
