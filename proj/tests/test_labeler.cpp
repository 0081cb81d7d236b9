// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dmoerm/errors.hpp"
#include "dmoerm/labeler.hpp"
#include "dmoerm/rng.hpp"
#include "dmoerm/world.hpp"

using namespace dmoerm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kRoleplay = static_cast<int>(TaskCategory::kRoleplay);
constexpr int kObjectiveQa = static_cast<int>(TaskCategory::kObjectiveQa);
constexpr int kSubjectiveQa = static_cast<int>(TaskCategory::kSubjectiveQa);
constexpr int kChitchat = static_cast<int>(TaskCategory::kChitchat);

const World& fast_world() {
  static World w = [] {
    WorldConfig wc;
    wc.tau_overall = 0.10;
    wc.tau_capability = 0.08;
    return World::build(11, wc);
  }();
  return w;
}

ResponseRecord record_for(int category, std::vector<double> latents,
                          std::uint64_t noise_seed) {
  return fast_world().make_response(category, std::move(latents), noise_seed);
}

LabelRequest request_for(const ResponseRecord& a, const ResponseRecord& b,
                         int point, bool overall = false) {
  const World& w = fast_world();
  LabelRequest req;
  req.query_text = "q";
  req.capability = overall ? w.taxonomy().overall[point]
                           : w.taxonomy().points(a.category)[point];
  req.capability_index = point;
  req.overall_taxonomy = overall;
  req.first = &a;
  req.second = &b;
  req.first_text = render_features(a.x);
  req.second_text = render_features(b.x);
  return req;
}

fs::path fresh_path(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

// Delegating backend that counts judge calls.
class CountingBackend : public LabelerBackend {
 public:
  explicit CountingBackend(LabelerBackend& inner) : inner_(inner) {}
  Choice judge_once(const LabelRequest& req, bool swapped,
                    std::uint64_t seed) override {
    ++calls;
    return inner_.judge_once(req, swapped, seed);
  }
  int calls = 0;

 private:
  LabelerBackend& inner_;
};

struct MockServer {
  httplib::Server svr;
  int port = 0;
  std::thread th;

  void start() {
    port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    th = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  ~MockServer() {
    svr.stop();
    if (th.joinable()) th.join();
  }
  std::string endpoint(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port) + path;
  }
};

std::string chat_reply(const std::string& content) {
  json j;
  j["choices"] = json::array({json{{"message", json{{"content", content}}}}});
  return j.dump();
}

RemoteConfig fast_remote(const std::string& endpoint) {
  RemoteConfig rc;
  rc.endpoint = endpoint;
  rc.rate_per_s = 10000.0;
  rc.burst = 1000;
  return rc;
}

}  // namespace

TEST_CASE("prompt template is pinned") {
  LabelRequest req;
  req.query_text = "Q";
  req.capability = "logic";
  req.first_text = "FA";
  req.second_text = "FB";
  CHECK(build_prompt(req, false) ==
        "Given a query and two responses, determine which of response 1 and "
        "response 2 is better in terms of [logic]. Reply with the digit 1 or "
        "2 only.\n[Query]: Q\n[Response 1]: FA\n[Response 2]: FB");
  CHECK(build_prompt(req, true) ==
        "Given a query and two responses, determine which of response 1 and "
        "response 2 is better in terms of [logic]. Reply with the digit 1 or "
        "2 only.\n[Query]: Q\n[Response 1]: FB\n[Response 2]: FA");
}

TEST_CASE("feature rendering is fixed-precision") {
  CHECK(render_features(std::vector<double>{1.0, -0.25}) ==
        "[1.000000, -0.250000]");
  CHECK(render_features(std::vector<double>{}) == "[]");
  CHECK(choice_name(Choice::kFirst) == std::string("first"));
  CHECK(choice_name(Choice::kSecond) == std::string("second"));
}

TEST_CASE("oracle with full position bias always answers first") {
  const int cat = kRoleplay;
  ResponseRecord a = record_for(cat, {0.1, 0.1, 0.1, 0.1, 0.1, 0.1}, 1);
  ResponseRecord b = record_for(cat, {0.9, 0.9, 0.9, 0.9, 0.9, 0.9}, 2);
  OracleBackend oracle(fast_world(), 1.0, 0.1);
  LabelRequest req = request_for(a, b, 0);
  for (std::uint64_t s = 0; s < 20; ++s) {
    CHECK(oracle.judge_once(req, false, s) == Choice::kFirst);
    CHECK(oracle.judge_once(req, true, s) == Choice::kFirst);
  }
}

TEST_CASE("oracle with zero tau follows the latent gap") {
  const int cat = kRoleplay;
  ResponseRecord a = record_for(cat, {0.8, 0.2, 0.5, 0.5, 0.5, 0.5}, 3);
  ResponseRecord b = record_for(cat, {0.3, 0.7, 0.5, 0.5, 0.5, 0.5}, 4);
  OracleBackend oracle(fast_world(), 0.0, 0.0);
  LabelRequest on_p0 = request_for(a, b, 0);  // a is stronger on point 0
  LabelRequest on_p1 = request_for(a, b, 1);  // b is stronger on point 1
  for (std::uint64_t s = 0; s < 10; ++s) {
    CHECK(oracle.judge_once(on_p0, false, s) == Choice::kFirst);
    CHECK(oracle.judge_once(on_p0, true, s) == Choice::kSecond);
    CHECK(oracle.judge_once(on_p1, false, s) == Choice::kSecond);
    CHECK(oracle.judge_once(on_p1, true, s) == Choice::kFirst);
  }
}

TEST_CASE("oracle rejects bad inputs") {
  CHECK_THROWS_AS(OracleBackend(fast_world(), 1.5, 0.1), ConfigError);
  ResponseRecord a = record_for(kChitchat, {0.5, 0.5, 0.5, 0.5, 0.5}, 5);
  ResponseRecord hidden = a;
  hidden.latents.clear();
  OracleBackend oracle(fast_world(), 0.0, 0.1);
  LabelRequest req = request_for(a, a, 0);
  req.second = &hidden;
  CHECK_THROWS_AS(oracle.judge_once(req, false, 1), StateError);
}

TEST_CASE("calibrated oracle uses the world judgment temperature") {
  OracleBackend oracle = OracleBackend::calibrated(fast_world(), 0.0);
  // tau 0.08 was configured, so near-tie pairs must come out both ways.
  ResponseRecord a = record_for(kRoleplay, {0.52, 0.5, 0.5, 0.5, 0.5, 0.5}, 6);
  ResponseRecord b = record_for(kRoleplay, {0.48, 0.5, 0.5, 0.5, 0.5, 0.5}, 7);
  LabelRequest req = request_for(a, b, 0);
  int firsts = 0;
  for (std::uint64_t s = 0; s < 200; ++s)
    firsts += oracle.judge_once(req, false, s) == Choice::kFirst;
  CHECK(firsts > 100);  // gap is positive, so "first" should lead
  CHECK(firsts < 190);  // but the margin is soft at this temperature
}

TEST_CASE("swap filtering discards everything under total position bias") {
  ResponseRecord a = record_for(kRoleplay, {0.9, 0.5, 0.5, 0.5, 0.5, 0.5}, 8);
  ResponseRecord b = record_for(kRoleplay, {0.1, 0.5, 0.5, 0.5, 0.5, 0.5}, 9);
  OracleBackend oracle(fast_world(), 1.0, 0.0);
  LabelVerdict v = judge_swapped_pair(oracle, request_for(a, b, 0), 42, nullptr);
  CHECK(v.call1 == Choice::kFirst);
  CHECK(v.call2 == Choice::kFirst);
  CHECK_FALSE(v.consistent);
  CHECK(v.final == LabelVerdict::Final::kDiscarded);
}

TEST_CASE("swap-consistent verdicts name the underlying response") {
  ResponseRecord a = record_for(kRoleplay, {0.9, 0.5, 0.5, 0.5, 0.5, 0.5}, 10);
  ResponseRecord b = record_for(kRoleplay, {0.1, 0.5, 0.5, 0.5, 0.5, 0.5}, 11);
  OracleBackend oracle(fast_world(), 0.0, 0.0);
  LabelVerdict win_a = judge_swapped_pair(oracle, request_for(a, b, 0), 1, nullptr);
  CHECK(win_a.consistent);
  CHECK(win_a.final == LabelVerdict::Final::kA);
  LabelRequest flipped = request_for(b, a, 0);
  LabelVerdict win_b = judge_swapped_pair(oracle, flipped, 1, nullptr);
  CHECK(win_b.consistent);
  CHECK(win_b.final == LabelVerdict::Final::kB);
}

TEST_CASE("swap filtering raises retained accuracy under position bias") {
  const World& w = fast_world();
  PreferenceDataset ds = w.sample_dataset({0, 40, 0, 0, 0}, 4, 21);
  OracleBackend oracle(w, 0.3, w.tau_capability());
  long raw_correct = 0, raw_total = 0;
  long kept_correct = 0, kept_total = 0;
  for (const PreferenceSample& s : ds.samples) {
    const int n_pts = w.capability_count(s.category);
    for (std::size_t i = 0; i < s.responses.size(); ++i)
      for (std::size_t j = i + 1; j < s.responses.size(); ++j)
        for (int p = 0; p < n_pts; ++p) {
          const ResponseRecord& a = s.responses[i];
          const ResponseRecord& b = s.responses[j];
          const bool a_better =
              w.capability_value(s.category, a.latents, p, false) >
              w.capability_value(s.category, b.latents, p, false);
          LabelVerdict v = judge_swapped_pair(
              oracle, request_for(a, b, p),
              derive_seed({77, static_cast<std::uint64_t>(s.id),
                           static_cast<std::uint64_t>(i),
                           static_cast<std::uint64_t>(j),
                           static_cast<std::uint64_t>(p)}),
              nullptr);
          ++raw_total;
          raw_correct += (v.call1 == Choice::kFirst) == a_better;
          if (v.final != LabelVerdict::Final::kDiscarded) {
            ++kept_total;
            kept_correct += (v.final == LabelVerdict::Final::kA) == a_better;
          }
        }
  }
  const double raw_acc = double(raw_correct) / double(raw_total);
  const double kept_acc = double(kept_correct) / double(kept_total);
  const double retention = double(kept_total) / double(raw_total);
  CHECK(retention > 0.45);
  CHECK(retention < 0.90);
  CHECK(kept_acc > raw_acc + 0.03);
  CHECK(kept_acc > 0.90);
}

TEST_CASE("verdict cache short-circuits repeat judgments") {
  fs::path file = fresh_path("dmoerm_cache_test.jsonl");
  ResponseRecord a = record_for(kRoleplay, {0.7, 0.5, 0.5, 0.5, 0.5, 0.5}, 12);
  ResponseRecord b = record_for(kRoleplay, {0.2, 0.5, 0.5, 0.5, 0.5, 0.5}, 13);
  LabelRequest req = request_for(a, b, 2);
  OracleBackend oracle(fast_world(), 0.0, 0.0);
  CountingBackend counting(oracle);
  {
    VerdictCache cache(file);
    CHECK(cache.size() == 0);
    LabelVerdict v1 = judge_swapped_pair(counting, req, 5, &cache);
    CHECK(counting.calls == 2);
    CHECK(cache.size() == 2);
    LabelVerdict v2 = judge_swapped_pair(counting, req, 5, &cache);
    CHECK(counting.calls == 2);  // served from cache
    CHECK(v1.final == v2.final);
    CHECK(v1.call1 == v2.call1);
    CHECK(v1.call2 == v2.call2);
  }
  // Same file, fresh instance: verdicts survive on disk.
  VerdictCache reloaded(file);
  CHECK(reloaded.size() == 2);
  judge_swapped_pair(counting, req, 5, &reloaded);
  CHECK(counting.calls == 2);
  fs::remove(file);
}

TEST_CASE("cache keys depend on presentation order and point") {
  ResponseRecord a = record_for(kRoleplay, {0.7, 0.5, 0.5, 0.5, 0.5, 0.5}, 14);
  ResponseRecord b = record_for(kRoleplay, {0.2, 0.5, 0.5, 0.5, 0.5, 0.5}, 15);
  LabelRequest req = request_for(a, b, 0);
  CHECK(VerdictCache::key_for(req, false) != VerdictCache::key_for(req, true));
  LabelRequest other = request_for(a, b, 1);
  CHECK(VerdictCache::key_for(req, false) != VerdictCache::key_for(other, false));
}

TEST_CASE("cache rejects malformed rows") {
  fs::path file = fresh_path("dmoerm_cache_bad.jsonl");
  {
    std::ofstream out(file);
    out << "{\"key\": \"abc\", \"verdict\": \"first\"}\n";
    out << "not json\n";
  }
  CHECK_THROWS_AS(VerdictCache{file}, ParseError);
  {
    std::ofstream out(file, std::ios::trunc);
    out << "{\"key\": \"abc\", \"verdict\": \"maybe\"}\n";
  }
  CHECK_THROWS_AS(VerdictCache{file}, ParseError);
  fs::remove(file);
}

TEST_CASE("labeling covers the training pools and skips the test split") {
  const World& w = fast_world();
  PreferenceDataset ds = w.sample_dataset({0, 6, 0, 0, 0}, 3, 31);
  OracleBackend oracle(w, 0.0, 0.0);
  CapabilityDataset cd = label_capability_dataset(
      oracle, ds, kRoleplay, w.taxonomy(), false, 9);
  CHECK(cd.category == kRoleplay);
  CHECK_FALSE(cd.overall_taxonomy);
  CHECK(cd.points == w.taxonomy().points(kRoleplay));
  // 6 samples, 2 held out for test; 3 response pairs x 6 points each.
  const int pool = ds.count(Split::kPhase1, kRoleplay) +
                   ds.count(Split::kPhase3, kRoleplay);
  CHECK(pool == 4);
  CHECK(cd.coverage.total == pool * 3 * 6);
  CHECK(cd.coverage.retained == cd.coverage.total);  // noise-free, no bias
  CHECK(cd.coverage.discarded == 0);
  CHECK(cd.coverage.unlabeled == 0);
  std::set<int> pool_ids;
  for (const PreferenceSample& s : ds.samples)
    if (s.split != Split::kTest) pool_ids.insert(s.id);
  long listed = 0;
  for (std::size_t p = 0; p < cd.pairs.size(); ++p)
    for (const CapabilityPair& pr : cd.pairs[p]) {
      ++listed;
      CHECK(pool_ids.count(pr.sample_id) == 1);
      CHECK(pr.winner != pr.loser);
    }
  CHECK(listed == cd.coverage.retained);
  // Noise-free winners agree with the latent ordering.
  for (std::size_t p = 0; p < cd.pairs.size(); ++p)
    for (const CapabilityPair& pr : cd.pairs[p]) {
      const PreferenceSample* smp = nullptr;
      for (const PreferenceSample& s : ds.samples)
        if (s.id == pr.sample_id) smp = &s;
      REQUIRE(smp != nullptr);
      const double vw = w.capability_value(
          smp->category, smp->responses[pr.winner].latents, int(p), false);
      const double vl = w.capability_value(
          smp->category, smp->responses[pr.loser].latents, int(p), false);
      CHECK(vw > vl);
    }
}

TEST_CASE("overall-taxonomy labeling spans all categories") {
  const World& w = fast_world();
  PreferenceDataset ds = w.sample_dataset({2, 2, 2, 2, 2}, 2, 33, 0.5);
  OracleBackend oracle(w, 0.0, 0.0);
  CapabilityDataset cd = label_capability_dataset(
      oracle, ds, -1, w.taxonomy(), true, 9);
  CHECK(cd.category == -1);
  CHECK(cd.overall_taxonomy);
  CHECK(cd.points == w.taxonomy().overall);
  // One of two samples per category survives the 0.5 test fraction.
  CHECK(cd.coverage.total == 5 * 1 * 1 * 5);
  CHECK(cd.coverage.retained == cd.coverage.total);
  CHECK_THROWS_AS(label_capability_dataset(oracle, ds, 7, w.taxonomy(), false, 9),
                  ConfigError);
}

TEST_CASE("parallel labeling matches the single-threaded result") {
  const World& w = fast_world();
  PreferenceDataset ds = w.sample_dataset({0, 0, 8, 0, 0}, 3, 35);
  OracleBackend oracle(w, 0.25, w.tau_capability());
  CapabilityDataset serial = label_capability_dataset(
      oracle, ds, kObjectiveQa, w.taxonomy(), false, 55, nullptr, 1);
  CapabilityDataset parallel = label_capability_dataset(
      oracle, ds, kObjectiveQa, w.taxonomy(), false, 55, nullptr, 6);
  CHECK(serial.coverage.total == parallel.coverage.total);
  CHECK(serial.coverage.retained == parallel.coverage.retained);
  CHECK(serial.coverage.discarded == parallel.coverage.discarded);
  REQUIRE(serial.pairs.size() == parallel.pairs.size());
  for (std::size_t p = 0; p < serial.pairs.size(); ++p) {
    REQUIRE(serial.pairs[p].size() == parallel.pairs[p].size());
    for (std::size_t i = 0; i < serial.pairs[p].size(); ++i) {
      CHECK(serial.pairs[p][i].sample_id == parallel.pairs[p][i].sample_id);
      CHECK(serial.pairs[p][i].winner == parallel.pairs[p][i].winner);
      CHECK(serial.pairs[p][i].loser == parallel.pairs[p][i].loser);
    }
  }
  CHECK(serial.coverage.discarded > 0);  // bias actually bit
}

TEST_CASE("capability dataset round-trips through jsonl") {
  const World& w = fast_world();
  PreferenceDataset ds = w.sample_dataset({0, 0, 0, 5, 0}, 3, 37);
  OracleBackend oracle(w, 0.2, w.tau_capability());
  CapabilityDataset cd = label_capability_dataset(
      oracle, ds, kSubjectiveQa, w.taxonomy(), false, 13);
  fs::path file = fresh_path("dmoerm_capset.jsonl");
  save_capability_dataset(cd, file);
  CapabilityDataset rt = load_capability_dataset(file);
  CHECK(rt.category == cd.category);
  CHECK(rt.overall_taxonomy == cd.overall_taxonomy);
  CHECK(rt.points == cd.points);
  CHECK(rt.coverage.total == cd.coverage.total);
  CHECK(rt.coverage.retained == cd.coverage.retained);
  CHECK(rt.coverage.discarded == cd.coverage.discarded);
  CHECK(rt.coverage.unlabeled == cd.coverage.unlabeled);
  REQUIRE(rt.pairs.size() == cd.pairs.size());
  for (std::size_t p = 0; p < cd.pairs.size(); ++p) {
    REQUIRE(rt.pairs[p].size() == cd.pairs[p].size());
    for (std::size_t i = 0; i < cd.pairs[p].size(); ++i) {
      CHECK(rt.pairs[p][i].sample_id == cd.pairs[p][i].sample_id);
      CHECK(rt.pairs[p][i].winner == cd.pairs[p][i].winner);
      CHECK(rt.pairs[p][i].loser == cd.pairs[p][i].loser);
    }
  }
  // A doctored retained count must be caught.
  {
    std::ifstream in(file);
    std::string head, rest, line;
    std::getline(in, head);
    while (std::getline(in, line)) rest += line + "\n";
    json h = json::parse(head);
    h["coverage"]["retained"] = h["coverage"]["retained"].get<long>() + 1;
    std::ofstream out(file, std::ios::trunc);
    out << h.dump() << "\n" << rest;
  }
  CHECK_THROWS_AS(load_capability_dataset(file), ParseError);
  fs::remove(file);
}

TEST_CASE("remote backend posts a chat request and parses the digit") {
  setenv("DMOERM_API_TOKEN", "tok-123", 1);
  MockServer mock;
  std::string seen_auth;
  json seen_body;
  std::atomic<int> hits{0};
  mock.svr.Post("/v1/chat/completions",
                [&](const httplib::Request& q, httplib::Response& r) {
                  seen_auth = q.get_header_value("Authorization");
                  seen_body = json::parse(q.body);
                  const int n = hits.fetch_add(1);
                  r.set_content(chat_reply(n == 0 ? " 2." : "answer: 1"),
                                "application/json");
                });
  mock.start();
  RemoteBackend backend(fast_remote(mock.endpoint("/v1/chat/completions")));
  unsetenv("DMOERM_API_TOKEN");

  LabelRequest req;
  req.query_text = "Q";
  req.capability = "logic";
  req.first_text = "ra";
  req.second_text = "rb";
  CHECK(backend.judge_once(req, false, 12345) == Choice::kSecond);
  CHECK(seen_auth == "Bearer tok-123");
  CHECK(seen_body.at("model") == "judge-1");
  CHECK(seen_body.at("temperature") == 0);
  CHECK(seen_body.at("seed") == 12345);
  REQUIRE(seen_body.at("messages").size() == 1);
  CHECK(seen_body["messages"][0].at("role") == "user");
  CHECK(seen_body["messages"][0].at("content") == build_prompt(req, false));
  CHECK(backend.judge_once(req, true, 12346) == Choice::kFirst);
  CHECK(seen_body["messages"][0].at("content") == build_prompt(req, true));
}

TEST_CASE("remote backend accepts plain-text reply shapes") {
  MockServer mock;
  std::atomic<int> hits{0};
  mock.svr.Post("/judge", [&](const httplib::Request&, httplib::Response& r) {
    const int n = hits.fetch_add(1);
    if (n == 0)
      r.set_content("{\"choices\":[{\"text\":\"2\"}]}", "application/json");
    else
      r.set_content("{\"content\":\"1\"}", "application/json");
  });
  mock.start();
  RemoteBackend backend(fast_remote(mock.endpoint("/judge")));
  LabelRequest req;
  CHECK(backend.judge_once(req, false, 1) == Choice::kSecond);
  CHECK(backend.judge_once(req, false, 2) == Choice::kFirst);
}

TEST_CASE("remote backend retries transient failures") {
  MockServer mock;
  std::atomic<int> hits{0};
  mock.svr.Post("/judge", [&](const httplib::Request&, httplib::Response& r) {
    if (hits.fetch_add(1) == 0) {
      r.status = 500;
      return;
    }
    r.set_content(chat_reply("1"), "application/json");
  });
  mock.start();
  RemoteConfig rc = fast_remote(mock.endpoint("/judge"));
  rc.max_retries = 2;
  RemoteBackend backend(rc);
  LabelRequest req;
  CHECK(backend.judge_once(req, false, 3) == Choice::kFirst);
  CHECK(hits.load() == 2);
}

TEST_CASE("remote backend throws after exhausting retries") {
  MockServer mock;
  std::atomic<int> fails{0};
  std::atomic<int> garbles{0};
  mock.svr.Post("/fail", [&](const httplib::Request&, httplib::Response& r) {
    fails.fetch_add(1);
    r.status = 503;
  });
  mock.svr.Post("/garble", [&](const httplib::Request&, httplib::Response& r) {
    garbles.fetch_add(1);
    r.set_content(chat_reply("neither response convinces me"),
                  "application/json");
  });
  mock.start();
  RemoteConfig rc = fast_remote(mock.endpoint("/fail"));
  rc.max_retries = 1;
  {
    RemoteBackend backend(rc);
    LabelRequest req;
    CHECK_THROWS_AS(backend.judge_once(req, false, 4), TransportError);
    CHECK(fails.load() == 2);  // first try + one retry
  }
  rc.endpoint = mock.endpoint("/garble");
  {
    RemoteBackend backend(rc);
    LabelRequest req;
    CHECK_THROWS_AS(backend.judge_once(req, false, 5), ParseError);
    CHECK(garbles.load() == 2);
  }
}

TEST_CASE("unreachable remote leaves items unlabeled") {
  const World& w = fast_world();
  PreferenceDataset ds = w.sample_dataset({0, 3, 0, 0, 0}, 2, 39);
  RemoteConfig rc = fast_remote("http://127.0.0.1:9/judge");
  rc.max_retries = 0;
  rc.timeout_s = 2.0;
  RemoteBackend backend(rc);
  CapabilityDataset cd = label_capability_dataset(
      backend, ds, kRoleplay, w.taxonomy(), false, 41);
  CHECK(cd.coverage.total > 0);
  CHECK(cd.coverage.unlabeled == cd.coverage.total);
  CHECK(cd.coverage.retained == 0);
  for (const auto& pp : cd.pairs) CHECK(pp.empty());
}

TEST_CASE("concurrent labeling respects the in-flight bound") {
  MockServer mock;
  std::atomic<int> in_flight{0};
  std::atomic<int> max_seen{0};
  mock.svr.Post("/judge", [&](const httplib::Request&, httplib::Response& r) {
    const int now = in_flight.fetch_add(1) + 1;
    int prev = max_seen.load();
    while (now > prev && !max_seen.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(8));
    in_flight.fetch_sub(1);
    r.set_content(chat_reply("1"), "application/json");
  });
  mock.start();
  RemoteConfig rc = fast_remote(mock.endpoint("/judge"));
  rc.max_in_flight = 2;
  RemoteBackend backend(rc);
  CHECK(backend.max_concurrency() == 2);
  const World& w = fast_world();
  PreferenceDataset ds = w.sample_dataset({0, 3, 0, 0, 0}, 2, 43);
  CapabilityDataset cd = label_capability_dataset(
      backend, ds, kRoleplay, w.taxonomy(), false, 45, nullptr, 8);
  CHECK(cd.coverage.unlabeled == 0);
  CHECK(max_seen.load() <= 2);
  CHECK(max_seen.load() >= 2);  // the pool really ran two workers
}

TEST_CASE("token bucket paces request bursts") {
  MockServer mock;
  mock.svr.Post("/judge", [&](const httplib::Request&, httplib::Response& r) {
    r.set_content(chat_reply("1"), "application/json");
  });
  mock.start();
  RemoteConfig rc;
  rc.endpoint = mock.endpoint("/judge");
  rc.rate_per_s = 100.0;
  rc.burst = 1;
  RemoteBackend backend(rc);
  LabelRequest req;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t s = 0; s < 4; ++s)
    CHECK(backend.judge_once(req, false, s) == Choice::kFirst);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  CHECK(elapsed >= 0.025);  // three refill waits at 10 ms each
}

TEST_CASE("remote config validation") {
  RemoteConfig rc;
  rc.endpoint = "https://example.test/v1";
  CHECK_THROWS_AS(RemoteBackend{rc}, ConfigError);
  rc.endpoint = "ftp://example.test/v1";
  CHECK_THROWS_AS(RemoteBackend{rc}, ConfigError);
}
