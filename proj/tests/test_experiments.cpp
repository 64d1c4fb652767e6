/**
 * Copyright 2026 The FedChain-Sim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedchain/experiments.hpp"

using namespace fedchain;
using namespace fedchain::experiments;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.modes = {"fedchain", "fedavg_central", "pow"};
  c.n_nodes = {4, 8};
  c.n_pools = {1, 2, 6};
  c.seeds = {1, 2};
  c.alphas = {0.1, 0.8};
  c.synthetic.samples = 1400;
  c.accuracy_miners = 4;
  c.max_rounds = 20;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fedchain-test-" + name);
  fs::remove_all(p);
  return p;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Config, JsonRoundTripPreservesFingerprint) {
  auto c = tiny_config();
  c.topology = "clustered";
  c.hidden = 8;
  const auto back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(fingerprint(back), fingerprint(c));
}

TEST(Config, FingerprintIgnoresOutputAndJobsOnly) {
  auto a = tiny_config();
  auto b = a;
  b.output_dir = "elsewhere";
  b.jobs = 4;
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  b.learning_rate = 0.07;
  EXPECT_NE(fingerprint(a), fingerprint(b));
  EXPECT_EQ(fingerprint(a).size(), 64u);
}

TEST(Config, PartialJsonKeepsDefaults) {
  const auto c = config_from_json(Json::parse(R"({"n_nodes": [12], "train": {"max_rounds": 9}})"));
  EXPECT_EQ(c.n_nodes, std::vector<std::size_t>{12});
  EXPECT_EQ(c.max_rounds, 9u);
  EXPECT_EQ(c.n_pools, ExperimentConfig{}.n_pools);
}

TEST(Config, InvalidInputsRejected) {
  for (const char* text : {R"({"modes": []})", R"({"modes": ["raft"]})", R"({"alphas": [1.5]})",
                           R"({"n_nodes": [1]})", R"({"n_pools": [0]})", R"({"seeds": "one"})",
                           R"({"topology": {"kind": "mesh"}})", R"({"jobs": 0})"}) {
    try {
      config_from_json(Json::parse(text));
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::invalid_config) << text;
    }
  }
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"default.json", "quick.json"}) {
    const auto path = fs::path(FEDCHAIN_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_config(path.string())) << name;
  }
  const auto shipped = load_config((fs::path(FEDCHAIN_SOURCE_DIR) / "configs" / "default.json").string());
  EXPECT_EQ(fingerprint(shipped), fingerprint(ExperimentConfig{}));
}

TEST(LoadData, TooSmallDatasetUnderflows) {
  auto c = tiny_config();
  c.synthetic.samples = 500;
  try {
    load_data(c, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::partition_underflow);
  }
}

TEST(LatencyGrid, RowCountIsProductMinusSkips) {
  const auto c = tiny_config();
  std::ostringstream warn;
  const auto rs = run_latency_grid(c, &warn);
  // pools=6 is infeasible at n=4 for every mode.
  const std::size_t skipped = c.modes.size() * 1 * c.seeds.size();
  EXPECT_EQ(rs.size(), c.modes.size() * c.n_nodes.size() * c.n_pools.size() * c.seeds.size() - skipped);
  EXPECT_NE(warn.str().find("pools=6"), std::string::npos);
  std::ostringstream csv;
  write_latency_csv(csv, rs);
  EXPECT_EQ(lines(csv.str()), rs.size() + 1);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "mode,n_nodes,n_pools,round,winner_pool,latency_ms,accuracy");
}

TEST(LatencyGrid, CellRerunIsByteIdenticalAndJobsInvariant) {
  auto c = tiny_config();
  c.n_nodes = {8};
  c.n_pools = {2};
  const auto a = run_latency_grid(c, nullptr);
  c.jobs = 3;
  const auto b = run_latency_grid(c, nullptr);
  std::ostringstream sa, sb;
  write_latency_csv(sa, a);
  write_latency_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());

  // One cell alone reproduces its row from the grid.
  auto single = c;
  single.modes = {"fedchain"};
  single.seeds = {2};
  const auto one = run_latency_grid(single, nullptr);
  ASSERT_EQ(one.size(), 1u);
  bool found = false;
  for (const auto& r : a) {
    if (r.mode == "fedchain" && r.seed == 2) {
      found = true;
      EXPECT_EQ(r.latency_ms, one[0].latency_ms);
      EXPECT_EQ(r.rounds, one[0].rounds);
    }
  }
  EXPECT_TRUE(found);
}

TEST(AccuracySweep, RecordsPerSchemeAlphaSeedAndHaltAtTarget) {
  const auto c = tiny_config();
  const auto rs = run_accuracy_sweep(c);
  EXPECT_EQ(rs.size(), 2 * c.alphas.size() * c.seeds.size());
  for (const auto& r : rs) {
    ASSERT_FALSE(r.curve.empty());
    if (r.rounds_to_target) {
      EXPECT_EQ(r.curve.size(), *r.rounds_to_target);
      EXPECT_GE(r.curve.back().accuracy, c.target_accuracy);
      for (std::size_t i = 0; i + 1 < r.curve.size(); ++i) EXPECT_LT(r.curve[i].accuracy, c.target_accuracy);
    } else {
      EXPECT_LE(r.curve.size(), c.max_rounds);
    }
  }
}

TEST(Trends, NotApplicableWithoutTheirCells) {
  const auto checks = latency_trends({});
  for (const auto& t : checks) EXPECT_FALSE(t.applicable);
  EXPECT_TRUE(all_passed(checks));
}

TEST(Trends, AccuracyChecksOnHandMadeRecords) {
  std::vector<AccuracyRecord> rs;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    rs.push_back({"fedavg", 0.8, s, 9, 0.9, {}});
    rs.push_back({"kl", 0.8, s, 3, 0.9, {}});
    rs.push_back({"fedavg", 0.1, s, 4 + s % 2, 0.9, {}});
    rs.push_back({"kl", 0.1, s, 4, 0.9, {}});
  }
  auto checks = accuracy_trends(rs, 20);
  ASSERT_EQ(checks.size(), 2u);
  EXPECT_TRUE(all_passed(checks));
  for (auto& r : rs) {
    if (r.scheme == "kl" && r.alpha == 0.8) r.rounds_to_target.reset();
  }
  EXPECT_FALSE(all_passed(accuracy_trends(rs, 20)));
}

TEST(EmitReport, EmptyRecordsRejected) {
  try {
    emit_report(Report{}, tiny_config(), scratch("empty"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_config);
  }
}

TEST(EmitReport, SameRecordsGiveByteIdenticalFiles) {
  auto c = tiny_config();
  c.n_nodes = {8};
  c.n_pools = {2};
  c.alphas = {0.8};
  const Report rec{run_latency_grid(c, nullptr), run_accuracy_sweep(c)};
  const auto a = scratch("report-a"), b = scratch("report-b");
  emit_report(rec, c, a);
  emit_report(rec, c, b);
  for (const char* f : {"report.md", "latency.csv", "accuracy.csv", "accuracy_curves.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const auto md = slurp(a / "report.md");
  EXPECT_NE(md.find(fingerprint(c)), std::string::npos);
  EXPECT_EQ(lines(slurp(a / "latency.csv")), rec.latency.size() + 1);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(EmitReport, UnwritableDirectoryIsIoError) {
  const auto file = scratch("blocker");
  std::ofstream(file) << "x";
  Report rec;
  rec.latency.push_back({"pow", 4, 1, 1, 1, 0, 10.0, 0.0, true});
  try {
    emit_report(rec, tiny_config(), file / "sub");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io_error);
  }
  fs::remove_all(file);
}
