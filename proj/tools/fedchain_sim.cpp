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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedchain/experiments.hpp"

namespace fs = std::filesystem;
using namespace fedchain;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_seeds;
  std::string out;
  std::optional<std::size_t> jobs;
  std::string dataset;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "First seed (default: config seeds, else 1)");
  cmd->add_option("--n-seeds", c.n_seeds, "Number of consecutive seeds starting at --seed");
  cmd->add_option("-o,--out", c.out, "Output directory");
  cmd->add_option("-j,--jobs", c.jobs, "Parallel grid cells");
  cmd->add_option("--dataset", c.dataset, "Fixture CSV (default: synthetic)");
}

experiments::ExperimentConfig resolve(const Common& c) {
  auto cfg = c.config_path.empty() ? experiments::ExperimentConfig{} : experiments::load_config(c.config_path);
  if (c.seed || c.n_seeds) {
    const std::uint64_t first = c.seed.value_or(cfg.seeds.empty() ? 1 : cfg.seeds.front());
    const std::size_t count = c.n_seeds.value_or(cfg.seeds.size());
    cfg.seeds.clear();
    for (std::size_t i = 0; i < count; ++i) cfg.seeds.push_back(first + i);
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.jobs) cfg.jobs = *c.jobs;
  if (!c.dataset.empty()) cfg.dataset = c.dataset;
  cfg.validate();
  return cfg;
}

int print_trends(const std::vector<experiments::TrendCheck>& trends) {
  for (const auto& t : trends) {
    std::cout << (!t.applicable ? "SKIP" : t.passed ? "PASS" : "FAIL") << "  " << t.name;
    if (!t.detail.empty()) std::cout << "  (" << t.detail << ")";
    std::cout << "\n";
  }
  return experiments::all_passed(trends) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedChain-Sim: proof-of-useful-work blockchain simulator"};
  app.require_subcommand(1);

  Common grid_opts;
  std::vector<std::string> modes;
  std::vector<std::size_t> nodes, pool_counts;
  auto* grid = app.add_subcommand("latency-grid", "Latency to first accepted block across modes and grids");
  add_common(grid, grid_opts);
  grid->add_option("--modes", modes, "Consensus modes");
  grid->add_option("--nodes", nodes, "Node counts");
  grid->add_option("--pools", pool_counts, "Pool counts");

  Common sweep_opts;
  std::vector<double> alphas;
  std::optional<std::size_t> miners;
  auto* sweep = app.add_subcommand("accuracy-sweep", "KL vs FedAvg rounds-to-target across non-iid strengths");
  add_common(sweep, sweep_opts);
  sweep->add_option("--alphas", alphas, "Non-iid strengths in [0,1]");
  sweep->add_option("--miners", miners, "Miners in the pool");

  Common single_opts;
  std::string single_mode = "fedchain";
  std::size_t single_nodes = 20, single_pools = 4;
  auto* single = app.add_subcommand("single-round", "One task end to end with ledger, trace and metrics");
  add_common(single, single_opts);
  single->add_option("--mode", single_mode, "Consensus mode")
      ->check(CLI::IsMember({"fedchain", "gfl_ring", "fedavg_central", "pow"}));
  single->add_option("--nodes", single_nodes, "Node count");
  single->add_option("--pools", single_pools, "Pool count (fedchain)");

  std::string ledger_path;
  auto* check = app.add_subcommand("validate-chain", "Check hash links and per-task rules of a ledger export");
  check->add_option("ledger", ledger_path, "Ledger JSONL file")->required()->check(CLI::ExistingFile);

  std::string fixture_path;
  experiments::SyntheticSpec fixture;
  std::uint64_t fixture_seed = 1;
  auto* make = app.add_subcommand("make-fixture", "Write a synthetic dataset fixture CSV");
  make->add_option("output", fixture_path, "Destination CSV")->required();
  make->add_option("--samples", fixture.samples);
  make->add_option("--features", fixture.features);
  make->add_option("--classes", fixture.classes);
  make->add_option("--separation", fixture.separation);
  make->add_option("--seed", fixture_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*grid) {
      auto cfg = resolve(grid_opts);
      if (!modes.empty()) cfg.modes = modes;
      if (!nodes.empty()) cfg.n_nodes = nodes;
      if (!pool_counts.empty()) cfg.n_pools = pool_counts;
      cfg.validate();
      experiments::Report report;
      report.latency = experiments::run_latency_grid(cfg);
      const auto trends = experiments::emit_report(report, cfg, cfg.output_dir);
      std::cout << "wrote " << report.latency.size() << " rows to " << cfg.output_dir << "/latency.csv\n";
      return print_trends(trends);
    }
    if (*sweep) {
      auto cfg = resolve(sweep_opts);
      if (!alphas.empty()) cfg.alphas = alphas;
      if (miners) cfg.accuracy_miners = *miners;
      cfg.validate();
      experiments::Report report;
      report.accuracy = experiments::run_accuracy_sweep(cfg);
      const auto trends = experiments::emit_report(report, cfg, cfg.output_dir);
      std::cout << "wrote " << report.accuracy.size() << " rows to " << cfg.output_dir << "/accuracy.csv\n";
      return print_trends(trends);
    }
    if (*single) {
      const auto cfg = resolve(single_opts);
      const auto mode = chain::parse_mode(single_mode);
      const auto run = experiments::run_single(cfg, mode, single_nodes, single_pools, cfg.seeds.front());
      const fs::path dir = cfg.output_dir;
      fs::create_directories(dir);
      {
        std::ofstream os(dir / "ledger.jsonl");
        chain::write_ledger(os, run.ledger.blocks());
      }
      {
        std::ofstream os(dir / "trace.csv");
        netsim::write_trace(os, run.result.trace);
      }
      {
        std::ofstream os(dir / "metrics.csv");
        fed::write_round_metrics(os, run.result.metrics);
      }
      if (run.assignment) {
        std::ofstream os(dir / "pools.csv");
        pools::write_assignment_csv(os, *run.assignment);
      }
      const auto& r = run.result;
      std::cout << "mode " << chain::mode_name(mode) << ": "
                << (r.block ? "block at height " + std::to_string(r.block->height) : std::string("no block"))
                << ", latency " << experiments::detail::fmt(r.latency_ms, 1) << " ms, rounds " << r.rounds
                << ", accuracy " << experiments::detail::fmt(r.accuracy, 4) << ", messages " << r.messages
                << "\n";
      return r.block ? 0 : 1;
    }
    if (*check) {
      std::ifstream in(ledger_path);
      const auto blocks = chain::read_ledger(in);
      const auto report = chain::validate_chain(blocks);
      for (const auto& v : report.violations) std::cout << v << "\n";
      std::cout << (report.ok ? "ok" : "invalid") << ": " << blocks.size() << " blocks\n";
      return report.ok ? 0 : 1;
    }
    if (*make) {
      const auto d = fed::make_synthetic(fixture.samples, fixture.features, fixture.classes, fixture_seed,
                                         fixture.separation);
      std::ofstream os(fixture_path);
      if (!os) throw Error(Errc::io_error, "cannot write " + fixture_path);
      fed::write_dataset_csv(os, d);
      std::cout << "wrote " << d.size() << " samples to " << fixture_path << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
