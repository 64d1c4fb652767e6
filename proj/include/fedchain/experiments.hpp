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

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedchain/chain.hpp"
#include "fedchain/digest.hpp"
#include "fedchain/error.hpp"
#include "fedchain/fed.hpp"
#include "json.hpp"

namespace fedchain::experiments {

using Json = nlohmann::json;

// Config file schema (JSON, every key optional):
//
//   modes            ["fedchain", "gfl_ring", "fedavg_central", "pow"]
//   n_nodes          [10, 20, 40, 50]
//   n_pools          [2, 5, 10]
//   alphas           [0.1, 0.8]          non-iid strengths for the sweep
//   seeds            [1, 2, 3, 4, 5]
//   target_accuracy  0.9
//   deadline_ms      1e7
//   dataset          ""                  fixture CSV; empty = synthetic
//   synthetic        {samples, features, classes, separation}
//   holdout          {validation, challenge}
//   model            {hidden}
//   train            {learning_rate, epochs, batch_size, max_rounds}
//   latency_alpha    0.0                 partition skew for latency runs
//   accuracy_miners  10
//   topology         {kind: "uniform"|"clustered", ...}
//   engine           {model_size_units, lambda, challenge_k, prove_ms_per_sample,
//                     verify_ms_per_sample, ingress_ms_per_unit,
//                     pow_difficulty, pow_trial_ms}
//   output_dir       "out"
//   jobs             1
struct SyntheticSpec {
  std::size_t samples = 3000;
  std::size_t features = 16;
  std::size_t classes = 10;
  double separation = 1.2;
};

struct ExperimentConfig {
  std::vector<std::string> modes{"fedchain", "gfl_ring", "fedavg_central", "pow"};
  std::vector<std::size_t> n_nodes{10, 20, 40, 50};
  std::vector<std::size_t> n_pools{2, 5, 10};
  std::vector<double> alphas{0.1, 0.8};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double target_accuracy = 0.90;
  double deadline_ms = 1e7;
  std::string dataset;
  SyntheticSpec synthetic;
  std::size_t validation_size = 300;
  std::size_t challenge_size = 300;
  std::size_t hidden = 0;
  double learning_rate = 0.05;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::size_t max_rounds = 60;
  double latency_alpha = 0.0;
  std::size_t accuracy_miners = 10;
  std::string topology = "uniform";
  netsim::UniformTopology uniform;
  netsim::ClusteredTopology clustered;
  double model_size_units = 10.0;
  unsigned lambda = 128;
  std::size_t challenge_k = 200;
  double prove_ms_per_sample = 0.5;
  double verify_ms_per_sample = 0.5;
  double ingress_ms_per_unit = 2.0;
  unsigned pow_difficulty = 12;
  double pow_trial_ms = 25.0;
  std::string output_dir = "out";
  std::size_t jobs = 1;

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(Errc::invalid_config, why); };
    if (modes.empty() || n_nodes.empty() || n_pools.empty() || alphas.empty() || seeds.empty()) {
      fail("config lists must be non-empty");
    }
    for (const auto& m : modes) chain::parse_mode(m);
    for (auto n : n_nodes) {
      if (n < 2) fail("n_nodes entries must be >= 2");
    }
    for (auto p : n_pools) {
      if (p == 0) fail("n_pools entries must be >= 1");
    }
    for (auto a : alphas) {
      if (!(a >= 0.0 && a <= 1.0)) fail("alpha outside [0,1]");
    }
    if (!(target_accuracy > 0.0 && target_accuracy <= 1.0)) fail("target_accuracy outside (0,1]");
    if (!(deadline_ms > 0.0)) fail("deadline_ms must be positive");
    if (accuracy_miners == 0) fail("accuracy_miners must be positive");
    if (topology != "uniform" && topology != "clustered") fail("unknown topology " + topology);
    if (jobs == 0) fail("jobs must be positive");
  }

  netsim::TopologyModel topology_model() const {
    if (topology == "clustered") return clustered;
    return uniform;
  }

  chain::EngineConfig engine(std::uint64_t seed) const {
    chain::EngineConfig e;
    e.train.learning_rate = learning_rate;
    e.train.epochs = epochs;
    e.train.batch_size = batch_size;
    e.train.target_accuracy = target_accuracy;
    e.max_rounds = max_rounds;
    e.model_size_units = model_size_units;
    e.lambda = lambda;
    e.challenge_k = challenge_k;
    e.prove_ms_per_sample = prove_ms_per_sample;
    e.verify_ms_per_sample = verify_ms_per_sample;
    e.ingress_ms_per_unit = ingress_ms_per_unit;
    e.pow_difficulty = pow_difficulty;
    e.pow_trial_ms = pow_trial_ms;
    e.seed = seed;
    return e;
  }
};

inline Json to_json(const ExperimentConfig& c) {
  return Json{
      {"modes", c.modes},
      {"n_nodes", c.n_nodes},
      {"n_pools", c.n_pools},
      {"alphas", c.alphas},
      {"seeds", c.seeds},
      {"target_accuracy", c.target_accuracy},
      {"deadline_ms", c.deadline_ms},
      {"dataset", c.dataset},
      {"synthetic",
       {{"samples", c.synthetic.samples},
        {"features", c.synthetic.features},
        {"classes", c.synthetic.classes},
        {"separation", c.synthetic.separation}}},
      {"holdout", {{"validation", c.validation_size}, {"challenge", c.challenge_size}}},
      {"model", {{"hidden", c.hidden}}},
      {"train",
       {{"learning_rate", c.learning_rate},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"max_rounds", c.max_rounds}}},
      {"latency_alpha", c.latency_alpha},
      {"accuracy_miners", c.accuracy_miners},
      {"topology",
       {{"kind", c.topology},
        {"lo_ms", c.uniform.lo},
        {"hi_ms", c.uniform.hi},
        {"clusters", c.clustered.clusters},
        {"intra_lo_ms", c.clustered.intra_lo},
        {"intra_hi_ms", c.clustered.intra_hi},
        {"inter_lo_ms", c.clustered.inter_lo},
        {"inter_hi_ms", c.clustered.inter_hi}}},
      {"engine",
       {{"model_size_units", c.model_size_units},
        {"lambda", c.lambda},
        {"challenge_k", c.challenge_k},
        {"prove_ms_per_sample", c.prove_ms_per_sample},
        {"verify_ms_per_sample", c.verify_ms_per_sample},
        {"ingress_ms_per_unit", c.ingress_ms_per_unit},
        {"pow_difficulty", c.pow_difficulty},
        {"pow_trial_ms", c.pow_trial_ms}}},
      {"output_dir", c.output_dir},
      {"jobs", c.jobs},
  };
}

namespace detail {

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  try {
    using detail::read;
    read(j, "modes", c.modes);
    read(j, "n_nodes", c.n_nodes);
    read(j, "n_pools", c.n_pools);
    read(j, "alphas", c.alphas);
    read(j, "seeds", c.seeds);
    read(j, "target_accuracy", c.target_accuracy);
    read(j, "deadline_ms", c.deadline_ms);
    read(j, "dataset", c.dataset);
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      read(s, "samples", c.synthetic.samples);
      read(s, "features", c.synthetic.features);
      read(s, "classes", c.synthetic.classes);
      read(s, "separation", c.synthetic.separation);
    }
    if (j.contains("holdout")) {
      read(j.at("holdout"), "validation", c.validation_size);
      read(j.at("holdout"), "challenge", c.challenge_size);
    }
    if (j.contains("model")) read(j.at("model"), "hidden", c.hidden);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read(t, "learning_rate", c.learning_rate);
      read(t, "epochs", c.epochs);
      read(t, "batch_size", c.batch_size);
      read(t, "max_rounds", c.max_rounds);
    }
    read(j, "latency_alpha", c.latency_alpha);
    read(j, "accuracy_miners", c.accuracy_miners);
    if (j.contains("topology")) {
      const auto& t = j.at("topology");
      read(t, "kind", c.topology);
      read(t, "lo_ms", c.uniform.lo);
      read(t, "hi_ms", c.uniform.hi);
      read(t, "clusters", c.clustered.clusters);
      read(t, "intra_lo_ms", c.clustered.intra_lo);
      read(t, "intra_hi_ms", c.clustered.intra_hi);
      read(t, "inter_lo_ms", c.clustered.inter_lo);
      read(t, "inter_hi_ms", c.clustered.inter_hi);
    }
    if (j.contains("engine")) {
      const auto& e = j.at("engine");
      read(e, "model_size_units", c.model_size_units);
      read(e, "lambda", c.lambda);
      read(e, "challenge_k", c.challenge_k);
      read(e, "prove_ms_per_sample", c.prove_ms_per_sample);
      read(e, "verify_ms_per_sample", c.verify_ms_per_sample);
      read(e, "ingress_ms_per_unit", c.ingress_ms_per_unit);
      read(e, "pow_difficulty", c.pow_difficulty);
      read(e, "pow_trial_ms", c.pow_trial_ms);
    }
    read(j, "output_dir", c.output_dir);
    read(j, "jobs", c.jobs);
  } catch (const Json::exception& e) {
    throw Error(Errc::invalid_config, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open config " + path);
  try {
    return config_from_json(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw Error(Errc::invalid_config, std::string("config: ") + e.what());
  }
}

// SHA-256 over the canonical JSON of every result-affecting field.
inline std::string fingerprint(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  j.erase("jobs");
  return to_hex(sha256(j.dump()));
}

// Validation / challenge / training splits of the fixture or the synthetic set.
struct DataBundle {
  fed::Dataset validation;
  fed::Dataset challenge;
  fed::Dataset train;
};

inline DataBundle load_data(const ExperimentConfig& c, std::uint64_t seed) {
  fed::Dataset base = c.dataset.empty()
                          ? fed::make_synthetic(c.synthetic.samples, c.synthetic.features,
                                                c.synthetic.classes, seed, c.synthetic.separation)
                          : fed::load_dataset(c.dataset);
  if (base.size() < c.validation_size + c.challenge_size + 1) {
    throw Error(Errc::partition_underflow, "dataset smaller than the held-out splits");
  }
  auto [validation, rest] = fed::split_head(base, c.validation_size);
  auto [challenge, train] = fed::split_head(rest, c.challenge_size);
  return {std::move(validation), std::move(challenge), std::move(train)};
}

inline chain::Task make_task(const ExperimentConfig& c, const DataBundle& data, std::uint64_t id) {
  chain::Task t;
  t.id = id;
  t.arch = {data.train.n_features, c.hidden, data.train.n_classes};
  t.reference = fed::histogram(data.train);
  t.target_accuracy = c.target_accuracy;
  t.deadline = c.deadline_ms;
  return t;
}

inline chain::RoundEngine make_engine(const ExperimentConfig& c, const DataBundle& data,
                                      std::size_t n_nodes, double alpha, std::uint64_t seed) {
  auto net = chain::make_network(n_nodes, derive_seed(seed, "network", n_nodes), c.topology_model());
  auto part = fed::partition_noniid(data.train, n_nodes, alpha, derive_seed(seed, "split", n_nodes));
  return chain::RoundEngine(std::move(net), std::move(part.parts), {data.validation, data.challenge},
                            c.engine(seed));
}

struct LatencyRecord {
  std::string mode;
  std::size_t n_nodes = 0;
  std::size_t n_pools = 0;
  std::uint64_t seed = 0;
  std::size_t rounds = 0;
  std::size_t winner_pool = 0;
  double latency_ms = 0.0;
  double accuracy = 0.0;
  bool block = false;
};

struct AccuracyRecord {
  std::string scheme;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::size_t> rounds_to_target;
  double final_accuracy = 0.0;
  std::vector<fed::RoundMetric> curve;
};

namespace detail {

// Runs cells in `jobs` worker threads; results land by index, so output
// order never depends on scheduling.
template <typename Fn>
void run_cells(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t h = xs.size() / 2;
  return xs.size() % 2 ? xs[h] : 0.5 * (xs[h - 1] + xs[h]);
}

}  // namespace detail

// One row per (mode, n_nodes, n_pools, seed); pools > nodes are skipped.
// Baselines ignore the pool count, so one run per (mode, n, seed) fills
// every pool column.
inline std::vector<LatencyRecord> run_latency_grid(const ExperimentConfig& c,
                                                   std::ostream* warn = &std::cerr) {
  c.validate();
  struct Cell {
    std::string mode;
    std::size_t n, pools;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& mode : c.modes) {
    for (auto n : c.n_nodes) {
      for (auto p : c.n_pools) {
        if (p > n) {
          if (warn) *warn << "warning: skipping " << mode << " n=" << n << " pools=" << p << " (pools > nodes)\n";
          continue;
        }
        for (auto s : c.seeds) cells.push_back({mode, n, p, s});
      }
    }
  }

  std::map<std::tuple<std::string, std::size_t, std::uint64_t>, std::size_t> first_of;
  std::vector<std::size_t> unique;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    if (cell.mode == "fedchain") {
      unique.push_back(i);
    } else if (first_of.emplace(std::make_tuple(cell.mode, cell.n, cell.seed), i).second) {
      unique.push_back(i);
    }
  }

  std::vector<LatencyRecord> out(cells.size());
  detail::run_cells(unique.size(), c.jobs, [&](std::size_t u) {
    const Cell& cell = cells[unique[u]];
    const auto data = load_data(c, cell.seed);
    auto engine = make_engine(c, data, cell.n, c.latency_alpha, cell.seed);
    const auto task = make_task(c, data, 1);
    chain::Ledger ledger;
    const auto mode = chain::parse_mode(cell.mode);
    const auto res = mode == chain::ConsensusMode::fedchain
                         ? engine.run_fedchain(ledger, task, engine.form_pools(cell.pools, task))
                         : engine.run_baseline(ledger, task, mode);
    out[unique[u]] = {cell.mode, cell.n, cell.pools, cell.seed, res.rounds, res.winner_pool,
                      res.latency_ms, res.accuracy, res.block.has_value()};
  });
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].mode == "fedchain") continue;
    const auto src = first_of.at(std::make_tuple(cells[i].mode, cells[i].n, cells[i].seed));
    out[i] = out[src];
    out[i].n_pools = cells[i].pools;
  }
  return out;
}

// KL vs FedAvg aggregation over one pool of `accuracy_miners` miners, for
// every (alpha, seed); each run halts at the accuracy target.
inline std::vector<AccuracyRecord> run_accuracy_sweep(const ExperimentConfig& c) {
  c.validate();
  struct Cell {
    fed::Scheme scheme;
    double alpha;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto scheme : {fed::Scheme::fedavg, fed::Scheme::kl}) {
    for (auto a : c.alphas) {
      for (auto s : c.seeds) cells.push_back({scheme, a, s});
    }
  }
  std::vector<AccuracyRecord> out(cells.size());
  detail::run_cells(cells.size(), c.jobs, [&](std::size_t i) {
    const Cell& cell = cells[i];
    const auto data = load_data(c, cell.seed);
    auto cfg = c;
    auto engine_cfg = c.engine(cell.seed);
    engine_cfg.scheme = cell.scheme;
    auto net = chain::make_network(c.accuracy_miners, derive_seed(cell.seed, "network", c.accuracy_miners),
                                   c.topology_model());
    auto part = fed::partition_noniid(data.train, c.accuracy_miners, cell.alpha,
                                      derive_seed(cell.seed, "split", c.accuracy_miners));
    chain::RoundEngine engine(std::move(net), std::move(part.parts), {data.validation, data.challenge},
                              engine_cfg);
    const auto task = make_task(cfg, data, 1);
    chain::Ledger ledger;
    const auto res = engine.run_fedchain(ledger, task, engine.form_pools(1, task));
    AccuracyRecord r;
    r.scheme = cell.scheme == fed::Scheme::kl ? "kl" : "fedavg";
    r.alpha = cell.alpha;
    r.seed = cell.seed;
    r.curve = res.metrics;
    if (res.block) r.rounds_to_target = res.rounds;
    r.final_accuracy = r.curve.empty() ? 0.0 : r.curve.back().accuracy;
    out[i] = std::move(r);
  });
  return out;
}

struct TrendCheck {
  std::string name;
  bool applicable = false;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::optional<double> mean_latency(const std::vector<LatencyRecord>& rs, const std::string& mode,
                                          std::size_t n, std::size_t pools) {
  std::vector<double> xs;
  for (const auto& r : rs) {
    if (r.mode == mode && r.n_nodes == n && r.n_pools == pools) xs.push_back(r.latency_ms);
  }
  if (xs.empty()) return std::nullopt;
  return mean_sd(xs).first;
}

// Any pool column works for baselines; they do not depend on it.
inline std::optional<double> mean_latency_any_pool(const std::vector<LatencyRecord>& rs,
                                                   const std::string& mode, std::size_t n) {
  for (const auto& r : rs) {
    if (r.mode == mode && r.n_nodes == n) return mean_latency(rs, mode, n, r.n_pools);
  }
  return std::nullopt;
}

// Runs that never reach the target count as one round past the budget.
inline std::vector<double> rounds_of(const std::vector<AccuracyRecord>& rs, const std::string& scheme,
                                     double alpha, std::size_t max_rounds) {
  std::vector<double> xs;
  for (const auto& r : rs) {
    if (r.scheme == scheme && r.alpha == alpha) {
      xs.push_back(static_cast<double>(r.rounds_to_target.value_or(max_rounds + 1)));
    }
  }
  return xs;
}

}  // namespace detail

inline std::vector<TrendCheck> latency_trends(const std::vector<LatencyRecord>& rs) {
  using detail::fmt;
  std::vector<TrendCheck> out;
  for (const std::string rival : {"gfl_ring", "fedavg_central"}) {
    TrendCheck t{"fedchain < " + rival + " at n=50, pools=5", false, false, ""};
    const auto a = detail::mean_latency(rs, "fedchain", 50, 5);
    const auto b = detail::mean_latency(rs, rival, 50, 5);
    if (a && b) {
      t.applicable = true;
      t.passed = *a < *b;
      t.detail = fmt(*a, 1) + " vs " + fmt(*b, 1) + " ms";
    }
    out.push_back(t);
  }
  {
    TrendCheck t{"fedchain latency decreasing over pools {2,5,10} at n=50", false, false, ""};
    std::vector<double> ys;
    for (std::size_t p : {2, 5, 10}) {
      if (auto m = detail::mean_latency(rs, "fedchain", 50, p)) ys.push_back(*m);
    }
    if (ys.size() == 3) {
      t.applicable = true;
      t.passed = ys[0] > ys[1] && ys[1] > ys[2];
      t.detail = fmt(ys[0], 1) + " > " + fmt(ys[1], 1) + " > " + fmt(ys[2], 1) + " ms";
    }
    out.push_back(t);
  }
  {
    TrendCheck t{"fedavg_central latency increasing over n {10,20,40}", false, false, ""};
    std::vector<double> ys;
    for (std::size_t n : {10, 20, 40}) {
      if (auto m = detail::mean_latency_any_pool(rs, "fedavg_central", n)) ys.push_back(*m);
    }
    if (ys.size() == 3) {
      t.applicable = true;
      t.passed = ys[0] < ys[1] && ys[1] < ys[2];
      t.detail = fmt(ys[0], 1) + " < " + fmt(ys[1], 1) + " < " + fmt(ys[2], 1) + " ms";
    }
    out.push_back(t);
  }
  return out;
}

inline std::vector<TrendCheck> accuracy_trends(const std::vector<AccuracyRecord>& rs,
                                               std::size_t max_rounds) {
  using detail::fmt;
  std::vector<TrendCheck> out;
  {
    TrendCheck t{"alpha=0.8: kl median rounds-to-target < fedavg", false, false, ""};
    const auto kl = detail::rounds_of(rs, "kl", 0.8, max_rounds);
    const auto fa = detail::rounds_of(rs, "fedavg", 0.8, max_rounds);
    if (!kl.empty() && !fa.empty()) {
      t.applicable = true;
      t.passed = detail::median(kl) < detail::median(fa);
      t.detail = "median " + fmt(detail::median(kl), 1) + " vs " + fmt(detail::median(fa), 1) + " rounds";
    }
    out.push_back(t);
  }
  {
    TrendCheck t{"alpha=0.1: kl and fedavg within 2 pooled sd", false, false, ""};
    const auto kl = detail::rounds_of(rs, "kl", 0.1, max_rounds);
    const auto fa = detail::rounds_of(rs, "fedavg", 0.1, max_rounds);
    if (!kl.empty() && !fa.empty()) {
      const auto [m1, s1] = detail::mean_sd(kl);
      const auto [m2, s2] = detail::mean_sd(fa);
      const double pooled = std::sqrt((s1 * s1 + s2 * s2) / 2.0);
      t.applicable = true;
      t.passed = std::abs(m1 - m2) <= 2.0 * pooled;
      t.detail = "|" + fmt(m1, 2) + " - " + fmt(m2, 2) + "| <= 2 x " + fmt(pooled, 2);
    }
    out.push_back(t);
  }
  return out;
}

inline bool all_passed(const std::vector<TrendCheck>& ts) {
  return std::all_of(ts.begin(), ts.end(), [](const TrendCheck& t) { return !t.applicable || t.passed; });
}

inline void write_latency_csv(std::ostream& os, const std::vector<LatencyRecord>& rs) {
  os << "mode,n_nodes,n_pools,round,winner_pool,latency_ms,accuracy\n";
  for (const auto& r : rs) {
    os << r.mode << ',' << r.n_nodes << ',' << r.n_pools << ',' << r.rounds << ',' << r.winner_pool << ','
       << detail::fmt(r.latency_ms) << ',' << detail::fmt(r.accuracy) << '\n';
  }
}

inline void write_accuracy_csv(std::ostream& os, const std::vector<AccuracyRecord>& rs) {
  os << "scheme,alpha,seed,rounds_to_target,final_accuracy\n";
  for (const auto& r : rs) {
    os << r.scheme << ',' << detail::fmt(r.alpha, 2) << ',' << r.seed << ','
       << (r.rounds_to_target ? std::to_string(*r.rounds_to_target) : std::string("NA")) << ','
       << detail::fmt(r.final_accuracy) << '\n';
  }
}

inline void write_curves_csv(std::ostream& os, const std::vector<AccuracyRecord>& rs) {
  os << "scheme,alpha,seed,round,accuracy,loss\n";
  for (const auto& r : rs) {
    for (const auto& m : r.curve) {
      os << r.scheme << ',' << detail::fmt(r.alpha, 2) << ',' << r.seed << ',' << m.round << ','
         << detail::fmt(m.accuracy) << ',' << detail::fmt(m.loss) << '\n';
    }
  }
}

struct Report {
  std::vector<LatencyRecord> latency;
  std::vector<AccuracyRecord> accuracy;
};

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error(Errc::io_error, "cannot write " + p.string());
  return os;
}

}  // namespace detail

// Writes report.md plus one CSV per record kind present. Returns the trend
// checks that were evaluated.
inline std::vector<TrendCheck> emit_report(const Report& records, const ExperimentConfig& c,
                                           const std::filesystem::path& dir) {
  if (records.latency.empty() && records.accuracy.empty()) {
    throw Error(Errc::invalid_config, "no records to report");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw Error(Errc::io_error, "cannot create " + dir.string());

  std::vector<TrendCheck> trends;
  std::ostringstream md;
  md << "# FedChain-Sim report\n\n";
  md << "Config fingerprint: `" << fingerprint(c) << "`\n\n";
  md << "Seeds: ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) md << (i ? ", " : "") << c.seeds[i];
  md << "\n\n";

  if (!records.latency.empty()) {
    auto os = detail::open_out(dir / "latency.csv");
    write_latency_csv(os, records.latency);
    md << "## Latency to first accepted block\n\n";
    md << "| mode | n_nodes | n_pools | mean ms | sd ms | blocks |\n|---|---|---|---|---|---|\n";
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> keys;
    for (const auto& r : records.latency) {
      auto k = std::make_tuple(r.mode, r.n_nodes, r.n_pools);
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    for (const auto& [mode, n, p] : keys) {
      std::vector<double> xs;
      std::size_t blocks = 0;
      for (const auto& r : records.latency) {
        if (r.mode == mode && r.n_nodes == n && r.n_pools == p) {
          xs.push_back(r.latency_ms);
          blocks += r.block;
        }
      }
      const auto [m, s] = detail::mean_sd(xs);
      md << "| " << mode << " | " << n << " | " << p << " | " << detail::fmt(m, 1) << " | "
         << detail::fmt(s, 1) << " | " << blocks << "/" << xs.size() << " |\n";
    }
    md << "\n";
    auto lt = latency_trends(records.latency);
    trends.insert(trends.end(), lt.begin(), lt.end());
  }

  if (!records.accuracy.empty()) {
    auto a = detail::open_out(dir / "accuracy.csv");
    write_accuracy_csv(a, records.accuracy);
    auto cv = detail::open_out(dir / "accuracy_curves.csv");
    write_curves_csv(cv, records.accuracy);
    md << "## Rounds to " << detail::fmt(c.target_accuracy, 2) << " accuracy\n\n";
    md << "| scheme | alpha | median | mean | sd | reached |\n|---|---|---|---|---|---|\n";
    for (const std::string scheme : {"fedavg", "kl"}) {
      for (double alpha : c.alphas) {
        const auto xs = detail::rounds_of(records.accuracy, scheme, alpha, c.max_rounds);
        if (xs.empty()) continue;
        std::size_t reached = 0;
        for (const auto& r : records.accuracy) reached += r.scheme == scheme && r.alpha == alpha && r.rounds_to_target;
        const auto [m, s] = detail::mean_sd(xs);
        md << "| " << scheme << " | " << detail::fmt(alpha, 2) << " | " << detail::fmt(detail::median(xs), 1)
           << " | " << detail::fmt(m, 2) << " | " << detail::fmt(s, 2) << " | " << reached << "/" << xs.size()
           << " |\n";
      }
    }
    md << "\n";
    auto at = accuracy_trends(records.accuracy, c.max_rounds);
    trends.insert(trends.end(), at.begin(), at.end());
  }

  md << "## Trend assertions\n\n";
  for (const auto& t : trends) {
    md << "- " << (!t.applicable ? "SKIP" : t.passed ? "PASS" : "FAIL") << ": " << t.name;
    if (!t.detail.empty()) md << " (" << t.detail << ")";
    md << "\n";
  }
  auto os = detail::open_out(dir / "report.md");
  os << md.str();
  return trends;
}

// One task end to end with every artifact: ledger, trace, metrics, pools.
struct SingleRound {
  chain::RoundResult result;
  chain::Ledger ledger;
  std::optional<pools::PoolAssignment> assignment;
};

inline SingleRound run_single(const ExperimentConfig& c, chain::ConsensusMode mode, std::size_t n_nodes,
                              std::size_t n_pools, std::uint64_t seed, bool trace = true) {
  c.validate();
  if (n_pools > n_nodes) throw Error(Errc::too_many_pools, "more pools than nodes");
  const auto data = load_data(c, seed);
  auto engine = make_engine(c, data, n_nodes, c.latency_alpha, seed);
  engine.enable_trace(trace);
  const auto task = make_task(c, data, 1);
  SingleRound out;
  if (mode == chain::ConsensusMode::fedchain) {
    out.assignment = engine.form_pools(n_pools, task);
    out.result = engine.run_fedchain(out.ledger, task, *out.assignment);
  } else {
    out.result = engine.run_baseline(out.ledger, task, mode);
  }
  return out;
}

}  // namespace fedchain::experiments
