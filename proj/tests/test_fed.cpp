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

#include <cmath>
#include <sstream>

#include "fedchain/fed.hpp"

using namespace fedchain;
using namespace fedchain::fed;

namespace {

// Three samples, two features, three classes.
Dataset tiny() {
  Dataset d{2, 3, {}, {}};
  const double rows[3][2] = {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.5}};
  const std::size_t labels[3] = {0, 1, 2};
  for (int i = 0; i < 3; ++i) d.add(rows[i], labels[i]);
  return d;
}

Model tiny_model() {
  // W (3x2 row-major) then b.
  return Model{{2, 0, 3}, {0.5, -0.2, 0.1, 0.3, -0.4, 0.2, 0.05, -0.1, 0.0}};
}

// Independent scalar cross-entropy for the softmax model above.
double scalar_loss(const Model& m, const Dataset& d) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double z[3];
    for (int c = 0; c < 3; ++c) {
      z[c] = m.weights[6 + c];
      for (int k = 0; k < 2; ++k) z[c] += m.weights[c * 2 + k] * d.x[i * 2 + k];
    }
    double s = 0.0;
    for (double v : z) s += std::exp(v);
    total += -std::log(std::exp(z[d.y[i]]) / s);
  }
  return total;
}

LabelHistogram hist(std::vector<double> f) { return LabelHistogram{std::move(f)}; }

template <typename Fn>
void expect_code(Fn fn, Errc code) {
  try {
    fn();
    FAIL() << "no throw";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code);
  }
}

}  // namespace

TEST(LocalLoss, UniformOutputIsLnC) {
  const Architecture arch{4, 0, 10};
  const Model zero{arch, std::vector<double>(arch.parameter_count(), 0.0)};
  const auto d = make_synthetic(37, 4, 10, 3);
  EXPECT_NEAR(local_loss(zero, d), 37 * std::log(10.0), 1e-9);
  EXPECT_NEAR(std::log(10.0), 2.302585, 1e-6);
}

TEST(LocalLoss, ConfidentCorrectModelIsZero) {
  Dataset d{1, 2, {}, {}};
  d.add(std::vector<double>{1.0}, 1);
  const Model m{{1, 0, 2}, {0.0, 0.0, -500.0, 500.0}};
  EXPECT_NEAR(local_loss(m, d), 0.0, 1e-12);
}

TEST(LocalLoss, MatchesScalarRecomputation) {
  EXPECT_NEAR(local_loss(tiny_model(), tiny()), scalar_loss(tiny_model(), tiny()), 1e-12);
}

TEST(LocalLoss, Errors) {
  Model bad = tiny_model();
  bad.weights[0] = std::nan("");
  expect_code([&] { local_loss(bad, tiny()); }, Errc::non_finite_loss);
  Model shape = tiny_model();
  shape.weights.pop_back();
  expect_code([&] { local_loss(shape, tiny()); }, Errc::aggregation_shape_error);
}

TEST(Predict, ProbabilitiesSumToOne) {
  const auto d = make_synthetic(20, 5, 4, 1);
  for (std::size_t hidden : {0, 6}) {
    const auto m = init_model({5, hidden, 4}, 2, 0.5);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto p = predict_proba(m, d.row(i));
      double s = 0;
      for (double v : p) s += v;
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LocalTrain, ZeroLearningRateLeavesModel) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  const auto m = tiny_model();
  EXPECT_EQ(local_train(m, tiny(), cfg, 1).weights, m.weights);
}

TEST(LocalTrain, SingleSampleStepIsPlainGradientDescent) {
  Dataset d{2, 3, {}, {}};
  d.add(std::vector<double>{0.7, -1.2}, 2);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 1;
  const auto m = tiny_model();
  const auto g = loss_gradient(m, d);
  const auto out = local_train(m, d, cfg, 9);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(out.weights[k], m.weights[k] - 0.1 * g[k], 1e-15);
}

TEST(LocalTrain, ReducesLossOnSeparableFixture) {
  Dataset d{2, 2, {}, {}};
  Rng rng(5);
  for (int i = 0; i < 60; ++i) {
    const std::size_t y = i % 2;
    const double c = y ? 2.0 : -2.0;
    d.add(std::vector<double>{c + 0.3 * rng.normal(), c + 0.3 * rng.normal()}, y);
  }
  const auto m = init_model({2, 0, 2}, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  EXPECT_LT(local_loss(local_train(m, d, cfg, 4), d), local_loss(m, d));
}

TEST(LocalTrain, DivergenceAndBadConfig) {
  Dataset d{1, 2, {}, {}};
  d.add(std::vector<double>{1e200}, 0);
  d.add(std::vector<double>{-1e200}, 1);
  TrainConfig cfg;
  cfg.learning_rate = 1e10;
  cfg.epochs = 3;
  expect_code([&] { local_train(init_model({1, 0, 2}, 1), d, cfg, 1); }, Errc::training_diverged);
  TrainConfig zero_epochs;
  zero_epochs.epochs = 0;
  expect_code([&] { local_train(tiny_model(), tiny(), zero_epochs, 1); }, Errc::invalid_config);
}

TEST(GradientCheck, CorrectGradientBelowTolerance) {
  const auto d = make_synthetic(12, 4, 3, 8);
  EXPECT_LT(gradient_check(init_model({4, 0, 3}, 1, 0.3), d), 1e-4);
  EXPECT_LT(gradient_check(init_model({4, 5, 3}, 1, 0.3), d), 1e-4);
}

TEST(GradientCheck, DoubledGradientIsCaught) {
  const auto d = make_synthetic(12, 4, 3, 8);
  const auto doubled = [](const Model& m, const Dataset& ds) {
    auto g = loss_gradient(m, ds);
    for (auto& v : g) v *= 2;
    return g;
  };
  EXPECT_NEAR(gradient_check(init_model({4, 0, 3}, 1, 0.3), d, doubled), 1.0, 1e-3);
}

TEST(GradientCheck, MatchesIndependentFiniteDifference) {
  const auto m = tiny_model();
  const auto d = tiny();
  const auto g = loss_gradient(m, d);
  double worst = 0;
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    Model up = m, down = m;
    up.weights[k] += 1e-4;
    down.weights[k] -= 1e-4;
    const double num = (scalar_loss(up, d) - scalar_loss(down, d)) / 2e-4;
    worst = std::max(worst, std::fabs(g[k] - num) / std::max(std::fabs(num), 1e-6));
  }
  EXPECT_NEAR(gradient_check(m, d), worst, 1e-6);
}

TEST(FedAvgWeights, Examples) {
  const auto near = [](const AggregationWeights& w, std::vector<double> e) {
    ASSERT_EQ(w.w.size(), e.size());
    for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(w.w[i], e[i], 1e-12);
  };
  near(fedavg_weights(std::vector<std::size_t>{100, 100}), {0.5, 0.5});
  near(fedavg_weights(std::vector<std::size_t>{10, 30}), {0.25, 0.75});
  near(fedavg_weights(std::vector<std::size_t>{7, 11, 2}), {0.35, 0.55, 0.10});
  EXPECT_THROW(fedavg_weights(std::vector<std::size_t>{3, 0}), Error);
}

TEST(KlDivergence, ClosedForms) {
  EXPECT_NEAR(kl_divergence(hist({0.2, 0.3, 0.5}), hist({0.2, 0.3, 0.5})), 0.0, 1e-12);

  const double eps = 1e-6;
  const double p0 = (1 + eps) / (1 + 2 * eps), p1 = eps / (1 + 2 * eps);
  const double expect = p0 * std::log2(p0 / 0.5) + p1 * std::log2(p1 / 0.5);
  EXPECT_NEAR(kl_divergence(smooth(hist({1, 0})), hist({0.5, 0.5})), expect, 1e-9);
  EXPECT_NEAR(expect, 1.0, 1e-4);

  const double closed = 0.5 * std::log2(2.0) + 0.5 * std::log2(2.0 / 3.0);
  EXPECT_NEAR(kl_divergence(hist({0.5, 0.5}), hist({0.25, 0.75})), closed, 1e-9);
  EXPECT_NEAR(closed, 0.2075, 1e-4);
}

TEST(KlDivergence, NonNegativeAndIndiscernibles) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = rng.uniform() * (rng.uniform() < 0.3 ? 0 : 1);
    for (auto& v : b) v = rng.uniform();
    a[0] += 1e-3;
    const auto pa = smooth(hist(a)), pb = smooth(hist(b));
    EXPECT_GE(kl_divergence(pa, pb), 0.0);
    EXPECT_EQ(kl_divergence(pa, pa), 0.0);
  }
}

TEST(KlDivergence, ZeroReferenceMassUndefined) {
  expect_code([] { kl_divergence(hist({0.5, 0.5}), hist({1.0, 0.0})); }, Errc::undefined_divergence);
  expect_code([] { kl_divergence(hist({1.0}), hist({0.5, 0.5})); }, Errc::undefined_divergence);
}

TEST(KlWeights, Examples) {
  const auto ref = hist({0.25, 0.25, 0.25, 0.25});
  const std::vector<std::size_t> sizes{10, 20, 30};
  const std::vector<LabelHistogram> iid{ref, ref, ref};
  for (double w : kl_weights(iid, ref, sizes).w) EXPECT_NEAR(w, 1.0 / 3.0, 1e-12);

  // D_KL against uniform over 2 labels: [0.5,0.5] -> 0, [1,0] -> 1 bit.
  const auto ref2 = hist({0.5, 0.5});
  const std::vector<LabelHistogram> two{hist({0.5, 0.5}), hist({1.0, 0.0})};
  const auto w2 = kl_weights(two, ref2, std::vector<std::size_t>{5, 5});
  EXPECT_NEAR(w2.w[0], 1.0, 1e-12);
  EXPECT_NEAR(w2.w[1], 0.0, 1e-12);

  // Histograms with D_KL exactly {0.2, 0.4, 0.8} against a uniform 2-label reference:
  // D = 1 - H(p) bits, so solve H(p) = 0.8, 0.6, 0.2 by bisection.
  const auto with_kl = [](double target) {
    double lo = 0.5, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      const double d = 1.0 + mid * std::log2(mid) + (1 - mid) * std::log2(1 - mid);
      (d < target ? lo : hi) = mid;
    }
    return hist({lo, 1 - lo});
  };
  const std::vector<LabelHistogram> three{with_kl(0.2), with_kl(0.4), with_kl(0.8)};
  const auto w3 = kl_weights(three, ref2, std::vector<std::size_t>{1, 1, 1});
  EXPECT_NEAR(w3.w[0], 0.5, 1e-9);
  EXPECT_NEAR(w3.w[1], 0.375, 1e-9);
  EXPECT_NEAR(w3.w[2], 0.125, 1e-9);
}

TEST(KlWeights, AllClampedFallsBackToFedAvg) {
  const auto ref = smooth(hist({0.5, 0.5, 0, 0}));
  const std::vector<LabelHistogram> skewed{smooth(hist({0, 0, 1, 0})), smooth(hist({0, 0, 0, 1}))};
  const auto w = kl_weights(skewed, ref, std::vector<std::size_t>{10, 30});
  EXPECT_NEAR(w.w[0], 0.25, 1e-12);
  EXPECT_NEAR(w.w[1], 0.75, 1e-12);
  EXPECT_EQ(w.scheme, Scheme::kl);
}

TEST(Aggregate, Examples) {
  const Architecture arch{1, 0, 1};
  const Model a{arch, {0, 0}}, b{arch, {4, 8}};
  const std::vector<Model> single{b};
  EXPECT_EQ(aggregate(single, {{1.0}, Scheme::fedavg}).weights, b.weights);
  const std::vector<Model> same{b, b};
  const auto s = aggregate(same, {{0.3, 0.7}, Scheme::kl});
  EXPECT_NEAR(s.weights[0], 4, 1e-12);
  EXPECT_NEAR(s.weights[1], 8, 1e-12);
  const std::vector<Model> pair{a, b};
  EXPECT_EQ(aggregate(pair, {{0.25, 0.75}, Scheme::fedavg}).weights, (std::vector<double>{3, 6}));
}

TEST(Aggregate, ShapeErrors) {
  const Model a{{1, 0, 1}, {0, 0}}, c{{2, 0, 1}, {0, 0, 0}};
  const std::vector<Model> mixed{a, c};
  expect_code([&] { aggregate(mixed, {{0.5, 0.5}, Scheme::fedavg}); }, Errc::aggregation_shape_error);
  const std::vector<Model> one{a};
  expect_code([&] { aggregate(one, {{0.5, 0.5}, Scheme::fedavg}); }, Errc::aggregation_shape_error);
}

TEST(Partition, IidLimitMatchesGlobal) {
  const auto base = make_synthetic(2000, 3, 10, 4);
  const auto p = partition_noniid(base, 8, 0.0, 1);
  const auto g = histogram(base);
  for (const auto& h : p.histograms) {
    double chi2 = 0;
    for (std::size_t c = 0; c < 10; ++c) chi2 += 250 * std::pow(h.freq[c] - g.freq[c], 2) / g.freq[c];
    EXPECT_LT(chi2, 1.0);
  }
}

TEST(Partition, SkewLimitIsSingleLabel) {
  const auto base = make_synthetic(2000, 3, 10, 4);
  const auto p = partition_noniid(base, 6, 1.0, 1);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(p.histograms[k].freq[k % 10], 1.0, 1e-12);
}

TEST(Partition, MeanDivergenceOrderedInAlpha) {
  const auto base = make_synthetic(2000, 3, 10, 4);
  const LabelHistogram uniform{std::vector<double>(10, 0.1)};
  const auto mean_kl = [&](double alpha) {
    const auto p = partition_noniid(base, 4, alpha, 7);
    double s = 0;
    for (const auto& h : p.histograms) s += kl_divergence(h, uniform);
    return s / 4;
  };
  const double lo = mean_kl(0.0), mid = mean_kl(0.5), hi = mean_kl(1.0);
  EXPECT_LT(lo, mid);
  EXPECT_LT(mid, hi);
}

TEST(Partition, SizesAndErrors) {
  const auto base = make_synthetic(103, 2, 5, 1);
  const auto p = partition_noniid(base, 10, 0.3, 2);
  for (const auto& d : p.parts) EXPECT_EQ(d.size(), 10u);
  expect_code([&] { partition_noniid(base, 200, 0.1, 1); }, Errc::partition_underflow);
  expect_code([&] { partition_noniid(base, 2, 1.5, 1); }, Errc::invalid_config);
}

TEST(Evaluate, OracleChanceAndHandCount) {
  // A model that reads the label off a one-hot feature is perfect.
  Dataset onehot{3, 3, {}, {}};
  for (std::size_t i = 0; i < 30; ++i) {
    std::vector<double> x(3, 0.0);
    x[i % 3] = 1.0;
    onehot.add(x, i % 3);
  }
  Model oracle{{3, 0, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0}};
  EXPECT_EQ(evaluate(oracle, onehot), 1.0);

  const auto big = make_synthetic(4000, 6, 10, 2, 0.0);
  const double chance = evaluate(init_model({6, 0, 10}, 3, 1.0), big);
  EXPECT_NEAR(chance, 0.1, 3 * std::sqrt(0.09 / 4000) + 0.02);

  // Ten samples, counted by hand against the tiny model.
  Dataset ten{2, 3, {}, {}};
  const double xs[10][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}, {2, 2}, {-2, 1}, {1, -1}, {0.5, 0.5}, {-1, -1}, {3, 0}};
  const std::size_t ys[10] = {0, 1, 2, 0, 0, 2, 0, 1, 2, 0};
  std::size_t correct = 0;
  const auto m = tiny_model();
  for (int i = 0; i < 10; ++i) {
    ten.add(xs[i], ys[i]);
    double best = -1e9;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double z = m.weights[6 + c] + m.weights[c * 2] * xs[i][0] + m.weights[c * 2 + 1] * xs[i][1];
      if (z > best) best = z, arg = c;
    }
    correct += arg == ys[i];
  }
  EXPECT_DOUBLE_EQ(evaluate(m, ten), correct / 10.0);
}

TEST(DatasetCsv, RoundTrip) {
  const auto d = make_synthetic(25, 3, 4, 9);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  const auto back = read_dataset_csv(ss);
  EXPECT_EQ(back.y, d.y);
  EXPECT_EQ(back.x, d.x);
  std::stringstream bad("3,2,2\n0,1.0,2.0\n");
  expect_code([&] { read_dataset_csv(bad); }, Errc::io_error);
}

TEST(RoundMetrics, Header) {
  std::ostringstream os;
  const std::vector<RoundMetric> rows{{1, 0, 0.5, 1.25, 10}};
  write_round_metrics(os, rows);
  EXPECT_EQ(os.str(), "round,pool,accuracy,loss,sim_time_ms\n1,0,0.5,1.25,10\n");
}
