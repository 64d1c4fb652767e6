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
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedchain/error.hpp"
#include "fedchain/random.hpp"

// Local training, FedAvg and KL-divergence aggregation weights, non-iid
// partitioning, and evaluation for small dense classifiers.
namespace fedchain::fed {

struct Dataset {
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::vector<double> x;  // row-major, size() * n_features
  std::vector<std::size_t> y;

  std::size_t size() const { return y.size(); }

  std::span<const double> row(std::size_t i) const {
    return {x.data() + i * n_features, n_features};
  }

  void add(std::span<const double> features, std::size_t label) {
    if (features.size() != n_features || label >= n_classes) {
      throw Error(Errc::invalid_config, "sample does not match dataset shape");
    }
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(label);
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{n_features, n_classes, {}, {}};
    out.x.reserve(indices.size() * n_features);
    out.y.reserve(indices.size());
    for (auto i : indices) out.add(row(i), y[i]);
    return out;
  }
};

struct LabelHistogram {
  std::vector<double> freq;
};

inline LabelHistogram histogram(const Dataset& d) {
  LabelHistogram h{std::vector<double>(d.n_classes, 0.0)};
  if (d.size() == 0) return h;
  for (auto label : d.y) h.freq[label] += 1.0;
  for (auto& f : h.freq) f /= static_cast<double>(d.size());
  return h;
}

// Additive epsilon then renormalize; every entry becomes strictly positive.
inline LabelHistogram smooth(LabelHistogram h, double eps = 1e-6) {
  double total = 0.0;
  for (auto& f : h.freq) total += (f += eps);
  for (auto& f : h.freq) f /= total;
  return h;
}

// D_KL(p || q) in bits.
inline double kl_divergence(const LabelHistogram& p, const LabelHistogram& q) {
  if (p.freq.size() != q.freq.size()) {
    throw Error(Errc::undefined_divergence, "histograms over different label sets");
  }
  double d = 0.0;
  for (std::size_t x = 0; x < p.freq.size(); ++x) {
    if (p.freq[x] == 0.0) continue;
    if (q.freq[x] <= 0.0) throw Error(Errc::undefined_divergence, "reference has zero mass");
    d += p.freq[x] * std::log2(p.freq[x] / q.freq[x]);
  }
  return std::max(d, 0.0);
}

// Layer sizes. hidden == 0 is a single dense softmax layer.
struct Architecture {
  std::size_t n_features = 0;
  std::size_t hidden = 0;
  std::size_t n_classes = 0;

  std::size_t parameter_count() const {
    if (hidden == 0) return n_features * n_classes + n_classes;
    return hidden * n_features + hidden + n_classes * hidden + n_classes;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Weight layout: dense [W1 (out x in, row-major) | b1] and, with a hidden
// layer, [W1 | b1 | W2 | b2].
struct Model {
  Architecture arch;
  std::vector<double> weights;
};

inline Model init_model(const Architecture& arch, std::uint64_t seed, double scale = 0.01) {
  Model m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
  Rng rng(derive_seed(seed, "init"));
  for (auto& w : m.weights) w = scale * rng.normal();
  return m;
}

namespace detail {

inline void dense(std::span<const double> w, std::span<const double> b, std::span<const double> in,
                  std::span<double> out) {
  const std::size_t n_in = in.size();
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = b[o];
    const double* row = w.data() + o * n_in;
    for (std::size_t k = 0; k < n_in; ++k) acc += row[k] * in[k];
    out[o] = acc;
  }
}

inline double log_sum_exp(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return mx + std::log(s);
}

struct Activations {
  std::vector<double> hidden;
  std::vector<double> logits;
};

inline Activations forward_pass(const Model& m, std::span<const double> x) {
  const auto& a = m.arch;
  const std::span<const double> w(m.weights);
  Activations act;
  act.logits.resize(a.n_classes);
  if (a.hidden == 0) {
    dense(w.subspan(0, a.n_classes * a.n_features), w.subspan(a.n_classes * a.n_features, a.n_classes),
          x, act.logits);
    return act;
  }
  act.hidden.resize(a.hidden);
  const std::size_t w1 = a.hidden * a.n_features;
  dense(w.subspan(0, w1), w.subspan(w1, a.hidden), x, act.hidden);
  for (auto& h : act.hidden) h = std::tanh(h);
  const std::size_t w2_at = w1 + a.hidden;
  const std::size_t w2 = a.n_classes * a.hidden;
  dense(w.subspan(w2_at, w2), w.subspan(w2_at + w2, a.n_classes), act.hidden, act.logits);
  return act;
}

// Adds d(-log p_y)/dw for one sample into grad; returns the sample loss.
inline double accumulate_gradient(const Model& m, std::span<const double> x, std::size_t label,
                                  std::span<double> grad) {
  const auto& a = m.arch;
  const Activations act = forward_pass(m, x);
  const double lse = log_sum_exp(act.logits);
  std::vector<double> dz(a.n_classes);
  for (std::size_t c = 0; c < a.n_classes; ++c) {
    dz[c] = std::exp(act.logits[c] - lse) - (c == label ? 1.0 : 0.0);
  }
  if (a.hidden == 0) {
    for (std::size_t c = 0; c < a.n_classes; ++c) {
      double* g = grad.data() + c * a.n_features;
      for (std::size_t k = 0; k < a.n_features; ++k) g[k] += dz[c] * x[k];
      grad[a.n_classes * a.n_features + c] += dz[c];
    }
  } else {
    const std::size_t w1 = a.hidden * a.n_features;
    const std::size_t w2_at = w1 + a.hidden;
    const std::size_t b2_at = w2_at + a.n_classes * a.hidden;
    std::vector<double> dh(a.hidden, 0.0);
    for (std::size_t c = 0; c < a.n_classes; ++c) {
      const double* w2row = m.weights.data() + w2_at + c * a.hidden;
      double* g = grad.data() + w2_at + c * a.hidden;
      for (std::size_t h = 0; h < a.hidden; ++h) {
        g[h] += dz[c] * act.hidden[h];
        dh[h] += w2row[h] * dz[c];
      }
      grad[b2_at + c] += dz[c];
    }
    for (std::size_t h = 0; h < a.hidden; ++h) {
      const double da = dh[h] * (1.0 - act.hidden[h] * act.hidden[h]);
      double* g = grad.data() + h * a.n_features;
      for (std::size_t k = 0; k < a.n_features; ++k) g[k] += da * x[k];
      grad[w1 + h] += da;
    }
  }
  return lse - act.logits[label];
}

inline void check_shapes(const Model& m, const Dataset& d) {
  if (m.weights.size() != m.arch.parameter_count() || m.arch.n_features != d.n_features ||
      m.arch.n_classes != d.n_classes) {
    throw Error(Errc::aggregation_shape_error, "model and dataset shapes disagree");
  }
}

}  // namespace detail

// Class probabilities for one sample.
inline std::vector<double> predict_proba(const Model& m, std::span<const double> x) {
  auto act = detail::forward_pass(m, x);
  const double lse = detail::log_sum_exp(act.logits);
  for (auto& z : act.logits) z = std::exp(z - lse);
  return act.logits;
}

inline std::size_t predict(const Model& m, std::span<const double> x) {
  const auto act = detail::forward_pass(m, x);
  return static_cast<std::size_t>(std::max_element(act.logits.begin(), act.logits.end()) -
                                  act.logits.begin());
}

// f_i(m) = sum over samples of cross-entropy.
inline double local_loss(const Model& m, const Dataset& d) {
  detail::check_shapes(m, d);
  for (double w : m.weights) {
    if (!std::isfinite(w)) throw Error(Errc::non_finite_loss, "non-finite weight");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto act = detail::forward_pass(m, d.row(i));
    total += detail::log_sum_exp(act.logits) - act.logits[d.y[i]];
  }
  if (!std::isfinite(total)) throw Error(Errc::non_finite_loss, "loss overflowed");
  return total;
}

// Gradient of local_loss (summed over the whole dataset).
inline std::vector<double> loss_gradient(const Model& m, const Dataset& d) {
  detail::check_shapes(m, d);
  std::vector<double> g(m.weights.size(), 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) detail::accumulate_gradient(m, d.row(i), d.y[i], g);
  return g;
}

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::size_t round = 0;
  double target_accuracy = 0.90;

  void validate() const {
    if (!(learning_rate >= 0.0) || epochs == 0 || batch_size == 0 || !(target_accuracy > 0.0) ||
        target_accuracy > 1.0) {
      throw Error(Errc::invalid_config, "bad training configuration");
    }
  }
};

// Mini-batch gradient descent on the batch-mean cross-entropy.
inline Model local_train(Model m, const Dataset& d, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  detail::check_shapes(m, d);
  if (cfg.learning_rate == 0.0 || d.size() == 0) return m;
  Rng rng(derive_seed(seed, "local-train", cfg.round));
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> g(m.weights.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        epoch_loss += detail::accumulate_gradient(m, d.row(order[k]), d.y[order[k]], g);
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      for (std::size_t k = 0; k < g.size(); ++k) m.weights[k] -= step * g[k];
    }
    if (!std::isfinite(epoch_loss)) throw Error(Errc::training_diverged, "loss is not finite");
  }
  for (double w : m.weights) {
    if (!std::isfinite(w)) throw Error(Errc::training_diverged, "weights are not finite");
  }
  return m;
}

using GradientFn = std::function<std::vector<double>(const Model&, const Dataset&)>;

// Max over weights of |analytic - numeric| / max(|numeric|, 1e-6), with
// central differences of step h on local_loss.
inline double gradient_check(const Model& m, const Dataset& d, const GradientFn& grad = loss_gradient,
                             double h = 1e-4) {
  const std::vector<double> analytic = grad(m, d);
  Model probe = m;
  double worst = 0.0;
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    probe.weights[k] = m.weights[k] + h;
    const double up = local_loss(probe, d);
    probe.weights[k] = m.weights[k] - h;
    const double down = local_loss(probe, d);
    probe.weights[k] = m.weights[k];
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::fabs(analytic[k] - numeric) / std::max(std::fabs(numeric), 1e-6));
  }
  return worst;
}

enum class Scheme { fedavg, kl };

struct AggregationWeights {
  std::vector<double> w;
  Scheme scheme = Scheme::fedavg;
};

inline AggregationWeights fedavg_weights(std::span<const std::size_t> sizes) {
  AggregationWeights out{{}, Scheme::fedavg};
  double total = 0.0;
  for (auto s : sizes) {
    if (s == 0) throw Error(Errc::invalid_config, "empty local dataset");
    total += static_cast<double>(s);
  }
  for (auto s : sizes) out.w.push_back(static_cast<double>(s) / total);
  return out;
}

// raw_i = max(0, 1 - D_KL(d_i || d_ref)), normalized; all-zero falls back to
// FedAvg weights over `sizes`.
inline AggregationWeights kl_weights(std::span<const LabelHistogram> histograms,
                                     const LabelHistogram& reference,
                                     std::span<const std::size_t> sizes) {
  AggregationWeights out{{}, Scheme::kl};
  double total = 0.0;
  for (const auto& h : histograms) {
    const double raw = std::max(0.0, 1.0 - kl_divergence(h, reference));
    out.w.push_back(raw);
    total += raw;
  }
  if (total <= 0.0) {
    auto fallback = fedavg_weights(sizes);
    fallback.scheme = Scheme::kl;
    return fallback;
  }
  for (auto& w : out.w) w /= total;
  return out;
}

inline Model aggregate(std::span<const Model> models, const AggregationWeights& weights) {
  if (models.empty() || models.size() != weights.w.size()) {
    throw Error(Errc::aggregation_shape_error, "one weight per model required");
  }
  Model out{models.front().arch, std::vector<double>(models.front().weights.size(), 0.0)};
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].arch != out.arch || models[i].weights.size() != out.weights.size()) {
      throw Error(Errc::aggregation_shape_error, "model shapes differ");
    }
    for (std::size_t k = 0; k < out.weights.size(); ++k) {
      out.weights[k] += weights.w[i] * models[i].weights[k];
    }
  }
  return out;
}

inline double evaluate(const Model& m, const Dataset& test) {
  detail::check_shapes(m, test);
  if (test.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += predict(m, test.row(i)) == test.y[i];
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Mean cross-entropy, for reporting.
inline double mean_loss(const Model& m, const Dataset& d) {
  return d.size() == 0 ? 0.0 : local_loss(m, d) / static_cast<double>(d.size());
}

struct Partition {
  std::vector<Dataset> parts;
  std::vector<LabelHistogram> histograms;
  std::vector<double> skew;  // per-part mixture strength
};

// Part k draws labels from (1 - s_k) * global + s_k * one-hot(k mod C).
// round(alpha * n_parts) parts, chosen by the seed, get s_k = 1; the rest
// s_k = 0, so the mean strength tracks alpha while per-part skew varies.
inline Partition partition_noniid(const Dataset& base, std::size_t n_parts, double alpha,
                                  std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::invalid_config, "alpha outside [0,1]");
  if (n_parts == 0) throw Error(Errc::invalid_config, "zero parts");
  if (base.size() < n_parts) throw Error(Errc::partition_underflow, "fewer samples than parts");
  const std::size_t C = base.n_classes;
  const std::size_t part_size = base.size() / n_parts;
  Rng rng(derive_seed(seed, "partition"));

  std::vector<std::vector<std::size_t>> by_label(C);
  for (std::size_t i = 0; i < base.size(); ++i) by_label[base.y[i]].push_back(i);
  std::vector<std::vector<std::size_t>> remaining = by_label;
  for (auto& pool : remaining) rng.shuffle(pool);
  const LabelHistogram global = histogram(base);

  Partition out;
  out.skew.assign(n_parts, 0.0);
  const auto n_skewed = static_cast<std::size_t>(std::llround(alpha * static_cast<double>(n_parts)));
  const auto chosen = rng.permutation(n_parts);
  for (std::size_t k = 0; k < n_skewed; ++k) out.skew[chosen[k]] = 1.0;

  // Skewed parts draw first so their preferred labels are available.
  std::vector<std::size_t> order(n_parts);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.skew[a] > out.skew[b]; });

  std::vector<std::vector<std::size_t>> picks(n_parts);
  for (std::size_t part : order) {
    const double s = out.skew[part];
    const std::size_t preferred = part % C;
    std::vector<double> target(C);
    for (std::size_t c = 0; c < C; ++c) {
      target[c] = static_cast<double>(part_size) *
                  ((1.0 - s) * global.freq[c] + (c == preferred ? s : 0.0));
    }
    // Largest-remainder rounding to exactly part_size samples.
    std::vector<std::size_t> counts(C);
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < C; ++c) assigned += counts[c] = static_cast<std::size_t>(target[c]);
    std::vector<std::size_t> by_rem(C);
    std::iota(by_rem.begin(), by_rem.end(), std::size_t{0});
    std::stable_sort(by_rem.begin(), by_rem.end(), [&](std::size_t a, std::size_t b) {
      return target[a] - std::floor(target[a]) > target[b] - std::floor(target[b]);
    });
    for (std::size_t r = 0; assigned < part_size; ++r, ++assigned) ++counts[by_rem[r % C]];

    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t n = 0; n < counts[c]; ++n) {
        if (!remaining[c].empty()) {
          picks[part].push_back(remaining[c].back());
          remaining[c].pop_back();
        } else if (!by_label[c].empty()) {
          picks[part].push_back(by_label[c][rng.below(by_label[c].size())]);
        } else {
          // Label absent from the base set; substitute any sample.
          picks[part].push_back(rng.below(base.size()));
        }
      }
    }
  }
  for (std::size_t part = 0; part < n_parts; ++part) {
    out.parts.push_back(base.subset(picks[part]));
    out.histograms.push_back(histogram(out.parts.back()));
  }
  return out;
}

// Gaussian class blobs: class means ~ N(0, separation^2 I), unit noise,
// labels balanced then shuffled.
inline Dataset make_synthetic(std::size_t n_samples, std::size_t n_features, std::size_t n_classes,
                              std::uint64_t seed, double separation = 1.0) {
  Rng rng(derive_seed(seed, "synthetic"));
  std::vector<double> means(n_classes * n_features);
  for (auto& v : means) v = separation * rng.normal();
  std::vector<std::size_t> labels(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) labels[i] = i % n_classes;
  rng.shuffle(labels);
  Dataset d{n_features, n_classes, {}, {}};
  std::vector<double> row(n_features);
  for (auto label : labels) {
    for (std::size_t k = 0; k < n_features; ++k) row[k] = means[label * n_features + k] + rng.normal();
    d.add(row, label);
  }
  return d;
}

// First `count` samples and the rest.
inline std::pair<Dataset, Dataset> split_head(const Dataset& d, std::size_t count) {
  count = std::min(count, d.size());
  std::vector<std::size_t> a(count), b(d.size() - count);
  std::iota(a.begin(), a.end(), std::size_t{0});
  std::iota(b.begin(), b.end(), count);
  return {d.subset(a), d.subset(b)};
}

// Fixture format: header line "n_samples,n_features,n_classes", then one row
// per sample "label,f1,...,fD".
inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
  os.precision(17);
  os << d.size() << ',' << d.n_features << ',' << d.n_classes << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << d.y[i];
    for (double v : d.row(i)) os << ',' << v;
    os << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is) {
  auto fail = [](const std::string& why) { return Error(Errc::io_error, "dataset: " + why); };
  std::string line;
  if (!std::getline(is, line)) throw fail("missing header");
  std::size_t n = 0;
  Dataset d;
  {
    std::istringstream hs(line);
    char c1 = 0, c2 = 0;
    if (!(hs >> n >> c1 >> d.n_features >> c2 >> d.n_classes) || c1 != ',' || c2 != ',') {
      throw fail("bad header");
    }
  }
  std::vector<double> row(d.n_features);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw fail("truncated at row " + std::to_string(i));
    std::istringstream rs(line);
    std::string field;
    if (!std::getline(rs, field, ',')) throw fail("empty row");
    const auto label = static_cast<std::size_t>(std::stoul(field));
    for (std::size_t k = 0; k < d.n_features; ++k) {
      if (!std::getline(rs, field, ',')) throw fail("short row " + std::to_string(i));
      row[k] = std::stod(field);
    }
    if (label >= d.n_classes) throw fail("label out of range");
    d.add(row, label);
  }
  return d;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path);
  return read_dataset_csv(in);
}

struct RoundMetric {
  std::size_t round = 0;
  std::size_t pool = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  double sim_time_ms = 0.0;
};

// Line format: round,pool,accuracy,loss,sim_time_ms
inline void write_round_metrics(std::ostream& os, std::span<const RoundMetric> rows,
                                bool header = true) {
  if (header) os << "round,pool,accuracy,loss,sim_time_ms\n";
  os.precision(10);
  for (const auto& r : rows) {
    os << r.round << ',' << r.pool << ',' << r.accuracy << ',' << r.loss << ',' << r.sim_time_ms << '\n';
  }
}

}  // namespace fedchain::fed
