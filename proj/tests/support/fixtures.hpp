// Constructed datasets shared by the unit tests and the acceptance binary.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "countlab/head.hpp"
#include "countlab/hrep.hpp"
#include "countlab/probe.hpp"
#include "support/gen.hpp"

namespace fixtures {

using namespace countlab;

struct Labeled {
  RepMatrix x;
  std::vector<int> labels;
};

/// Gaussian blobs, one per label in [1, classes], centered at `separation`
/// times a random unit vector. Labels cycle so classes stay balanced.
inline Labeled blobs(int classes, int per_class, std::size_t dim, double separation, double noise,
                     std::uint64_t seed) {
  testgen::Gen g(seed);
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(classes), std::vector<double>(dim));
  for (auto& c : centers) {
    double norm = 0;
    for (auto& v : c) {
      v = g.gauss();
      norm += v * v;
    }
    for (auto& v : c) v *= separation / std::sqrt(norm);
  }
  Labeled out;
  const auto n = static_cast<std::size_t>(classes * per_class);
  out.x = testgen::matrix(n, dim, std::vector<float>(n * dim));
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes)) + 1;
    out.labels.push_back(label);
    for (std::size_t j = 0; j < dim; ++j) {
      out.x.values[i * dim + j] =
          static_cast<float>(centers[static_cast<std::size_t>(label - 1)][j] + noise * g.gauss());
    }
  }
  return out;
}

/// Labels 1..9 encoded in feature `label - 1` of a 9-dim one-hot with noise
/// well below the margin: 3-fold CV must reach 100%.
inline Labeled separable_counts(int per_class, std::uint64_t seed) {
  testgen::Gen g(seed);
  Labeled out;
  const auto n = static_cast<std::size_t>(9 * per_class);
  out.x = testgen::matrix(n, 9, std::vector<float>(n * 9));
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 9) + 1;
    out.labels.push_back(label);
    for (std::size_t j = 0; j < 9; ++j) {
      const double base = static_cast<int>(j) == label - 1 ? 4.0 : 0.0;
      out.x.values[i * 9 + j] = static_cast<float>(base + 0.3 * g.gauss());
    }
  }
  return out;
}

/// Random features with a seeded permutation of balanced labels 1..9.
inline Labeled permuted_control(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  testgen::Gen g(seed);
  Labeled out;
  out.x = testgen::matrix(rows, dim, std::vector<float>(rows * dim));
  for (auto& v : out.x.values) v = static_cast<float>(g.gauss());
  for (std::size_t i = 0; i < rows; ++i) out.labels.push_back(static_cast<int>(i % 9) + 1);
  std::shuffle(out.labels.begin(), out.labels.end(), g.rng);
  return out;
}

/// Largest drop in the primal objective over `trials` random perturbations
/// of norm `radius` applied jointly to all weights and biases; a local
/// optimum gives a value <= 0.
inline double best_perturbation_gain(const LinearProbe& probe, const Labeled& data, double C, int trials,
                                     double radius, std::uint64_t seed) {
  testgen::Gen g(seed);
  const double base = svm_primal_objective(probe, data.x, data.labels, C);
  double best = -1e300;
  for (int t = 0; t < trials; ++t) {
    LinearProbe p = probe;
    std::vector<double*> params;
    for (auto& w : p.weights) {
      for (auto& v : w) params.push_back(&v);
    }
    for (auto& b : p.bias) params.push_back(&b);
    std::vector<double> d(params.size());
    double norm = 0;
    for (auto& v : d) {
      v = g.gauss();
      norm += v * v;
    }
    for (std::size_t i = 0; i < d.size(); ++i) *params[i] += radius * d[i] / std::sqrt(norm);
    best = std::max(best, base - svm_primal_objective(p, data.x, data.labels, C));
  }
  return best;
}

/// Tiny two-class instance, N = 6 and d = 2, that is not separable.
inline Labeled tiny_instance(std::uint64_t seed) {
  testgen::Gen g(seed);
  Labeled out;
  out.x = testgen::matrix(6, 2, std::vector<float>(12));
  for (std::size_t i = 0; i < 6; ++i) {
    const int label = i < 3 ? 1 : 2;
    out.labels.push_back(label);
    out.x.values[i * 2] = static_cast<float>((label == 1 ? -0.5 : 0.5) + g.gauss());
    out.x.values[i * 2 + 1] = static_cast<float>(g.gauss());
  }
  return out;
}

/// Writes a sweep directory: layers 0..num_layers-1 with every layer
/// aggregation, plus Enc. Layers >= `separable_from` carry the label in a
/// one-hot block; earlier layers and Enc carry noise only.
inline void write_sweep_fixture(const std::filesystem::path& dir, int num_layers, int separable_from, int per_class,
                                std::uint64_t seed, bool with_enc = true) {
  std::filesystem::create_directories(dir);
  const auto n = static_cast<std::size_t>(9 * per_class);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 9) + 1;
  write_labels(dir / "labels.txt", labels);
  testgen::Gen g(seed);
  auto emit = [&](std::optional<int> layer, Aggregation agg, bool separable) {
    RepMatrix m = testgen::matrix(n, 12, std::vector<float>(n * 12));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < 12; ++j) {
        const double signal = separable && static_cast<int>(j) == labels[i] - 1 ? 4.0 : 0.0;
        m.values[i * 12 + j] = static_cast<float>(signal + 0.3 * g.gauss());
      }
    }
    m.meta.model_id = "fixture";
    m.meta.layer_index = layer;
    m.meta.aggregation = agg;
    m.meta.label_ref = "labels.txt";
    const std::string name =
        layer ? "layer" + std::to_string(*layer) + "_" + std::string(to_string(agg)) : std::string("enc");
    save_reps(dir / (name + ".hrep"), m);
  };
  for (int l = 0; l < num_layers; ++l) {
    for (auto agg : kLayerAggregations) emit(l, agg, l >= separable_from);
  }
  if (with_enc) emit(std::nullopt, Aggregation::Enc, false);
}

/// Head with one row per token; answer digits 1..9 map to tokens 3..11.
inline HeadWeights zero_head(std::size_t vocab, std::size_t dim) {
  HeadWeights h;
  h.vocab = vocab;
  h.dim = dim;
  h.matrix.assign(vocab * dim, 0.0f);
  for (int d = 1; d <= 9; ++d) h.answer_token_ids[d] = d + 2;
  h.model_id = "fixture";
  return h;
}

inline HeadWeights random_head(std::size_t vocab, std::size_t dim, double scale, std::uint64_t seed) {
  testgen::Gen g(seed);
  HeadWeights h = zero_head(vocab, dim);
  for (auto& v : h.matrix) v = static_cast<float>(scale * g.gauss());
  return h;
}

struct Teacher {
  TrainCache train;
  TrainCache valid;
  TrainCache test;
  HeadWeights initial;
};

/// Nine Gaussian clusters, one per digit, and a random initial head. All
/// splits share the cluster centers and draw independent noise.
inline Teacher teacher_fixture(std::uint64_t seed) {
  constexpr std::size_t kDim = 16;
  auto split = [&](int per_class, std::uint64_t noise_seed, const std::string& name) {
    auto data = blobs(9, per_class, kDim, 6.0, 0.0, seed);
    testgen::Gen g(noise_seed);
    for (auto& v : data.x.values) v += static_cast<float>(g.gauss());
    TrainCache c;
    c.features = std::move(data.x);
    c.digits = std::move(data.labels);
    c.split = name;
    return c;
  };
  Teacher t;
  t.train = split(60, seed + 1, "train");
  t.valid = split(20, seed + 2, "valid");
  t.test = split(20, seed + 3, "test");
  t.initial = random_head(40, kDim, 0.1, seed + 4);
  return t;
}

/// Max relative error between the analytic gradient and central finite
/// differences on a random vocab x dim instance with `rows` samples.
inline double gradient_check(std::size_t vocab, std::size_t dim, std::size_t rows, std::uint64_t seed,
                             double eps = 1e-4) {
  testgen::Gen g(seed);
  std::vector<double> w(vocab * dim);
  for (auto& v : w) v = g.gauss();
  RepMatrix x = testgen::matrix(rows, dim, std::vector<float>(rows * dim));
  for (auto& v : x.values) v = static_cast<float>(g.gauss());
  std::vector<int> targets(rows);
  for (auto& t : targets) t = g.range(0, static_cast<int>(vocab) - 1);
  const auto analytic = softmax_ce_loss_grad(w, vocab, dim, x, targets);
  double worst = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto plus = w, minus = w;
    plus[i] += eps;
    minus[i] -= eps;
    const double numeric = (softmax_ce_loss_grad(plus, vocab, dim, x, targets).loss -
                            softmax_ce_loss_grad(minus, vocab, dim, x, targets).loss) /
                           (2 * eps);
    const double denom = std::max({std::abs(numeric), std::abs(analytic.grad[i]), 1e-8});
    worst = std::max(worst, std::abs(numeric - analytic.grad[i]) / denom);
  }
  return worst;
}

/// Label permutation 1..9 -> 9..1 style relabeling used by symmetry checks.
inline std::vector<int> relabel(const std::vector<int>& labels, const std::map<int, int>& perm) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(perm.at(l));
  return out;
}

}  // namespace fixtures
