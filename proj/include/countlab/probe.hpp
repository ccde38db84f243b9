#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "countlab/head.hpp"
#include "countlab/hrep.hpp"

namespace countlab {

struct SvmOptions {
  double C = 1.0;
  double tolerance = 1e-4;  // relative duality gap
  int max_epochs = 10000;
  std::uint64_t seed = 0;  // coordinate order
};

/// One-vs-rest linear SVM over centered features. The bias is an augmented
/// feature of constant value 1 and is regularized like any other weight.
struct LinearProbe {
  std::vector<int> classes;  // sorted label values
  std::size_t dim = 0;
  std::vector<double> center;                // per-feature training mean
  std::vector<std::vector<double>> weights;  // per class, dim values
  std::vector<double> bias;                  // per class
  std::vector<int> epochs;                   // solver epochs per class

  [[nodiscard]] std::vector<double> scores(std::span<const float> x) const;
  /// Highest score; ties go to the lowest class.
  [[nodiscard]] int predict(std::span<const float> x) const;
};

/// Throws DegenerateLabels with fewer than two classes and
/// DimensionMismatch when labels and rows differ.
LinearProbe train_linear_svm(const RepMatrix& x, std::span<const int> labels, const SvmOptions& options = {});
LinearProbe train_linear_svm(const RepMatrix& x, std::span<const int> labels, std::span<const std::size_t> rows,
                             const SvmOptions& options = {});

/// Sum over classes of 0.5 * (|w|^2 + b^2) + C * sum of hinge losses.
double svm_primal_objective(const LinearProbe& probe, const RepMatrix& x, std::span<const int> labels, double C);

double probe_accuracy(const LinearProbe& probe, const RepMatrix& x, std::span<const int> labels,
                      std::span<const std::size_t> rows = {});

/// Stratified assignment of rows to k folds: within each class, a seeded
/// shuffle dealt round-robin. Throws InsufficientClassCount.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed);

struct ProbeResult {
  std::string layer;  // layer index or "enc"
  std::string aggregation;
  std::vector<double> fold_accuracies;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // population STD over folds
};

ProbeResult cross_validate(const RepMatrix& x, std::span<const int> labels, int k, std::uint64_t seed,
                           const SvmOptions& options = {});

/// Greedy decoding through the head: a row counts as correct when the
/// argmax over the full vocabulary is the answer token of its label.
double out_projection_accuracy(const RepMatrix& h_last, const HeadWeights& head, std::span<const int> labels);

struct SweepRow {
  std::string layer;
  std::string aggregation;  // Enc, V_mean, ..., or Out
  std::optional<ProbeResult> result;
  std::optional<double> out_accuracy;
  std::string status = "ok";  // ok / missing
};

struct SweepResult {
  std::vector<int> layers;
  std::vector<Aggregation> aggregations;
  std::vector<SweepRow> rows;
  std::vector<std::string> missing;
};

struct SweepOptions {
  int folds = 3;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::optional<std::filesystem::path> labels;  // overrides every sidecar label_ref
};

/// Probes every HREP file under rep_dir. Rows: every layer x aggregation
/// seen in the directory, then Enc, then one Out row per layer (when a head
/// is given). Absent files are listed in `missing` and the sweep continues.
SweepResult layer_sweep(const std::filesystem::path& rep_dir, const HeadWeights* head, const SweepOptions& options);

std::string sweep_csv(const SweepResult& sweep);

}  // namespace countlab
