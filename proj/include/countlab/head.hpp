#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "countlab/hrep.hpp"
#include "countlab/metrics.hpp"

namespace countlab {

/// vocab x d output layer with the token ids of the answers 1..9.
struct HeadWeights {
  std::size_t vocab = 0;
  std::size_t dim = 0;
  std::vector<float> matrix;           // row-major, vocab x dim
  std::map<int, int> answer_token_ids;  // digit -> token id
  bool tied_flag = false;
  std::string model_id;

  [[nodiscard]] std::span<const float> row(std::size_t token) const { return {matrix.data() + token * dim, dim}; }
  /// Throws ValidationError unless the matrix size, token ids (distinct,
  /// below vocab) and tied_flag (false) are consistent.
  void validate() const;
  /// Digit whose answer token is `token`, if any.
  [[nodiscard]] std::optional<int> digit_of(std::size_t token) const;
};

/// Index of the largest logit over the full vocabulary; ties go to the
/// lowest token id.
std::size_t greedy_token(const HeadWeights& head, std::span<const float> h);

/// Features plus gold digits; token ids are looked up through the head.
struct TrainCache {
  RepMatrix features;
  std::vector<int> digits;
  std::string split = "train";
};

/// Throws DimensionMismatch when rows/labels or cols/head disagree and
/// ValidationError when a digit has no answer token.
std::vector<int> cache_targets(const TrainCache& cache, const HeadWeights& head);

struct TuneConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

enum class DataDomain { synthetic, real_world };

/// Per-model learning rates for internvl, llava-i, llava-ov, paligemma,
/// qwen. Throws ValidationError for other names.
double learning_rate_preset(std::string_view model, DataDomain domain);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // vocab x dim
};

/// Mean softmax cross-entropy over the selected rows (all rows when `rows`
/// is empty) and its exact gradient. Throws NonFiniteLoss.
LossGrad softmax_ce_loss_grad(std::span<const double> weights, std::size_t vocab, std::size_t dim,
                              const RepMatrix& features, std::span<const int> targets,
                              std::span<const std::size_t> rows = {});
LossGrad softmax_ce_loss_grad(const HeadWeights& head, const RepMatrix& features, std::span<const int> targets);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// Decoupled weight decay followed by a bias-corrected Adam update.
void adamw_step(std::span<double> params, AdamState& state, std::span<const double> grad, const TuneConfig& config);

struct EpochStats {
  int epoch = 0;  // 0 is the initial head
  double train_loss = 0.0;
  double valid_accuracy = 0.0;
};

struct TrainResult {
  HeadWeights head;  // checkpoint with the best validation accuracy (earliest on ties)
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

TrainResult train_head(const TrainCache& train, const TrainCache& valid, const HeadWeights& initial,
                       const TuneConfig& config);

/// Greedy prediction per row; an argmax outside the answer tokens counts as
/// an unparsed answer.
std::vector<RunRecord> head_predictions(const TrainCache& cache, const HeadWeights& head);
MetricSummary evaluate_head(const TrainCache& cache, const HeadWeights& head);

void export_head(const std::filesystem::path& path, const HeadWeights& head);
HeadWeights import_head(const std::filesystem::path& path);

}  // namespace countlab
