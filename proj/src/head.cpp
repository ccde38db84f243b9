#include "countlab/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "countlab/errors.hpp"
#include "countlab/rng.hpp"
#include "countlab/util.hpp"

namespace countlab {

namespace {

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

HeadWeights with_weights(const HeadWeights& like, std::span<const double> w) {
  HeadWeights out = like;
  for (std::size_t i = 0; i < w.size(); ++i) out.matrix[i] = static_cast<float>(w[i]);
  return out;
}

double accuracy_of(const TrainCache& cache, const HeadWeights& head) {
  if (cache.features.rows == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < cache.features.rows; ++i) {
    const auto digit = head.digit_of(greedy_token(head, cache.features.row(i)));
    if (digit && *digit == cache.digits[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(cache.features.rows);
}

}  // namespace

void HeadWeights::validate() const {
  if (matrix.size() != vocab * dim) {
    throw DimensionMismatch("head matrix has " + std::to_string(matrix.size()) + " values for " +
                            std::to_string(vocab) + "x" + std::to_string(dim));
  }
  if (tied_flag) throw ValidationError("head is still tied to the embedding; export a detached copy");
  std::set<int> seen;
  for (const auto& [digit, token] : answer_token_ids) {
    if (token < 0 || static_cast<std::size_t>(token) >= vocab) {
      throw ValidationError("answer token " + std::to_string(token) + " for digit " + std::to_string(digit) +
                            " is outside the vocabulary of " + std::to_string(vocab));
    }
    if (!seen.insert(token).second) {
      throw ValidationError("answer token " + std::to_string(token) + " is used by two digits");
    }
  }
}

std::optional<int> HeadWeights::digit_of(std::size_t token) const {
  for (const auto& [digit, id] : answer_token_ids) {
    if (static_cast<std::size_t>(id) == token) return digit;
  }
  return std::nullopt;
}

std::size_t greedy_token(const HeadWeights& head, std::span<const float> h) {
  if (h.size() != head.dim) {
    throw DimensionMismatch("hidden state has " + std::to_string(h.size()) + " dims, head expects " +
                            std::to_string(head.dim));
  }
  std::size_t best = 0;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < head.vocab; ++t) {
    const float* w = head.matrix.data() + t * head.dim;
    double z = 0.0;
    for (std::size_t k = 0; k < head.dim; ++k) z += static_cast<double>(w[k]) * static_cast<double>(h[k]);
    if (z > best_logit) {
      best_logit = z;
      best = t;
    }
  }
  return best;
}

std::vector<int> cache_targets(const TrainCache& cache, const HeadWeights& head) {
  if (cache.digits.size() != cache.features.rows) {
    throw DimensionMismatch(cache.split + " cache has " + std::to_string(cache.digits.size()) + " labels for " +
                            std::to_string(cache.features.rows) + " rows");
  }
  if (cache.features.cols != head.dim) {
    throw DimensionMismatch(cache.split + " cache has " + std::to_string(cache.features.cols) +
                            " dims, head expects " + std::to_string(head.dim));
  }
  std::vector<int> targets;
  targets.reserve(cache.digits.size());
  for (int d : cache.digits) {
    const auto it = head.answer_token_ids.find(d);
    if (it == head.answer_token_ids.end()) {
      throw ValidationError("answer " + std::to_string(d) + " has no single answer token in the head");
    }
    targets.push_back(it->second);
  }
  return targets;
}

double learning_rate_preset(std::string_view model, DataDomain domain) {
  struct Preset {
    std::string_view name;
    double synthetic;
    double real_world;
  };
  static constexpr Preset kPresets[] = {
      {"internvl", 1e-3, 1e-4}, {"llava-i", 1e-3, 1e-5}, {"llava-ov", 1e-2, 1e-5},
      {"paligemma", 1e-2, 1e-4}, {"qwen", 1e-3, 1e-5},
  };
  for (const auto& p : kPresets) {
    if (p.name == model) return domain == DataDomain::synthetic ? p.synthetic : p.real_world;
  }
  throw ValidationError("no learning-rate preset for '" + std::string(model) +
                        "' (internvl, llava-i, llava-ov, paligemma, qwen)");
}

LossGrad softmax_ce_loss_grad(std::span<const double> weights, std::size_t vocab, std::size_t dim,
                              const RepMatrix& features, std::span<const int> targets,
                              std::span<const std::size_t> rows) {
  if (weights.size() != vocab * dim || features.cols != dim) {
    throw DimensionMismatch("head is " + std::to_string(vocab) + "x" + std::to_string(dim) + ", features have " +
                            std::to_string(features.cols) + " dims");
  }
  if (targets.size() != features.rows) throw DimensionMismatch("targets and feature rows differ in length");

  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(features.rows);
    std::iota(all.begin(), all.end(), std::size_t{0});
    rows = all;
  }
  if (rows.empty()) throw EmptyInput("loss over an empty batch");

  LossGrad out;
  out.grad.assign(vocab * dim, 0.0);
  std::vector<double> h(dim);
  std::vector<double> z(vocab);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;

  for (std::size_t i : rows) {
    const auto x = features.row(i);
    for (std::size_t k = 0; k < dim; ++k) h[k] = x[k];
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < vocab; ++t) {
      const double* w = weights.data() + t * dim;
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += w[k] * h[k];
      z[t] = s;
      zmax = std::max(zmax, s);
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < vocab; ++t) sum += std::exp(z[t] - zmax);
    const double lse = zmax + std::log(sum);
    const auto target = static_cast<std::size_t>(targets[i]);
    const double loss = lse - z[target];
    if (!std::isfinite(loss)) {
      throw NonFiniteLoss("non-finite loss at row " + std::to_string(i) + " (max logit " + std::to_string(zmax) +
                          "); the learning rate is probably too high");
    }
    total += loss;
    for (std::size_t t = 0; t < vocab; ++t) {
      const double p = std::exp(z[t] - lse) - (t == target ? 1.0 : 0.0);
      double* g = out.grad.data() + t * dim;
      for (std::size_t k = 0; k < dim; ++k) g[k] += p * h[k] * inv_n;
    }
  }
  out.loss = total * inv_n;
  return out;
}

LossGrad softmax_ce_loss_grad(const HeadWeights& head, const RepMatrix& features, std::span<const int> targets) {
  const auto w = to_double(head.matrix);
  return softmax_ce_loss_grad(w, head.vocab, head.dim, features, targets);
}

void adamw_step(std::span<double> params, AdamState& state, std::span<const double> grad, const TuneConfig& c) {
  if (grad.size() != params.size()) throw DimensionMismatch("gradient and parameter sizes differ");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - c.learning_rate * c.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] *= decay;
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grad[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

TrainResult train_head(const TrainCache& train, const TrainCache& valid, const HeadWeights& initial,
                       const TuneConfig& config) {
  initial.validate();
  if (config.epochs < 1) throw ValidationError("epochs must be at least 1");
  if (config.learning_rate < 0.0) throw ValidationError("learning rate must not be negative");
  if (config.batch_size == 0) throw ValidationError("batch size must be positive");
  const auto train_targets = cache_targets(train, initial);
  cache_targets(valid, initial);
  if (train.features.rows == 0) throw EmptyInput("empty training cache");

  std::vector<double> w = to_double(initial.matrix);
  AdamState state;

  TrainResult result;
  result.head = initial;
  double best_acc = accuracy_of(valid, initial);
  result.history.push_back(
      {0, softmax_ce_loss_grad(w, initial.vocab, initial.dim, train.features, train_targets).loss, best_acc});

  std::vector<std::size_t> order(train.features.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, "head/epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const auto lg = softmax_ce_loss_grad(w, initial.vocab, initial.dim, train.features, train_targets, batch);
      adamw_step(w, state, lg.grad, config);
    }
    const HeadWeights current = with_weights(initial, w);
    const double loss = softmax_ce_loss_grad(w, initial.vocab, initial.dim, train.features, train_targets).loss;
    const double acc = accuracy_of(valid, current);
    result.history.push_back({epoch, loss, acc});
    if (acc > best_acc) {
      best_acc = acc;
      result.best_epoch = epoch;
      result.head = current;
    }
  }
  return result;
}

std::vector<RunRecord> head_predictions(const TrainCache& cache, const HeadWeights& head) {
  cache_targets(cache, head);
  std::vector<int> options;
  for (const auto& [digit, token] : head.answer_token_ids) options.push_back(digit);
  std::vector<RunRecord> records;
  records.reserve(cache.features.rows);
  for (std::size_t i = 0; i < cache.features.rows; ++i) {
    RunRecord r;
    r.stimulus_id = cache.split + "-" + std::to_string(i);
    r.gold = cache.digits[i];
    r.options = options;
    const std::size_t token = greedy_token(head, cache.features.row(i));
    r.raw_response = "token:" + std::to_string(token);
    r.extracted = head.digit_of(token);
    records.push_back(std::move(r));
  }
  return records;
}

MetricSummary evaluate_head(const TrainCache& cache, const HeadWeights& head) {
  return summarize(head_predictions(cache, head));
}

void export_head(const std::filesystem::path& path, const HeadWeights& head) {
  head.validate();
  write_hrep(path, head.vocab, head.dim, head.matrix);
  nlohmann::ordered_json side;
  side["model_id"] = head.model_id;
  side["kind"] = "output_layer";
  nlohmann::ordered_json tokens = nlohmann::ordered_json::object();
  for (const auto& [digit, token] : head.answer_token_ids) tokens[std::to_string(digit)] = token;
  side["answer_token_ids"] = std::move(tokens);
  side["tied_flag"] = false;
  side["rows"] = head.vocab;
  side["cols"] = head.dim;
  write_file(sidecar_path(path), side.dump(2) + "\n");
}

HeadWeights import_head(const std::filesystem::path& path) {
  HrepData data = read_hrep(path);
  const auto side_path = sidecar_path(path);
  HeadWeights head;
  try {
    const auto side = nlohmann::json::parse(read_file(side_path));
    head.model_id = side.value("model_id", std::string());
    head.tied_flag = side.value("tied_flag", false);
    for (const auto& [digit, token] : side.at("answer_token_ids").items()) {
      head.answer_token_ids[std::stoi(digit)] = token.get<int>();
    }
    if (side.contains("rows") && (side["rows"].get<std::size_t>() != data.rows ||
                                  side["cols"].get<std::size_t>() != data.cols)) {
      throw DimensionMismatch(side_path.string() + " shape disagrees with " + path.string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side_path.string() + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError(side_path.string() + ": answer_token_ids keys must be digits");
  }
  head.vocab = data.rows;
  head.dim = data.cols;
  head.matrix = std::move(data.values);
  for (float v : head.matrix) {
    if (!std::isfinite(v)) throw NonFiniteValue(path.string() + ": non-finite head weight");
  }
  head.validate();
  return head;
}

}  // namespace countlab
