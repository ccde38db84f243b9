#include "countlab/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "countlab/errors.hpp"
#include "countlab/metrics.hpp"
#include "countlab/rng.hpp"
#include "countlab/util.hpp"

namespace countlab {

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

/// Column means, with constant columns pinned to their exact value so that
/// centering zeroes them.
std::vector<double> column_centers(const RepMatrix& x, std::span<const std::size_t> rows) {
  std::vector<double> sum(x.cols, 0.0);
  std::vector<bool> constant(x.cols, true);
  const auto first = x.row(rows.front());
  for (std::size_t i : rows) {
    const auto r = x.row(i);
    for (std::size_t j = 0; j < x.cols; ++j) {
      sum[j] += r[j];
      if (r[j] != first[j]) constant[j] = false;
    }
  }
  for (std::size_t j = 0; j < x.cols; ++j) {
    sum[j] = constant[j] ? static_cast<double>(first[j]) : sum[j] / static_cast<double>(rows.size());
  }
  return sum;
}

struct BinaryFit {
  std::vector<double> w;  // dim + 1, bias last
  int epochs = 0;
};

/// Dual coordinate descent for the L1-loss (hinge) SVM on rows of z, each
/// of length dim + 1 with the bias feature last.
BinaryFit fit_binary(const std::vector<double>& z, std::size_t n, std::size_t width, const std::vector<double>& qii,
                     const std::vector<signed char>& y, const SvmOptions& opt, std::uint64_t seed) {
  BinaryFit fit;
  fit.w.assign(width, 0.0);
  std::vector<double> alpha(n, 0.0);
  std::vector<std::size_t> order = all_rows(n);
  Rng rng(seed);
  auto dot = [&](std::size_t i) {
    const double* zi = z.data() + i * width;
    double s = 0.0;
    for (std::size_t k = 0; k < width; ++k) s += fit.w[k] * zi[k];
    return s;
  };

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    fit.epochs = epoch;
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i : order) {
      const double g = y[i] * dot(i) - 1.0;
      double pg = g;
      if (alpha[i] == 0.0) {
        pg = std::min(g, 0.0);
      } else if (alpha[i] == opt.C) {
        pg = std::max(g, 0.0);
      }
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / qii[i], 0.0, opt.C);
      const double step = (alpha[i] - old) * y[i];
      const double* zi = z.data() + i * width;
      for (std::size_t k = 0; k < width; ++k) fit.w[k] += step * zi[k];
    }

    double wsq = 0.0;
    for (double v : fit.w) wsq += v * v;
    double hinge = 0.0;
    double asum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      hinge += std::max(0.0, 1.0 - y[i] * dot(i));
      asum += alpha[i];
    }
    const double primal = 0.5 * wsq + opt.C * hinge;
    const double dual = asum - 0.5 * wsq;
    if (primal - dual <= opt.tolerance * std::max(1.0, std::abs(primal))) break;
  }
  return fit;
}

}  // namespace

std::vector<double> LinearProbe::scores(std::span<const float> x) const {
  if (x.size() != dim) {
    throw DimensionMismatch("probe expects " + std::to_string(dim) + " features, got " + std::to_string(x.size()));
  }
  std::vector<double> out(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    double s = bias[c];
    for (std::size_t j = 0; j < dim; ++j) s += weights[c][j] * (static_cast<double>(x[j]) - center[j]);
    out[c] = s;
  }
  return out;
}

int LinearProbe::predict(std::span<const float> x) const {
  const auto s = scores(x);
  std::size_t best = 0;
  for (std::size_t c = 1; c < s.size(); ++c) {
    if (s[c] > s[best]) best = c;
  }
  return classes[best];
}

LinearProbe train_linear_svm(const RepMatrix& x, std::span<const int> labels, const SvmOptions& options) {
  const auto rows = all_rows(x.rows);
  return train_linear_svm(x, labels, rows, options);
}

LinearProbe train_linear_svm(const RepMatrix& x, std::span<const int> labels, std::span<const std::size_t> rows,
                             const SvmOptions& options) {
  if (labels.size() != x.rows) {
    throw DimensionMismatch(std::to_string(labels.size()) + " labels for " + std::to_string(x.rows) + " rows");
  }
  if (rows.size() < 2) throw DegenerateLabels("need at least two training rows");
  if (options.C <= 0.0) throw ValidationError("C must be positive");

  LinearProbe probe;
  probe.dim = x.cols;
  for (std::size_t i : rows) probe.classes.push_back(labels[i]);
  std::sort(probe.classes.begin(), probe.classes.end());
  probe.classes.erase(std::unique(probe.classes.begin(), probe.classes.end()), probe.classes.end());
  if (probe.classes.size() < 2) {
    throw DegenerateLabels("all training rows share label " + std::to_string(probe.classes.front()));
  }
  probe.center = column_centers(x, rows);

  const std::size_t n = rows.size();
  const std::size_t width = x.cols + 1;
  std::vector<double> z(n * width);
  std::vector<double> qii(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto src = x.row(rows[r]);
    double* dst = z.data() + r * width;
    double q = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      dst[j] = static_cast<double>(src[j]) - probe.center[j];
      q += dst[j] * dst[j];
    }
    dst[x.cols] = 1.0;
    qii[r] = q + 1.0;
  }

  std::vector<signed char> y(n);
  for (std::size_t c = 0; c < probe.classes.size(); ++c) {
    for (std::size_t r = 0; r < n; ++r) y[r] = labels[rows[r]] == probe.classes[c] ? 1 : -1;
    auto fit = fit_binary(z, n, width, qii, y, options, derive_seed(options.seed, "svm/order", c));
    probe.bias.push_back(fit.w.back());
    fit.w.pop_back();
    probe.weights.push_back(std::move(fit.w));
    probe.epochs.push_back(fit.epochs);
  }
  return probe;
}

double svm_primal_objective(const LinearProbe& probe, const RepMatrix& x, std::span<const int> labels, double C) {
  double total = 0.0;
  for (std::size_t c = 0; c < probe.classes.size(); ++c) {
    double reg = probe.bias[c] * probe.bias[c];
    for (double v : probe.weights[c]) reg += v * v;
    double hinge = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const auto r = x.row(i);
      double s = probe.bias[c];
      for (std::size_t j = 0; j < probe.dim; ++j) s += probe.weights[c][j] * (static_cast<double>(r[j]) - probe.center[j]);
      const double yi = labels[i] == probe.classes[c] ? 1.0 : -1.0;
      hinge += std::max(0.0, 1.0 - yi * s);
    }
    total += 0.5 * reg + C * hinge;
  }
  return total;
}

double probe_accuracy(const LinearProbe& probe, const RepMatrix& x, std::span<const int> labels,
                      std::span<const std::size_t> rows) {
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all = all_rows(x.rows);
    rows = all;
  }
  if (rows.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i : rows) {
    if (probe.predict(x.row(i)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("cross-validation needs at least 2 folds");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2) throw DegenerateLabels("cross-validation needs at least two classes");
  for (const auto& [label, idx] : by_class) {
    if (idx.size() < static_cast<std::size_t>(k)) {
      throw InsufficientClassCount("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                                   " samples, fewer than " + std::to_string(k) + " folds");
    }
  }
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t offset = 0;
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(seed, "cv/class", static_cast<std::uint64_t>(static_cast<std::int64_t>(label))));
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t j = 0; j < idx.size(); ++j) folds[(offset + j) % folds.size()].push_back(idx[j]);
    offset += idx.size();
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

ProbeResult cross_validate(const RepMatrix& x, std::span<const int> labels, int k, std::uint64_t seed,
                           const SvmOptions& options) {
  if (labels.size() != x.rows) {
    throw DimensionMismatch(std::to_string(labels.size()) + " labels for " + std::to_string(x.rows) + " rows");
  }
  const auto folds = stratified_folds(labels, k, seed);
  ProbeResult result;
  result.layer = x.meta.layer_index ? std::to_string(*x.meta.layer_index) : "enc";
  result.aggregation = std::string(to_string(x.meta.aggregation));
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(train.begin(), train.end());
    SvmOptions fold_opt = options;
    fold_opt.seed = derive_seed(options.seed, "cv/fold", f);
    const auto probe = train_linear_svm(x, labels, train, fold_opt);
    result.fold_accuracies.push_back(probe_accuracy(probe, x, labels, folds[f]));
  }
  result.mean_acc = mean(result.fold_accuracies);
  result.std_acc = std_dev(result.fold_accuracies, 0);
  return result;
}

double out_projection_accuracy(const RepMatrix& h_last, const HeadWeights& head, std::span<const int> labels) {
  if (h_last.cols != head.dim) {
    throw DimensionMismatch("H_last has " + std::to_string(h_last.cols) + " dims, head expects " +
                            std::to_string(head.dim));
  }
  if (labels.size() != h_last.rows) {
    throw DimensionMismatch(std::to_string(labels.size()) + " labels for " + std::to_string(h_last.rows) + " rows");
  }
  if (h_last.rows == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < h_last.rows; ++i) {
    const auto digit = head.digit_of(greedy_token(head, h_last.row(i)));
    if (digit && *digit == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(h_last.rows);
}

SweepResult layer_sweep(const std::filesystem::path& rep_dir, const HeadWeights* head, const SweepOptions& options) {
  if (!std::filesystem::is_directory(rep_dir)) throw ValidationError("not a directory: " + rep_dir.string());

  struct Key {
    std::optional<int> layer;
    Aggregation agg;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, std::filesystem::path> files;
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(rep_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".hrep") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    nlohmann::json side;
    try {
      side = nlohmann::json::parse(read_file(sidecar_path(p)));
    } catch (const std::exception& e) {
      throw FormatError("sidecar of " + p.string() + ": " + e.what());
    }
    if (side.value("kind", std::string()) == "output_layer") continue;  // exported heads share the format
    Key key{std::nullopt, Aggregation::Enc};
    try {
      const auto& layer = side.at("layer_index");
      if (layer.is_number_integer()) key.layer = layer.get<int>();
      key.agg = parse_aggregation(side.at("aggregation").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("sidecar of " + p.string() + ": " + e.what());
    }
    if (!files.emplace(key, p).second) {
      throw ValidationError("two representation files for the same layer and aggregation: " + p.string());
    }
  }

  SweepResult sweep;
  for (const auto& [key, path] : files) {
    if (key.layer && std::find(sweep.layers.begin(), sweep.layers.end(), *key.layer) == sweep.layers.end()) {
      sweep.layers.push_back(*key.layer);
    }
    if (key.layer && std::find(sweep.aggregations.begin(), sweep.aggregations.end(), key.agg) ==
                         sweep.aggregations.end()) {
      sweep.aggregations.push_back(key.agg);
    }
  }
  std::sort(sweep.layers.begin(), sweep.layers.end());
  std::sort(sweep.aggregations.begin(), sweep.aggregations.end());

  std::optional<std::vector<int>> shared_labels;
  if (options.labels) shared_labels = read_labels(*options.labels);
  auto labels_for = [&](const std::filesystem::path& p, const RepMatrix& reps) {
    if (!shared_labels) return load_labels_for(p, reps);
    if (shared_labels->size() != reps.rows) {
      throw DimensionMismatch(options.labels->string() + " has " + std::to_string(shared_labels->size()) +
                              " labels for " + std::to_string(reps.rows) + " rows in " + p.string());
    }
    return *shared_labels;
  };

  std::vector<std::function<void()>> tasks;
  auto add_probe_row = [&](const Key& key, std::string layer_tag) {
    SweepRow row{std::move(layer_tag), std::string(to_string(key.agg)), std::nullopt, std::nullopt, "ok"};
    const auto it = files.find(key);
    if (it == files.end()) {
      row.status = "missing";
      sweep.missing.push_back(row.layer + "/" + row.aggregation);
    }
    sweep.rows.push_back(std::move(row));
    if (it == files.end()) return;
    const std::size_t index = sweep.rows.size() - 1;
    const auto path = it->second;
    tasks.emplace_back([&, index, path] {
      const auto reps = load_reps(path);
      const auto labels = labels_for(path, reps);
      SvmOptions svm;
      svm.seed = options.seed;
      sweep.rows[index].result = cross_validate(reps, labels, options.folds, options.seed, svm);
    });
  };

  for (int layer : sweep.layers) {
    for (auto agg : sweep.aggregations) add_probe_row({layer, agg}, std::to_string(layer));
  }
  add_probe_row({std::nullopt, Aggregation::Enc}, "enc");

  if (head != nullptr) {
    for (int layer : sweep.layers) {
      SweepRow row{std::to_string(layer), "Out", std::nullopt, std::nullopt, "ok"};
      const auto it = files.find({layer, Aggregation::H_last});
      if (it == files.end()) {
        row.status = "missing";
        sweep.missing.push_back(row.layer + "/Out");
      }
      sweep.rows.push_back(std::move(row));
      if (it == files.end()) continue;
      const std::size_t index = sweep.rows.size() - 1;
      const auto path = it->second;
      tasks.emplace_back([&, index, path] {
        const auto reps = load_reps(path);
        const auto labels = labels_for(path, reps);
        sweep.rows[index].out_accuracy = out_projection_accuracy(reps, *head, labels);
      });
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) {
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return sweep;
}

std::string sweep_csv(const SweepResult& sweep) {
  std::size_t folds = 0;
  for (const auto& r : sweep.rows) {
    if (r.result) folds = std::max(folds, r.result->fold_accuracies.size());
  }
  std::string csv = "layer,aggregation,mean_acc,std_acc";
  for (std::size_t f = 0; f < folds; ++f) csv += ",fold_" + std::to_string(f + 1);
  csv += ",status\n";
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : sweep.rows) {
    csv += r.layer + "," + r.aggregation + ",";
    if (r.result) {
      csv += num(r.result->mean_acc) + "," + num(r.result->std_acc);
      for (std::size_t f = 0; f < folds; ++f) {
        csv += ",";
        if (f < r.result->fold_accuracies.size()) csv += num(r.result->fold_accuracies[f]);
      }
    } else {
      csv += (r.out_accuracy ? num(*r.out_accuracy) : std::string()) + ",";
      for (std::size_t f = 0; f < folds; ++f) csv += ",";
    }
    csv += "," + r.status + "\n";
  }
  return csv;
}

}  // namespace countlab
