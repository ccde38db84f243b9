#include "countlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include "countlab/errors.hpp"

namespace countlab {

bool is_correct(const RunRecord& r) { return r.extracted && *r.extracted == r.gold; }

double absolute_error(const RunRecord& r) {
  if (r.extracted) return std::abs(*r.extracted - r.gold);
  if (r.options.empty()) return std::max(r.gold, kCellCount - r.gold);
  int worst = 0;
  for (int o : r.options) worst = std::max(worst, std::abs(o - r.gold));
  return worst;
}

MetricSummary summarize(std::span<const RunRecord> records) {
  if (records.empty()) throw EmptyInput("no records to summarize");
  MetricSummary s;
  s.n = records.size();
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  std::size_t correct = 0;
  std::map<int, std::size_t> tp, fp, fn;
  for (const auto& r : records) {
    const bool ok = is_correct(r);
    if (ok) ++correct;
    if (!r.extracted) ++s.unparsed;
    const double e = absolute_error(r);
    abs_sum += e;
    sq_sum += e * e;
    s.per_count[r.gold].add(ok);
    if (ok) {
      ++tp[r.gold];
    } else {
      ++fn[r.gold];
      if (r.extracted) ++fp[*r.extracted];
    }
  }
  const auto n = static_cast<double>(s.n);
  s.accuracy = static_cast<double>(correct) / n;
  s.mae = abs_sum / n;
  s.rmse = std::sqrt(sq_sum / n);

  double f1_sum = 0.0;
  for (const auto& [count, tally] : s.per_count) {
    const auto t = static_cast<double>(tp[count]);
    const double denom = 2.0 * t + static_cast<double>(fp[count]) + static_cast<double>(fn[count]);
    const double f1 = denom == 0.0 ? 0.0 : 2.0 * t / denom;
    s.per_count_f1[count] = f1;
    f1_sum += f1;
  }
  s.macro_f1 = f1_sum / static_cast<double>(s.per_count.size());
  return s;
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double std_dev(std::span<const double> values, int ddof) {
  const auto n = static_cast<double>(values.size());
  if (n - ddof <= 0) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / (n - ddof));
}

MarginalReport marginalize(std::span<const RunRecord> records) {
  MarginalReport rep;
  for (const auto& r : records) {
    if (!r.target.color) continue;
    const auto cls = r.target.cls;
    const auto color = *r.target.color;
    const bool in_grid = std::find(kGridClasses.begin(), kGridClasses.end(), cls) != kGridClasses.end() &&
                         std::find(kGridColors.begin(), kGridColors.end(), color) != kGridColors.end();
    if (!in_grid) continue;
    const bool ok = is_correct(r);
    rep.per_target[{cls, color}].add(ok);
    rep.per_class[cls].add(ok);
    rep.per_color[color].add(ok);
    rep.overall.add(ok);
  }

  std::vector<std::string> missing;
  for (auto cls : kGridClasses) {
    for (auto color : kGridColors) {
      if (!rep.per_target.contains({cls, color})) {
        missing.push_back(std::string(to_string(color)) + " " + std::string(to_string(cls)));
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "baseline grid is missing " + std::to_string(missing.size()) + " of 24 targets:";
    for (const auto& m : missing) msg += " [" + m + "]";
    throw IncompleteGrid(msg);
  }

  std::vector<double> class_acc;
  for (auto cls : kGridClasses) class_acc.push_back(rep.per_class[cls].accuracy());
  std::vector<double> color_acc;
  for (auto color : kGridColors) color_acc.push_back(rep.per_color[color].accuracy());
  rep.class_std = std_dev(class_acc, 1);
  rep.attr_std = std_dev(color_acc, 1);
  return rep;
}

DistractorTable distractor_table(std::span<const RunRecord> records, std::optional<double> baseline_accuracy) {
  DistractorTable table;
  table.baseline_accuracy = baseline_accuracy;
  std::map<DistractorType, Tally> by_type;
  std::map<int, Tally> by_count;
  for (const auto& r : records) {
    if (!r.distractor) throw ValidationError("record " + r.stimulus_id + " has no distractor plan");
    const bool ok = is_correct(r);
    by_type[r.distractor->type].add(ok);
    by_count[r.distractor->count].add(ok);
    table.overall.add(ok);
  }
  auto delta = [&](const Tally& t) -> std::optional<double> {
    if (!baseline_accuracy) return std::nullopt;
    return t.accuracy() - *baseline_accuracy;
  };
  for (auto type : kDistractorTypes) {
    if (!by_type.contains(type)) continue;
    table.by_type.push_back({std::string(to_string(type)), by_type[type], delta(by_type[type])});
  }
  for (const auto& [count, tally] : by_count) {
    table.by_count.push_back({std::to_string(count), tally, delta(tally)});
  }
  return table;
}

std::vector<RunRecord> distractor_reference(std::span<const RunRecord> baseline_records) {
  const TargetSpec target = distractor_target();
  std::vector<RunRecord> out;
  for (const auto& r : baseline_records) {
    if (r.target.cls == target.cls && r.target.color == target.color) out.push_back(r);
  }
  return out;
}

}  // namespace countlab
