#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "countlab/harness.hpp"

namespace countlab {

struct Tally {
  std::size_t n = 0;
  std::size_t correct = 0;
  [[nodiscard]] double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n); }
  void add(bool ok) {
    ++n;
    if (ok) ++correct;
  }
};

struct MetricSummary {
  std::size_t n = 0;
  std::size_t unparsed = 0;  // records without an extracted answer
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  std::map<int, double> per_count_f1;  // gold count -> one-vs-rest F1
  std::map<int, Tally> per_count;      // gold count -> accuracy tally
};

bool is_correct(const RunRecord& r);

/// |extracted - gold|, or the largest distance from gold to any option when
/// nothing was extracted (0..81 when the record has no options).
double absolute_error(const RunRecord& r);

/// Throws EmptyInput.
MetricSummary summarize(std::span<const RunRecord> records);

double mean(std::span<const double> values);
/// ddof = 0 gives the population STD, ddof = 1 the sample STD.
double std_dev(std::span<const double> values, int ddof);

/// Baseline 4 classes x 6 colors.
inline constexpr std::array kGridClasses{ObjectClass::square, ObjectClass::circle, ObjectClass::triangle,
                                         ObjectClass::star};
inline constexpr std::array kGridColors{Color::red,  Color::green,   Color::blue,
                                        Color::cyan, Color::magenta, Color::yellow};

struct MarginalReport {
  Tally overall;
  std::map<ObjectClass, Tally> per_class;  // pooled over colors
  std::map<Color, Tally> per_color;        // pooled over classes
  std::map<std::pair<ObjectClass, Color>, Tally> per_target;
  double class_std = 0.0;  // sample STD over the 4 class accuracies
  double attr_std = 0.0;   // sample STD over the 6 color accuracies
};

/// Groups records by target class and color. Throws IncompleteGrid when any
/// of the 24 class x color cells has no records; other targets are ignored.
MarginalReport marginalize(std::span<const RunRecord> records);

struct DistractorRow {
  std::string label;  // "SRS" ... or "1" / "5" / "9"
  Tally tally;
  std::optional<double> delta;  // accuracy - baseline accuracy
};

struct DistractorTable {
  std::optional<double> baseline_accuracy;
  Tally overall;
  std::vector<DistractorRow> by_type;   // SRS, LRS, LRC, LMS
  std::vector<DistractorRow> by_count;  // 1, 5, 9
};

/// Pools accuracy per distractor type (over counts and variants) and per
/// distractor count (over types and variants). Throws ValidationError on
/// records without a distractor plan.
DistractorTable distractor_table(std::span<const RunRecord> records, std::optional<double> baseline_accuracy);

/// Records whose target is the distractor setting's target, for the
/// baseline reference accuracy.
std::vector<RunRecord> distractor_reference(std::span<const RunRecord> baseline_records);

}  // namespace countlab
