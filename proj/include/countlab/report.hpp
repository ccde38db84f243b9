#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "countlab/metrics.hpp"

namespace countlab {

struct ReportInput {
  std::string model = "model";
  std::vector<std::pair<std::string, MetricSummary>> settings;  // in display order
  std::optional<MarginalReport> baseline_marginals;
  std::optional<DistractorTable> distractors;
};

nlohmann::ordered_json summary_to_json(const MetricSummary& s);
nlohmann::ordered_json marginals_to_json(const MarginalReport& m);
nlohmann::ordered_json distractors_to_json(const DistractorTable& t);
nlohmann::ordered_json report_to_json(const ReportInput& input);

std::string report_markdown(const ReportInput& input);

/// Writes report.json, report.md and tables/*.csv under dir.
void emit_report(const std::filesystem::path& dir, const ReportInput& input);

}  // namespace countlab
