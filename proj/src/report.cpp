#include "countlab/report.hpp"

#include <cmath>
#include <cstdio>

#include "countlab/util.hpp"

namespace countlab {

namespace {

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string signed_pct(double fraction) {
  const double p = 100.0 * fraction;
  if (std::abs(p) < 0.005) return "0.00";
  return (p > 0 ? "↑" : "↓") + fixed(std::abs(p), 2);
}

nlohmann::ordered_json tally_json(const Tally& t) {
  return {{"n", t.n}, {"correct", t.correct}, {"accuracy", t.accuracy()}};
}

nlohmann::ordered_json rows_json(const std::vector<DistractorRow>& rows) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    auto j = tally_json(r.tally);
    j["label"] = r.label;
    j["delta"] = r.delta ? nlohmann::ordered_json(*r.delta) : nullptr;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

nlohmann::ordered_json summary_to_json(const MetricSummary& s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["unparsed"] = s.unparsed;
  j["accuracy"] = s.accuracy;
  j["macro_f1"] = s.macro_f1;
  j["mae"] = s.mae;
  j["rmse"] = s.rmse;
  auto per_count = nlohmann::ordered_json::array();
  for (const auto& [count, tally] : s.per_count) {
    per_count.push_back({{"count", count},
                         {"n", tally.n},
                         {"accuracy", tally.accuracy()},
                         {"f1", s.per_count_f1.at(count)}});
  }
  j["per_count"] = std::move(per_count);
  return j;
}

nlohmann::ordered_json marginals_to_json(const MarginalReport& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.overall.accuracy();
  j["class_std"] = m.class_std;
  j["attr_std"] = m.attr_std;
  nlohmann::ordered_json classes;
  for (const auto& [cls, t] : m.per_class) classes[std::string(to_string(cls))] = tally_json(t);
  j["per_class"] = std::move(classes);
  nlohmann::ordered_json colors;
  for (const auto& [color, t] : m.per_color) colors[std::string(to_string(color))] = tally_json(t);
  j["per_color"] = std::move(colors);
  auto targets = nlohmann::ordered_json::array();
  for (const auto& [key, t] : m.per_target) {
    auto e = tally_json(t);
    e["class"] = to_string(key.first);
    e["color"] = to_string(key.second);
    targets.push_back(std::move(e));
  }
  j["per_target"] = std::move(targets);
  return j;
}

nlohmann::ordered_json distractors_to_json(const DistractorTable& t) {
  nlohmann::ordered_json j;
  j["baseline_accuracy"] = t.baseline_accuracy ? nlohmann::ordered_json(*t.baseline_accuracy) : nullptr;
  j["overall"] = tally_json(t.overall);
  j["by_type"] = rows_json(t.by_type);
  j["by_count"] = rows_json(t.by_count);
  return j;
}

nlohmann::ordered_json report_to_json(const ReportInput& input) {
  nlohmann::ordered_json j;
  j["tool_version"] = COUNTLAB_VERSION;
  j["model"] = input.model;
  nlohmann::ordered_json settings = nlohmann::ordered_json::object();
  for (const auto& [name, s] : input.settings) settings[name] = summary_to_json(s);
  j["settings"] = std::move(settings);
  j["baseline_marginals"] = input.baseline_marginals ? marginals_to_json(*input.baseline_marginals) : nullptr;
  j["distractors"] = input.distractors ? distractors_to_json(*input.distractors) : nullptr;
  return j;
}

std::string report_markdown(const ReportInput& input) {
  std::string md = "# Counting report: " + input.model + "\n\n";

  md += "## Summary\n\n| Setting | N | Accuracy (%) | Macro-F1 | MAE | RMSE | Unparsed |\n";
  md += "|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& [name, s] : input.settings) {
    md += "| " + name + " | " + std::to_string(s.n) + " | " + pct(s.accuracy) + " | " + fixed(s.macro_f1, 4) +
          " | " + fixed(s.mae, 4) + " | " + fixed(s.rmse, 4) + " | " + std::to_string(s.unparsed) + " |\n";
  }

  if (const auto& m = input.baseline_marginals) {
    md += "\n## Baseline\n\n| Model | Accuracy | Class (STD) | Attributes (STD) |\n|---|---:|---:|---:|\n";
    md += "| " + input.model + " | " + pct(m->overall.accuracy()) + " | ±" + pct(m->class_std) + " | ±" +
          pct(m->attr_std) + " |\n";

    md += "\n### Accuracy per target (%)\n\n| Class |";
    for (auto color : kGridColors) md += " " + std::string(to_string(color)) + " |";
    md += " All |\n|---|";
    for (std::size_t i = 0; i <= kGridColors.size(); ++i) md += "---:|";
    md += "\n";
    for (auto cls : kGridClasses) {
      md += "| " + plural(cls) + " |";
      for (auto color : kGridColors) md += " " + pct(m->per_target.at({cls, color}).accuracy()) + " |";
      md += " " + pct(m->per_class.at(cls).accuracy()) + " |\n";
    }
    md += "| all |";
    for (auto color : kGridColors) md += " " + pct(m->per_color.at(color).accuracy()) + " |";
    md += " " + pct(m->overall.accuracy()) + " |\n";
  }

  if (const auto& d = input.distractors) {
    md += "\n## Distractors\n\n";
    if (d->baseline_accuracy) md += "Baseline (large magenta circles): " + pct(*d->baseline_accuracy) + "\n\n";
    auto table = [&](const std::string& head, const std::vector<DistractorRow>& rows) {
      md += "| " + head + " | N | Accuracy (%) | Δ |\n|---|---:|---:|---:|\n";
      for (const auto& r : rows) {
        md += "| " + r.label + " | " + std::to_string(r.tally.n) + " | " + pct(r.tally.accuracy()) + " | " +
              (r.delta ? signed_pct(*r.delta) : std::string("n/a")) + " |\n";
      }
    };
    table("Type", d->by_type);
    md += "\n";
    table("Distractors", d->by_count);
  }

  std::optional<MetricSummary> clustered, scattered;
  for (const auto& [name, s] : input.settings) {
    if (name == "clustered") clustered = s;
    if (name == "scattered") scattered = s;
  }
  if (clustered && scattered) {
    md += "\n## Clustered vs scattered\n\n| Model | Clustered (%) | Scattered (%) | Δ |\n|---|---:|---:|---:|\n";
    md += "| " + input.model + " | " + pct(clustered->accuracy) + " | " + pct(scattered->accuracy) + " | " +
          signed_pct(scattered->accuracy - clustered->accuracy) + " |\n";
  }

  for (const auto& [name, s] : input.settings) {
    md += "\n## Per-count F1: " + name + "\n\n| Count | N | Accuracy (%) | F1 |\n|---:|---:|---:|---:|\n";
    for (const auto& [count, tally] : s.per_count) {
      md += "| " + std::to_string(count) + " | " + std::to_string(tally.n) + " | " + pct(tally.accuracy()) +
            " | " + fixed(s.per_count_f1.at(count), 4) + " |\n";
    }
  }
  return md;
}

void emit_report(const std::filesystem::path& dir, const ReportInput& input) {
  const auto tables = dir / "tables";
  std::filesystem::create_directories(tables);
  write_file(dir / "report.json", report_to_json(input).dump(2) + "\n");
  write_file(dir / "report.md", report_markdown(input));

  std::string summary = "setting,n,accuracy,macro_f1,mae,rmse,unparsed\n";
  for (const auto& [name, s] : input.settings) {
    summary += name + "," + std::to_string(s.n) + "," + fixed(s.accuracy, 6) + "," + fixed(s.macro_f1, 6) + "," +
               fixed(s.mae, 6) + "," + fixed(s.rmse, 6) + "," + std::to_string(s.unparsed) + "\n";
    std::string f1 = "count,n,accuracy,f1\n";
    for (const auto& [count, tally] : s.per_count) {
      f1 += std::to_string(count) + "," + std::to_string(tally.n) + "," + fixed(tally.accuracy(), 6) + "," +
            fixed(s.per_count_f1.at(count), 6) + "\n";
    }
    write_file(tables / ("f1_" + name + ".csv"), f1);
  }
  write_file(tables / "summary.csv", summary);

  if (const auto& m = input.baseline_marginals) {
    std::string classes = "class,n,accuracy\n";
    for (const auto& [cls, t] : m->per_class) {
      classes += std::string(to_string(cls)) + "," + std::to_string(t.n) + "," + fixed(t.accuracy(), 6) + "\n";
    }
    write_file(tables / "class_marginals.csv", classes);
    std::string colors = "color,n,accuracy\n";
    for (const auto& [color, t] : m->per_color) {
      colors += std::string(to_string(color)) + "," + std::to_string(t.n) + "," + fixed(t.accuracy(), 6) + "\n";
    }
    write_file(tables / "attribute_marginals.csv", colors);
    std::string targets = "class,color,n,accuracy\n";
    for (const auto& [key, t] : m->per_target) {
      targets += std::string(to_string(key.first)) + "," + std::string(to_string(key.second)) + "," +
                 std::to_string(t.n) + "," + fixed(t.accuracy(), 6) + "\n";
    }
    write_file(tables / "target_accuracy.csv", targets);
  }

  if (const auto& d = input.distractors) {
    std::string csv = "group,label,n,accuracy,delta\n";
    auto rows = [&](const std::string& group, const std::vector<DistractorRow>& rs) {
      for (const auto& r : rs) {
        csv += group + "," + r.label + "," + std::to_string(r.tally.n) + "," + fixed(r.tally.accuracy(), 6) + "," +
               (r.delta ? fixed(*r.delta, 6) : std::string()) + "\n";
      }
    };
    rows("type", d->by_type);
    rows("count", d->by_count);
    write_file(tables / "distractors.csv", csv);
  }
}

}  // namespace countlab
