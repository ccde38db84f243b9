// Writes a full report (baseline, distractors) and a minimal one (a single
// setting, no marginals) under the directory given as the only argument.

#include <iostream>

#include "countlab/harness.hpp"
#include "countlab/metrics.hpp"
#include "countlab/report.hpp"
#include "countlab/stimulus.hpp"

using namespace countlab;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: write_sample_report <dir>\n";
    return 2;
  }
  const std::filesystem::path dir(argv[1]);
  const auto no_image = [](const Stimulus&) { return std::string(); };

  const auto baseline = gen_baseline({1, Setting::baseline, QuestionMode::closed});
  const auto distractors = gen_distractors({1, Setting::distractors, QuestionMode::closed}, baseline);
  MockModel model(MockSpec::parse("random:4"));
  const auto base_records = run_eval(baseline, model, no_image, {});
  const auto dis_records = run_eval(distractors, model, no_image, {});

  ReportInput full;
  full.model = "uniform-random";
  full.settings = {{"baseline", summarize(base_records)}, {"distractors", summarize(dis_records)}};
  full.baseline_marginals = marginalize(base_records);
  const auto reference = distractor_reference(base_records);
  full.distractors = distractor_table(dis_records, summarize(reference).accuracy);
  emit_report(dir, full);

  const auto clustered = gen_clustered({1, Setting::clustered, QuestionMode::open});
  MockModel oracle(MockSpec::parse("oracle"));
  ReportInput minimal;
  minimal.settings = {{"clustered", summarize(run_eval(clustered, oracle, no_image, {}))}};
  emit_report(dir / "minimal", minimal);
  return 0;
}
