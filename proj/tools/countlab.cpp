// countlab: command-line entry point for generation, rendering, evaluation,
// metrics, probing, head tuning and BPC construction.

#include <CLI11.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "countlab/bpc.hpp"
#include "countlab/errors.hpp"
#include "countlab/harness.hpp"
#include "countlab/head.hpp"
#include "countlab/metrics.hpp"
#include "countlab/png.hpp"
#include "countlab/probe.hpp"
#include "countlab/render.hpp"
#include "countlab/report.hpp"
#include "countlab/stimulus.hpp"
#include "countlab/util.hpp"

namespace fs = std::filesystem;
using namespace countlab;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  int jobs = 1;
  bool force = false;
  bool resume = false;
  std::string mock;
  std::string endpoint;
};

/// Refuses to write into a directory that already holds a run unless
/// --force (or --resume, where allowed) is given.
fs::path prepare_out(const Globals& g, bool resumable = false) {
  if (g.out.empty()) throw ValidationError("--out is required");
  const fs::path out(g.out);
  if (fs::exists(out / "manifest.json") && !g.force && !(resumable && g.resume)) {
    throw ValidationError(out.string() + " already holds results; pass --force to overwrite");
  }
  fs::create_directories(out);
  return out;
}

void write_manifest(const fs::path& out, const CLI::App& app, const std::string& command) {
  nlohmann::ordered_json m;
  m["command"] = command;
  const std::string config = app.config_to_str(true, false);
  m["config_sha256"] = sha256_hex(config);
  m["config"] = config;
  m["tool_version"] = COUNTLAB_VERSION;
  write_file(out / "manifest.json", m.dump(2) + "\n");
}

template <typename F>
void parallel_for(std::size_t n, int jobs, F&& body) {
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

void write_split(const fs::path& out, const std::string& name, const GenConfig& config,
                 const std::vector<Stimulus>& split) {
  write_split_jsonl(out / (name + ".jsonl"), split);
  write_file(out / (name + ".header.json"), split_header(config, name, split).dump(2) + "\n");
  std::cout << name << ": " << split.size() << " stimuli\n";
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string setting = "baseline";
  std::string question_mode = "closed";
};

void run_gen(const Globals& g, const GenArgs& a, const CLI::App& app) {
  GenConfig config;
  config.seed = g.seed;
  config.question_mode = parse_question_mode(a.question_mode);
  const auto out = prepare_out(g);

  std::vector<std::string> settings;
  if (a.setting == "all") {
    settings = {"baseline", "distractors", "clustered", "scattered", "training"};
  } else {
    parse_setting(a.setting);
    settings = {a.setting};
  }
  std::optional<std::vector<Stimulus>> baseline;
  for (const auto& name : settings) {
    config.setting = parse_setting(name);
    switch (config.setting) {
      case Setting::baseline:
        baseline = gen_baseline(config);
        write_split(out, name, config, *baseline);
        break;
      case Setting::distractors: {
        if (!baseline) {
          GenConfig base = config;
          base.setting = Setting::baseline;
          baseline = gen_baseline(base);
        }
        write_split(out, name, config, gen_distractors(config, *baseline));
        break;
      }
      case Setting::clustered:
        write_split(out, name, config, gen_clustered(config));
        break;
      case Setting::scattered:
        write_split(out, name, config, gen_scattered(config));
        break;
      case Setting::training: {
        const auto t = gen_training(config);
        write_split(out, "training-train", config, t.train);
        write_split(out, "training-valid", config, t.valid);
        break;
      }
    }
  }
  write_manifest(out, app, "gen");
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  std::string split;
};

void run_render(const Globals& g, const RenderArgs& a, const CLI::App& app) {
  const auto split = read_split_jsonl(a.split);
  const auto out = prepare_out(g);
  parallel_for(split.size(), g.jobs, [&](std::size_t i) {
    write_file(out / (split[i].id + ".png"), encode_png(rasterize(split[i].scene)));
  });
  std::cout << "rendered " << split.size() << " images into " << out.string() << "\n";
  write_manifest(out, app, "render");
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string split;
  std::string images;
  bool inline_render = false;
  double timeout_s = 60.0;
  std::string auth_token_env;
};

void run_eval_cmd(const Globals& g, const EvalArgs& a, const CLI::App& app) {
  if (g.mock.empty() == g.endpoint.empty()) throw ValidationError("eval needs exactly one of --mock or --endpoint");
  const auto split = read_split_jsonl(a.split);
  const auto out = prepare_out(g, /*resumable=*/true);

  std::unique_ptr<Model> model;
  if (!g.mock.empty()) {
    model = std::make_unique<MockModel>(MockSpec::parse(g.mock));
  } else {
    ModelEndpoint ep;
    ep.base_url = g.endpoint;
    ep.timeout_s = a.timeout_s;
    ep.max_in_flight = g.jobs;
    if (!a.auth_token_env.empty()) {
      if (const char* token = std::getenv(a.auth_token_env.c_str())) ep.auth_token = token;
    }
    model = std::make_unique<HttpModel>(ep);
  }

  ImageSource images;
  if (a.inline_render) {
    images = render_source();
  } else {
    images = png_directory_source(a.images.empty() ? fs::path(a.split).parent_path() : fs::path(a.images));
  }

  EvalOptions opt;
  opt.max_in_flight = g.jobs;
  opt.resume = g.resume;
  opt.records_path = out / "records.jsonl";
  const auto records = run_eval(split, *model, images, opt);
  std::size_t errors = 0;
  for (const auto& r : records) errors += r.error ? 1 : 0;
  const auto s = summarize(records);
  std::cout << records.size() << " records, accuracy " << s.accuracy << ", transport errors " << errors << "\n";
  write_manifest(out, app, "eval");
}

// ---------------------------------------------------------------- metrics / report

nlohmann::ordered_json metrics_json(const std::vector<RunRecord>& records) {
  nlohmann::ordered_json j;
  j["summary"] = summary_to_json(summarize(records));
  try {
    j["marginals"] = marginals_to_json(marginalize(records));
  } catch (const IncompleteGrid&) {
    j["marginals"] = nullptr;
  }
  const bool has_plans =
      std::all_of(records.begin(), records.end(), [](const RunRecord& r) { return r.distractor.has_value(); });
  j["distractors"] = has_plans ? distractors_to_json(distractor_table(records, std::nullopt)) : nullptr;
  return j;
}

struct MetricsArgs {
  std::string records;
};

void run_metrics(const Globals& g, const MetricsArgs& a, const CLI::App& app) {
  const auto records = read_records_jsonl(a.records);
  const auto out = prepare_out(g);
  const auto j = metrics_json(records);
  write_file(out / "metrics.json", j.dump(2) + "\n");
  std::cout << "accuracy " << j["summary"]["accuracy"] << ", MAE " << j["summary"]["mae"] << ", RMSE "
            << j["summary"]["rmse"] << "\n";
  write_manifest(out, app, "metrics");
}

struct ReportArgs {
  std::vector<std::string> records;  // name=path
  std::string model = "model";
};

void run_report(const Globals& g, const ReportArgs& a, const CLI::App& app) {
  ReportInput input;
  input.model = a.model;
  std::map<std::string, std::vector<RunRecord>> by_name;
  for (const auto& spec : a.records) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--records expects name=path, got '" + spec + "'");
    const std::string name = spec.substr(0, eq);
    auto records = read_records_jsonl(spec.substr(eq + 1));
    input.settings.emplace_back(name, summarize(records));
    by_name[name] = std::move(records);
  }
  if (by_name.contains("baseline")) input.baseline_marginals = marginalize(by_name["baseline"]);
  if (by_name.contains("distractors")) {
    std::optional<double> ref;
    if (by_name.contains("baseline")) {
      const auto base = distractor_reference(by_name["baseline"]);
      if (!base.empty()) ref = summarize(base).accuracy;
    }
    input.distractors = distractor_table(by_name["distractors"], ref);
  }
  const auto out = prepare_out(g);
  emit_report(out, input);
  std::cout << "report written to " << (out / "report.md").string() << "\n";
  write_manifest(out, app, "report");
}

// ---------------------------------------------------------------- probe

struct ProbeArgs {
  std::string reps;
  std::string head;
  std::string labels;
  int folds = 3;
};

void run_probe(const Globals& g, const ProbeArgs& a, const CLI::App& app) {
  std::optional<HeadWeights> head;
  if (!a.head.empty()) head = import_head(a.head);
  SweepOptions opt;
  opt.folds = a.folds;
  opt.seed = g.seed;
  opt.jobs = g.jobs;
  if (!a.labels.empty()) opt.labels = fs::path(a.labels);
  const auto out = prepare_out(g);
  const auto sweep = layer_sweep(a.reps, head ? &*head : nullptr, opt);
  write_file(out / "sweep.csv", sweep_csv(sweep));
  for (const auto& m : sweep.missing) std::cerr << "missing representation: " << m << "\n";
  std::cout << sweep.rows.size() << " sweep rows written to " << (out / "sweep.csv").string() << "\n";
  write_manifest(out, app, "probe");
}

// ---------------------------------------------------------------- tune-head

struct TuneArgs {
  std::string train_reps, train_labels, valid_reps, valid_labels, test_reps, test_labels;
  std::string head;
  std::optional<double> lr;
  std::string preset;
  std::string domain = "synthetic";
  int epochs = 50;
  std::size_t batch_size = 32;
};

TrainCache load_cache(const std::string& reps, const std::string& labels, const std::string& split) {
  TrainCache c;
  c.features = load_reps(reps);
  c.digits = labels.empty() ? load_labels_for(reps, c.features) : read_labels(labels);
  c.split = split;
  return c;
}

void run_tune(const Globals& g, const TuneArgs& a, const CLI::App& app) {
  TuneConfig config;
  config.seed = g.seed;
  config.epochs = a.epochs;
  config.batch_size = a.batch_size;
  if (a.lr) {
    config.learning_rate = *a.lr;
  } else if (!a.preset.empty()) {
    config.learning_rate =
        learning_rate_preset(a.preset, a.domain == "real" || a.domain == "real-world" ? DataDomain::real_world
                                                                                       : DataDomain::synthetic);
  } else {
    throw ValidationError("tune-head needs --lr or --preset");
  }
  const auto initial = import_head(a.head);
  const auto train = load_cache(a.train_reps, a.train_labels, "train");
  const auto valid = load_cache(a.valid_reps, a.valid_labels, "valid");
  const auto out = prepare_out(g);

  const auto result = train_head(train, valid, initial, config);
  export_head(out / "head.hrep", result.head);
  std::string history = "epoch,train_loss,valid_accuracy\n";
  for (const auto& e : result.history) {
    history += std::to_string(e.epoch) + "," + std::to_string(e.train_loss) + "," +
               std::to_string(e.valid_accuracy) + "\n";
  }
  write_file(out / "history.csv", history);

  nlohmann::ordered_json m;
  m["learning_rate"] = config.learning_rate;
  m["best_epoch"] = result.best_epoch;
  m["valid_before"] = summary_to_json(evaluate_head(valid, initial));
  m["valid_after"] = summary_to_json(evaluate_head(valid, result.head));
  if (!a.test_reps.empty()) {
    const auto test = load_cache(a.test_reps, a.test_labels, "test");
    m["test_before"] = summary_to_json(evaluate_head(test, initial));
    m["test_after"] = summary_to_json(evaluate_head(test, result.head));
  }
  write_file(out / "metrics.json", m.dump(2) + "\n");
  std::cout << "best epoch " << result.best_epoch << ", valid accuracy "
            << result.history[static_cast<std::size_t>(result.best_epoch)].valid_accuracy << "\n";
  write_manifest(out, app, "tune-head");
}

// ---------------------------------------------------------------- bpc

struct BpcArgs {
  std::string annotations;
};

void run_bpc(const Globals& g, const BpcArgs& a, const CLI::App& app) {
  const auto ingested = ingest(a.annotations);
  for (const auto& d : ingested.diagnostics) std::cerr << "skipped " << d << "\n";
  const auto splits = build_bpc(ingested.records, g.seed);
  const auto report = verify_balance(splits);
  const auto out = prepare_out(g);
  auto dump = [&](const std::string& name, const std::vector<Annotation>& split) {
    std::string buf;
    for (const auto& r : split) buf += annotation_to_json(r).dump() + "\n";
    write_file(out / (name + ".jsonl"), buf);
  };
  dump("train", splits.train);
  dump("valid", splits.valid);
  dump("test", splits.test);
  write_file(out / "histogram.csv", histogram_csv(report));
  std::string diag;
  for (const auto& d : ingested.diagnostics) diag += d + "\n";
  write_file(out / "diagnostics.txt", diag);
  nlohmann::ordered_json b;
  b["classes"] = splits.classes;
  b["sizes"] = {{"train", splits.train.size()}, {"valid", splits.valid.size()}, {"test", splits.test.size()}};
  b["violations"] = report.violations;
  write_file(out / "balance.json", b.dump(2) + "\n");
  std::cout << "BPC " << splits.train.size() << " / " << splits.valid.size() << " / " << splits.test.size()
            << ", " << report.violations.size() << " violations\n";
  write_manifest(out, app, "bpc");
  if (!report.violations.empty()) throw Error("balance check failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"countlab: controlled counting stimuli, evaluation, probing and head tuning"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", COUNTLAB_VERSION);
  app.set_config("--config", "", "Read flags from a key = value file ([command] sections for subcommand flags)");

  Globals g;
  app.add_option("--seed", g.seed, "Root seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Worker cap")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Overwrite an existing output directory");
  app.add_flag("--resume", g.resume, "Continue an interrupted eval run");
  app.add_option("--mock", g.mock, "Built-in model: oracle, random[:seed], constant:<k>, off_by_one");
  app.add_option("--endpoint", g.endpoint, "Base URL of a model server");

  std::function<void()> action;

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a stimulus split");
  gen_cmd->add_option("--setting", gen.setting, "baseline, distractors, clustered, scattered, training or all")
      ->capture_default_str();
  gen_cmd->add_option("--question-mode", gen.question_mode, "closed or open")->capture_default_str();
  gen_cmd->callback([&] { action = [&] { run_gen(g, gen, app); }; });

  RenderArgs render;
  auto* render_cmd = app.add_subcommand("render", "Render a split to PNG files");
  render_cmd->add_option("--split", render.split, "Split JSONL")->required()->check(CLI::ExistingFile);
  render_cmd->callback([&] { action = [&] { run_render(g, render, app); }; });

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Query a model on every stimulus of a split");
  eval_cmd->add_option("--split", eval.split, "Split JSONL")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--images", eval.images, "PNG directory (default: the split's directory)");
  eval_cmd->add_flag("--inline-render", eval.inline_render, "Render images in memory instead of reading PNGs");
  eval_cmd->add_option("--timeout", eval.timeout_s, "Per-request timeout in seconds")->capture_default_str();
  eval_cmd->add_option("--auth-token-env", eval.auth_token_env, "Environment variable holding a bearer token");
  eval_cmd->callback([&] { action = [&] { run_eval_cmd(g, eval, app); }; });

  MetricsArgs metrics;
  auto* metrics_cmd = app.add_subcommand("metrics", "Summarize a records file");
  metrics_cmd->add_option("--records", metrics.records, "records.jsonl")->required()->check(CLI::ExistingFile);
  metrics_cmd->callback([&] { action = [&] { run_metrics(g, metrics, app); }; });

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Build report.md, report.json and tables");
  report_cmd->add_option("--records", report.records, "name=records.jsonl, repeatable")->required();
  report_cmd->add_option("--model", report.model, "Model name shown in the tables")->capture_default_str();
  report_cmd->callback([&] { action = [&] { run_report(g, report, app); }; });

  ProbeArgs probe;
  auto* probe_cmd = app.add_subcommand("probe", "Layer-wise linear probing sweep");
  probe_cmd->add_option("--reps", probe.reps, "Directory of HREP files")->required()->check(CLI::ExistingDirectory);
  probe_cmd->add_option("--head", probe.head, "Exported output layer for the Out curve");
  probe_cmd->add_option("--labels", probe.labels, "Label file overriding the sidecars' label_ref");
  probe_cmd->add_option("--folds", probe.folds, "Cross-validation folds")->capture_default_str();
  probe_cmd->callback([&] { action = [&] { run_probe(g, probe, app); }; });

  TuneArgs tune;
  auto* tune_cmd = app.add_subcommand("tune-head", "Fine-tune the output layer on cached hidden states");
  tune_cmd->add_option("--train-reps", tune.train_reps, "Training H_last HREP")->required();
  tune_cmd->add_option("--train-labels", tune.train_labels, "Training labels (default: sidecar label_ref)");
  tune_cmd->add_option("--valid-reps", tune.valid_reps, "Validation H_last HREP")->required();
  tune_cmd->add_option("--valid-labels", tune.valid_labels, "Validation labels");
  tune_cmd->add_option("--test-reps", tune.test_reps, "Optional test H_last HREP");
  tune_cmd->add_option("--test-labels", tune.test_labels, "Test labels");
  tune_cmd->add_option("--head", tune.head, "Initial output layer (HREP + sidecar)")->required();
  tune_cmd->add_option("--lr", tune.lr, "Learning rate");
  tune_cmd->add_option("--preset", tune.preset, "internvl, llava-i, llava-ov, paligemma or qwen");
  tune_cmd->add_option("--domain", tune.domain, "synthetic or real")->capture_default_str();
  tune_cmd->add_option("--epochs", tune.epochs, "Epochs")->capture_default_str();
  tune_cmd->add_option("--batch-size", tune.batch_size, "Minibatch size")->capture_default_str();
  tune_cmd->callback([&] { action = [&] { run_tune(g, tune, app); }; });

  BpcArgs bpc;
  auto* bpc_cmd = app.add_subcommand("bpc", "Build Balanced Pixmo-Count splits from annotations");
  bpc_cmd->add_option("--annotations", bpc.annotations, "JSONL or CSV annotations")
      ->required()
      ->check(CLI::ExistingFile);
  bpc_cmd->callback([&] { action = [&] { run_bpc(g, bpc, app); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    action();
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 2;
  }
}
