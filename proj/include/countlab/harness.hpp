#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "countlab/stimulus.hpp"

namespace countlab {

struct ModelEndpoint {
  std::string base_url;  // e.g. "http://127.0.0.1:8080" or with a path prefix
  double timeout_s = 60.0;
  int max_in_flight = 1;
  std::optional<std::string> auth_token;
  int max_retries = 3;
  std::chrono::milliseconds backoff{250};  // doubled after every failed attempt
};

/// Response of POST {base_url}/meta.
struct ModelMeta {
  std::string model_id;
  int hidden_size = 0;
  int num_layers = 0;
  std::map<int, int> answer_token_ids;  // digit 1..9 -> token id
};

/// One model query: what was asked, what came back, and the gold answer.
struct RunRecord {
  std::string stimulus_id;
  std::string raw_response;
  std::optional<int> extracted;
  int gold = 0;
  double latency_ms = 0.0;
  std::vector<int> options;
  TargetSpec target;
  std::optional<DistractorPlan> distractor;
  std::optional<std::string> error;  // transport failure, recorded instead of aborting
};

nlohmann::ordered_json record_to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);
std::vector<RunRecord> read_records_jsonl(const std::filesystem::path& path);

/// First decimal integer or number word (zero..ten) in `raw` that belongs to
/// `valid`; tokens outside `valid` are skipped.
std::optional<int> extract_answer(std::string_view raw, std::span<const int> valid);

/// Answers the extractor accepts for a stimulus: its options for closed
/// questions, 0..81 for open ones.
std::vector<int> valid_answers(const Stimulus& s);

class Model {
 public:
  virtual ~Model() = default;
  /// Returns the raw text answer. Transport problems throw TransportError.
  virtual std::string generate(const Stimulus& stimulus, const std::string& image_png,
                               const std::string& prompt) = 0;
};

/// POST {base_url}/generate with retries and exponential backoff.
std::string query_model(const ModelEndpoint& endpoint, std::string_view image_png, std::string_view prompt,
                        int max_new_tokens = 16);
ModelMeta fetch_meta(const ModelEndpoint& endpoint);
ModelMeta meta_from_json(const nlohmann::json& j);

class HttpModel : public Model {
 public:
  explicit HttpModel(ModelEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string generate(const Stimulus& stimulus, const std::string& image_png, const std::string& prompt) override;

 private:
  ModelEndpoint endpoint_;
};

enum class MockKind { oracle, uniform_random, constant, off_by_one };

struct MockSpec {
  MockKind kind = MockKind::oracle;
  std::uint64_t seed = 0;  // uniform_random
  int constant = 0;        // constant

  /// "oracle", "random[:seed]", "constant:<k>", "off_by_one".
  static MockSpec parse(std::string_view text);
};

/// In-process test models. They read the stimulus directly and ignore the
/// image.
class MockModel : public Model {
 public:
  explicit MockModel(MockSpec spec) : spec_(spec) {}
  std::string generate(const Stimulus& stimulus, const std::string& image_png, const std::string& prompt) override;

 private:
  MockSpec spec_;
};

using ImageSource = std::function<std::string(const Stimulus&)>;
/// Reads "<dir>/<stimulus_id>.png".
ImageSource png_directory_source(std::filesystem::path dir);
/// Rasterizes and encodes each scene on demand.
ImageSource render_source();

struct EvalOptions {
  int max_in_flight = 1;
  bool resume = false;
  std::optional<std::filesystem::path> records_path;  // streamed JSONL output
};

/// One RunRecord per stimulus, returned in split order. With resume,
/// stimulus ids already present in records_path are not queried again.
std::vector<RunRecord> run_eval(const std::vector<Stimulus>& split, Model& model, const ImageSource& images,
                                const EvalOptions& options);

}  // namespace countlab
