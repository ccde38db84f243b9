#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "countlab/errors.hpp"

namespace countlab {

struct Annotation {
  std::string image_ref;
  std::string object_class;
  int count = 0;  // 0..255
  std::optional<std::string> split_hint;  // train / valid / test

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct IngestResult {
  std::vector<Annotation> records;
  std::vector<std::string> diagnostics;  // "<file>:<line>: <reason>" per skipped line
};

/// Reads JSONL, or CSV when the extension is .csv (header row naming
/// image_ref, object_class, count and optionally split_hint). Malformed lines
/// are skipped with a diagnostic. Throws NoValidRecords when none survive.
IngestResult ingest(const std::filesystem::path& path);
std::optional<Annotation> annotation_from_json(const nlohmann::json& j, std::string& why);
nlohmann::ordered_json annotation_to_json(const Annotation& a);

struct BpcQuota {
  int train_per_count = 300;
  int train_min = 0;
  int train_max = 9;
  int eval_per_count = 60;  // valid and test each
  int eval_min = 2;
  int eval_max = 9;
  std::size_t max_classes = 76;  // used only without valid/test hints
};

struct BpcSplits {
  std::vector<Annotation> train;
  std::vector<Annotation> valid;
  std::vector<Annotation> test;
  std::vector<std::string> classes;  // eligible classes, sorted
};

struct Shortfall {
  std::string split;
  int count = 0;
  int deficit = 0;
};

class InsufficientPool : public ValidationError {
 public:
  explicit InsufficientPool(std::vector<Shortfall> shortfalls);
  [[nodiscard]] const std::vector<Shortfall>& shortfalls() const { return shortfalls_; }

 private:
  std::vector<Shortfall> shortfalls_;
};

/// Count-balanced, class-spread splits. Test is filled first, then valid,
/// then train; an image is used at most once. Records hinted for one split
/// are only drawn into that split.
BpcSplits build_bpc(const std::vector<Annotation>& annotations, std::uint64_t seed, const BpcQuota& quota = {});

struct HistogramRow {
  std::string object_class;
  int count = 0;
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

struct BalanceReport {
  std::vector<std::string> violations;
  std::vector<HistogramRow> histogram;  // eligible classes x counts train_min..train_max
};

BalanceReport verify_balance(const BpcSplits& splits, const BpcQuota& quota = {});

std::string histogram_csv(const BalanceReport& report);

}  // namespace countlab
