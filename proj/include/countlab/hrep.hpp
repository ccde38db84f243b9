#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace countlab {

// HREP: "HREP" 0x01 | u32le rows | u32le cols | rows*cols f32le, row-major.
inline constexpr std::size_t kHrepHeaderBytes = 13;

enum class Aggregation { Enc, V_mean, V_last, H_mean, H_last };
inline constexpr std::array kLayerAggregations{Aggregation::V_mean, Aggregation::V_last, Aggregation::H_mean,
                                               Aggregation::H_last};

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

struct RepMeta {
  std::string model_id;
  std::optional<int> layer_index;  // absent for the encoder ("enc")
  Aggregation aggregation = Aggregation::H_last;
  std::string label_ref;  // label file, relative to the HREP file's directory
};

/// N x d float matrix of hidden representations.
struct RepMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;  // row-major
  RepMeta meta;

  [[nodiscard]] std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

struct HrepData {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
};

std::string encode_hrep(std::size_t rows, std::size_t cols, std::span<const float> values);
/// Throws FormatError on bad magic, version or length.
HrepData decode_hrep(std::string_view bytes);

void write_hrep(const std::filesystem::path& path, std::size_t rows, std::size_t cols, std::span<const float> values);
HrepData read_hrep(const std::filesystem::path& path);

/// "<dir>/<stem>.json" next to an HREP file.
std::filesystem::path sidecar_path(const std::filesystem::path& hrep_path);

nlohmann::ordered_json rep_meta_to_json(const RepMeta& meta, std::size_t rows, std::size_t cols);

/// Reads the matrix and its sidecar. Throws FormatError, DimensionMismatch
/// (sidecar shape differs from the data) or NonFiniteValue.
RepMatrix load_reps(const std::filesystem::path& path);
void save_reps(const std::filesystem::path& path, const RepMatrix& reps);

/// One integer per line; blank lines ignored.
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const int> labels);

/// Resolves meta.label_ref against the HREP file's directory and checks
/// that the label count equals the row count.
std::vector<int> load_labels_for(const std::filesystem::path& hrep_path, const RepMatrix& reps);

}  // namespace countlab
