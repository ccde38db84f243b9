#include "countlab/hrep.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "countlab/errors.hpp"
#include "countlab/util.hpp"

namespace countlab {

namespace {

constexpr char kMagic[4] = {'H', 'R', 'E', 'P'};
constexpr std::uint8_t kVersion = 1;

void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Enc: return "Enc";
    case Aggregation::V_mean: return "V_mean";
    case Aggregation::V_last: return "V_last";
    case Aggregation::H_mean: return "H_mean";
    case Aggregation::H_last: return "H_last";
  }
  return "?";
}

Aggregation parse_aggregation(std::string_view name) {
  for (auto a : {Aggregation::Enc, Aggregation::V_mean, Aggregation::V_last, Aggregation::H_mean,
                 Aggregation::H_last}) {
    if (to_string(a) == name) return a;
  }
  throw FormatError("unknown aggregation '" + std::string(name) + "'");
}

std::string encode_hrep(std::size_t rows, std::size_t cols, std::span<const float> values) {
  if (values.size() != rows * cols) {
    throw DimensionMismatch("HREP payload has " + std::to_string(values.size()) + " values, expected " +
                            std::to_string(rows) + "x" + std::to_string(cols));
  }
  std::string out(kMagic, 4);
  out += static_cast<char>(kVersion);
  put_u32le(out, static_cast<std::uint32_t>(rows));
  put_u32le(out, static_cast<std::uint32_t>(cols));
  out.reserve(kHrepHeaderBytes + 4 * values.size());
  for (float f : values) put_u32le(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

HrepData decode_hrep(std::string_view bytes) {
  if (bytes.size() < kHrepHeaderBytes) throw FormatError("HREP file shorter than its 13-byte header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("missing HREP magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (p[4] != kVersion) throw FormatError("unsupported HREP version " + std::to_string(p[4]));
  HrepData d;
  d.rows = get_u32le(p + 5);
  d.cols = get_u32le(p + 9);
  const std::uint64_t expected = kHrepHeaderBytes + 4ULL * d.rows * d.cols;
  if (bytes.size() != expected) {
    throw FormatError("HREP payload is " + std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(expected));
  }
  d.values.resize(d.rows * d.cols);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    d.values[i] = std::bit_cast<float>(get_u32le(p + kHrepHeaderBytes + 4 * i));
  }
  return d;
}

void write_hrep(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                std::span<const float> values) {
  write_file(path, encode_hrep(rows, cols, values));
}

HrepData read_hrep(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw FormatError("missing HREP file " + path.string());
  try {
    return decode_hrep(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& hrep_path) {
  auto p = hrep_path;
  p.replace_extension(".json");
  return p;
}

nlohmann::ordered_json rep_meta_to_json(const RepMeta& meta, std::size_t rows, std::size_t cols) {
  nlohmann::ordered_json j;
  j["model_id"] = meta.model_id;
  j["layer_index"] = meta.layer_index ? nlohmann::ordered_json(*meta.layer_index) : nlohmann::ordered_json("enc");
  j["aggregation"] = to_string(meta.aggregation);
  j["label_ref"] = meta.label_ref;
  j["rows"] = rows;
  j["cols"] = cols;
  return j;
}

RepMatrix load_reps(const std::filesystem::path& path) {
  HrepData data = read_hrep(path);
  const auto side = sidecar_path(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(side));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  } catch (const Error&) {
    throw FormatError("missing sidecar " + side.string());
  }

  RepMatrix reps;
  try {
    reps.meta.model_id = meta.value("model_id", std::string());
    const auto& layer = meta.at("layer_index");
    if (layer.is_number_integer()) {
      reps.meta.layer_index = layer.get<int>();
    } else if (!(layer.is_string() && layer.get<std::string>() == "enc")) {
      throw FormatError(side.string() + ": layer_index must be an integer or \"enc\"");
    }
    reps.meta.aggregation = parse_aggregation(meta.at("aggregation").get<std::string>());
    reps.meta.label_ref = meta.value("label_ref", std::string());
    const auto rows = meta.at("rows").get<std::size_t>();
    const auto cols = meta.at("cols").get<std::size_t>();
    if (rows != data.rows || cols != data.cols) {
      throw DimensionMismatch(side.string() + " declares " + std::to_string(rows) + "x" + std::to_string(cols) +
                              " but " + path.string() + " holds " + std::to_string(data.rows) + "x" +
                              std::to_string(data.cols));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }

  for (std::size_t i = 0; i < data.values.size(); ++i) {
    if (!std::isfinite(data.values[i])) {
      throw NonFiniteValue(path.string() + ": non-finite value at row " + std::to_string(i / data.cols) +
                           ", col " + std::to_string(i % data.cols));
    }
  }
  reps.rows = data.rows;
  reps.cols = data.cols;
  reps.values = std::move(data.values);
  return reps;
}

void save_reps(const std::filesystem::path& path, const RepMatrix& reps) {
  write_hrep(path, reps.rows, reps.cols, reps.values);
  write_file(sidecar_path(path), rep_meta_to_json(reps.meta, reps.rows, reps.cols).dump(2) + "\n");
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open label file " + path.string());
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      labels.push_back(std::stoi(line, &used));
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not an integer label");
    }
  }
  return labels;
}

void write_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::string out;
  for (int l : labels) out += std::to_string(l) + "\n";
  write_file(path, out);
}

std::vector<int> load_labels_for(const std::filesystem::path& hrep_path, const RepMatrix& reps) {
  if (reps.meta.label_ref.empty()) throw FormatError(hrep_path.string() + ": sidecar has no label_ref");
  const auto labels = read_labels(hrep_path.parent_path() / reps.meta.label_ref);
  if (labels.size() != reps.rows) {
    throw DimensionMismatch(reps.meta.label_ref + " has " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(reps.rows) + " rows");
  }
  return labels;
}

}  // namespace countlab
