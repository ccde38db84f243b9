#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "countlab/scene.hpp"

namespace countlab {

enum class Setting { baseline, distractors, clustered, scattered, training };
enum class QuestionMode { closed, open };
enum class DistractorType { SRS, LRS, LRC, LMS };

std::string_view to_string(Setting s);
std::string_view to_string(QuestionMode m);
std::string_view to_string(DistractorType t);
Setting parse_setting(std::string_view name);
QuestionMode parse_question_mode(std::string_view name);
DistractorType parse_distractor_type(std::string_view name);

inline constexpr std::array kDistractorTypes{DistractorType::SRS, DistractorType::LRS,
                                             DistractorType::LRC, DistractorType::LMS};
inline constexpr std::array kDistractorCounts{1, 5, 9};
inline constexpr int kDistractorVariants = 3;

struct DistractorPlan {
  DistractorType type = DistractorType::SRS;
  int count = 1;    // 1, 5 or 9
  int variant = 0;  // 0..2

  friend bool operator==(const DistractorPlan&, const DistractorPlan&) = default;
};

/// The object a distractor type stands for (SRS = small red star, ...).
SceneObject distractor_object(DistractorType type, Cell cell);

struct GenConfig {
  std::uint64_t seed = 0;
  Setting setting = Setting::baseline;
  QuestionMode question_mode = QuestionMode::closed;
};

/// One (image, question, answer) triplet plus the bookkeeping needed to
/// audit how it was built.
struct Stimulus {
  std::string id;
  Setting setting = Setting::baseline;
  std::string split = "test";  // train / valid / test
  Scene scene;
  TargetSpec target;
  std::string question;
  QuestionMode mode = QuestionMode::closed;
  std::vector<int> options;
  int answer = 0;
  int chain = -1;  // positional chain (or clustered anchor) the scene belongs to
  std::optional<std::string> parent_id;
  std::optional<std::string> source_id;  // baseline stimulus a distractor scene extends
  std::optional<DistractorPlan> distractor;
};

/// 4 classes x 6 colors, all large.
std::vector<TargetSpec> baseline_targets();
/// White square/circle/triangle/star and plus in the six baseline colors, all large.
std::vector<TargetSpec> training_targets();
TargetSpec distractor_target();  // large magenta circle

std::vector<Stimulus> gen_baseline(const GenConfig& config);
std::vector<Stimulus> gen_distractors(const GenConfig& config, const std::vector<Stimulus>& baseline);
std::vector<Stimulus> gen_clustered(const GenConfig& config);
std::vector<Stimulus> gen_scattered(const GenConfig& config);

struct TrainingSplits {
  std::vector<Stimulus> train;
  std::vector<Stimulus> valid;
};
TrainingSplits gen_training(const GenConfig& config);

/// Clustered cell order inside the 3x3 block: center, N, W, E, S, NW, NE, SW, SE.
std::array<Cell, 9> clustered_pattern(int anchor_row, int anchor_col);

std::string render_question(const TargetSpec& target, std::span<const int> options, QuestionMode mode);

/// Seeded permutation of `range`, keyed on (seed, stimulus_index).
std::vector<int> shuffle_options(std::uint64_t seed, std::uint64_t stimulus_index,
                                 std::span<const int> range);

struct ChainReport {
  std::size_t checked = 0;     // stimuli that carry a parent_id
  std::size_t violations = 0;  // parent missing, or diff not exactly one matching object
  std::vector<std::string> examples;
};
/// Checks that every stimulus with a parent differs from it by exactly one
/// object matching the target.
ChainReport verify_chains(const std::vector<Stimulus>& split);

nlohmann::ordered_json stimulus_to_json(const Stimulus& s);
Stimulus stimulus_from_json(const nlohmann::json& j);

/// One stimulus per line, in the order given.
void write_split_jsonl(const std::filesystem::path& path, const std::vector<Stimulus>& split);
std::vector<Stimulus> read_split_jsonl(const std::filesystem::path& path);

/// Split-level header: seed, setting, counts, targets, tool version, render spec.
nlohmann::ordered_json split_header(const GenConfig& config, std::string_view split_name,
                                    const std::vector<Stimulus>& split);

}  // namespace countlab
