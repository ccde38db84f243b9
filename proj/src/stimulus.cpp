#include "countlab/stimulus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

#include "countlab/errors.hpp"
#include "countlab/render.hpp"
#include "countlab/rng.hpp"
#include "countlab/util.hpp"

namespace countlab {

namespace {

constexpr int kMaxTargets = 9;
constexpr int kBaselineChains = 81;
constexpr int kLayoutChains = 49;  // clustered anchors / scattered chains
constexpr int kTrainChains = 54;
constexpr int kValidChains = 27;
constexpr int kScatterMinDistance = 3;
constexpr int kScatterAttempts = 10000;

std::vector<int> answer_range(int lo, int hi) {
  std::vector<int> r(static_cast<std::size_t>(hi - lo + 1));
  std::iota(r.begin(), r.end(), lo);
  return r;
}

std::string pad(int value, int width) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%0*d", width, value);
  return buf;
}

SceneObject make_object(const TargetSpec& t, Cell cell) {
  return SceneObject{t.cls, t.color.value_or(Color::white), t.size.value_or(Size::large), cell};
}

Scene scene_of(const TargetSpec& t, std::span<const Cell> cells) {
  Scene s;
  for (const Cell& c : cells) s = add_object(s, make_object(t, c));
  return s;
}

/// Grows a chain of `length` cells: the first is given, each next one is a
/// uniformly drawn free cell.
std::vector<Cell> grow_chain(Cell first, int length, Rng& rng) {
  std::vector<Cell> chain{first};
  std::bitset<kCellCount> used;
  used.set(static_cast<std::size_t>(first.index()));
  while (static_cast<int>(chain.size()) < length) {
    std::vector<int> free;
    for (int i = 0; i < kCellCount; ++i) {
      if (!used.test(static_cast<std::size_t>(i))) free.push_back(i);
    }
    const int pick = free[rng.below(free.size())];
    used.set(static_cast<std::size_t>(pick));
    chain.push_back(Cell::from_index(pick));
  }
  return chain;
}

/// `count` chains of length 9 whose first cells are distinct (a seeded
/// permutation of the grid, truncated).
std::vector<std::vector<Cell>> recursive_chains(std::uint64_t seed, std::string_view stream, int count) {
  std::vector<int> perm(kCellCount);
  std::iota(perm.begin(), perm.end(), 0);
  Rng first(derive_seed(seed, std::string(stream) + "/first"));
  first.shuffle(std::span<int>(perm));
  std::vector<std::vector<Cell>> chains;
  chains.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    Rng rng(derive_seed(seed, std::string(stream) + "/grow", static_cast<std::uint64_t>(j)));
    chains.push_back(grow_chain(Cell::from_index(perm[static_cast<std::size_t>(j)]), kMaxTargets, rng));
  }
  return chains;
}

bool far_from_all(const Cell& c, std::span<const Cell> placed) {
  return std::all_of(placed.begin(), placed.end(),
                     [&](const Cell& p) { return chebyshev(c, p) >= kScatterMinDistance; });
}

std::vector<Cell> scattered_chain(Rng& rng) {
  for (int attempt = 0; attempt < kScatterAttempts; ++attempt) {
    std::vector<Cell> chain;
    while (static_cast<int>(chain.size()) < kMaxTargets) {
      std::vector<Cell> candidates;
      for (int i = 0; i < kCellCount; ++i) {
        const Cell c = Cell::from_index(i);
        if (far_from_all(c, chain)) candidates.push_back(c);
      }
      if (candidates.empty()) break;
      chain.push_back(candidates[rng.below(candidates.size())]);
    }
    if (static_cast<int>(chain.size()) == kMaxTargets) return chain;
  }
  // A 3-spaced lattice with a random offset always fits nine objects.
  const int dr = static_cast<int>(rng.below(3));
  const int dc = static_cast<int>(rng.below(3));
  std::vector<Cell> lattice;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) lattice.push_back(Cell::at(3 * r + dr, 3 * c + dc));
  }
  rng.shuffle(std::span<Cell>(lattice));
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    if (!far_from_all(lattice[i], std::span<const Cell>(lattice.data(), i))) {
      throw ConstraintUnsatisfiable("scattered placement failed");
    }
  }
  return lattice;
}

std::string target_tag(int t) { return "t" + pad(t, 2); }

/// Sorts by id, then fills questions and options keyed on the position in
/// the sorted split.
void finalize(std::vector<Stimulus>& split, std::uint64_t seed, std::string_view stream,
              QuestionMode mode, std::span<const int> range) {
  std::sort(split.begin(), split.end(),
            [](const Stimulus& a, const Stimulus& b) { return a.id < b.id; });
  const std::uint64_t opt_seed = derive_seed(seed, std::string(stream) + "/options");
  for (std::size_t i = 0; i < split.size(); ++i) {
    auto& s = split[i];
    s.options = shuffle_options(opt_seed, i, range);
    s.mode = mode;
    s.question = render_question(s.target, s.options, mode);
  }
}

void require_setting(const GenConfig& config, Setting expected) {
  if (config.setting != expected) {
    throw ValidationError("generator for '" + std::string(to_string(expected)) +
                          "' called with setting '" + std::string(to_string(config.setting)) + "'");
  }
}

/// Builds the stimuli of one chain family: for each target, count and chain
/// the scene holds the first `count` cells of that chain.
void emit_chain_family(std::vector<Stimulus>& out, Setting setting, std::string_view prefix,
                       std::string_view split, const std::vector<TargetSpec>& targets,
                       const std::vector<std::vector<Cell>>& chains, int min_count, char chain_tag) {
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (int k = min_count; k <= kMaxTargets; ++k) {
      for (std::size_t j = 0; j < chains.size(); ++j) {
        auto id_for = [&](int count) {
          return std::string(prefix) + "-" + target_tag(static_cast<int>(t)) + "-n" +
                 std::to_string(count) + "-" + chain_tag + pad(static_cast<int>(j), 2);
        };
        Stimulus s;
        s.id = id_for(k);
        s.setting = setting;
        s.split = std::string(split);
        s.target = targets[t];
        s.scene = scene_of(targets[t], std::span<const Cell>(chains[j].data(), static_cast<std::size_t>(k)));
        s.answer = k;
        s.chain = static_cast<int>(j);
        if (k > min_count) s.parent_id = id_for(k - 1);
        out.push_back(std::move(s));
      }
    }
  }
}

}  // namespace

std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::baseline: return "baseline";
    case Setting::distractors: return "distractors";
    case Setting::clustered: return "clustered";
    case Setting::scattered: return "scattered";
    case Setting::training: return "training";
  }
  return "?";
}

std::string_view to_string(QuestionMode m) { return m == QuestionMode::closed ? "closed" : "open"; }

std::string_view to_string(DistractorType t) {
  switch (t) {
    case DistractorType::SRS: return "SRS";
    case DistractorType::LRS: return "LRS";
    case DistractorType::LRC: return "LRC";
    case DistractorType::LMS: return "LMS";
  }
  return "?";
}

Setting parse_setting(std::string_view name) {
  for (Setting s : {Setting::baseline, Setting::distractors, Setting::clustered, Setting::scattered,
                    Setting::training}) {
    if (to_string(s) == name) return s;
  }
  throw ValidationError("unknown setting '" + std::string(name) + "'");
}

QuestionMode parse_question_mode(std::string_view name) {
  if (name == "closed") return QuestionMode::closed;
  if (name == "open") return QuestionMode::open;
  throw ValidationError("unknown question mode '" + std::string(name) + "'");
}

DistractorType parse_distractor_type(std::string_view name) {
  for (DistractorType t : kDistractorTypes) {
    if (to_string(t) == name) return t;
  }
  throw ValidationError("unknown distractor type '" + std::string(name) + "'");
}

SceneObject distractor_object(DistractorType type, Cell cell) {
  switch (type) {
    case DistractorType::SRS: return {ObjectClass::star, Color::red, Size::small, cell};
    case DistractorType::LRS: return {ObjectClass::star, Color::red, Size::large, cell};
    case DistractorType::LRC: return {ObjectClass::circle, Color::red, Size::large, cell};
    case DistractorType::LMS: return {ObjectClass::star, Color::magenta, Size::large, cell};
  }
  throw ValidationError("bad distractor type");
}

std::vector<TargetSpec> baseline_targets() {
  std::vector<TargetSpec> out;
  for (ObjectClass c : {ObjectClass::square, ObjectClass::circle, ObjectClass::triangle, ObjectClass::star}) {
    for (Color col : {Color::red, Color::green, Color::blue, Color::cyan, Color::magenta, Color::yellow}) {
      out.push_back({c, col, Size::large});
    }
  }
  return out;
}

std::vector<TargetSpec> training_targets() {
  std::vector<TargetSpec> out;
  for (ObjectClass c : {ObjectClass::square, ObjectClass::circle, ObjectClass::triangle, ObjectClass::star}) {
    out.push_back({c, Color::white, Size::large});
  }
  for (Color col : {Color::red, Color::green, Color::blue, Color::cyan, Color::magenta, Color::yellow}) {
    out.push_back({ObjectClass::plus, col, Size::large});
  }
  return out;
}

TargetSpec distractor_target() { return {ObjectClass::circle, Color::magenta, Size::large}; }

std::vector<Stimulus> gen_baseline(const GenConfig& config) {
  require_setting(config, Setting::baseline);
  // Positions are drawn once and shared by all 24 target versions.
  const auto chains = recursive_chains(config.seed, "baseline/positions", kBaselineChains);
  std::vector<Stimulus> out;
  out.reserve(24 * kMaxTargets * kBaselineChains);
  emit_chain_family(out, Setting::baseline, "baseline", "test", baseline_targets(), chains, 1, 'c');
  const auto range = answer_range(1, kMaxTargets);
  finalize(out, config.seed, "baseline", config.question_mode, range);
  return out;
}

std::vector<Stimulus> gen_distractors(const GenConfig& config, const std::vector<Stimulus>& baseline) {
  require_setting(config, Setting::distractors);
  const TargetSpec target = distractor_target();

  // Chains of the large-magenta-circle version, indexed by chain id.
  std::map<int, std::vector<const Stimulus*>> by_chain;
  for (const auto& s : baseline) {
    if (s.setting == Setting::baseline && s.target == target) by_chain[s.chain].push_back(&s);
  }
  if (by_chain.empty()) {
    throw ValidationError("baseline split holds no large magenta circle stimuli");
  }

  std::vector<Stimulus> out;
  out.reserve(by_chain.size() * kMaxTargets * 36);
  for (const auto& [chain, members] : by_chain) {
    // The distractors of a chain avoid every cell its largest scene uses, so
    // the same distractor cells fit every count along the chain.
    const Stimulus* largest = *std::max_element(
        members.begin(), members.end(), [](const Stimulus* a, const Stimulus* b) { return a->answer < b->answer; });
    const auto free = largest->scene.free_cells();
    const int max_distractors = kDistractorCounts.back();
    if (static_cast<int>(free.size()) < max_distractors) {
      throw InsufficientFreeCells("chain " + std::to_string(chain) + " has " +
                                  std::to_string(free.size()) + " free cells");
    }
    for (int v = 0; v < kDistractorVariants; ++v) {
      Rng rng(derive_seed(config.seed, "distractors/positions",
                          static_cast<std::uint64_t>(chain) * kDistractorVariants + static_cast<std::uint64_t>(v)));
      auto cells = free;
      rng.shuffle(std::span<Cell>(cells));
      for (DistractorType type : kDistractorTypes) {
        for (int n : kDistractorCounts) {
          for (const Stimulus* base : members) {
            auto id_for = [&](int answer) {
              return "distractors-" + std::string(to_string(type)) + "-d" + std::to_string(n) + "-v" +
                     std::to_string(v) + "-n" + std::to_string(answer) + "-c" + pad(chain, 2);
            };
            Stimulus s;
            s.id = id_for(base->answer);
            s.setting = Setting::distractors;
            s.target = base->target;
            s.answer = base->answer;
            s.chain = chain;
            s.source_id = base->id;
            s.distractor = DistractorPlan{type, n, v};
            s.scene = base->scene;
            for (int d = 0; d < n; ++d) s.scene = add_object(s.scene, distractor_object(type, cells[static_cast<std::size_t>(d)]));
            if (base->parent_id) s.parent_id = id_for(base->answer - 1);
            out.push_back(std::move(s));
          }
        }
      }
    }
  }
  const auto range = answer_range(1, kMaxTargets);
  finalize(out, config.seed, "distractors", config.question_mode, range);
  return out;
}

std::array<Cell, 9> clustered_pattern(int anchor_row, int anchor_col) {
  static constexpr std::array<std::pair<int, int>, 9> kOffsets{
      {{1, 1}, {0, 1}, {1, 0}, {1, 2}, {2, 1}, {0, 0}, {0, 2}, {2, 0}, {2, 2}}};
  std::array<Cell, 9> cells;
  for (std::size_t i = 0; i < kOffsets.size(); ++i) {
    cells[i] = Cell::at(anchor_row + kOffsets[i].first, anchor_col + kOffsets[i].second);
  }
  return cells;
}

std::vector<Stimulus> gen_clustered(const GenConfig& config) {
  require_setting(config, Setting::clustered);
  std::vector<std::vector<Cell>> anchors;
  for (int a = 0; a < kLayoutChains; ++a) {
    const auto cells = clustered_pattern(a / 7, a % 7);
    anchors.emplace_back(cells.begin(), cells.end());
  }
  std::vector<Stimulus> out;
  emit_chain_family(out, Setting::clustered, "clustered", "test", baseline_targets(), anchors, 2, 'a');
  const auto range = answer_range(2, kMaxTargets);
  finalize(out, config.seed, "clustered", config.question_mode, range);
  return out;
}

std::vector<Stimulus> gen_scattered(const GenConfig& config) {
  require_setting(config, Setting::scattered);
  std::vector<std::vector<Cell>> chains;
  for (int j = 0; j < kLayoutChains; ++j) {
    Rng rng(derive_seed(config.seed, "scattered/positions", static_cast<std::uint64_t>(j)));
    chains.push_back(scattered_chain(rng));
  }
  std::vector<Stimulus> out;
  emit_chain_family(out, Setting::scattered, "scattered", "test", baseline_targets(), chains, 2, 'c');
  const auto range = answer_range(2, kMaxTargets);
  finalize(out, config.seed, "scattered", config.question_mode, range);
  return out;
}

TrainingSplits gen_training(const GenConfig& config) {
  require_setting(config, Setting::training);
  // A separate position stream from the baseline: fresh target positions.
  const auto chains = recursive_chains(config.seed, "training/positions", kTrainChains + kValidChains);
  const std::vector<std::vector<Cell>> train_chains(chains.begin(), chains.begin() + kTrainChains);
  const std::vector<std::vector<Cell>> valid_chains(chains.begin() + kTrainChains, chains.end());
  TrainingSplits out;
  const auto targets = training_targets();
  emit_chain_family(out.train, Setting::training, "training-train", "train", targets, train_chains, 1, 'c');
  emit_chain_family(out.valid, Setting::training, "training-valid", "valid", targets, valid_chains, 1, 'c');
  const auto range = answer_range(1, kMaxTargets);
  finalize(out.train, config.seed, "training-train", config.question_mode, range);
  finalize(out.valid, config.seed, "training-valid", config.question_mode, range);
  return out;
}

std::string render_question(const TargetSpec& target, std::span<const int> options, QuestionMode mode) {
  std::string q = "Answer with as few words as possible. How many " + target.describe() + " are there?";
  if (mode == QuestionMode::closed) {
    if (options.empty()) throw ValidationError("closed questions need at least one option");
    q += " Choose from [";
    for (std::size_t i = 0; i < options.size(); ++i) {
      if (i) q += ", ";
      q += std::to_string(options[i]);
    }
    q += "].";
  }
  return q;
}

std::vector<int> shuffle_options(std::uint64_t seed, std::uint64_t stimulus_index, std::span<const int> range) {
  if (range.empty()) throw ValidationError("option range must be non-empty");
  std::vector<int> out(range.begin(), range.end());
  Rng rng(mix64(seed ^ mix64(stimulus_index)));
  rng.shuffle(std::span<int>(out));
  return out;
}

ChainReport verify_chains(const std::vector<Stimulus>& split) {
  std::unordered_map<std::string, const Stimulus*> by_id;
  for (const auto& s : split) by_id.emplace(s.id, &s);
  ChainReport report;
  auto fail = [&](const Stimulus& s, const std::string& why) {
    ++report.violations;
    if (report.examples.size() < 10) report.examples.push_back(s.id + ": " + why);
  };
  for (const auto& s : split) {
    if (!s.parent_id) continue;
    ++report.checked;
    auto it = by_id.find(*s.parent_id);
    if (it == by_id.end()) {
      fail(s, "parent " + *s.parent_id + " not in split");
      continue;
    }
    const Stimulus& parent = *it->second;
    if (!(parent.target == s.target)) {
      fail(s, "parent asks about a different target");
      continue;
    }
    const auto diff = scene_difference(s.scene, parent.scene);
    if (!diff || diff->size() != 1) {
      fail(s, "scene does not extend its parent by exactly one object");
      continue;
    }
    if (!match(diff->front(), s.target)) fail(s, "added object does not match the target");
  }
  return report;
}

nlohmann::ordered_json stimulus_to_json(const Stimulus& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["setting"] = to_string(s.setting);
  j["split"] = s.split;
  j["target"] = target_to_json(s.target);
  j["question"] = s.question;
  j["question_mode"] = to_string(s.mode);
  j["options"] = s.options;
  j["answer"] = s.answer;
  j["chain"] = s.chain;
  j["parent_id"] = s.parent_id ? nlohmann::ordered_json(*s.parent_id) : nullptr;
  j["source_id"] = s.source_id ? nlohmann::ordered_json(*s.source_id) : nullptr;
  if (s.distractor) {
    j["distractor"] = {{"type", to_string(s.distractor->type)},
                       {"count", s.distractor->count},
                       {"variant", s.distractor->variant}};
  } else {
    j["distractor"] = nullptr;
  }
  j["scene"] = scene_to_json(s.scene);
  return j;
}

Stimulus stimulus_from_json(const nlohmann::json& j) {
  try {
    Stimulus s;
    s.id = j.at("id").get<std::string>();
    s.setting = parse_setting(j.at("setting").get<std::string>());
    s.split = j.value("split", std::string("test"));
    s.target = target_from_json(j.at("target"));
    s.question = j.at("question").get<std::string>();
    s.mode = parse_question_mode(j.value("question_mode", std::string("closed")));
    s.options = j.at("options").get<std::vector<int>>();
    s.answer = j.at("answer").get<int>();
    s.chain = j.value("chain", -1);
    if (j.contains("parent_id") && !j["parent_id"].is_null()) s.parent_id = j["parent_id"].get<std::string>();
    if (j.contains("source_id") && !j["source_id"].is_null()) s.source_id = j["source_id"].get<std::string>();
    if (j.contains("distractor") && !j["distractor"].is_null()) {
      const auto& d = j["distractor"];
      s.distractor = DistractorPlan{parse_distractor_type(d.at("type").get<std::string>()),
                                    d.at("count").get<int>(), d.at("variant").get<int>()};
    }
    s.scene = scene_from_json(j.at("scene"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed stimulus: ") + e.what());
  }
}

void write_split_jsonl(const std::filesystem::path& path, const std::vector<Stimulus>& split) {
  std::string buffer;
  for (const auto& s : split) {
    buffer += stimulus_to_json(s).dump();
    buffer += '\n';
  }
  write_file(path, buffer);
}

std::vector<Stimulus> read_split_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open split " + path.string());
  std::vector<Stimulus> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(stimulus_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::ordered_json split_header(const GenConfig& config, std::string_view split_name,
                                    const std::vector<Stimulus>& split) {
  std::map<int, std::size_t> counts;
  std::vector<std::string> targets;
  for (const auto& s : split) {
    ++counts[s.answer];
    const auto d = s.target.describe();
    if (std::find(targets.begin(), targets.end(), d) == targets.end()) targets.push_back(d);
  }
  nlohmann::ordered_json j;
  j["seed"] = config.seed;
  j["setting"] = to_string(config.setting);
  j["split"] = split_name;
  j["question_mode"] = to_string(config.question_mode);
  j["size"] = split.size();
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  for (const auto& [answer, n] : counts) c[std::to_string(answer)] = n;
  j["counts"] = c;
  j["targets"] = targets;
  j["tool_version"] = COUNTLAB_VERSION;
  j["render_spec"] = render_spec_to_json(RenderSpec{});
  return j;
}

}  // namespace countlab
