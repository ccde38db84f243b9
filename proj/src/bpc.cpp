#include "countlab/bpc.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <boost/tokenizer.hpp>

#include "countlab/rng.hpp"

namespace countlab {

namespace {

constexpr int kMaxCount = 255;

std::optional<Annotation> validate(Annotation a, std::string& why) {
  if (a.image_ref.empty()) {
    why = "empty image_ref";
    return std::nullopt;
  }
  if (a.object_class.empty()) {
    why = "empty object_class";
    return std::nullopt;
  }
  if (a.count < 0 || a.count > kMaxCount) {
    why = "count " + std::to_string(a.count) + " outside [0, 255]";
    return std::nullopt;
  }
  if (a.split_hint && a.split_hint->empty()) a.split_hint.reset();
  if (a.split_hint && *a.split_hint != "train" && *a.split_hint != "valid" && *a.split_hint != "test") {
    why = "unknown split_hint '" + *a.split_hint + "'";
    return std::nullopt;
  }
  return a;
}

std::optional<int> parse_count(const std::string& text) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) return std::nullopt;
    return v;
  } catch (const std::logic_error&) {
    return std::nullopt;
  }
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  Tokenizer tok(line, boost::escaped_list_separator<char>('\\', ',', '"'));
  for (const auto& t : tok) out.push_back(trim(t));
  return out;
}

}  // namespace

InsufficientPool::InsufficientPool(std::vector<Shortfall> shortfalls)
    : ValidationError([&] {
        std::string msg = "annotation pool cannot fill the quotas:";
        for (const auto& s : shortfalls) {
          msg += " [" + s.split + " count " + std::to_string(s.count) + ": short by " + std::to_string(s.deficit) + "]";
        }
        return msg;
      }()),
      shortfalls_(std::move(shortfalls)) {}

std::optional<Annotation> annotation_from_json(const nlohmann::json& j, std::string& why) {
  if (!j.is_object()) {
    why = "not a JSON object";
    return std::nullopt;
  }
  Annotation a;
  try {
    a.image_ref = j.at("image_ref").get<std::string>();
    a.object_class = j.at("object_class").get<std::string>();
    const auto& c = j.at("count");
    if (c.is_number_integer()) {
      a.count = c.get<int>();
    } else if (c.is_string()) {
      const auto v = parse_count(c.get<std::string>());
      if (!v) {
        why = "count is not an integer";
        return std::nullopt;
      }
      a.count = *v;
    } else {
      why = "count is not an integer";
      return std::nullopt;
    }
    if (j.contains("split_hint") && !j["split_hint"].is_null()) a.split_hint = j["split_hint"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    why = e.what();
    return std::nullopt;
  }
  return validate(std::move(a), why);
}

nlohmann::ordered_json annotation_to_json(const Annotation& a) {
  nlohmann::ordered_json j;
  j["image_ref"] = a.image_ref;
  j["object_class"] = a.object_class;
  j["count"] = a.count;
  j["split_hint"] = a.split_hint ? nlohmann::ordered_json(*a.split_hint) : nullptr;
  return j;
}

IngestResult ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open annotations " + path.string());
  IngestResult result;
  const bool csv = path.extension() == ".csv";
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> columns;
  auto skip = [&](const std::string& why) {
    result.diagnostics.push_back(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::string why;
    std::optional<Annotation> a;
    if (csv) {
      std::vector<std::string> cells;
      try {
        cells = split_csv(line);
      } catch (const boost::escaped_list_error& e) {
        skip(std::string("bad CSV quoting: ") + e.what());
        continue;
      }
      if (columns.empty()) {
        for (std::size_t i = 0; i < cells.size(); ++i) columns[cells[i]] = i;
        for (const char* need : {"image_ref", "object_class", "count"}) {
          if (!columns.contains(need)) throw ValidationError(path.string() + ": CSV header lacks '" + need + "'");
        }
        continue;
      }
      auto cell = [&](const std::string& name) -> std::optional<std::string> {
        const auto it = columns.find(name);
        if (it == columns.end() || it->second >= cells.size()) return std::nullopt;
        return cells[it->second];
      };
      Annotation raw;
      raw.image_ref = cell("image_ref").value_or("");
      raw.object_class = cell("object_class").value_or("");
      const auto count = parse_count(cell("count").value_or(""));
      if (!count) {
        skip("count is not an integer");
        continue;
      }
      raw.count = *count;
      raw.split_hint = cell("split_hint");
      a = validate(std::move(raw), why);
    } else {
      try {
        a = annotation_from_json(nlohmann::json::parse(line), why);
      } catch (const nlohmann::json::exception& e) {
        why = std::string("invalid JSON: ") + e.what();
      }
    }
    if (a) {
      result.records.push_back(std::move(*a));
    } else {
      skip(why);
    }
  }
  if (result.records.empty()) {
    throw NoValidRecords(path.string() + ": no valid annotations (" + std::to_string(result.diagnostics.size()) +
                         " lines rejected)");
  }
  return result;
}

BpcSplits build_bpc(const std::vector<Annotation>& annotations, std::uint64_t seed, const BpcQuota& quota) {
  BpcSplits out;

  std::set<std::string> hinted;
  for (const auto& a : annotations) {
    if (a.split_hint && (*a.split_hint == "valid" || *a.split_hint == "test")) hinted.insert(a.object_class);
  }
  if (!hinted.empty()) {
    out.classes.assign(hinted.begin(), hinted.end());
  } else {
    std::map<std::string, std::size_t> coverage;
    for (const auto& a : annotations) ++coverage[a.object_class];
    std::vector<std::pair<std::string, std::size_t>> ranked(coverage.begin(), coverage.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
    if (ranked.size() > quota.max_classes) ranked.resize(quota.max_classes);
    for (const auto& [cls, n] : ranked) out.classes.push_back(cls);
    std::sort(out.classes.begin(), out.classes.end());
  }
  const std::set<std::string> eligible(out.classes.begin(), out.classes.end());

  // One entry per image; later duplicates of an image_ref are ignored.
  std::vector<const Annotation*> pool;
  std::set<std::string> seen_refs;
  for (const auto& a : annotations) {
    if (eligible.contains(a.object_class) && seen_refs.insert(a.image_ref).second) pool.push_back(&a);
  }
  std::vector<bool> used(pool.size(), false);

  // A split named by any hint draws only from records hinted for it.
  std::set<std::string> hinted_splits;
  for (const auto* a : pool) {
    if (a->split_hint) hinted_splits.insert(*a->split_hint);
  }

  std::vector<Shortfall> shortfalls;
  auto fill = [&](const std::string& split, int per_count, int lo, int hi, std::vector<Annotation>& dst) {
    for (int count = lo; count <= hi; ++count) {
      std::map<std::string, std::vector<std::size_t>> by_class;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& a = *pool[i];
        if (used[i] || a.count != count) continue;
        if (a.split_hint ? *a.split_hint != split : hinted_splits.contains(split)) continue;
        by_class[a.object_class].push_back(i);
      }
      std::vector<std::string> order;
      for (auto& [cls, idx] : by_class) {
        Rng rng(derive_seed(seed, "bpc/" + split + "/" + cls, static_cast<std::uint64_t>(count)));
        rng.shuffle(std::span<std::size_t>(idx));
        order.push_back(cls);
      }
      Rng rng(derive_seed(seed, "bpc/" + split + "/classes", static_cast<std::uint64_t>(count)));
      rng.shuffle(std::span<std::string>(order));

      int taken = 0;
      std::map<std::string, std::size_t> cursor;
      bool progress = true;
      while (taken < per_count && progress) {
        progress = false;
        for (const auto& cls : order) {
          if (taken == per_count) break;
          auto& pos = cursor[cls];
          const auto& idx = by_class[cls];
          if (pos >= idx.size()) continue;
          used[idx[pos]] = true;
          dst.push_back(*pool[idx[pos]]);
          ++pos;
          ++taken;
          progress = true;
        }
      }
      if (taken < per_count) shortfalls.push_back({split, count, per_count - taken});
    }
  };
  fill("test", quota.eval_per_count, quota.eval_min, quota.eval_max, out.test);
  fill("valid", quota.eval_per_count, quota.eval_min, quota.eval_max, out.valid);
  fill("train", quota.train_per_count, quota.train_min, quota.train_max, out.train);
  if (!shortfalls.empty()) throw InsufficientPool(std::move(shortfalls));
  return out;
}

BalanceReport verify_balance(const BpcSplits& splits, const BpcQuota& quota) {
  BalanceReport report;
  const std::set<std::string> eligible(splits.classes.begin(), splits.classes.end());
  auto check = [&](const std::string& name, const std::vector<Annotation>& split, int per_count, int lo, int hi) {
    std::map<int, int> per;
    for (const auto& a : split) {
      ++per[a.count];
      if (a.count < lo || a.count > hi) {
        report.violations.push_back(name + ": " + a.image_ref + " has count " + std::to_string(a.count) +
                                    " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      }
      if (!eligible.empty() && !eligible.contains(a.object_class)) {
        report.violations.push_back(name + ": " + a.image_ref + " has ineligible class '" + a.object_class + "'");
      }
    }
    for (int c = lo; c <= hi; ++c) {
      if (per[c] != per_count) {
        report.violations.push_back(name + ": count " + std::to_string(c) + " has " + std::to_string(per[c]) +
                                    " images, expected " + std::to_string(per_count));
      }
    }
  };
  check("train", splits.train, quota.train_per_count, quota.train_min, quota.train_max);
  check("valid", splits.valid, quota.eval_per_count, quota.eval_min, quota.eval_max);
  check("test", splits.test, quota.eval_per_count, quota.eval_min, quota.eval_max);

  std::map<std::string, std::string> owner;
  auto claim = [&](const std::string& name, const std::vector<Annotation>& split) {
    for (const auto& a : split) {
      const auto [it, fresh] = owner.emplace(a.image_ref, name);
      if (!fresh) report.violations.push_back(a.image_ref + " appears in both " + it->second + " and " + name);
    }
  };
  claim("train", splits.train);
  claim("valid", splits.valid);
  claim("test", splits.test);

  std::set<std::string> classes(splits.classes.begin(), splits.classes.end());
  for (const auto* s : {&splits.train, &splits.valid, &splits.test}) {
    for (const auto& a : *s) classes.insert(a.object_class);
  }
  std::map<std::pair<std::string, int>, HistogramRow> hist;
  for (const auto& cls : classes) {
    for (int c = quota.train_min; c <= quota.train_max; ++c) hist[{cls, c}] = {cls, c, 0, 0, 0};
  }
  auto tally = [&](const std::vector<Annotation>& split, std::size_t HistogramRow::*field) {
    for (const auto& a : split) {
      auto it = hist.find({a.object_class, a.count});
      if (it == hist.end()) it = hist.emplace(std::pair{a.object_class, a.count}, HistogramRow{a.object_class, a.count}).first;
      ++(it->second.*field);
    }
  };
  tally(splits.train, &HistogramRow::train);
  tally(splits.valid, &HistogramRow::valid);
  tally(splits.test, &HistogramRow::test);
  for (auto& [key, row] : hist) report.histogram.push_back(row);
  return report;
}

std::string histogram_csv(const BalanceReport& report) {
  std::string csv = "object_class,count,train,valid,test\n";
  for (const auto& r : report.histogram) {
    std::string cls = r.object_class;
    if (cls.find_first_of(",\"") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : cls) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      cls = quoted + "\"";
    }
    csv += cls + "," + std::to_string(r.count) + "," + std::to_string(r.train) + "," + std::to_string(r.valid) +
           "," + std::to_string(r.test) + "\n";
  }
  return csv;
}

}  // namespace countlab
