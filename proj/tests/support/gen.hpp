// Hand-rolled random generators for property tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "countlab/harness.hpp"
#include "countlab/hrep.hpp"
#include "countlab/scene.hpp"

namespace testgen {

using namespace countlab;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  int range(int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); }
  bool coin() { return (rng() & 1U) != 0; }
  double unit() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
  double gauss() {
    const double u1 = unit() + 1e-300;
    const double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  ObjectClass cls() { return kAllClasses[static_cast<std::size_t>(range(0, 4))]; }
  Color color() { return kAllColors[static_cast<std::size_t>(range(0, 6))]; }
  Size size() { return coin() ? Size::large : Size::small; }

  SceneObject object_at(Cell c) { return {cls(), color(), size(), c}; }

  Scene scene(int max_objects = 20) {
    Scene s;
    const int n = range(0, max_objects);
    for (int i = 0; i < n; ++i) {
      const auto free = s.free_cells();
      s = add_object(s, object_at(free[static_cast<std::size_t>(range(0, static_cast<int>(free.size()) - 1))]));
    }
    return s;
  }

  TargetSpec spec() {
    TargetSpec t;
    t.cls = cls();
    if (coin()) t.color = color();
    if (coin()) t.size = size();
    return t;
  }

  /// Closed-mode record over options 1..9 with a random (possibly missing)
  /// extracted answer.
  RunRecord record() {
    RunRecord r;
    r.gold = range(1, 9);
    r.options = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    const int roll = range(0, 9);
    if (roll == 0) {
      r.extracted.reset();
    } else if (roll < 5) {
      r.extracted = r.gold;
    } else {
      r.extracted = range(1, 9);
    }
    r.target = {ObjectClass::circle, Color::magenta, Size::large};
    return r;
  }
};

inline RepMatrix matrix(std::size_t rows, std::size_t cols, std::vector<float> values) {
  RepMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.values = std::move(values);
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("countlab-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testgen
