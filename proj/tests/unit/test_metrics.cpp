#include <doctest.h>

#include <cmath>
#include <numeric>

#include "countlab/errors.hpp"
#include "countlab/metrics.hpp"
#include "support/gen.hpp"

using namespace countlab;

namespace {

RunRecord rec(int gold, std::optional<int> extracted, std::vector<int> options = {1, 2, 3, 4, 5, 6, 7, 8, 9}) {
  RunRecord r;
  r.gold = gold;
  r.extracted = extracted;
  r.options = std::move(options);
  r.target = {ObjectClass::circle, Color::magenta, Size::large};
  return r;
}

RunRecord grid_rec(ObjectClass c, Color col, bool ok) {
  RunRecord r = rec(3, ok ? 3 : 4);
  r.target = {c, col, Size::large};
  return r;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("hand-computed summary") {
    const std::vector<RunRecord> rs{rec(3, 4), rec(5, 5)};
    const auto m = summarize(rs);
    CHECK(m.n == 2);
    CHECK(m.accuracy == 0.5);
    CHECK(m.mae == 0.5);
    CHECK(m.rmse == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    // Count 3: TP 0, FN 1, FP 0. Count 5: TP 1. Count 4 is not a gold value.
    CHECK(m.per_count_f1.at(3) == 0.0);
    CHECK(m.per_count_f1.at(5) == 1.0);
    CHECK(m.per_count_f1.size() == 2);
    CHECK(m.macro_f1 == 0.5);
    CHECK_THROWS_AS(summarize(std::vector<RunRecord>{}), EmptyInput);
  }

  TEST_CASE("per-count F1 counts false positives") {
    // gold 1 -> 2, gold 2 -> 2, gold 2 -> 2: count 2 has TP 2, FP 1.
    const std::vector<RunRecord> rs{rec(1, 2), rec(2, 2), rec(2, 2)};
    const auto m = summarize(rs);
    CHECK(m.per_count_f1.at(1) == 0.0);
    CHECK(m.per_count_f1.at(2) == doctest::Approx(4.0 / 5.0));
    CHECK(m.per_count.at(2).accuracy() == 1.0);
  }

  TEST_CASE("unparsed answers use the worst option distance") {
    CHECK(absolute_error(rec(3, std::nullopt)) == 6.0);
    CHECK(absolute_error(rec(9, std::nullopt)) == 8.0);
    CHECK(absolute_error(rec(2, std::nullopt, {2, 3, 4, 5, 6, 7, 8, 9})) == 7.0);
    CHECK(absolute_error(rec(5, std::nullopt, {})) == 76.0);
    CHECK(absolute_error(rec(5, 7)) == 2.0);
    const auto m = summarize(std::vector<RunRecord>{rec(3, std::nullopt)});
    CHECK(m.unparsed == 1);
    CHECK(m.accuracy == 0.0);
  }

  TEST_CASE("perfect predictor") {
    std::vector<RunRecord> rs;
    for (int g = 1; g <= 9; ++g) rs.push_back(rec(g, g));
    const auto m = summarize(rs);
    CHECK(m.accuracy == 1.0);
    CHECK(m.mae == 0.0);
    CHECK(m.rmse == 0.0);
    for (const auto& [k, f] : m.per_count_f1) CHECK(f == 1.0);
    CHECK(m.macro_f1 == 1.0);
  }

  TEST_CASE("standard deviations") {
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    CHECK(mean(v) == 5.0);
    CHECK(std_dev(v, 0) == doctest::Approx(2.0));
    CHECK(std_dev(v, 1) == doctest::Approx(std::sqrt(32.0 / 7.0)));
  }

  TEST_CASE("constant grid has zero spread") {
    std::vector<RunRecord> rs;
    for (auto c : kGridClasses) {
      for (auto col : kGridColors) {
        rs.push_back(grid_rec(c, col, true));
        rs.push_back(grid_rec(c, col, false));
      }
    }
    const auto m = marginalize(rs);
    CHECK(m.class_std == 0.0);
    CHECK(m.attr_std == 0.0);
    CHECK(m.overall.accuracy() == 0.5);
  }

  TEST_CASE("one always-wrong class gives the closed-form spread") {
    std::vector<RunRecord> rs;
    for (auto c : kGridClasses) {
      for (auto col : kGridColors) {
        for (int i = 0; i < 4; ++i) rs.push_back(grid_rec(c, col, c != ObjectClass::triangle && i < 3));
      }
    }
    const auto m = marginalize(rs);
    // Class accuracies {a, a, 0, a} with a = 0.75: sample STD = a / 2.
    CHECK(m.per_class.at(ObjectClass::triangle).accuracy() == 0.0);
    CHECK(m.class_std == doctest::Approx(0.75 / 2.0).epsilon(1e-12));
    CHECK(m.attr_std == 0.0);
  }

  TEST_CASE("incomplete grid is rejected") {
    std::vector<RunRecord> rs;
    for (auto c : kGridClasses) {
      for (auto col : kGridColors) {
        if (!(c == ObjectClass::star && col == Color::cyan)) rs.push_back(grid_rec(c, col, true));
      }
    }
    CHECK_THROWS_AS(marginalize(rs), IncompleteGrid);
    try {
      marginalize(rs);
    } catch (const IncompleteGrid& e) {
      CHECK(std::string(e.what()).find("cyan star") != std::string::npos);
    }
  }

  TEST_CASE("distractor table") {
    std::vector<RunRecord> rs;
    for (auto t : kDistractorTypes) {
      for (int n : kDistractorCounts) {
        for (int v = 0; v < 3; ++v) {
          RunRecord r = rec(4, t == DistractorType::LMS && n == 9 ? 5 : 4);
          r.distractor = DistractorPlan{t, n, v};
          rs.push_back(r);
        }
      }
    }
    const auto table = distractor_table(rs, 0.5);
    CHECK(table.overall.n == 36);
    REQUIRE(table.by_type.size() == 4);
    REQUIRE(table.by_count.size() == 3);
    for (const auto& row : table.by_type) CHECK(row.tally.n == 9);
    CHECK(table.by_type[3].label == "LMS");
    CHECK(table.by_type[3].tally.accuracy() == doctest::Approx(6.0 / 9.0));
    CHECK(*table.by_type[0].delta == doctest::Approx(0.5));
    CHECK(table.by_count[2].label == "9");
    CHECK(*table.by_count[2].delta == doctest::Approx(0.75 - 0.5));

    rs.push_back(rec(1, 1));
    CHECK_THROWS_AS(distractor_table(rs, std::nullopt), ValidationError);

    std::vector<RunRecord> base{grid_rec(ObjectClass::circle, Color::magenta, true),
                                grid_rec(ObjectClass::star, Color::magenta, true)};
    CHECK(distractor_reference(base).size() == 1);
  }
}

TEST_SUITE("metrics properties") {
  TEST_CASE("rmse never falls below mae") {
    testgen::Gen g(31);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<RunRecord> rs;
      const int n = g.range(1, 40);
      for (int i = 0; i < n; ++i) rs.push_back(g.record());
      const auto m = summarize(rs);
      CHECK(m.rmse >= m.mae - 1e-12);
      CHECK(m.accuracy >= 0.0);
      CHECK(m.accuracy <= 1.0);
    }
  }

  TEST_CASE("pooled accuracy is the weighted mean of group accuracies") {
    testgen::Gen g(32);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<RunRecord> rs;
      for (auto c : kGridClasses) {
        for (auto col : kGridColors) {
          const int n = g.range(1, 8);
          for (int i = 0; i < n; ++i) rs.push_back(grid_rec(c, col, g.coin()));
        }
      }
      const auto m = marginalize(rs);
      std::size_t correct = 0;
      for (const auto& r : rs) correct += is_correct(r) ? 1 : 0;
      std::size_t by_class = 0, by_color = 0, by_target = 0;
      for (const auto& [k, t] : m.per_class) by_class += t.correct;
      for (const auto& [k, t] : m.per_color) by_color += t.correct;
      for (const auto& [k, t] : m.per_target) by_target += t.correct;
      CHECK(by_class == correct);
      CHECK(by_color == correct);
      CHECK(by_target == correct);
      CHECK(m.overall.correct == correct);
      CHECK(m.overall.n == rs.size());
      // Same pooling through summarize.
      CHECK(summarize(rs).accuracy == m.overall.accuracy());
    }
  }
}
