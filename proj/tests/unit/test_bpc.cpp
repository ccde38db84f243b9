#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "countlab/bpc.hpp"
#include "support/gen.hpp"

using namespace countlab;

namespace {

std::string cls_name(int c) { return "class" + std::to_string(c); }

/// `classes` classes with `per_cell` images for every count 0..9.
std::vector<Annotation> corpus(int classes, int per_cell, bool hints = false) {
  std::vector<Annotation> out;
  for (int c = 0; c < classes; ++c) {
    for (int n = 0; n <= 9; ++n) {
      for (int i = 0; i < per_cell; ++i) {
        Annotation a;
        a.image_ref = "img/" + cls_name(c) + "_" + std::to_string(n) + "_" + std::to_string(i) + ".jpg";
        a.object_class = cls_name(c);
        a.count = n;
        if (hints && c < 76 && n >= 2 && i < 2) a.split_hint = i == 0 ? "valid" : "test";
        out.push_back(a);
      }
    }
  }
  return out;
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::map<int, std::size_t> per_count(const std::vector<Annotation>& split) {
  std::map<int, std::size_t> m;
  for (const auto& a : split) ++m[a.count];
  return m;
}

}  // namespace

TEST_SUITE("bpc") {
  TEST_CASE("ingest JSONL with diagnostics") {
    const auto dir = testgen::scratch_dir("bpc-ingest");
    write(dir / "a.jsonl",
          R"({"image_ref":"a.jpg","object_class":"apple","count":3})" "\n"
          R"({"image_ref":"b.jpg","object_class":"pear","count":0,"split_hint":"test"})" "\n"
          R"({"image_ref":"c.jpg","object_class":"fig","count":9})" "\n");
    const auto ok = ingest(dir / "a.jsonl");
    CHECK(ok.records.size() == 3);
    CHECK(ok.diagnostics.empty());
    CHECK(ok.records[1].split_hint == "test");

    write(dir / "b.jsonl",
          R"({"image_ref":"a.jpg","object_class":"apple","count":3})" "\n"
          R"({"image_ref":"b.jpg","object_class":"pear","count":-1})" "\n"
          "not json\n"
          R"({"image_ref":"d.jpg","object_class":"","count":2})" "\n"
          R"({"image_ref":"e.jpg","object_class":"kiwi","count":256})" "\n"
          "\n");
    const auto bad = ingest(dir / "b.jsonl");
    CHECK(bad.records.size() == 1);
    REQUIRE(bad.diagnostics.size() == 4);
    CHECK(bad.diagnostics[0].find("b.jsonl:2:") != std::string::npos);
    CHECK(bad.diagnostics[1].find(":3:") != std::string::npos);

    write(dir / "none.jsonl", R"({"image_ref":"b.jpg","object_class":"pear","count":-1})" "\n");
    CHECK_THROWS_AS(ingest(dir / "none.jsonl"), NoValidRecords);
  }

  TEST_CASE("CSV and JSONL give the same annotations") {
    const auto dir = testgen::scratch_dir("bpc-csv");
    write(dir / "a.jsonl",
          R"({"image_ref":"http://x/a.jpg","object_class":"apple","count":3})" "\n"
          R"({"image_ref":"b.jpg","object_class":"pear tree","count":0,"split_hint":"valid"})" "\n");
    write(dir / "a.csv",
          "image_ref,object_class,count,split_hint\n"
          "http://x/a.jpg,apple,3,\n"
          "b.jpg,\"pear tree\",0,valid\n");
    const auto j = ingest(dir / "a.jsonl");
    const auto c = ingest(dir / "a.csv");
    CHECK(j.records == c.records);

    write(dir / "b.csv", "object_class,count,image_ref\napple,x,a.jpg\napple,2,b.jpg\n");
    const auto reordered = ingest(dir / "b.csv");
    CHECK(reordered.records.size() == 1);
    CHECK(reordered.records[0].image_ref == "b.jpg");
    CHECK(reordered.diagnostics.size() == 1);

    write(dir / "c.csv", "image_ref,count\na.jpg,2\n");
    CHECK_THROWS_AS(ingest(dir / "c.csv"), ValidationError);
  }

  TEST_CASE("80-class corpus fills every quota") {
    const auto splits = build_bpc(corpus(80, 8), 17);
    CHECK(splits.train.size() == 3000);
    CHECK(splits.valid.size() == 480);
    CHECK(splits.test.size() == 480);
    CHECK(splits.classes.size() == 76);
    for (const auto& [n, k] : per_count(splits.train)) CHECK(k == 300);
    for (const auto& [n, k] : per_count(splits.valid)) CHECK(k == 60);
    CHECK(per_count(splits.valid).begin()->first == 2);
    CHECK(per_count(splits.train).size() == 10);

    // Class spread per count within train.
    for (int n = 0; n <= 9; ++n) {
      std::map<std::string, int> by_class;
      for (const auto& c : splits.classes) by_class[c] = 0;
      for (const auto& a : splits.train) {
        if (a.count == n) ++by_class[a.object_class];
      }
      int lo = 1 << 30, hi = 0;
      for (const auto& [c, k] : by_class) {
        lo = std::min(lo, k);
        hi = std::max(hi, k);
      }
      CHECK(hi - lo <= 1);
    }

    std::set<std::string> refs;
    for (const auto* s : {&splits.train, &splits.valid, &splits.test}) {
      for (const auto& a : *s) CHECK(refs.insert(a.image_ref).second);
    }
    const auto report = verify_balance(splits);
    CHECK(report.violations.empty());
    CHECK(report.histogram.size() == 76 * 10);
    CHECK(build_bpc(corpus(80, 8), 17).train == splits.train);
    CHECK_FALSE(build_bpc(corpus(80, 8), 18).train == splits.train);
  }

  TEST_CASE("hints decide the eligible classes and splits") {
    const auto splits = build_bpc(corpus(80, 8, true), 3);
    CHECK(splits.classes.size() == 76);
    CHECK(std::find(splits.classes.begin(), splits.classes.end(), "class79") == splits.classes.end());
    for (const auto& a : splits.valid) CHECK(a.split_hint == "valid");
    for (const auto& a : splits.test) CHECK(a.split_hint == "test");
    for (const auto& a : splits.train) CHECK_FALSE(a.split_hint.has_value());
    CHECK(verify_balance(splits).violations.empty());
  }

  TEST_CASE("missing count is reported exactly") {
    auto pool = corpus(80, 8);
    std::erase_if(pool, [](const Annotation& a) { return a.count == 0; });
    try {
      build_bpc(pool, 1);
      FAIL("expected InsufficientPool");
    } catch (const InsufficientPool& e) {
      REQUIRE(e.shortfalls().size() == 1);
      CHECK(e.shortfalls()[0].split == "train");
      CHECK(e.shortfalls()[0].count == 0);
      CHECK(e.shortfalls()[0].deficit == 300);
    }
  }

  TEST_CASE("a corrupted split is flagged once") {
    auto splits = build_bpc(corpus(80, 8), 5);
    const auto it = std::find_if(splits.train.begin(), splits.train.end(), [](const Annotation& a) { return a.count == 3; });
    splits.train.erase(it);
    const auto report = verify_balance(splits);
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].find("count 3 has 299") != std::string::npos);

    auto leaked = build_bpc(corpus(80, 8), 5);
    leaked.valid[0] = leaked.train[0];
    CHECK_FALSE(verify_balance(leaked).violations.empty());
  }

  TEST_CASE("histogram CSV") {
    const auto splits = build_bpc(corpus(80, 8), 9);
    const auto csv = histogram_csv(verify_balance(splits));
    std::size_t lines = 0;
    for (char ch : csv) lines += ch == '\n' ? 1 : 0;
    CHECK(lines == 1 + 76 * 10);
    CHECK(csv.rfind("object_class,count,train,valid,test\n", 0) == 0);
  }
}
