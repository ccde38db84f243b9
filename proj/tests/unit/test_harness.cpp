#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include "countlab/errors.hpp"
#include "countlab/harness.hpp"
#include "countlab/metrics.hpp"
#include "countlab/util.hpp"
#include "support/gen.hpp"

using namespace countlab;

namespace {

const std::vector<int> k1to9{1, 2, 3, 4, 5, 6, 7, 8, 9};

/// Local HTTP server running on a background thread for the test's lifetime.
struct TestServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~TestServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  [[nodiscard]] std::string url(const std::string& prefix = "") const {
    return "http://127.0.0.1:" + std::to_string(port) + prefix;
  }
};

ModelEndpoint endpoint(const std::string& url) {
  ModelEndpoint e;
  e.base_url = url;
  e.timeout_s = 5;
  e.backoff = std::chrono::milliseconds(1);
  return e;
}

std::vector<Stimulus> small_split() {
  auto all = gen_clustered({5, Setting::clustered, QuestionMode::closed});
  all.resize(40);
  return all;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("answer extraction") {
    CHECK(extract_answer("The answer is 7.", k1to9) == 7);
    CHECK(extract_answer("three", k1to9) == 3);
    CHECK(extract_answer("THREE", k1to9) == 3);
    CHECK(extract_answer("ten 4", k1to9) == 4);
    CHECK(extract_answer("There are 12 or maybe 5", k1to9) == 5);
    CHECK_FALSE(extract_answer("none at all", k1to9).has_value());
    CHECK_FALSE(extract_answer("", k1to9).has_value());
    CHECK(extract_answer("zero", std::vector<int>{0, 1}) == 0);
    CHECK(extract_answer("7th", k1to9) == std::nullopt);
    CHECK(extract_answer("(8)", k1to9) == 8);
    CHECK(extract_answer("2, 3", std::vector<int>{3}) == 3);
  }

  TEST_CASE("valid answers by question mode") {
    Stimulus s;
    s.options = {3, 1, 2};
    s.mode = QuestionMode::closed;
    CHECK(valid_answers(s) == std::vector<int>{3, 1, 2});
    s.mode = QuestionMode::open;
    const auto v = valid_answers(s);
    CHECK(v.size() == 82);
    CHECK(v.front() == 0);
    CHECK(v.back() == 81);
  }

  TEST_CASE("mock parsing and behaviour") {
    CHECK(MockSpec::parse("oracle").kind == MockKind::oracle);
    CHECK(MockSpec::parse("random:5").seed == 5);
    CHECK(MockSpec::parse("uniform_random:5").kind == MockKind::uniform_random);
    CHECK(MockSpec::parse("constant:7").constant == 7);
    CHECK_THROWS_AS(MockSpec::parse("constant"), ValidationError);
    CHECK_THROWS_AS(MockSpec::parse("wizard"), ValidationError);
    CHECK_THROWS_AS(MockSpec::parse("constant:x"), ValidationError);

    const auto split = small_split();
    MockModel oracle(MockSpec::parse("oracle"));
    MockModel seven(MockSpec::parse("constant:7"));
    MockModel rnd(MockSpec::parse("random:3"));
    for (const auto& s : split) {
      CHECK(oracle.generate(s, "", s.question) == std::to_string(s.answer));
      CHECK(seven.generate(s, "", s.question) == "7");
      const auto r = rnd.generate(s, "", s.question);
      CHECK(r == rnd.generate(s, "", s.question));
      CHECK(extract_answer(r, s.options).has_value());
    }
  }

  TEST_CASE("oracle and off_by_one runs") {
    const auto split = gen_clustered({5, Setting::clustered, QuestionMode::closed});
    MockModel oracle(MockSpec::parse("oracle"));
    const auto images = [](const Stimulus&) { return std::string(); };
    const auto ok = summarize(run_eval(split, oracle, images, {}));
    CHECK(ok.accuracy == 1.0);
    CHECK(ok.mae == 0.0);
    CHECK(ok.rmse == 0.0);
    MockModel off(MockSpec::parse("off_by_one"));
    EvalOptions opts;
    opts.max_in_flight = 4;
    const auto records = run_eval(split, off, images, opts);
    REQUIRE(records.size() == split.size());
    for (std::size_t i = 0; i < split.size(); ++i) CHECK(records[i].stimulus_id == split[i].id);
    const auto bad = summarize(records);
    CHECK(bad.accuracy == 0.0);
    CHECK(bad.mae == 1.0);
    CHECK(bad.rmse == 1.0);
  }

  TEST_CASE("record JSON round-trip") {
    RunRecord r;
    r.stimulus_id = "x";
    r.raw_response = "seven";
    r.extracted = 7;
    r.gold = 6;
    r.latency_ms = 1.5;
    r.options = {6, 7};
    r.target = {ObjectClass::circle, Color::magenta, Size::large};
    r.distractor = DistractorPlan{DistractorType::LMS, 5, 2};
    const auto back = record_from_json(record_to_json(r));
    CHECK(back.stimulus_id == r.stimulus_id);
    CHECK(back.extracted == r.extracted);
    CHECK(back.options == r.options);
    CHECK(back.target == r.target);
    CHECK(back.distractor == r.distractor);
    r.extracted.reset();
    r.error = "boom";
    const auto back2 = record_from_json(record_to_json(r));
    CHECK_FALSE(back2.extracted.has_value());
    CHECK(back2.error == "boom");
  }

  TEST_CASE("wire protocol against a local server") {
    TestServer ts;
    std::atomic<int> generate_calls{0};
    std::string last_auth;
    ts.server.Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
      ++generate_calls;
      last_auth = req.get_header_value("Authorization");
      const auto body = nlohmann::json::parse(req.body);
      const auto png = base64_decode(body.at("image_png_b64").get<std::string>());
      CHECK(body.at("max_new_tokens") == 16);
      res.set_content(nlohmann::json{{"text", "The answer is " + std::to_string(png.size())}}.dump(),
                      "application/json");
    });
    ts.server.Post("/v1/meta", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"model_id":"m","hidden_size":8,"num_layers":2,"answer_token_ids":{"1":11,"2":12}})",
                      "application/json");
    });
    ts.start();

    auto e = endpoint(ts.url("/v1"));
    e.auth_token = "secret";
    CHECK(query_model(e, "abcd", "How many?") == "The answer is 4");
    CHECK(last_auth == "Bearer secret");
    const auto meta = fetch_meta(e);
    CHECK(meta.model_id == "m");
    CHECK(meta.hidden_size == 8);
    CHECK(meta.num_layers == 2);
    CHECK(meta.answer_token_ids.at(2) == 12);

    HttpModel model(e);
    Stimulus s;
    s.id = "s";
    CHECK(model.generate(s, "xyz", "q") == "The answer is 3");
  }

  TEST_CASE("transient failures are retried, client errors are not") {
    TestServer ts;
    std::atomic<int> flaky{0}, rejected{0};
    ts.server.Post("/generate", [&](const httplib::Request&, httplib::Response& res) {
      if (++flaky <= 2) {
        res.status = 503;
        return;
      }
      res.set_content(R"({"text":"5"})", "application/json");
    });
    ts.server.Post("/bad/generate", [&](const httplib::Request&, httplib::Response& res) {
      ++rejected;
      res.status = 400;
    });
    ts.server.Post("/junk/generate", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    ts.server.Post("/down/generate", [&](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    ts.start();

    CHECK(query_model(endpoint(ts.url()), "", "q") == "5");
    CHECK(flaky == 3);
    CHECK_THROWS_AS(query_model(endpoint(ts.url("/bad")), "", "q"), ProtocolError);
    CHECK(rejected == 1);
    CHECK_THROWS_AS(query_model(endpoint(ts.url("/junk")), "", "q"), ProtocolError);
    CHECK_THROWS_AS(query_model(endpoint(ts.url("/down")), "", "q"), ExhaustedRetries);
  }

  TEST_CASE("unreachable endpoint is recorded and the run continues") {
    int port = 0;
    {
      httplib::Server probe;
      port = probe.bind_to_any_port("127.0.0.1");
    }
    auto e = endpoint("http://127.0.0.1:" + std::to_string(port));
    e.max_retries = 1;
    e.timeout_s = 0.2;
    CHECK_THROWS_AS(query_model(e, "", "q"), ExhaustedRetries);
    HttpModel model(e);
    auto split = small_split();
    split.resize(5);
    const auto records = run_eval(split, model, [](const Stimulus&) { return std::string(); }, {});
    CHECK(records.size() == split.size());
    for (const auto& r : records) {
      CHECK(r.error.has_value());
      CHECK_FALSE(r.extracted.has_value());
    }
    const auto m = summarize(records);
    CHECK(m.accuracy == 0.0);
    CHECK(m.unparsed == split.size());
  }

  TEST_CASE("resume skips recorded stimuli and repairs a torn tail") {
    const auto dir = testgen::scratch_dir("harness-resume");
    const auto path = dir / "records.jsonl";
    const auto split = small_split();
    const auto images = [](const Stimulus&) { return std::string(); };

    // A first run over half the split, then a torn final line.
    std::vector<Stimulus> half(split.begin(), split.begin() + 20);
    MockModel oracle(MockSpec::parse("oracle"));
    EvalOptions opts;
    opts.records_path = path;
    run_eval(half, oracle, images, opts);
    {
      std::ofstream out(path, std::ios::app);
      out << R"({"stimulus_id":"torn)";
    }

    struct Counting : Model {
      std::set<std::string> seen;
      MockModel inner{MockSpec::parse("oracle")};
      std::string generate(const Stimulus& s, const std::string& img, const std::string& p) override {
        seen.insert(s.id);
        return inner.generate(s, img, p);
      }
    } counting;
    opts.resume = true;
    const auto records = run_eval(split, counting, images, opts);
    CHECK(counting.seen.size() == 20);
    for (const auto& s : half) CHECK(counting.seen.count(s.id) == 0);
    REQUIRE(records.size() == split.size());

    const auto on_disk = read_records_jsonl(path);
    CHECK(on_disk.size() == split.size());
    std::set<std::string> ids;
    for (const auto& r : on_disk) ids.insert(r.stimulus_id);
    CHECK(ids.size() == split.size());
    CHECK(summarize(on_disk).accuracy == 1.0);
  }

  TEST_CASE("uniform random mock is near chance") {
    const auto split = gen_baseline({1, Setting::baseline, QuestionMode::closed});
    MockModel rnd(MockSpec::parse("random:11"));
    const auto m = summarize(run_eval(split, rnd, [](const Stimulus&) { return std::string(); }, {}));
    CHECK(std::abs(m.accuracy - 1.0 / 9.0) < 0.02);
  }
}
