#include "countlab/harness.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "countlab/errors.hpp"
#include "countlab/png.hpp"
#include "countlab/render.hpp"
#include "countlab/rng.hpp"
#include "countlab/util.hpp"

namespace countlab {

namespace {

constexpr int kOpenMaxAnswer = kCellCount;

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

UrlParts split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  UrlParts parts;
  if (path_start == std::string::npos) {
    parts.origin = url;
  } else {
    parts.origin = url.substr(0, path_start);
    parts.prefix = url.substr(path_start);
    while (!parts.prefix.empty() && parts.prefix.back() == '/') parts.prefix.pop_back();
  }
  return parts;
}

/// POSTs JSON to {base_url}{path}, retrying transient failures. Returns the
/// parsed response body.
nlohmann::json post_json(const ModelEndpoint& ep, const std::string& path, const std::string& body) {
  const UrlParts url = split_url(ep.base_url);
  httplib::Client client(url.origin);
  const auto seconds = static_cast<time_t>(ep.timeout_s);
  const auto micros = static_cast<time_t>((ep.timeout_s - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);
  httplib::Headers headers;
  if (ep.auth_token) headers.emplace("Authorization", "Bearer " + *ep.auth_token);

  std::string last_failure;
  auto backoff = ep.backoff;
  for (int attempt = 0; attempt <= ep.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Post(url.prefix + path, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      last_failure = err == httplib::Error::Read ? "Timeout: no response within " + std::to_string(ep.timeout_s) + " s"
                                                 : "transport error: " + httplib::to_string(err);
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_failure = "server answered HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw ProtocolError("HTTP " + std::to_string(res->status) + " from " + path + ": " + res->body);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError("response of " + path + " is not JSON: " + e.what());
    }
  }
  throw ExhaustedRetries(path + " failed after " + std::to_string(ep.max_retries + 1) +
                         " attempts; last: " + last_failure);
}

int number_word(std::string_view token) {
  static constexpr std::array<std::string_view, 11> kWords{"zero", "one", "two", "three", "four", "five",
                                                           "six",  "seven", "eight", "nine", "ten"};
  std::string lower(token);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (std::size_t i = 0; i < kWords.size(); ++i) {
    if (kWords[i] == lower) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

nlohmann::ordered_json record_to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["stimulus_id"] = r.stimulus_id;
  j["raw_response"] = r.raw_response;
  j["extracted"] = r.extracted ? nlohmann::ordered_json(*r.extracted) : nullptr;
  j["gold"] = r.gold;
  j["latency_ms"] = r.latency_ms;
  j["options"] = r.options;
  j["target"] = target_to_json(r.target);
  if (r.distractor) {
    j["distractor"] = {{"type", to_string(r.distractor->type)},
                       {"count", r.distractor->count},
                       {"variant", r.distractor->variant}};
  } else {
    j["distractor"] = nullptr;
  }
  j["error"] = r.error ? nlohmann::ordered_json(*r.error) : nullptr;
  return j;
}

RunRecord record_from_json(const nlohmann::json& j) {
  try {
    RunRecord r;
    r.stimulus_id = j.at("stimulus_id").get<std::string>();
    r.raw_response = j.value("raw_response", std::string());
    if (j.contains("extracted") && !j["extracted"].is_null()) r.extracted = j["extracted"].get<int>();
    r.gold = j.at("gold").get<int>();
    r.latency_ms = j.value("latency_ms", 0.0);
    r.options = j.value("options", std::vector<int>{});
    r.target = target_from_json(j.at("target"));
    if (j.contains("distractor") && !j["distractor"].is_null()) {
      const auto& d = j["distractor"];
      r.distractor = DistractorPlan{parse_distractor_type(d.at("type").get<std::string>()), d.at("count").get<int>(),
                                    d.at("variant").get<int>()};
    }
    if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed run record: ") + e.what());
  }
}

std::vector<RunRecord> read_records_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open records " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::optional<int> extract_answer(std::string_view raw, std::span<const int> valid) {
  std::size_t i = 0;
  while (i < raw.size()) {
    const auto c = static_cast<unsigned char>(raw[i]);
    if (!std::isalnum(c)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw.size() && std::isalnum(static_cast<unsigned char>(raw[j]))) ++j;
    const std::string_view token = raw.substr(i, j - i);
    i = j;

    int value = -1;
    if (std::all_of(token.begin(), token.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
      if (token.size() > 6) continue;  // far outside any answer range
      value = std::stoi(std::string(token));
    } else {
      value = number_word(token);
    }
    if (value >= 0 && std::find(valid.begin(), valid.end(), value) != valid.end()) return value;
  }
  return std::nullopt;
}

std::vector<int> valid_answers(const Stimulus& s) {
  if (s.mode == QuestionMode::closed) return s.options;
  std::vector<int> all(kOpenMaxAnswer + 1);
  for (int v = 0; v <= kOpenMaxAnswer; ++v) all[static_cast<std::size_t>(v)] = v;
  return all;
}

std::string query_model(const ModelEndpoint& endpoint, std::string_view image_png, std::string_view prompt,
                        int max_new_tokens) {
  nlohmann::json body;
  body["image_png_b64"] = base64_encode(image_png);
  body["prompt"] = prompt;
  body["max_new_tokens"] = max_new_tokens;
  const auto response = post_json(endpoint, "/generate", body.dump());
  if (!response.is_object() || !response.contains("text") || !response["text"].is_string()) {
    throw ProtocolError("/generate response lacks a string 'text' field");
  }
  return response["text"].get<std::string>();
}

ModelMeta meta_from_json(const nlohmann::json& j) {
  try {
    ModelMeta meta;
    meta.model_id = j.at("model_id").get<std::string>();
    meta.hidden_size = j.at("hidden_size").get<int>();
    meta.num_layers = j.at("num_layers").get<int>();
    for (const auto& [digit, token] : j.at("answer_token_ids").items()) {
      meta.answer_token_ids[std::stoi(digit)] = token.get<int>();
    }
    return meta;
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("malformed /meta response: ") + e.what());
  }
}

ModelMeta fetch_meta(const ModelEndpoint& endpoint) { return meta_from_json(post_json(endpoint, "/meta", "{}")); }

std::string HttpModel::generate(const Stimulus&, const std::string& image_png, const std::string& prompt) {
  return query_model(endpoint_, image_png, prompt);
}

MockSpec MockSpec::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const std::string arg = colon == std::string_view::npos ? "" : std::string(text.substr(colon + 1));
  MockSpec spec;
  try {
    if (name == "oracle") {
      spec.kind = MockKind::oracle;
    } else if (name == "random" || name == "uniform_random") {
      spec.kind = MockKind::uniform_random;
      spec.seed = arg.empty() ? 0 : std::stoull(arg);
    } else if (name == "constant") {
      spec.kind = MockKind::constant;
      if (arg.empty()) throw ValidationError("constant mock needs a value, e.g. constant:7");
      spec.constant = std::stoi(arg);
    } else if (name == "off_by_one") {
      spec.kind = MockKind::off_by_one;
    } else {
      throw ValidationError("unknown mock '" + std::string(text) + "' (oracle, random:<seed>, constant:<k>, off_by_one)");
    }
  } catch (const std::logic_error&) {
    throw ValidationError("bad mock argument in '" + std::string(text) + "'");
  }
  return spec;
}

std::string MockModel::generate(const Stimulus& s, const std::string&, const std::string&) {
  switch (spec_.kind) {
    case MockKind::oracle:
      return std::to_string(count_matches(s.scene, s.target));
    case MockKind::uniform_random: {
      if (s.options.empty()) throw ValidationError("uniform_random mock needs options");
      Rng rng(derive_seed(spec_.seed, s.id));
      return std::to_string(s.options[rng.below(s.options.size())]);
    }
    case MockKind::constant:
      return std::to_string(spec_.constant);
    case MockKind::off_by_one: {
      const int gold = static_cast<int>(count_matches(s.scene, s.target));
      const bool up_ok = std::find(s.options.begin(), s.options.end(), gold + 1) != s.options.end();
      return std::to_string(up_ok ? gold + 1 : gold - 1);
    }
  }
  return {};
}

ImageSource png_directory_source(std::filesystem::path dir) {
  return [dir = std::move(dir)](const Stimulus& s) { return read_file(dir / (s.id + ".png")); };
}

ImageSource render_source() {
  return [](const Stimulus& s) { return encode_png(rasterize(s.scene)); };
}

std::vector<RunRecord> run_eval(const std::vector<Stimulus>& split, Model& model, const ImageSource& images,
                                const EvalOptions& options) {
  std::unordered_map<std::string, RunRecord> done;
  std::ofstream sink;

  if (options.records_path) {
    const auto& path = *options.records_path;
    if (options.resume && std::filesystem::exists(path)) {
      // Keep the longest prefix of complete, parseable lines.
      std::string content = read_file(path);
      std::size_t keep = 0;
      std::size_t pos = 0;
      while (pos < content.size()) {
        const auto nl = content.find('\n', pos);
        if (nl == std::string::npos) break;
        const std::string_view line(content.data() + pos, nl - pos);
        try {
          RunRecord r = record_from_json(nlohmann::json::parse(line));
          done.emplace(r.stimulus_id, std::move(r));
        } catch (const std::exception&) {
          break;
        }
        pos = nl + 1;
        keep = pos;
      }
      if (keep != content.size()) std::filesystem::resize_file(path, keep);
    } else {
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      std::ofstream(path, std::ios::trunc);
    }
    sink.open(path, std::ios::app | std::ios::binary);
    if (!sink) throw Error("cannot open records file " + path.string());
  }

  std::vector<const Stimulus*> pending;
  for (const auto& s : split) {
    if (!done.contains(s.id)) pending.push_back(&s);
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> abort{false};

  auto worker = [&] {
    while (!abort) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const Stimulus& s = *pending[i];
      RunRecord r;
      r.stimulus_id = s.id;
      r.gold = s.answer;
      r.options = s.options;
      r.target = s.target;
      r.distractor = s.distractor;
      try {
        const std::string png = images(s);
        const auto t0 = std::chrono::steady_clock::now();
        try {
          r.raw_response = model.generate(s, png, s.question);
        } catch (const TransportError& e) {
          r.error = e.what();
        }
        r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (!r.error) {
          const auto valid = valid_answers(s);
          r.extracted = extract_answer(r.raw_response, valid);
        }
        std::lock_guard lock(mu);
        if (sink.is_open()) {
          const std::string line = record_to_json(r).dump() + "\n";
          sink.write(line.data(), static_cast<std::streamsize>(line.size()));
          sink.flush();
        }
        done.emplace(r.stimulus_id, std::move(r));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        abort = true;
      }
    }
  };

  const int workers = std::max(1, std::min<int>(options.max_in_flight, static_cast<int>(pending.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<RunRecord> out;
  out.reserve(split.size());
  for (const auto& s : split) out.push_back(done.at(s.id));
  return out;
}

}  // namespace countlab
