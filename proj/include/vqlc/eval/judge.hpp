#pragma once

// Judge prompts and responses. A prompt presents three method renderings in
// a seeded order; the response must carry a "ranking" array naming each
// configuration exactly once with a rank in {1,2,3}.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqlc/error.hpp"
#include "vqlc/eval/judge_template.hpp"
#include "vqlc/eval/rank.hpp"
#include "vqlc/rng.hpp"

namespace vqlc {

enum class JudgeTask { jigsaw_toxic, jigsaw_nontoxic, movie, agnews };

inline JudgeTask parse_judge_task(const std::string& s) {
  if (s == "jigsaw-toxic") return JudgeTask::jigsaw_toxic;
  if (s == "jigsaw-nontoxic") return JudgeTask::jigsaw_nontoxic;
  if (s == "movie") return JudgeTask::movie;
  if (s == "agnews") return JudgeTask::agnews;
  throw ValidationError("unknown judge task '" + s + "' (expected jigsaw-toxic, jigsaw-nontoxic, movie or agnews)");
}

inline std::string_view task_block(JudgeTask t) {
  switch (t) {
    case JudgeTask::jigsaw_toxic:
      return judge::kTaskJigsawToxic;
    case JudgeTask::jigsaw_nontoxic:
      return judge::kTaskJigsawNonToxic;
    case JudgeTask::movie:
      return judge::kTaskMovie;
    case JudgeTask::agnews:
      return judge::kTaskAgNews;
  }
  return {};
}

inline constexpr std::size_t kJudgeMethods = 3;

struct MethodRendering {
  std::string name;
  std::string content;
};

struct JudgeInput {
  std::string sample_id;
  std::string sentence;
  std::string predicted_label;          // raw label
  std::string predicted_label_meaning;  // human-readable class name
  JudgeTask task = JudgeTask::agnews;
  std::vector<MethodRendering> methods;
};

struct JudgeRequest {
  std::string sample_id;
  std::string prompt;
  std::vector<std::string> order;  // method names in prompt order
};

namespace detail {

/// Single left-to-right pass: inserted values are never rescanned.
inline std::string substitute(std::string_view text, const std::map<std::string, std::string, std::less<>>& values,
                              const std::vector<MethodRendering>* methods = nullptr) {
  std::string out;
  out.reserve(text.size() * 2);
  std::size_t current_method = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const std::size_t close = text.find('}', i);
      if (close != std::string_view::npos) {
        const std::string_view key = text.substr(i, close - i + 1);
        if (auto it = values.find(key); it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
        if (methods && key.size() == 14 && key.substr(0, 7) == "{Method" && key.substr(8) == " Name}") {
          const std::size_t n = static_cast<std::size_t>(key[7] - '1');
          if (n < methods->size()) {
            current_method = n;
            out += (*methods)[n].name;
            i = close + 1;
            continue;
          }
        }
        if (methods && key == "{concept content}") {
          out += (*methods)[current_method].content;
          i = close + 1;
          continue;
        }
      }
    }
    out += text[i++];
  }
  return out;
}

}  // namespace detail

/// Instantiates the stored template. Method order is a seeded shuffle on the
/// "judge-shuffle/<sample_id>" substream.
inline JudgeRequest judge_request(const JudgeInput& in, std::uint64_t seed) {
  detail::require(in.methods.size() == kJudgeMethods,
                  "judge: exactly 3 method renderings required, got " + std::to_string(in.methods.size()));
  std::set<std::string> names;
  for (const auto& m : in.methods) {
    detail::require(!m.name.empty(), "judge: empty method name");
    detail::require(names.insert(m.name).second, "judge: duplicate method name '" + m.name + "'");
  }
  std::vector<MethodRendering> shuffled = in.methods;
  Rng rng = make_rng(seed, "judge-shuffle/" + in.sample_id);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);

  const std::map<std::string, std::string, std::less<>> task_values = {
      {"{prediction_label}", in.predicted_label_meaning},
      {"{predicted label meaning}", in.predicted_label_meaning},
  };
  const std::string task = detail::substitute(task_block(in.task), task_values);
  const std::map<std::string, std::string, std::less<>> values = {
      {"{sentence}", in.sentence},
      {"{predicted label meaning}", in.predicted_label_meaning},
      {"{predicted label}", in.predicted_label},
      {"{Task Prompt}", task},
  };
  JudgeRequest req;
  req.sample_id = in.sample_id;
  req.prompt = detail::substitute(judge::kJudgeTemplate, values, &shuffled);
  for (const auto& m : shuffled) req.order.push_back(m.name);
  return req;
}

struct Judgment {
  std::map<std::string, int> ranks;  // method name → rank
  std::map<std::string, std::string> reasons;
};

/// Parses the JSON object spanning the first '{' to the last '}' of the
/// response. Every expected name must appear exactly once.
inline Judgment parse_judgment(const std::string& response, const std::vector<std::string>& expected) {
  const std::size_t open = response.find('{');
  const std::size_t close = response.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw ValidationError("judge: response contains no JSON object");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(response.substr(open, close - open + 1));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("judge: malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("ranking") || !j["ranking"].is_array()) {
    throw ValidationError("judge: response lacks a \"ranking\" array");
  }
  const std::set<std::string> known(expected.begin(), expected.end());
  Judgment out;
  for (const auto& e : j["ranking"]) {
    if (!e.is_object() || !e.contains("configuration") || !e["configuration"].is_string() || !e.contains("rank") ||
        !e["rank"].is_number_integer()) {
      throw ValidationError("judge: ranking entry needs string \"configuration\" and integer \"rank\": " + e.dump());
    }
    const std::string name = e["configuration"].get<std::string>();
    const auto rank = e["rank"].get<std::int64_t>();
    if (!known.count(name)) throw ValidationError("judge: unknown configuration '" + name + "'");
    if (rank < kMinRank || rank > kMaxRank) {
      throw ValidationError("judge: rank " + std::to_string(rank) + " for '" + name + "' outside {1,2,3}");
    }
    if (!out.ranks.emplace(name, static_cast<int>(rank)).second) {
      throw ValidationError("judge: configuration '" + name + "' ranked twice");
    }
    if (e.contains("reason") && e["reason"].is_string()) out.reasons[name] = e["reason"].get<std::string>();
  }
  for (const auto& n : expected) {
    if (!out.ranks.count(n)) throw ValidationError("judge: configuration '" + n + "' missing from ranking");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transport

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  /// Returns the assistant text for a single-turn prompt.
  virtual std::string complete(const std::string& prompt) = 0;
};

/// Chat-completion request body sent to the judge endpoint.
inline nlohmann::json chat_request_body(const std::string& model, const std::string& prompt) {
  return {{"model", model}, {"temperature", 0}, {"messages", {{{"role", "user"}, {"content", prompt}}}}};
}

inline std::string chat_response_text(const nlohmann::json& body) {
  try {
    return body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError(std::string("judge: unexpected chat response shape: ") + e.what());
  }
}

/// Serves responses from a fixture file of {"request": body, "response": body}
/// lines, matched on the request's prompt text. Never touches the network.
class ReplayJudgeClient : public JudgeClient {
 public:
  explicit ReplayJudgeClient(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("judge: cannot open fixture " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const std::string prompt = j.at("request").at("messages").at(0).at("content").get<std::string>();
        responses_[prompt] = chat_response_text(j.at("response"));
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError("judge: fixture " + path + " line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  std::string complete(const std::string& prompt) override {
    const auto it = responses_.find(prompt);
    if (it == responses_.end()) throw RuntimeError("judge: no recorded response for this prompt");
    ++served_;
    return it->second;
  }

  std::size_t served() const noexcept { return served_; }
  std::size_t size() const noexcept { return responses_.size(); }

 private:
  std::map<std::string, std::string> responses_;
  std::size_t served_ = 0;
};

/// Sends every request through `client` and records each parsed ranking
/// under `evaluator` in the table.
inline void run_judge(JudgeClient& client, const std::string& evaluator, const std::vector<JudgeRequest>& requests,
                      RankTable& table) {
  for (const auto& r : requests) {
    const Judgment j = parse_judgment(client.complete(r.prompt), r.order);
    for (const auto& name : r.order) table.set(r.sample_id, evaluator, name, j.ranks.at(name));
  }
}

}  // namespace vqlc
