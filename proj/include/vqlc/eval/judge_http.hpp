#pragma once

// Live chat-completion transport for the judge. Kept apart from judge.hpp so
// only the CLI pulls in the HTTP stack.

#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vqlc/error.hpp"
#include "vqlc/eval/judge.hpp"

namespace vqlc {

struct JudgeEndpoint {
  std::string url;  // full endpoint URL, e.g. https://host/v1/chat/completions
  std::string api_key;
  std::string model;

  /// Reads JUDGE_API_URL, JUDGE_API_KEY and JUDGE_MODEL.
  static JudgeEndpoint from_env() {
    const auto get = [](const char* name) -> std::string {
      const char* v = std::getenv(name);
      if (!v || !*v) throw ValidationError(std::string("judge: environment variable ") + name + " is not set");
      return v;
    };
    return {get("JUDGE_API_URL"), get("JUDGE_API_KEY"), get("JUDGE_MODEL")};
  }
};

class HttpJudgeClient : public JudgeClient {
 public:
  /// Every exchange is appended to `log_path` in the replay fixture format.
  HttpJudgeClient(JudgeEndpoint ep, std::string log_path) : ep_(std::move(ep)), log_path_(std::move(log_path)) {
    const std::size_t scheme = ep_.url.find("://");
    detail::require(scheme != std::string::npos, "judge: JUDGE_API_URL must include a scheme");
    const std::size_t slash = ep_.url.find('/', scheme + 3);
    base_ = ep_.url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : ep_.url.substr(slash);
  }

  std::string complete(const std::string& prompt) override {
    const nlohmann::json body = chat_request_body(ep_.model, prompt);
    httplib::Client cli(base_);
    cli.set_read_timeout(120, 0);
    const httplib::Headers headers = {{"Authorization", "Bearer " + ep_.api_key}};
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw RuntimeError("judge: HTTP request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      throw RuntimeError("judge: endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw RuntimeError(std::string("judge: endpoint returned non-JSON body: ") + e.what());
    }
    std::ofstream log(log_path_, std::ios::app);
    log << nlohmann::json{{"request", body}, {"response", reply}}.dump() << "\n";
    return chat_response_text(reply);
  }

 private:
  JudgeEndpoint ep_;
  std::string log_path_;
  std::string base_;
  std::string path_;
};

}  // namespace vqlc
