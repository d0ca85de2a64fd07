#pragma once

#include <cstdlib>
#include <optional>
#include <regex>
#include <string>
#include <utility>

#include "biosep/error.hpp"
#include "biosep/interpret.hpp"
#include "httplib.h"
#include "json.hpp"

namespace biosep {

inline constexpr const char* kLlmTokenEnv = "BIOSEP_LLM_TOKEN";

struct RemoteConfig {
  std::string url;  // http(s)://host[:port][/path]
  double timeout_s = 30.0;
  int max_tokens = 256;
  std::optional<std::string> token;  // falls back to $BIOSEP_LLM_TOKEN
};

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  static const std::regex pattern(R"(^(https?://[^/?#\s]+)(/[^\s]*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) {
    throw Error(ErrorCode::InvalidConfig, "LLM URL must look like http://host[:port]/path: " + url);
  }
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

/// Provider-agnostic HTTP backend.
///   request:  POST {"prompt": <text>, "max_tokens": <int>}
///   reply:    {"text": <string>}
/// Transport failures, timeouts and non-2xx statuses raise BackendUnreachable;
/// a 2xx body without a string "text" field is passed on as malformed.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig config) : config_(std::move(config)), url_(parse_url(config_.url)) {
    if (!config_.token) {
      if (const char* env = std::getenv(kLlmTokenEnv); env != nullptr && *env != '\0') config_.token = env;
    }
    if (!(config_.timeout_s > 0.0)) throw Error(ErrorCode::InvalidConfig, "timeout must be > 0");
  }

  BackendKind kind() const override { return BackendKind::remote; }

  BackendReply complete(const Prompt& prompt) override {
    httplib::Client client(url_.scheme_host_port);
    const auto seconds = static_cast<time_t>(config_.timeout_s);
    const auto micros = static_cast<time_t>((config_.timeout_s - static_cast<double>(seconds)) * 1e6);
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);

    httplib::Headers headers;
    if (config_.token) headers.emplace("Authorization", "Bearer " + *config_.token);
    const nlohmann::json body{{"prompt", prompt.text}, {"max_tokens", config_.max_tokens}};

    auto result = client.Post(url_.path, headers, body.dump(), "application/json");
    if (!result) {
      throw Error(ErrorCode::BackendUnreachable,
                  url_.scheme_host_port + ": " + httplib::to_string(result.error()));
    }
    if (result->status < 200 || result->status >= 300) {
      throw Error(ErrorCode::BackendUnreachable,
                  url_.scheme_host_port + " answered HTTP " + std::to_string(result->status));
    }
    const auto reply = nlohmann::json::parse(result->body, nullptr, /*allow_exceptions=*/false);
    if (reply.is_object() && reply.contains("text") && reply["text"].is_string()) {
      return {reply["text"].get<std::string>(), true};
    }
    return {result->body, false};
  }

 private:
  RemoteConfig config_;
  ParsedUrl url_;
};

}  // namespace biosep
