#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "biosep/remote_backend.hpp"

using biosep::ErrorCode;
using biosep::LabelSet;
using biosep::RemoteBackend;
using biosep::RemoteConfig;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const biosep::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no biosep::Error thrown";
  return ErrorCode::IoError;
}

// Local stand-in for an LLM endpoint. The handler decides the reply body.
class FakeEndpoint {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  explicit FakeEndpoint(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/complete", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex_);
        last_body_ = req.body;
        last_auth_ = req.get_header_value("Authorization");
      }
      handler_(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/complete"; }
  std::string last_body() {
    std::lock_guard lock(mutex_);
    return last_body_;
  }
  std::string last_auth() {
    std::lock_guard lock(mutex_);
    return last_auth_;
  }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mutex_;
  std::string last_body_;
  std::string last_auth_;
};

void reply_json(httplib::Response& res, const nlohmann::json& body) { res.set_content(body.dump(), "application/json"); }

RemoteConfig config_for(std::string url, double timeout_s = 30.0) {
  RemoteConfig c;
  c.url = std::move(url);
  c.timeout_s = timeout_s;
  return c;
}

biosep::Prompt sample_prompt() {
  biosep::FeatureVector f;
  f.source_label = biosep::SourceLabel::heart;
  return biosep::format_prompt(f, LabelSet::defaults());
}

}  // namespace

TEST(ParseUrl, SplitsHostAndPath) {
  const auto u = biosep::parse_url("http://localhost:8080/v1/complete");
  EXPECT_EQ(u.scheme_host_port, "http://localhost:8080");
  EXPECT_EQ(u.path, "/v1/complete");
  EXPECT_EQ(biosep::parse_url("https://example.org").path, "/");
  EXPECT_EQ(code_of([] { biosep::parse_url("ftp://x/y"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { biosep::parse_url("localhost:80"); }), ErrorCode::InvalidConfig);
}

TEST(RemoteBackend, SendsPromptAndParsesFreeText) {
  FakeEndpoint endpoint([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"text", "This suggests Atrial Fibrillation."}});
  });
  RemoteConfig config = config_for(endpoint.url(), 5.0);
  config.max_tokens = 64;
  config.token = "secret-token";
  RemoteBackend backend(config);
  const auto prompt = sample_prompt();
  const auto r = biosep::interpret(prompt, backend, LabelSet::defaults());
  EXPECT_EQ(r.prediction, "atrial fibrillation");
  EXPECT_EQ(r.backend, biosep::BackendKind::remote);
  EXPECT_FALSE(r.scores.has_value());

  const auto sent = nlohmann::json::parse(endpoint.last_body());
  EXPECT_EQ(sent.at("prompt"), prompt.text);
  EXPECT_EQ(sent.at("max_tokens"), 64);
  EXPECT_EQ(endpoint.last_auth(), "Bearer secret-token");
}

TEST(RemoteBackend, TokenFromEnvironment) {
  FakeEndpoint endpoint([](const httplib::Request&, httplib::Response& res) { reply_json(res, {{"text", "normal"}}); });
  ::setenv(biosep::kLlmTokenEnv, "env-token", 1);
  RemoteBackend backend(config_for(endpoint.url()));
  ::unsetenv(biosep::kLlmTokenEnv);
  backend.complete(sample_prompt());
  EXPECT_EQ(endpoint.last_auth(), "Bearer env-token");
}

TEST(RemoteBackend, NoTokenNoHeader) {
  FakeEndpoint endpoint([](const httplib::Request&, httplib::Response& res) { reply_json(res, {{"text", "normal"}}); });
  ::unsetenv(biosep::kLlmTokenEnv);
  RemoteBackend backend(config_for(endpoint.url()));
  backend.complete(sample_prompt());
  EXPECT_EQ(endpoint.last_auth(), "");
}

TEST(RemoteBackend, ScoreListReplyFillsScores) {
  FakeEndpoint endpoint([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"text", "wheezing: 0.7\nnormal: 0.2"}});
  });
  RemoteBackend backend(config_for(endpoint.url()));
  const auto r = biosep::interpret(sample_prompt(), backend, LabelSet::defaults());
  EXPECT_EQ(r.prediction, "wheezing");
  ASSERT_TRUE(r.scores.has_value());
  EXPECT_EQ(r.scores->size(), 2u);
}

TEST(RemoteBackend, MalformedBodyIsUnrecognized) {
  FakeEndpoint endpoint([](const httplib::Request&, httplib::Response& res) {
    res.set_content("normal, definitely normal", "text/plain");
  });
  RemoteBackend backend(config_for(endpoint.url()));
  const auto r = biosep::interpret(sample_prompt(), backend, LabelSet::defaults());
  EXPECT_EQ(r.prediction, "unrecognized");
  EXPECT_EQ(r.raw_response, "normal, definitely normal");
}

TEST(RemoteBackend, HttpErrorIsUnreachable) {
  FakeEndpoint endpoint([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  RemoteBackend backend(config_for(endpoint.url()));
  EXPECT_EQ(code_of([&] { backend.complete(sample_prompt()); }), ErrorCode::BackendUnreachable);
}

TEST(RemoteBackend, ClosedPortIsUnreachable) {
  RemoteBackend backend(config_for("http://127.0.0.1:1/v1/complete", 2.0));
  EXPECT_EQ(code_of([&] { backend.complete(sample_prompt()); }), ErrorCode::BackendUnreachable);
}

TEST(RemoteBackend, TimeoutIsUnreachable) {
  FakeEndpoint endpoint([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    reply_json(res, {{"text", "normal"}});
  });
  RemoteBackend backend(config_for(endpoint.url(), 0.3));
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { backend.complete(sample_prompt()); }), ErrorCode::BackendUnreachable);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(1400));
}

TEST(RemoteBackend, InvalidConfig) {
  EXPECT_EQ(code_of([] { RemoteBackend(config_for("http://127.0.0.1:1/", 0.0)); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { RemoteBackend(config_for("not a url")); }), ErrorCode::InvalidConfig);
}
