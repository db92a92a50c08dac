#pragma once

// Chat-completion client. Backends are pluggable: an HTTP backend speaking the
// common chat-completion JSON format, and an offline mock keyed by prompt hash.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace carbonopt::llm {

struct Message {
  std::string role;  // system | user | assistant
  std::string content;

  bool operator==(const Message&) const = default;
};

struct ChatRequest {
  std::string model_name = "gpt-4";
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_tokens = 1024;

  bool operator==(const ChatRequest&) const = default;
};

struct ChatResponse {
  std::string content;
  long long prompt_tokens = 0;
  long long completion_tokens = 0;
  std::string backend_id;
};

struct ClientConfig {
  std::string backend = "mock";  // mock | mock:echo | http
  std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
  std::string api_key_env_var = "OPENAI_API_KEY";
  double timeout_seconds = 60.0;
  int max_retries = 3;
  double backoff_base_seconds = 1.0;
};

/// Every problem, empty when valid.
std::vector<std::string> validate(const ChatRequest& request);
std::vector<std::string> validate(const ClientConfig& config);

nlohmann::json to_json(const ChatRequest& request);
ChatRequest request_from_json(const nlohmann::json& j);
/// Parses a chat-completion response body (first choice).
ChatResponse response_from_json(const nlohmann::json& j, std::string backend_id);

class LlmError : public std::runtime_error {
 public:
  enum class Kind { configuration, invalid_request, http_status, retries_exhausted, transport, protocol };

  LlmError(Kind kind, const std::string& message, int status = 0, std::string body = {},
           std::vector<std::string> attempts = {})
      : std::runtime_error(message), kind_(kind), status_(status), body_(std::move(body)), attempts_(std::move(attempts)) {}

  Kind kind() const { return kind_; }
  int status() const { return status_; }
  const std::string& body() const { return body_; }
  const std::vector<std::string>& attempts() const { return attempts_; }

 private:
  Kind kind_;
  int status_;
  std::string body_;
  std::vector<std::string> attempts_;
};

// --- transport ------------------------------------------------------------

struct HttpResult {
  enum class Outcome { ok, timeout, connection_failed };
  Outcome outcome = Outcome::ok;
  int status = 0;
  std::string body;
  std::string error;  // transport-level description when outcome != ok
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResult post(const std::string& url, const std::map<std::string, std::string>& headers,
                          const std::string& body, double timeout_seconds) = 0;
};

/// cpp-httplib client; https URLs go through OpenSSL.
class HttplibTransport : public Transport {
 public:
  HttpResult post(const std::string& url, const std::map<std::string, std::string>& headers,
                  const std::string& body, double timeout_seconds) override;
};

/// Records every call and replays scripted results in order (the last one
/// repeats once the script runs out).
class RecordingTransport : public Transport {
 public:
  struct Call {
    std::string url;
    std::map<std::string, std::string> headers;
    std::string body;
    double timeout_seconds;
  };

  explicit RecordingTransport(std::vector<HttpResult> script = {});
  HttpResult post(const std::string& url, const std::map<std::string, std::string>& headers,
                  const std::string& body, double timeout_seconds) override;

  std::vector<Call> calls() const;

 private:
  mutable std::mutex mutex_;
  std::vector<HttpResult> script_;
  std::vector<Call> calls_;
};

// --- backends -------------------------------------------------------------

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  virtual std::string id() const = 0;
};

using Sleeper = std::function<void(double seconds)>;
using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;

std::optional<std::string> getenv_lookup(const std::string& name);
void sleep_seconds(double seconds);

/// Retry delay before attempt `attempt + 1`: base * 2^attempt.
double backoff_delay(double base_seconds, int attempt);

class HttpBackend : public Backend {
 public:
  HttpBackend(ClientConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper = sleep_seconds,
              EnvLookup env = getenv_lookup);

  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return "http:" + config_.endpoint_url; }

 private:
  ClientConfig config_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  EnvLookup env_;
};

/// FNV-1a over the exact bytes of every message (role and content).
std::string prompt_hash(const ChatRequest& request);

class MockBackend : public Backend {
 public:
  enum class Mode { table, echo };

  explicit MockBackend(std::map<std::string, std::string> table = {}, Mode mode = Mode::table);

  /// Each *.json file holds {"prompt_hash": ..., "response": ...} or
  /// {"request": <chat request>, "response": ...}.
  static std::map<std::string, std::string> load_fixtures(const std::filesystem::path& dir);

  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return mode_ == Mode::echo ? "mock:echo" : "mock"; }

  static std::string fallback_text(const std::string& hash);

 private:
  std::map<std::string, std::string> table_;
  Mode mode_;
};

/// "mock" ignores the transport entirely; "http" sends through it.
std::unique_ptr<Backend> make_backend(const ClientConfig& config, std::shared_ptr<Transport> transport,
                                      std::map<std::string, std::string> fixtures = {});

/// Replaces every occurrence of `secret` in `text`.
std::string scrub(std::string text, const std::string& secret);

}  // namespace carbonopt::llm
