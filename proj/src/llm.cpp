#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "carbonopt/llm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "carbonopt/hash.hpp"

namespace carbonopt::llm {

using nlohmann::json;

namespace {

bool valid_role(const std::string& r) { return r == "system" || r == "user" || r == "assistant"; }

std::size_t proxy_tokens(std::size_t chars) { return (chars + 3) / 4; }

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

std::vector<std::string> validate(const ChatRequest& request) {
  std::vector<std::string> errors;
  if (request.model_name.empty()) errors.push_back("model_name is empty");
  if (request.messages.empty()) errors.push_back("messages is empty");
  for (std::size_t i = 0; i < request.messages.size(); ++i) {
    const Message& m = request.messages[i];
    const std::string where = "messages[" + std::to_string(i) + "]";
    if (!valid_role(m.role)) errors.push_back(where + ".role '" + m.role + "' is not system, user or assistant");
    if (m.role == "system" && i != 0) errors.push_back(where + " is a system message but not the first message");
    if (m.content.empty()) errors.push_back(where + ".content is empty");
  }
  if (!(request.temperature >= 0.0)) errors.push_back("temperature must be >= 0");
  if (request.max_tokens <= 0) errors.push_back("max_tokens must be > 0");
  return errors;
}

std::vector<std::string> validate(const ClientConfig& config) {
  std::vector<std::string> errors;
  if (config.backend != "mock" && config.backend != "mock:echo" && config.backend != "http") {
    errors.push_back("backend '" + config.backend + "' is not mock, mock:echo or http");
  }
  if (config.backend == "http") {
    if (!std::regex_match(config.endpoint_url, std::regex(R"(https?://[^/\s]+(/\S*)?)"))) {
      errors.push_back("endpoint_url '" + config.endpoint_url + "' is not an http(s) URL");
    }
    if (config.api_key_env_var.empty()) errors.push_back("api_key_env_var is empty");
  }
  if (!(config.timeout_seconds > 0.0)) errors.push_back("timeout_seconds must be > 0");
  if (config.max_retries < 0) errors.push_back("max_retries must be >= 0");
  if (!(config.backoff_base_seconds >= 0.0)) errors.push_back("backoff_base_seconds must be >= 0");
  return errors;
}

json to_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", request.model_name},
          {"messages", std::move(messages)},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens}};
}

ChatRequest request_from_json(const json& j) {
  try {
    ChatRequest r;
    r.model_name = j.at("model").get<std::string>();
    for (const auto& m : j.at("messages")) {
      r.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    }
    r.temperature = j.value("temperature", 0.0);
    r.max_tokens = j.value("max_tokens", 1024);
    return r;
  } catch (const json::exception& e) {
    throw LlmError(LlmError::Kind::protocol, std::string("malformed chat request: ") + e.what());
  }
}

ChatResponse response_from_json(const json& j, std::string backend_id) {
  try {
    ChatResponse r;
    r.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage")) {
      r.prompt_tokens = j["usage"].value("prompt_tokens", 0LL);
      r.completion_tokens = j["usage"].value("completion_tokens", 0LL);
    }
    r.backend_id = std::move(backend_id);
    return r;
  } catch (const json::exception& e) {
    throw LlmError(LlmError::Kind::protocol, std::string("malformed chat completion response: ") + e.what());
  }
}

// --- transport ------------------------------------------------------------

HttpResult HttplibTransport::post(const std::string& url, const std::map<std::string, std::string>& headers,
                                  const std::string& body, double timeout_seconds) {
  static const std::regex pattern(R"((https?://[^/]+)(/.*)?)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) {
    return {HttpResult::Outcome::connection_failed, 0, {}, "unsupported URL"};
  }
  const std::string path = m[2].matched ? m[2].str() : "/";
  httplib::Client client(m[1].str());
  const auto secs = static_cast<time_t>(timeout_seconds);
  const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers h;
  std::string content_type = "application/json";
  for (const auto& [k, v] : headers) {
    if (k == "Content-Type") {
      content_type = v;
    } else {
      h.emplace(k, v);
    }
  }
  auto res = client.Post(path, h, body, content_type);
  if (!res) {
    const httplib::Error err = res.error();
    const bool timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                         err == httplib::Error::Write;
    return {timeout ? HttpResult::Outcome::timeout : HttpResult::Outcome::connection_failed, 0, {},
            httplib::to_string(err)};
  }
  return {HttpResult::Outcome::ok, res->status, res->body, {}};
}

RecordingTransport::RecordingTransport(std::vector<HttpResult> script) : script_(std::move(script)) {}

HttpResult RecordingTransport::post(const std::string& url, const std::map<std::string, std::string>& headers,
                                    const std::string& body, double timeout_seconds) {
  std::lock_guard lock(mutex_);
  calls_.push_back({url, headers, body, timeout_seconds});
  if (script_.empty()) return {HttpResult::Outcome::connection_failed, 0, {}, "no scripted response"};
  const std::size_t i = std::min(calls_.size(), script_.size()) - 1;
  return script_[i];
}

std::vector<RecordingTransport::Call> RecordingTransport::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

// --- http backend -----------------------------------------------------------

std::optional<std::string> getenv_lookup(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

void sleep_seconds(double seconds) { std::this_thread::sleep_for(std::chrono::duration<double>(seconds)); }

double backoff_delay(double base_seconds, int attempt) { return base_seconds * std::ldexp(1.0, attempt); }

std::string scrub(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  static constexpr std::string_view mask = "[redacted]";
  for (std::size_t pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos + mask.size())) {
    text.replace(pos, secret.size(), mask);
  }
  return text;
}

HttpBackend::HttpBackend(ClientConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper, EnvLookup env)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)), env_(std::move(env)) {
  if (const auto errors = validate(config_); !errors.empty()) {
    throw LlmError(LlmError::Kind::configuration, "invalid client config: " + join(errors, "; "));
  }
  if (!transport_) throw LlmError(LlmError::Kind::configuration, "http backend needs a transport");
}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
  const std::optional<std::string> key = env_(config_.api_key_env_var);
  if (!key) {
    throw LlmError(LlmError::Kind::configuration,
                   "API key environment variable " + config_.api_key_env_var + " is not set");
  }
  if (const auto errors = validate(request); !errors.empty()) {
    throw LlmError(LlmError::Kind::invalid_request, "invalid chat request: " + join(errors, "; "));
  }

  const std::string body = to_json(request).dump();
  const std::map<std::string, std::string> headers{{"Authorization", "Bearer " + *key},
                                                   {"Content-Type", "application/json"}};
  std::vector<std::string> log;
  for (int attempt = 0;; ++attempt) {
    const HttpResult res = transport_->post(config_.endpoint_url, headers, body, config_.timeout_seconds);
    std::string what;
    if (res.outcome == HttpResult::Outcome::timeout) {
      what = "timeout (" + res.error + ")";
    } else if (res.outcome == HttpResult::Outcome::connection_failed) {
      throw LlmError(LlmError::Kind::transport,
                     scrub("cannot reach " + config_.endpoint_url + ": " + res.error, *key));
    } else if (res.status == 429 || res.status >= 500) {
      what = "HTTP " + std::to_string(res.status);
    } else if (res.status < 200 || res.status >= 300) {
      throw LlmError(LlmError::Kind::http_status,
                     scrub("chat completion failed with HTTP " + std::to_string(res.status) + ": " + res.body, *key),
                     res.status, scrub(res.body, *key));
    } else {
      try {
        return response_from_json(json::parse(res.body), id());
      } catch (const json::exception& e) {
        throw LlmError(LlmError::Kind::protocol, scrub(std::string("response is not JSON: ") + e.what(), *key));
      }
    }

    log.push_back(scrub("attempt " + std::to_string(attempt + 1) + ": " + what, *key));
    if (attempt >= config_.max_retries) {
      throw LlmError(LlmError::Kind::retries_exhausted,
                     "chat completion failed after " + std::to_string(attempt + 1) + " attempts: " + join(log, "; "),
                     res.status, scrub(res.body, *key), log);
    }
    sleeper_(backoff_delay(config_.backoff_base_seconds, attempt));
  }
}

// --- mock backend -----------------------------------------------------------

std::string prompt_hash(const ChatRequest& request) {
  Fnv1a h;
  for (const auto& m : request.messages) {
    h.update(m.role).update(std::string_view("\0", 1)).update(m.content).update(std::string_view("\0", 1));
  }
  return h.hex();
}

MockBackend::MockBackend(std::map<std::string, std::string> table, Mode mode) : table_(std::move(table)), mode_(mode) {}

std::map<std::string, std::string> MockBackend::load_fixtures(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw LlmError(LlmError::Kind::configuration, "fixture directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::map<std::string, std::string> table;
  for (const auto& f : files) {
    std::ifstream in(f);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw LlmError(LlmError::Kind::configuration, "malformed fixture " + f.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("response")) continue;  // wire fixtures for the stub server
    std::string hash;
    if (j.contains("prompt_hash")) {
      hash = j["prompt_hash"].get<std::string>();
    } else if (j.contains("request")) {
      hash = prompt_hash(request_from_json(j["request"]));
    } else {
      throw LlmError(LlmError::Kind::configuration, "fixture " + f.string() + " has neither prompt_hash nor request");
    }
    table[hash] = j["response"].get<std::string>();
  }
  return table;
}

std::string MockBackend::fallback_text(const std::string& hash) {
  return "[mock backend] no canned response for prompt hash " + hash;
}

ChatResponse MockBackend::complete(const ChatRequest& request) {
  if (const auto errors = validate(request); !errors.empty()) {
    throw LlmError(LlmError::Kind::invalid_request, "invalid chat request: " + join(errors, "; "));
  }
  ChatResponse r;
  if (mode_ == Mode::echo) {
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
      if (it->role == "user") {
        r.content = it->content;
        break;
      }
    }
  } else {
    const std::string hash = prompt_hash(request);
    const auto it = table_.find(hash);
    r.content = it != table_.end() ? it->second : fallback_text(hash);
  }
  std::size_t prompt_chars = 0;
  for (const auto& m : request.messages) prompt_chars += m.content.size();
  r.prompt_tokens = static_cast<long long>(proxy_tokens(prompt_chars));
  r.completion_tokens = static_cast<long long>(proxy_tokens(r.content.size()));
  r.backend_id = id();
  return r;
}

std::unique_ptr<Backend> make_backend(const ClientConfig& config, std::shared_ptr<Transport> transport,
                                      std::map<std::string, std::string> fixtures) {
  if (config.backend == "mock") return std::make_unique<MockBackend>(std::move(fixtures));
  if (config.backend == "mock:echo") return std::make_unique<MockBackend>(std::map<std::string, std::string>{}, MockBackend::Mode::echo);
  if (config.backend == "http") return std::make_unique<HttpBackend>(config, std::move(transport));
  throw LlmError(LlmError::Kind::configuration, "unknown backend '" + config.backend + "'");
}

}  // namespace carbonopt::llm
