#pragma once

// Chat-completions provider over HTTP(S), with bounded retries.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "tot_repair/backend.hpp"

namespace tot_repair {

struct HttpReply {
  int status = 0;  // 0: no response (connect/read failure)
  std::string body;
  std::string error;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

// POSTs a JSON body to the full endpoint URL.
using HttpTransport = std::function<HttpReply(const std::string& url, const std::string& body, const Headers& headers)>;

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{8000};
  double jitter = 0.25;  // +/- fraction of the computed delay

  static bool is_transient(int status) {
    return status == 0 || status == 408 || status == 425 || status == 429 || status == 500 || status == 502 ||
           status == 503 || status == 504;
  }

  std::chrono::milliseconds delay_for(int attempt, std::mt19937_64& rng) const {
    double ms = static_cast<double>(base_delay.count()) * static_cast<double>(1LL << std::min(attempt, 20));
    ms = std::min(ms, static_cast<double>(max_delay.count()));
    std::uniform_real_distribution<double> spread(1.0 - jitter, 1.0 + jitter);
    return std::chrono::milliseconds(static_cast<long long>(ms * spread(rng)));
  }
};

struct HttpBackendConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  // Providers without the "n" parameter get one request per sample.
  bool supports_n = true;
  std::chrono::seconds timeout{120};
  RetryPolicy retry;
  BackendLimits limits;
};

inline void to_json(nlohmann::json& j, const HttpBackendConfig& c) {
  j = nlohmann::json{{"endpoint", c.endpoint},
                     {"model", c.model},
                     {"api_key_env", c.api_key_env},
                     {"supports_n", c.supports_n},
                     {"timeout_s", c.timeout.count()},
                     {"max_attempts", c.retry.max_attempts},
                     {"max_in_flight", c.limits.max_in_flight}};
  if (c.limits.max_total_tokens) j["max_total_tokens"] = *c.limits.max_total_tokens;
  if (c.limits.max_requests) j["max_requests"] = *c.limits.max_requests;
}

inline void from_json(const nlohmann::json& j, HttpBackendConfig& c) {
  HttpBackendConfig d;
  c.endpoint = j.value("endpoint", d.endpoint);
  c.model = j.value("model", d.model);
  c.api_key_env = j.value("api_key_env", d.api_key_env);
  c.supports_n = j.value("supports_n", d.supports_n);
  c.timeout = std::chrono::seconds(j.value("timeout_s", static_cast<long long>(d.timeout.count())));
  c.retry.max_attempts = j.value("max_attempts", d.retry.max_attempts);
  c.limits.max_in_flight = j.value("max_in_flight", d.limits.max_in_flight);
  if (j.contains("max_total_tokens")) c.limits.max_total_tokens = j.at("max_total_tokens").get<std::uint64_t>();
  if (j.contains("max_requests")) c.limits.max_requests = j.at("max_requests").get<std::uint64_t>();
}

inline HttpTransport make_httplib_transport(std::chrono::seconds timeout) {
  return [timeout](const std::string& url, const std::string& body, const Headers& headers) {
    // Split "scheme://host[:port]/path" into client base and request path.
    auto scheme_end = url.find("://");
    auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    httplib::Client client(base);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(path, h, body, "application/json");
    HttpReply reply;
    if (!res) {
      reply.error = httplib::to_string(res.error());
      return reply;
    }
    reply.status = res->status;
    reply.body = res->body;
    return reply;
  };
}

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config, HttpTransport transport = {},
                       std::function<void(std::chrono::milliseconds)> sleeper = {})
      : Backend(config.limits),
        config_(std::move(config)),
        transport_(transport ? std::move(transport) : make_httplib_transport(config_.timeout)),
        sleeper_(sleeper ? std::move(sleeper) : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
        rng_(std::random_device{}()) {
    if (config_.model.empty()) throw BackendError(BackendErrc::InvalidRequest, "model name required");
    if (config_.retry.max_attempts < 1) config_.retry.max_attempts = 1;
  }

  std::string model_label() const override { return config_.model; }
  const HttpBackendConfig& config() const { return config_; }

 protected:
  CompletionResponse do_complete(const CompletionRequest& request) override {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) throw BackendError(BackendErrc::Auth, "environment variable " + config_.api_key_env + " unset");
    Headers headers{{"Authorization", std::string("Bearer ") + key}};

    CompletionResponse out;
    int remaining = request.num_samples;
    while (remaining > 0) {
      const int n = config_.supports_n ? remaining : 1;
      auto [samples, usage] = post_once(request, n, headers);
      if (samples.empty()) throw BackendError(BackendErrc::Transport, "provider returned no choices");
      out.usage += usage;
      for (auto& s : samples) {
        if (remaining == 0) break;
        out.samples.push_back(std::move(s));
        --remaining;
      }
    }
    out.usage.samples = out.samples.size();
    return out;
  }

 private:
  std::pair<std::vector<std::string>, UsageStats> post_once(const CompletionRequest& request, int n,
                                                            const Headers& headers) {
    nlohmann::json body{{"model", config_.model},
                        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
                        {"temperature", request.temperature},
                        {"max_tokens", request.max_tokens},
                        {"n", n}};
    if (!request.stop_sequences.empty()) body["stop"] = request.stop_sequences;
    const std::string payload = body.dump();

    UsageStats usage;
    HttpReply reply;
    for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
      if (attempt > 0) sleeper_(next_delay(attempt - 1));
      ++usage.attempts;
      reply = transport_(config_.endpoint, payload, headers);
      if (reply.status == 401 || reply.status == 403)
        throw BackendError(BackendErrc::Auth, "provider rejected credentials (HTTP " + std::to_string(reply.status) + ")");
      if (reply.status >= 200 && reply.status < 300) break;
      if (!RetryPolicy::is_transient(reply.status))
        throw BackendError(BackendErrc::Transport, "HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 200));
    }
    if (reply.status < 200 || reply.status >= 300)
      throw BackendError(BackendErrc::Transport,
                         "gave up after " + std::to_string(usage.attempts) + " attempts: " +
                             (reply.status ? "HTTP " + std::to_string(reply.status) : reply.error));

    auto j = nlohmann::json::parse(reply.body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j.at("choices").is_array())
      throw BackendError(BackendErrc::Transport, "unexpected response body");
    std::vector<std::string> samples;
    for (const auto& choice : j.at("choices")) {
      const auto& content = choice.contains("message") ? choice.at("message").value("content", nlohmann::json())
                                                       : choice.value("text", nlohmann::json());
      samples.push_back(content.is_string() ? content.get<std::string>() : std::string{});
    }
    usage.requests = 1;
    if (j.contains("usage") && j.at("usage").is_object()) {
      usage.prompt_tokens = j.at("usage").value("prompt_tokens", std::uint64_t{0});
      usage.completion_tokens = j.at("usage").value("completion_tokens", std::uint64_t{0});
    } else {
      usage.prompt_tokens = count_whitespace_tokens(request.prompt);
      for (const auto& s : samples) usage.completion_tokens += count_whitespace_tokens(s);
    }
    return {std::move(samples), usage};
  }

  std::chrono::milliseconds next_delay(int attempt) {
    std::lock_guard lock(rng_mutex_);
    return config_.retry.delay_for(attempt, rng_);
  }

  HttpBackendConfig config_;
  HttpTransport transport_;
  std::function<void(std::chrono::milliseconds)> sleeper_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

}  // namespace tot_repair
