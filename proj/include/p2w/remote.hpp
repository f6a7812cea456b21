// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "p2w/errors.hpp"
#include "p2w/policy.hpp"

namespace p2w {

// Process-wide cap on concurrent remote requests so parallel episodes do not
// trample endpoint rate limits.
class InflightLimiter {
 public:
  static InflightLimiter& instance() {
    static InflightLimiter limiter;
    return limiter;
  }

  void set_limit(int limit) {
    std::lock_guard lock(mu_);
    limit_ = limit < 1 ? 1 : limit;
    cv_.notify_all();
  }

  class Guard {
   public:
    explicit Guard(InflightLimiter& l) : l_(l) {
      std::unique_lock lock(l_.mu_);
      l_.cv_.wait(lock, [&] { return l_.active_ < l_.limit_; });
      ++l_.active_;
    }
    ~Guard() {
      std::lock_guard lock(l_.mu_);
      --l_.active_;
      l_.cv_.notify_one();
    }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

   private:
    InflightLimiter& l_;
  };

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int limit_ = 2;
  int active_ = 0;
};

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host:port
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("llm: endpoint_url needs a scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// Chat-completion client. One request per control step: the description part
// of the prompt rides as the system message, the history and current
// observation as the user message. Temperature and token limits come from
// the config; usage counts are passed through when the endpoint reports them.
class RemotePolicy : public Policy {
 public:
  explicit RemotePolicy(LlmConfig config) : config_(std::move(config)) {
    config_.validate();
    InflightLimiter::instance().set_limit(config_.in_flight_cap);
  }

  PolicyResponse decide(const PromptBundle& prompt) override {
    const auto t0 = std::chrono::steady_clock::now();
    const auto url = detail::split_url(config_.endpoint_url);

    nlohmann::json body;
    body["model"] = config_.model_name;
    body["temperature"] = config_.temperature;
    if (config_.max_output_tokens > 0) body["max_tokens"] = config_.max_output_tokens;
    nlohmann::json messages = nlohmann::json::array();
    const std::string system_text = prompt.text.substr(0, prompt.description_bytes);
    const std::string user_text = prompt.text.substr(prompt.description_bytes);
    if (!system_text.empty())
      messages.push_back({{"role", "system"}, {"content", system_text}});
    messages.push_back({{"role", "user"}, {"content", user_text}});
    body["messages"] = std::move(messages);
    const std::string payload = body.dump();

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        const double backoff = config_.retry_backoff_s * static_cast<double>(1 << (attempt - 1));
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      }
      auto outcome = try_once(url, payload, &last_error);
      if (outcome) {
        outcome->latency_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return *outcome;
      }
    }
    throw PolicyUnavailable("transport",
                            "endpoint unavailable after " + std::to_string(config_.max_retries + 1) +
                                " attempts: " + last_error);
  }

  std::string kind() const override { return "remote"; }

 private:
  std::optional<PolicyResponse> try_once(const detail::SplitUrl& url, const std::string& payload,
                                         std::string* last_error) {
    InflightLimiter::Guard guard(InflightLimiter::instance());
    httplib::Client client(url.base);
    const auto timeout = std::chrono::duration<double>(config_.request_timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));

    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
      if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    auto res = client.Post(url.path, headers, payload, "application/json");
    if (!res) {
      *last_error = httplib::to_string(res.error());
      return std::nullopt;
    }
    if (res->status < 200 || res->status >= 300) {
      *last_error = "http status " + std::to_string(res->status);
      return std::nullopt;
    }

    nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty()) {
      *last_error = "malformed completion payload";
      return std::nullopt;
    }
    PolicyResponse out;
    try {
      out.raw_text = reply["choices"][0]["message"]["content"].get<std::string>();
    } catch (const nlohmann::json::exception&) {
      *last_error = "completion payload missing message content";
      return std::nullopt;
    }
    if (reply.contains("usage")) {
      const auto& usage = reply["usage"];
      TokenUsage tu;
      tu.input = usage.value("prompt_tokens", 0L);
      tu.output = usage.value("completion_tokens", 0L);
      out.token_usage = tu;
    }
    return out;
  }

  LlmConfig config_;
};

}  // namespace p2w
