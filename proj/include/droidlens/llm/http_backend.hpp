#pragma once

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "droidlens/digest.hpp"
#include "droidlens/error.hpp"
#include "droidlens/llm/gateway.hpp"
#include "droidlens/raster.hpp"

namespace droidlens::llm {

struct EndpointUrl {
  std::string scheme_host_port;  // "https://api.example.com:443"
  std::string path;              // "/v1/chat/completions"
};

inline EndpointUrl split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, "endpoint needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// Chat-completion body with multimodal content parts; images are downscaled
/// to the configured long edge and sent as base64 PNG data URLs.
inline nlohmann::json build_request_body(const ModelConfig& cfg, const Messages& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) {
    if (m.images.empty()) {
      msgs.push_back({{"role", to_string(m.role)}, {"content", m.text}});
      continue;
    }
    nlohmann::json parts = nlohmann::json::array();
    parts.push_back({{"type", "text"}, {"text", m.text}});
    for (const auto& img : m.images) {
      const Raster scaled = downscale_to_fit(*img, cfg.max_image_edge);
      const auto png = encode_png(scaled);
      parts.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:image/png;base64," + base64_encode(png)}}}});
    }
    msgs.push_back({{"role", to_string(m.role)}, {"content", parts}});
  }
  return {{"model", cfg.model},
          {"messages", msgs},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_tokens}};
}

inline Completion parse_completion_body(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::EndpointError, std::string("unparseable response: ") + e.what());
  }
  Completion c;
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) {
      c.text = content.get<std::string>();
    } else {
      for (const auto& part : content)
        if (part.value("type", "") == "text") c.text += part.value("text", "");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::EndpointError, std::string("response lacks choices[0].message.content: ") + e.what());
  }
  if (j.contains("usage")) {
    const auto& u = j["usage"];
    if (u.contains("prompt_tokens")) c.prompt_tokens = u["prompt_tokens"].get<int>();
    if (u.contains("completion_tokens")) c.completion_tokens = u["completion_tokens"].get<int>();
  }
  return c;
}

/// Live endpoint. Transport failures and 5xx retry with exponential backoff,
/// 429 honours Retry-After, other statuses fail immediately with the body.
class HttpBackend final : public ChatBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit HttpBackend(ModelConfig cfg, Sleeper sleeper = nullptr)
      : cfg_(std::move(cfg)),
        url_(split_endpoint(cfg_.endpoint)),
        sleep_(sleeper ? std::move(sleeper) : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    if (cfg_.retry_budget < 0) throw Error(ErrorCode::ConfigError, "retry budget must be >= 0");
  }

  std::string model_id() const override { return cfg_.model; }

  Completion complete(const Messages& messages) override {
    const std::string body = build_request_body(cfg_, messages).dump();
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    httplib::Client client(url_.scheme_host_port);
    client.set_connection_timeout(cfg_.timeout_s, 0);
    client.set_read_timeout(cfg_.timeout_s, 0);
    client.set_write_timeout(cfg_.timeout_s, 0);

    std::string last_problem;
    for (int attempt = 0;; ++attempt) {
      const bool can_retry = attempt < cfg_.retry_budget;
      auto res = client.Post(url_.path, headers, body, "application/json");
      if (!res) {
        last_problem = "transport: " + httplib::to_string(res.error());
        if (!can_retry) throw Error(ErrorCode::Transport, last_problem + " after " + std::to_string(attempt + 1) + " attempts");
        sleep_(backoff(attempt));
        continue;
      }
      if (res->status == 200) return parse_completion_body(res->body);
      if (res->status == 429) {
        if (!can_retry) throw Error(ErrorCode::RateLimited, "HTTP 429: " + res->body);
        sleep_(retry_after(*res, attempt));
        continue;
      }
      if (res->status >= 500) {
        if (!can_retry)
          throw Error(ErrorCode::Transport, "HTTP " + std::to_string(res->status) + " after " +
                                                std::to_string(attempt + 1) + " attempts: " + res->body);
        sleep_(backoff(attempt));
        continue;
      }
      throw Error(ErrorCode::EndpointError, "HTTP " + std::to_string(res->status) + ": " + res->body);
    }
  }

 private:
  std::chrono::milliseconds backoff(int attempt) const {
    return std::chrono::milliseconds(static_cast<long long>(cfg_.backoff_base_ms) << std::min(attempt, 16));
  }

  std::chrono::milliseconds retry_after(const httplib::Response& res, int attempt) const {
    if (res.has_header("Retry-After")) {
      try {
        return std::chrono::milliseconds(static_cast<long long>(std::stod(res.get_header_value("Retry-After")) * 1000));
      } catch (const std::exception&) {
      }
    }
    return backoff(attempt);
  }

  ModelConfig cfg_;
  EndpointUrl url_;
  Sleeper sleep_;
};

}  // namespace droidlens::llm
