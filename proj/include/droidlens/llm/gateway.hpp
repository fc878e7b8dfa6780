#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/clock.hpp"
#include "droidlens/error.hpp"
#include "droidlens/llm/message.hpp"

namespace droidlens::llm {

struct ModelConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  double temperature = 0.0;
  int max_tokens = 1024;
  int timeout_s = 120;
  int retry_budget = 3;
  std::string api_key_env = "OPENAI_API_KEY";
  int backoff_base_ms = 1000;
  int max_image_edge = 1536;
};

struct Completion {
  std::string text;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
};

/// A driver behind the completion contract: the live endpoint or a replay script.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual Completion complete(const Messages& messages) = 0;
  virtual std::string model_id() const = 0;
};

struct TranscriptEntry {
  nlohmann::json request;
  std::string response;
  std::int64_t latency_ms = 0;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
};

inline nlohmann::json to_json(const TranscriptEntry& e, std::size_t index) {
  nlohmann::json j = {{"index", index}, {"request", e.request}, {"response", e.response},
                      {"latency_ms", e.latency_ms}};
  if (e.prompt_tokens) j["prompt_tokens"] = *e.prompt_tokens;
  if (e.completion_tokens) j["completion_tokens"] = *e.completion_tokens;
  return j;
}

/// Serializes calls to one backend and keeps an append-only transcript,
/// optionally mirrored to a newline-delimited file.
class Gateway {
 public:
  explicit Gateway(std::unique_ptr<ChatBackend> backend, Clock* clock = nullptr)
      : backend_(std::move(backend)), clock_(clock ? clock : &system_clock_) {}

  void set_transcript_file(const std::filesystem::path& path) {
    std::lock_guard lock(mutex_);
    transcript_path_ = path;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream(path, std::ios::trunc);
  }

  std::string complete(const Messages& messages) { return complete_indexed(messages).first; }

  /// Also returns the transcript position of this call.
  std::pair<std::string, std::size_t> complete_indexed(const Messages& messages) {
    if (messages.empty()) throw Error(ErrorCode::InvalidArgument, "complete() needs at least one message");
    for (const auto& m : messages)
      if (m.role == Role::Assistant && !m.images.empty())
        throw Error(ErrorCode::InvalidArgument, "assistant messages cannot carry images");

    std::lock_guard lock(mutex_);
    const auto start = clock_->now_ms();
    Completion c = backend_->complete(messages);
    TranscriptEntry entry{to_transcript_json(messages), c.text, clock_->now_ms() - start,
                          c.prompt_tokens, c.completion_tokens};
    if (transcript_path_) {
      std::ofstream out(*transcript_path_, std::ios::app);
      out << to_json(entry, transcript_.size()).dump() << '\n';
    }
    if (c.prompt_tokens) prompt_tokens_ += *c.prompt_tokens;
    if (c.completion_tokens) completion_tokens_ += *c.completion_tokens;
    transcript_.push_back(std::move(entry));
    return {c.text, transcript_.size() - 1};
  }

  std::string model_id() const { return backend_->model_id(); }

  std::size_t call_count() const {
    std::lock_guard lock(mutex_);
    return transcript_.size();
  }

  std::int64_t prompt_tokens() const {
    std::lock_guard lock(mutex_);
    return prompt_tokens_;
  }

  std::int64_t completion_tokens() const {
    std::lock_guard lock(mutex_);
    return completion_tokens_;
  }

  std::vector<TranscriptEntry> transcript() const {
    std::lock_guard lock(mutex_);
    return transcript_;
  }

 private:
  std::unique_ptr<ChatBackend> backend_;
  SystemClock system_clock_;
  Clock* clock_;
  mutable std::mutex mutex_;
  std::vector<TranscriptEntry> transcript_;
  std::optional<std::filesystem::path> transcript_path_;
  std::int64_t prompt_tokens_ = 0;
  std::int64_t completion_tokens_ = 0;
};

}  // namespace droidlens::llm
