#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/error.hpp"
#include "droidlens/fsutil.hpp"
#include "droidlens/llm/gateway.hpp"
#include "droidlens/text.hpp"

namespace droidlens::llm {

struct ReplayScript {
  std::vector<std::string> responses;
  /// i-th request must contain expectations[i]; empty strings skip the check.
  std::vector<std::string> expectations;
};

/// Returns scripted responses in order.
class ReplayBackend final : public ChatBackend {
 public:
  explicit ReplayBackend(ReplayScript script, std::string model = "replay")
      : script_(std::move(script)), model_(std::move(model)) {}

  Completion complete(const Messages& messages) override {
    const std::size_t i = next_++;
    if (i >= script_.responses.size())
      throw Error(ErrorCode::ScriptExhausted, "replay script has " + std::to_string(script_.responses.size()) +
                                                  " responses; request " + std::to_string(i + 1) + " has none");
    if (i < script_.expectations.size() && !script_.expectations[i].empty()) {
      const std::string actual = concatenated_text(messages);
      if (actual.find(script_.expectations[i]) == std::string::npos)
        throw Error(ErrorCode::ExpectationMismatch,
                    "request " + std::to_string(i + 1) + " should contain \"" + script_.expectations[i] +
                        "\"; actual prompt starts: \"" + actual.substr(0, 200) + "\"");
    }
    return {script_.responses[i], std::nullopt, std::nullopt};
  }

  std::string model_id() const override { return model_; }

  std::size_t consumed() const noexcept { return next_; }

 private:
  ReplayScript script_;
  std::string model_;
  std::size_t next_ = 0;
};

/// Accepts either {"responses": [...], "expectations": [...]} or a recorded
/// transcript (one JSON object per line with a "response" field).
inline ReplayScript load_replay_script(const std::filesystem::path& path) {
  const std::string content = fs::read_text(path);
  ReplayScript script;
  try {
    const std::string trimmed = text::trim(content);
    if (!trimmed.empty() && trimmed.front() == '{' && text::ends_with(path.string(), ".json")) {
      const auto j = nlohmann::json::parse(trimmed);
      for (const auto& r : j.at("responses")) script.responses.push_back(r.get<std::string>());
      if (j.contains("expectations"))
        for (const auto& e : j.at("expectations")) script.expectations.push_back(e.is_null() ? "" : e.get<std::string>());
      return script;
    }
    std::size_t start = 0;
    while (start < content.size()) {
      std::size_t end = content.find('\n', start);
      if (end == std::string::npos) end = content.size();
      const std::string line = text::trim(std::string_view(content).substr(start, end - start));
      if (!line.empty()) script.responses.push_back(nlohmann::json::parse(line).at("response").get<std::string>());
      start = end + 1;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
  }
  return script;
}

/// Responses of a recorded transcript, in call order.
inline ReplayScript script_from_transcript(const std::vector<TranscriptEntry>& transcript) {
  ReplayScript s;
  for (const auto& e : transcript) s.responses.push_back(e.response);
  return s;
}

}  // namespace droidlens::llm
