#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/raster.hpp"

namespace droidlens::llm {

enum class Role { System, User, Assistant };

constexpr std::string_view to_string(Role r) noexcept {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

using ImagePtr = std::shared_ptr<const Raster>;

struct ChatMessage {
  Role role = Role::User;
  std::string text;
  std::vector<ImagePtr> images;  // never set on assistant messages

  static ChatMessage system(std::string text) { return {Role::System, std::move(text), {}}; }
  static ChatMessage user(std::string text, std::vector<ImagePtr> images = {}) {
    return {Role::User, std::move(text), std::move(images)};
  }
};

using Messages = std::vector<ChatMessage>;

/// All message texts joined by newlines; what replay expectations match against.
inline std::string concatenated_text(const Messages& msgs) {
  std::string out;
  for (const auto& m : msgs) {
    if (!out.empty()) out += '\n';
    out += m.text;
  }
  return out;
}

/// Stable plain-text rendering with image placeholders; used for golden files
/// and transcripts.
inline std::string render_plain(const Messages& msgs) {
  std::string out;
  for (const auto& m : msgs) {
    out += "=== ";
    out += to_string(m.role);
    out += " ===\n";
    out += m.text;
    if (!m.text.empty() && m.text.back() != '\n') out += '\n';
    for (std::size_t i = 0; i < m.images.size(); ++i) {
      const auto& img = *m.images[i];
      out += "[image " + std::to_string(i + 1) + ": " + std::to_string(img.width()) + "x" +
             std::to_string(img.height()) + " sha256=" + raster_digest(img) + "]\n";
    }
  }
  return out;
}

/// Transcript form: text kept verbatim, images reduced to size + digest.
inline nlohmann::json to_transcript_json(const Messages& msgs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : msgs) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& img : m.images)
      images.push_back({{"width", img->width()}, {"height", img->height()}, {"sha256", raster_digest(*img)}});
    arr.push_back({{"role", to_string(m.role)}, {"text", m.text}, {"images", images}});
  }
  return arr;
}

}  // namespace droidlens::llm
