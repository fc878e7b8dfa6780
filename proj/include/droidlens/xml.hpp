#pragma once

#include <expat.h>

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "droidlens/error.hpp"

namespace droidlens::xml {

struct Element {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<Element> children;

  std::optional<std::string_view> attr(std::string_view key) const {
    for (const auto& [k, v] : attributes)
      if (k == key) return std::string_view(v);
    return std::nullopt;
  }

  std::string attr_or(std::string_view key, std::string_view fallback = {}) const {
    auto v = attr(key);
    return std::string(v ? *v : fallback);
  }
};

namespace detail {

struct BuildState {
  std::unique_ptr<Element> root;
  std::vector<Element*> stack;
};

inline void on_start(void* user, const XML_Char* name, const XML_Char** atts) {
  auto* st = static_cast<BuildState*>(user);
  Element el;
  el.name = name;
  for (int i = 0; atts[i]; i += 2) el.attributes.emplace_back(atts[i], atts[i + 1]);
  if (st->stack.empty()) {
    st->root = std::make_unique<Element>(std::move(el));
    st->stack.push_back(st->root.get());
  } else {
    auto& siblings = st->stack.back()->children;
    siblings.push_back(std::move(el));
    st->stack.push_back(&siblings.back());
  }
}

inline void on_end(void* user, const XML_Char*) {
  static_cast<BuildState*>(user)->stack.pop_back();
}

}  // namespace detail

/// Parses a whole document into an element tree. Character data is dropped;
/// both uiautomator dumps and manifests carry everything in attributes.
inline Element parse(std::string_view document) {
  XML_Parser parser = XML_ParserCreate("UTF-8");
  if (!parser) throw Error(ErrorCode::MalformedDocument, "cannot create XML parser");
  detail::BuildState state;
  XML_SetUserData(parser, &state);
  XML_SetElementHandler(parser, detail::on_start, detail::on_end);
  const auto status = XML_Parse(parser, document.data(), static_cast<int>(document.size()), 1);
  if (status != XML_STATUS_OK) {
    const std::string msg = std::string(XML_ErrorString(XML_GetErrorCode(parser))) + " at line " +
                            std::to_string(XML_GetCurrentLineNumber(parser));
    XML_ParserFree(parser);
    throw Error(ErrorCode::MalformedDocument, msg);
  }
  XML_ParserFree(parser);
  if (!state.root) throw Error(ErrorCode::MalformedDocument, "empty document");
  return std::move(*state.root);
}

inline std::string escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace droidlens::xml
