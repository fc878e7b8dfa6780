#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "droidlens/digest.hpp"
#include "droidlens/error.hpp"
#include "droidlens/text.hpp"
#include "droidlens/xml.hpp"

#include <nlohmann/json.hpp>

namespace droidlens {

struct Bounds {
  int left = 0, top = 0, right = 0, bottom = 0;

  int width() const noexcept { return right - left; }
  int height() const noexcept { return bottom - top; }
  bool zero_area() const noexcept { return left == right || top == bottom; }
  int center_x() const noexcept { return left + width() / 2; }
  int center_y() const noexcept { return top + height() / 2; }

  friend bool operator==(const Bounds&, const Bounds&) = default;
};

inline std::string to_string(const Bounds& b) {
  return "[" + std::to_string(b.left) + "," + std::to_string(b.top) + "][" +
         std::to_string(b.right) + "," + std::to_string(b.bottom) + "]";
}

/// Decodes the "[l,t][r,b]" form; nullopt if the text does not match or the
/// box is inverted or negative.
inline std::optional<Bounds> parse_bounds(std::string_view s) {
  std::array<long, 4> v{};
  std::size_t pos = 0;
  auto expect = [&](char c) {
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  };
  auto number = [&](long& out) {
    const std::size_t start = pos;
    while (pos < s.size() && text::is_digit(s[pos])) ++pos;
    if (pos == start || pos - start > 9) return false;
    out = std::stol(std::string(s.substr(start, pos - start)));
    return true;
  };
  if (!(expect('[') && number(v[0]) && expect(',') && number(v[1]) && expect(']') && expect('[') &&
        number(v[2]) && expect(',') && number(v[3]) && expect(']') && pos == s.size()))
    return std::nullopt;
  Bounds b{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]),
           static_cast<int>(v[3])};
  if (b.left > b.right || b.top > b.bottom) return std::nullopt;
  return b;
}

struct Widget {
  int node_index = 0;
  std::string text;
  std::string hint_text;
  std::string resource_id;
  std::string class_name;
  bool clickable = false;
  bool long_clickable = false;
  bool checkable = false;
  bool scrollable = false;
  Bounds bounds;

  bool is_edit_text() const { return text::ends_with(class_name, "EditText"); }

  friend bool operator==(const Widget&, const Widget&) = default;
};

struct GuiPage {
  std::string activity_name;
  std::vector<Widget> widgets;
  std::string source_digest;
  std::string screenshot_ref;

  const Widget* find(int node_index) const {
    for (const auto& w : widgets)
      if (w.node_index == node_index) return &w;
    return nullptr;
  }

  friend bool operator==(const GuiPage&, const GuiPage&) = default;
};

struct AppInfo {
  std::string app_name;
  std::string package_id;
  std::set<std::string> activity_names;
  std::vector<std::string> warnings;

  friend bool operator==(const AppInfo&, const AppInfo&) = default;
};

// ---------------------------------------------------------------------------
// Actions

enum class ActionKind { Click, Input, LongClick, Check, Scroll };

inline constexpr std::array<ActionKind, 5> kAllActionKinds{
    ActionKind::Click, ActionKind::Input, ActionKind::LongClick, ActionKind::Check,
    ActionKind::Scroll};

/// Annotation priority when a widget supports several kinds.
inline constexpr std::array<ActionKind, 5> kKindPriority{
    ActionKind::Input, ActionKind::Click, ActionKind::LongClick, ActionKind::Check,
    ActionKind::Scroll};

constexpr std::string_view to_string(ActionKind k) noexcept {
  switch (k) {
    case ActionKind::Click: return "click";
    case ActionKind::Input: return "input";
    case ActionKind::LongClick: return "long-click";
    case ActionKind::Check: return "check";
    case ActionKind::Scroll: return "scroll";
  }
  return "click";
}

/// Accepts "long-click", "long click", "longclick" and case variants.
inline std::optional<ActionKind> parse_action_kind(std::string_view s) {
  std::string key;
  for (char c : text::lower(text::trim(s)))
    if (text::is_alnum(c)) key.push_back(c);
  if (key == "click" || key == "tap") return ActionKind::Click;
  if (key == "input" || key == "type") return ActionKind::Input;
  if (key == "longclick" || key == "longpress") return ActionKind::LongClick;
  if (key == "check" || key == "toggle") return ActionKind::Check;
  if (key == "scroll" || key == "swipe") return ActionKind::Scroll;
  return std::nullopt;
}

enum class ScrollDirection { Up, Down, Left, Right };

constexpr std::string_view to_string(ScrollDirection d) noexcept {
  switch (d) {
    case ScrollDirection::Up: return "up";
    case ScrollDirection::Down: return "down";
    case ScrollDirection::Left: return "left";
    case ScrollDirection::Right: return "right";
  }
  return "down";
}

inline std::optional<ScrollDirection> parse_scroll_direction(std::string_view s) {
  const std::string key = text::lower(text::trim(s));
  if (key == "up") return ScrollDirection::Up;
  if (key == "down") return ScrollDirection::Down;
  if (key == "left") return ScrollDirection::Left;
  if (key == "right") return ScrollDirection::Right;
  return std::nullopt;
}

/// Small set over the five kinds.
class ActionKindSet {
 public:
  ActionKindSet() = default;
  ActionKindSet(std::initializer_list<ActionKind> kinds) {
    for (auto k : kinds) insert(k);
  }

  void insert(ActionKind k) noexcept { bits_ |= bit(k); }
  bool contains(ActionKind k) const noexcept { return (bits_ & bit(k)) != 0; }
  bool empty() const noexcept { return bits_ == 0; }

  /// Highest-priority member; precondition: non-empty.
  ActionKind primary() const noexcept {
    for (auto k : kKindPriority)
      if (contains(k)) return k;
    return ActionKind::Click;
  }

  friend bool operator==(const ActionKindSet&, const ActionKindSet&) = default;

 private:
  static constexpr std::uint8_t bit(ActionKind k) noexcept {
    return static_cast<std::uint8_t>(1u << static_cast<unsigned>(k));
  }
  std::uint8_t bits_ = 0;
};

struct Action {
  ActionKind kind = ActionKind::Click;
  int target_label = 1;
  std::string target_text;
  std::optional<std::string> input_text;
  std::optional<ScrollDirection> scroll_direction;

  static Action make(ActionKind kind, int label, std::string text,
                     std::optional<std::string> input = std::nullopt,
                     std::optional<ScrollDirection> dir = std::nullopt) {
    Action a{kind, label, std::move(text), std::nullopt, std::nullopt};
    if (kind == ActionKind::Input) a.input_text = input.value_or("");
    if (kind == ActionKind::Scroll) a.scroll_direction = dir.value_or(ScrollDirection::Down);
    return a;
  }

  /// Optional fields present exactly per kind, label positive.
  bool valid() const noexcept {
    return target_label >= 1 && (input_text.has_value() == (kind == ActionKind::Input)) &&
           (scroll_direction.has_value() == (kind == ActionKind::Scroll));
  }

  friend bool operator==(const Action&, const Action&) = default;
};

inline std::string describe(const Action& a) {
  std::string s = std::string(to_string(a.kind)) + " widget " + std::to_string(a.target_label);
  if (!a.target_text.empty()) s += " \"" + a.target_text + "\"";
  if (a.input_text) s += " with \"" + *a.input_text + "\"";
  if (a.scroll_direction) s += " " + std::string(to_string(*a.scroll_direction));
  return s;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline bool flag(const xml::Element& el, std::string_view key) {
  const auto v = el.attr(key);
  return v && *v == "true";
}

inline void collect_nodes(const xml::Element& el, std::vector<Widget>& out) {
  if (el.name == "node") {
    Widget w;
    w.node_index = static_cast<int>(out.size());
    w.text = el.attr_or("text");
    w.hint_text = el.attr("hint") ? el.attr_or("hint") : el.attr_or("hint-text");
    w.resource_id = el.attr_or("resource-id");
    w.class_name = el.attr_or("class");
    w.clickable = flag(el, "clickable");
    w.long_clickable = flag(el, "long-clickable");
    w.checkable = flag(el, "checkable");
    w.scrollable = flag(el, "scrollable") || flag(el, "scroll");
    if (const auto b = el.attr("bounds")) {
      const auto parsed = parse_bounds(*b);
      if (!parsed)
        throw Error(ErrorCode::MalformedBounds, "node " + std::to_string(w.node_index) +
                                                    ": bad bounds \"" + std::string(*b) + "\"");
      w.bounds = *parsed;
    }
    out.push_back(std::move(w));
  }
  for (const auto& child : el.children) collect_nodes(child, out);
}

}  // namespace detail

/// One Widget per `node` element in document (pre-)order.
inline GuiPage parse_view_hierarchy(std::string_view document, std::string activity_name = {}) {
  xml::Element root;
  try {
    root = xml::parse(document);
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedDocument, std::string("view hierarchy: ") + e.what());
  }
  GuiPage page;
  page.activity_name = std::move(activity_name);
  detail::collect_nodes(root, page.widgets);
  page.source_digest = sha256_hex(document);
  return page;
}

/// Expands ".Name" and bare "Name" against the package.
inline std::string expand_activity_name(std::string_view package, std::string_view name) {
  if (text::starts_with(name, ".")) return std::string(package) + std::string(name);
  if (name.find('.') == std::string_view::npos) return std::string(package) + "." + std::string(name);
  return std::string(name);
}

inline AppInfo parse_manifest(std::string_view document) {
  const xml::Element root = xml::parse(document);
  AppInfo info;
  const auto pkg = root.attr("package");
  if (!pkg || pkg->empty()) throw Error(ErrorCode::MissingPackage, "manifest has no package attribute");
  info.package_id = std::string(*pkg);

  for (const auto& child : root.children) {
    if (child.name != "application") continue;
    const std::string label = child.attr_or("android:label");
    if (!label.empty() && label.front() != '@') info.app_name = label;
    for (const auto& comp : child.children) {
      if (comp.name != "activity") continue;
      const auto name = comp.attr("android:name");
      if (!name || name->empty()) {
        info.warnings.push_back("activity element without android:name");
        continue;
      }
      info.activity_names.insert(expand_activity_name(info.package_id, *name));
    }
  }
  if (info.app_name.empty()) {
    const auto dot = info.package_id.rfind('.');
    info.app_name = dot == std::string::npos ? info.package_id : info.package_id.substr(dot + 1);
    info.warnings.push_back("manifest has no literal application label; using \"" + info.app_name + "\"");
  }
  if (info.activity_names.empty()) info.warnings.push_back("manifest declares no activities");
  return info;
}

struct ActionableWidget {
  Widget widget;
  ActionKindSet kinds;

  friend bool operator==(const ActionableWidget&, const ActionableWidget&) = default;
};

inline ActionKindSet action_kinds(const Widget& w) {
  ActionKindSet kinds;
  if (w.clickable) kinds.insert(ActionKind::Click);
  if (w.is_edit_text()) kinds.insert(ActionKind::Input);
  if (w.long_clickable) kinds.insert(ActionKind::LongClick);
  if (w.checkable) kinds.insert(ActionKind::Check);
  if (w.scrollable) kinds.insert(ActionKind::Scroll);
  return kinds;
}

/// Widgets with at least one action kind and non-zero area, in node order.
inline std::vector<ActionableWidget> actionable_widgets(const GuiPage& page) {
  std::vector<ActionableWidget> out;
  for (const auto& w : page.widgets) {
    if (w.bounds.zero_area()) continue;
    auto kinds = action_kinds(w);
    if (!kinds.empty()) out.push_back({w, kinds});
  }
  return out;
}

/// Display text for prompts and alignment: text, falling back to the hint.
inline std::string widget_label_text(const Widget& w) {
  if (!w.text.empty()) return w.text;
  if (!w.hint_text.empty()) return w.hint_text;
  return {};
}

// ---------------------------------------------------------------------------
// Canonical JSON form (session page records)

inline void to_json(nlohmann::json& j, const Bounds& b) { j = {b.left, b.top, b.right, b.bottom}; }

inline void from_json(const nlohmann::json& j, Bounds& b) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::SchemaViolation, "bounds must be [l,t,r,b]");
  b = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

inline void to_json(nlohmann::json& j, const Widget& w) {
  j = {{"node_index", w.node_index}, {"text", w.text},
       {"hint_text", w.hint_text},   {"resource_id", w.resource_id},
       {"class_name", w.class_name}, {"clickable", w.clickable},
       {"long_clickable", w.long_clickable}, {"checkable", w.checkable},
       {"scrollable", w.scrollable}, {"bounds", w.bounds}};
}

inline void from_json(const nlohmann::json& j, Widget& w) {
  w.node_index = j.at("node_index").get<int>();
  w.text = j.value("text", "");
  w.hint_text = j.value("hint_text", "");
  w.resource_id = j.value("resource_id", "");
  w.class_name = j.value("class_name", "");
  w.clickable = j.value("clickable", false);
  w.long_clickable = j.value("long_clickable", false);
  w.checkable = j.value("checkable", false);
  w.scrollable = j.value("scrollable", false);
  w.bounds = j.at("bounds").get<Bounds>();
}

inline void to_json(nlohmann::json& j, const GuiPage& p) {
  j = {{"activity_name", p.activity_name}, {"source_digest", p.source_digest},
       {"screenshot_ref", p.screenshot_ref}, {"widgets", p.widgets}};
}

inline void from_json(const nlohmann::json& j, GuiPage& p) {
  p.activity_name = j.at("activity_name").get<std::string>();
  p.source_digest = j.at("source_digest").get<std::string>();
  p.screenshot_ref = j.value("screenshot_ref", "");
  p.widgets = j.at("widgets").get<std::vector<Widget>>();
}

inline void to_json(nlohmann::json& j, const AppInfo& a) {
  j = {{"app_name", a.app_name}, {"package_id", a.package_id},
       {"activity_names", a.activity_names}, {"warnings", a.warnings}};
}

inline void from_json(const nlohmann::json& j, AppInfo& a) {
  a.app_name = j.at("app_name").get<std::string>();
  a.package_id = j.at("package_id").get<std::string>();
  a.activity_names = j.at("activity_names").get<std::set<std::string>>();
  a.warnings = j.value("warnings", std::vector<std::string>{});
}

inline void to_json(nlohmann::json& j, const Action& a) {
  j = {{"kind", to_string(a.kind)}, {"target_label", a.target_label}, {"target_text", a.target_text}};
  if (a.input_text) j["input_text"] = *a.input_text;
  if (a.scroll_direction) j["scroll_direction"] = to_string(*a.scroll_direction);
}

inline void from_json(const nlohmann::json& j, Action& a) {
  const auto kind = parse_action_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::SchemaViolation, "unknown action kind " + j.at("kind").dump());
  a.kind = *kind;
  a.target_label = j.at("target_label").get<int>();
  a.target_text = j.value("target_text", "");
  a.input_text.reset();
  a.scroll_direction.reset();
  if (j.contains("input_text")) a.input_text = j["input_text"].get<std::string>();
  if (j.contains("scroll_direction")) {
    a.scroll_direction = parse_scroll_direction(j["scroll_direction"].get<std::string>());
    if (!a.scroll_direction) throw Error(ErrorCode::SchemaViolation, "unknown scroll direction");
  }
  if (!a.valid()) throw Error(ErrorCode::SchemaViolation, "action fields inconsistent with kind");
}

}  // namespace droidlens
