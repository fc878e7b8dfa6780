#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/clock.hpp"
#include "droidlens/device/driver.hpp"
#include "droidlens/error.hpp"
#include "droidlens/font.hpp"
#include "droidlens/fsutil.hpp"
#include "droidlens/gui_model.hpp"
#include "droidlens/raster.hpp"
#include "droidlens/text.hpp"
#include "droidlens/xml.hpp"

namespace droidlens::device {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Fault catalog

enum class FaultKind {
  DisplayTextMismatch,  // intra-page display defects
  DisplayOverlap,
  DisplayMissingContent,
  DisplayGarbledText,
  DataOperationFailure,  // inter-page families
  MediaControlNoResponse,
  NumericalCalculationError,
  SettingConfigurationFailure,
  NavigationLinkError,
};

inline constexpr FaultKind kAllFaults[] = {
    FaultKind::DisplayTextMismatch,        FaultKind::DisplayOverlap,
    FaultKind::DisplayMissingContent,      FaultKind::DisplayGarbledText,
    FaultKind::DataOperationFailure,       FaultKind::MediaControlNoResponse,
    FaultKind::NumericalCalculationError,  FaultKind::SettingConfigurationFailure,
    FaultKind::NavigationLinkError,
};

inline const char* to_string(FaultKind k) {
  switch (k) {
    case FaultKind::DisplayTextMismatch: return "display_text_mismatch";
    case FaultKind::DisplayOverlap: return "display_overlap";
    case FaultKind::DisplayMissingContent: return "display_missing_content";
    case FaultKind::DisplayGarbledText: return "display_garbled_text";
    case FaultKind::DataOperationFailure: return "data_operation_failure";
    case FaultKind::MediaControlNoResponse: return "media_control_no_response";
    case FaultKind::NumericalCalculationError: return "numerical_calculation_error";
    case FaultKind::SettingConfigurationFailure: return "setting_configuration_failure";
    case FaultKind::NavigationLinkError: return "navigation_link_error";
  }
  return "?";
}

inline bool is_intra_page(FaultKind k) {
  return k == FaultKind::DisplayTextMismatch || k == FaultKind::DisplayOverlap ||
         k == FaultKind::DisplayMissingContent || k == FaultKind::DisplayGarbledText;
}

inline std::optional<FaultKind> parse_fault_kind(std::string_view s) {
  for (auto k : kAllFaults)
    if (s == to_string(k)) return k;
  return std::nullopt;
}

using FaultSet = std::set<FaultKind>;

// ---------------------------------------------------------------------------
// Data expressions: ${...} inside strings.
//   expr := term (('+'|'-') term)*
//   term := number | 'string' | name | func '(' expr ')'
//   func := sum | len | last | not | str
//   names: data keys, plus `item` and `index` inside repeated widgets.

struct ExprScope {
  const json& data;
  const json* item = nullptr;
  int index = -1;
};

namespace detail {

inline double as_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
  if (v.is_string()) {
    const std::string s = text::trim(v.get<std::string>());
    if (s.empty()) return 0.0;
    char* end = nullptr;
    const double d = std::strtod(s.c_str(), &end);
    if (end && *end == '\0') return d;
  }
  if (v.is_null()) return 0.0;
  throw Error(ErrorCode::UnknownState, "value " + v.dump() + " is not numeric");
}

inline std::string format_value(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_null()) return "";
  if (v.is_number()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 1e15) return std::to_string(static_cast<long long>(d));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", d);
    return buf;
  }
  return v.dump();
}

class ExprParser {
 public:
  ExprParser(std::string_view src, const ExprScope& scope) : s_(src), scope_(scope) {}

  json parse() {
    json v = expr();
    skip();
    if (pos_ != s_.size()) fail("trailing input");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorCode::UnknownState, "expression \"" + std::string(s_) + "\": " + why);
  }
  void skip() {
    while (pos_ < s_.size() && text::is_space(s_[pos_])) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  json expr() {
    json v = term();
    while (true) {
      if (eat('+')) {
        json r = term();
        if (v.is_string() && !r.is_number()) v = v.get<std::string>() + format_value(r);
        else if (v.is_string() || r.is_string()) {
          // numeric strings add as numbers
          try {
            v = as_number(v) + as_number(r);
          } catch (const Error&) {
            v = format_value(v) + format_value(r);
          }
        } else {
          v = as_number(v) + as_number(r);
        }
      } else if (eat('-')) {
        v = as_number(v) - as_number(term());
      } else {
        return v;
      }
    }
  }

  json term() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    const char c = s_[pos_];
    if (text::is_digit(c)) {
      const std::size_t start = pos_;
      while (pos_ < s_.size() && (text::is_digit(s_[pos_]) || s_[pos_] == '.')) ++pos_;
      return std::stod(std::string(s_.substr(start, pos_ - start)));
    }
    if (c == '\'') {
      const auto end = s_.find('\'', pos_ + 1);
      if (end == std::string_view::npos) fail("unterminated string");
      std::string lit(s_.substr(pos_ + 1, end - pos_ - 1));
      pos_ = end + 1;
      return lit;
    }
    if (eat('(')) {
      json v = expr();
      if (!eat(')')) fail("missing ')'");
      return v;
    }
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (text::is_alnum(s_[pos_]) || s_[pos_] == '_')) ++pos_;
    if (start == pos_) fail(std::string("unexpected '") + c + "'");
    const std::string name(s_.substr(start, pos_ - start));
    if (eat('(')) {
      json arg = expr();
      if (!eat(')')) fail("missing ')' after " + name);
      return call(name, arg);
    }
    if (name == "item") {
      if (!scope_.item) fail("item outside a repeated widget");
      return *scope_.item;
    }
    if (name == "index") {
      if (scope_.index < 0) fail("index outside a repeated widget");
      return scope_.index;
    }
    if (name == "true") return true;
    if (name == "false") return false;
    if (!scope_.data.contains(name)) fail("unknown data key '" + name + "'");
    return scope_.data.at(name);
  }

  json call(const std::string& name, const json& arg) {
    if (name == "sum") {
      if (!arg.is_array()) fail("sum() needs a list");
      double total = 0;
      for (const auto& x : arg) total += as_number(x);
      return total;
    }
    if (name == "len") {
      if (!arg.is_array() && !arg.is_string()) fail("len() needs a list or string");
      return arg.is_array() ? arg.size() : arg.get<std::string>().size();
    }
    if (name == "last") {
      if (!arg.is_array()) fail("last() needs a list");
      return arg.empty() ? json("") : arg.back();
    }
    if (name == "not") return !(arg.is_boolean() ? arg.get<bool>() : as_number(arg) != 0.0);
    if (name == "str") return format_value(arg);
    fail("unknown function " + name);
  }

  std::string_view s_;
  const ExprScope& scope_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline json evaluate_expr(std::string_view expr, const ExprScope& scope) { return detail::ExprParser(expr, scope).parse(); }

/// A string that is exactly one ${...} yields the raw value; otherwise every
/// ${...} is formatted into the surrounding text.
inline json evaluate_template(const std::string& tpl, const ExprScope& scope) {
  if (text::starts_with(tpl, "${") && tpl.size() >= 3 && tpl.back() == '}' && tpl.find("${", 2) == std::string::npos)
    return evaluate_expr(std::string_view(tpl).substr(2, tpl.size() - 3), scope);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = tpl.find("${", pos);
    if (open == std::string::npos) {
      out.append(tpl, pos);
      break;
    }
    const auto close = tpl.find('}', open);
    if (close == std::string::npos) throw Error(ErrorCode::UnknownState, "unterminated ${ in \"" + tpl + "\"");
    out.append(tpl, pos, open - pos);
    out += detail::format_value(evaluate_expr(std::string_view(tpl).substr(open + 2, close - open - 2), scope));
    pos = close + 1;
  }
  return out;
}

inline std::string render_text(const std::string& tpl, const ExprScope& scope) {
  return detail::format_value(evaluate_template(tpl, scope));
}

inline bool truthy(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) return v.get<std::string>() == "true";
  if (v.is_number()) return v.get<double>() != 0.0;
  return false;
}

// ---------------------------------------------------------------------------
// Scenario model

/// What a switched-on fault changes. Widgets use text/bounds/hidden/garble,
/// transitions use effects/to.
struct FaultVariant {
  FaultKind kind{};
  std::optional<std::string> text;
  std::optional<Bounds> bounds;
  bool hidden = false;
  bool garble = false;
  std::optional<json> effects;
  std::optional<std::string> to;
};

struct SimWidget {
  std::string id;
  std::string class_name = "android.widget.TextView";
  std::string text;
  std::string hint;
  std::string checked;  // template, rendered as a flag
  bool clickable = false, long_clickable = false, checkable = false, scrollable = false;
  Bounds bounds;
  std::string repeat;  // data key of a list
  int dx = 0, dy = 0;
  int max_repeat = 50;
  std::vector<FaultVariant> faults;
};

struct SimState {
  std::string name;
  std::string activity;  // as declared (".Main" or full)
  std::vector<SimWidget> widgets;
};

struct SimTransition {
  std::string state, widget;
  ActionKind action = ActionKind::Click;
  std::string to;  // empty: stay; "$exit": leave the app
  json effects = json::array();
  std::vector<FaultVariant> faults;
};

struct ProbeStep {
  std::string widget;
  ActionKind action = ActionKind::Click;
  std::string input;
};

struct SimCheck {
  std::string widget;
  std::optional<std::string> text;
  std::optional<std::string> checked;
  std::optional<bool> exists;
  std::optional<std::string> state;
  std::vector<std::string> no_overlap;
};

struct SimAssertion {
  std::string name;
  std::vector<ProbeStep> probe;
  std::vector<SimCheck> checks;
};

struct Scenario {
  std::string package;
  std::string app_name;
  int width = 540, height = 960;
  std::string start;
  json data = json::object();
  std::set<std::string> transient;  // keys reset on restart
  std::map<std::string, SimState> states;
  std::vector<SimTransition> transitions;
  std::vector<SimAssertion> assertions;
  FaultSet faults;  // switched on unless the caller overrides
  int action_ms = 1500;
};

namespace detail {

[[noreturn]] inline void corrupt(const std::string& why) { throw Error(ErrorCode::UnknownState, "scenario: " + why); }

inline Bounds bounds_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) corrupt(where + ": bounds must be [left, top, right, bottom]");
  Bounds b{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (b.left > b.right || b.top > b.bottom) corrupt(where + ": inverted bounds");
  return b;
}

inline ActionKind action_of(const json& j, const std::string& where) {
  const auto k = parse_action_kind(j.get<std::string>());
  if (!k) corrupt(where + ": unknown action " + j.dump());
  return *k;
}

inline std::vector<FaultVariant> faults_of(const json& j, const std::string& where) {
  std::vector<FaultVariant> out;
  if (!j.contains("fault")) return out;
  const json& f = j.at("fault");
  const json list = f.is_array() ? f : json::array({f});
  for (const auto& v : list) {
    FaultVariant fv;
    const auto k = parse_fault_kind(v.value("kind", ""));
    if (!k) corrupt(where + ": unknown fault kind " + v.value("kind", std::string("(none)")));
    fv.kind = *k;
    if (v.contains("text")) fv.text = v.at("text").get<std::string>();
    if (v.contains("bounds")) fv.bounds = bounds_of(v.at("bounds"), where);
    fv.hidden = v.value("hidden", false);
    fv.garble = v.value("garble", false);
    if (v.contains("effects")) fv.effects = v.at("effects");
    if (v.contains("to")) fv.to = v.at("to").get<std::string>();
    out.push_back(std::move(fv));
  }
  return out;
}

}  // namespace detail

inline Scenario scenario_from_json(const json& j) {
  using detail::corrupt;
  Scenario s;
  try {
    s.package = j.at("package").get<std::string>();
    s.app_name = j.value("app_name", s.package);
    if (j.contains("screen")) {
      s.width = j.at("screen").at("width").get<int>();
      s.height = j.at("screen").at("height").get<int>();
    }
    s.start = j.at("start").get<std::string>();
    s.data = j.value("data", json::object());
    if (!s.data.is_object()) corrupt("data must be an object");
    for (const auto& k : j.value("transient", json::array())) s.transient.insert(k.get<std::string>());
    s.action_ms = j.value("action_ms", 1500);
    for (const auto& [name, st] : j.at("states").items()) {
      SimState state;
      state.name = name;
      state.activity = st.at("activity").get<std::string>();
      std::set<std::string> ids;
      for (const auto& w : st.at("widgets")) {
        SimWidget sw;
        sw.id = w.at("id").get<std::string>();
        const std::string where = "state " + name + " widget " + sw.id;
        if (!ids.insert(sw.id).second) corrupt(where + ": duplicate id");
        sw.class_name = w.value("class", sw.class_name);
        sw.text = w.value("text", "");
        sw.hint = w.value("hint", "");
        sw.checked = w.value("checked", "");
        sw.clickable = w.value("clickable", false);
        sw.long_clickable = w.value("long_clickable", false);
        sw.checkable = w.value("checkable", false);
        sw.scrollable = w.value("scrollable", false);
        sw.bounds = detail::bounds_of(w.at("bounds"), where);
        sw.repeat = w.value("repeat", "");
        if (w.contains("offset")) {
          sw.dx = w.at("offset").at(0).get<int>();
          sw.dy = w.at("offset").at(1).get<int>();
        }
        sw.max_repeat = w.value("max", 50);
        sw.faults = detail::faults_of(w, where);
        state.widgets.push_back(std::move(sw));
      }
      s.states.emplace(name, std::move(state));
    }
    for (const auto& t : j.value("transitions", json::array())) {
      SimTransition tr;
      tr.state = t.at("state").get<std::string>();
      tr.widget = t.at("widget").get<std::string>();
      tr.action = detail::action_of(t.at("action"), "transition " + tr.state + "/" + tr.widget);
      tr.to = t.value("to", "");
      tr.effects = t.value("effects", json::array());
      tr.faults = detail::faults_of(t, "transition " + tr.state + "/" + tr.widget);
      s.transitions.push_back(std::move(tr));
    }
    for (const auto& a : j.value("assertions", json::array())) {
      SimAssertion sa;
      sa.name = a.at("name").get<std::string>();
      for (const auto& p : a.value("probe", json::array())) {
        ProbeStep ps;
        ps.widget = p.at("widget").get<std::string>();
        ps.action = detail::action_of(p.value("action", json("click")), "assertion " + sa.name);
        ps.input = p.value("input", "");
        sa.probe.push_back(std::move(ps));
      }
      for (const auto& c : a.at("checks")) {
        SimCheck sc;
        sc.widget = c.value("widget", "");
        if (c.contains("text")) sc.text = c.at("text").get<std::string>();
        if (c.contains("checked")) sc.checked = c.at("checked").get<std::string>();
        if (c.contains("exists")) sc.exists = c.at("exists").get<bool>();
        if (c.contains("state")) sc.state = c.at("state").get<std::string>();
        for (const auto& w : c.value("no_overlap", json::array())) sc.no_overlap.push_back(w.get<std::string>());
        sa.checks.push_back(std::move(sc));
      }
      s.assertions.push_back(std::move(sa));
    }
    for (const auto& f : j.value("faults", json::array())) {
      const auto k = parse_fault_kind(f.get<std::string>());
      if (!k) corrupt("unknown fault kind " + f.dump());
      s.faults.insert(*k);
    }
  } catch (const json::exception& e) {
    corrupt(e.what());
  }

  const auto known = [&](const std::string& st) { return st.empty() || st == "$exit" || s.states.count(st) > 0; };
  if (!s.states.count(s.start)) corrupt("start state '" + s.start + "' is not declared");
  for (const auto& t : s.transitions) {
    if (!s.states.count(t.state)) corrupt("transition from undeclared state '" + t.state + "'");
    if (!known(t.to)) corrupt("transition to undeclared state '" + t.to + "'");
    for (const auto& f : t.faults)
      if (f.to && !known(*f.to)) corrupt("fault target '" + *f.to + "' is not declared");
    const auto& ws = s.states.at(t.state).widgets;
    if (std::none_of(ws.begin(), ws.end(), [&](const SimWidget& w) { return w.id == t.widget; }))
      corrupt("transition on unknown widget " + t.state + "/" + t.widget);
  }
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::ConfigError, "scenario not found: " + path.string());
  json j;
  try {
    j = json::parse(fs::read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::UnknownState, "scenario " + path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

/// A widget after data rendering and display faults.
struct RenderedWidget {
  std::string id;
  std::string class_name;
  std::string text;
  std::string hint;
  bool checked = false;
  bool clickable = false, long_clickable = false, checkable = false, scrollable = false;
  Bounds bounds;
};

inline std::string garble(std::string_view s) {
  static constexpr char kNoise[] = "#?%&@";
  std::string out;
  std::size_t i = 0;
  for (char c : s) out += text::is_alnum(c) ? kNoise[(i++ + static_cast<unsigned char>(c)) % 5] : c;
  return out;
}

// ---------------------------------------------------------------------------
// Driver

/// Deterministic app model. Two data models evolve side by side: `intended`
/// applies the declared effects, `actual` applies fault variants when their
/// fault is switched on. Everything observable is rendered from `actual`.
class SimDriver final : public DeviceDriver {
 public:
  explicit SimDriver(Scenario scenario, std::optional<FaultSet> faults = std::nullopt, ManualClock* clock = nullptr)
      : sc_(std::move(scenario)), faults_(faults.value_or(sc_.faults)), clock_(clock) {
    reset_all();
  }

  Outcome launch(const std::string& package) override {
    if (package != sc_.package) return Outcome::failed("package " + package + " is not installed in the simulator");
    launched_ = true;
    state_ = sc_.start;
    return Outcome::ok();
  }

  Raster capture_screenshot() override {
    Raster img(sc_.width, sc_.height, {255, 255, 255});
    if (state_ == kExited) return img;
    fill_rect(img, 0, 0, sc_.width, 24, {60, 60, 60});
    for (const auto& w : render()) paint_widget(img, w);
    return img;
  }

  std::string dump_hierarchy() override {
    std::string out = "<?xml version='1.0' encoding='UTF-8' standalone='yes' ?><hierarchy rotation=\"0\">";
    const std::string pkg = state_ == kExited ? "com.android.launcher" : sc_.package;
    out += "<node index=\"0\" text=\"\" resource-id=\"\" class=\"android.widget.FrameLayout\" package=\"" + xml::escape(pkg) +
           "\" content-desc=\"\" checkable=\"false\" checked=\"false\" clickable=\"false\" enabled=\"true\" "
           "focusable=\"false\" focused=\"false\" scrollable=\"false\" long-clickable=\"false\" password=\"false\" "
           "selected=\"false\" bounds=\"" + to_string(Bounds{0, 0, sc_.width, sc_.height}) + "\">";
    if (state_ != kExited) {
      int i = 0;
      for (const auto& w : render()) {
        const auto b = [](bool v) { return v ? "\"true\"" : "\"false\""; };
        out += "<node index=\"" + std::to_string(i++) + "\" text=\"" + xml::escape(w.text) + "\" resource-id=\"" +
               xml::escape(sc_.package + ":id/" + base_id(w.id)) + "\" class=\"" + xml::escape(w.class_name) +
               "\" package=\"" + xml::escape(sc_.package) + "\" content-desc=\"\" checkable=" + b(w.checkable) +
               " checked=" + b(w.checked) + " clickable=" + b(w.clickable) + " enabled=\"true\" focusable=" +
               b(w.clickable || w.checkable) + " focused=\"false\" scrollable=" + b(w.scrollable) +
               " long-clickable=" + b(w.long_clickable) + " password=\"false\" selected=\"false\"";
        if (!w.hint.empty()) out += " hint=\"" + xml::escape(w.hint) + "\"";
        out += " bounds=\"" + to_string(w.bounds) + "\" />";
      }
    }
    out += "</node></hierarchy>";
    return out;
  }

  std::string current_activity() override {
    if (state_ == kExited) return "com.android.launcher.Launcher";
    return expand_activity_name(sc_.package, sc_.states.at(state_).activity);
  }

  Outcome perform(const Action& action, const Bounds& bounds) override {
    tick();
    if (state_ == kExited) return Outcome::app_exited("app is not in the foreground");
    const auto widgets = render();
    const RenderedWidget* hit = nullptr;
    for (const auto& w : widgets)
      if (w.bounds == bounds) hit = &w;
    if (!hit) {
      for (const auto& w : widgets) {
        const bool inside = bounds.center_x() >= w.bounds.left && bounds.center_x() <= w.bounds.right &&
                            bounds.center_y() >= w.bounds.top && bounds.center_y() <= w.bounds.bottom;
        if (inside && (!hit || area(w.bounds) <= area(hit->bounds))) hit = &w;
      }
    }
    if (!hit) return Outcome::ok();  // tap on empty space
    return apply(hit->id, action.kind, action.input_text.value_or(""));
  }

  Outcome restart() override {
    tick();
    for (const auto& k : sc_.transient) {
      if (initial_.contains(k)) {
        actual_[k] = initial_[k];
        intended_[k] = initial_[k];
      }
    }
    state_ = sc_.start;
    return Outcome::ok();
  }

  /// Acts on a widget by scenario id (repeated instances: "id#2").
  Outcome perform_on(const std::string& widget_id, ActionKind kind, const std::string& input = {}) {
    tick();
    if (state_ == kExited) return Outcome::app_exited();
    const auto widgets = render();
    if (std::none_of(widgets.begin(), widgets.end(), [&](const RenderedWidget& w) { return w.id == widget_id; }))
      return Outcome::failed("widget " + widget_id + " is not on state " + state_);
    return apply(widget_id, kind, input);
  }

  /// Current screen after data rendering and display faults.
  std::vector<RenderedWidget> render() const {
    std::vector<RenderedWidget> out;
    if (state_ == kExited) return out;
    for (const auto& w : sc_.states.at(state_).widgets) {
      if (w.repeat.empty()) {
        if (auto r = render_one(w, w.id, ExprScope{actual_}, 0)) out.push_back(std::move(*r));
        continue;
      }
      const json& list = actual_.contains(w.repeat) ? actual_.at(w.repeat) : json::array();
      if (!list.is_array()) throw Error(ErrorCode::UnknownState, "repeat key '" + w.repeat + "' is not a list");
      for (int i = 0; i < static_cast<int>(list.size()) && i < w.max_repeat; ++i) {
        const json& item = list[static_cast<std::size_t>(i)];
        if (auto r = render_one(w, w.id + "#" + std::to_string(i), ExprScope{actual_, &item, i}, i)) out.push_back(std::move(*r));
      }
    }
    return out;
  }

  /// Renders a template against the intended (fault-free) data model.
  std::string intended_text(const std::string& tpl) const { return render_text(tpl, ExprScope{intended_}); }
  bool intended_flag(const std::string& tpl) const { return truthy(evaluate_template(tpl, ExprScope{intended_})); }

  const std::string& state() const noexcept { return state_; }
  const json& actual_data() const noexcept { return actual_; }
  const json& intended_data() const noexcept { return intended_; }
  const Scenario& scenario() const noexcept { return sc_; }
  const FaultSet& faults() const noexcept { return faults_; }

  static constexpr const char* kExited = "$exited";

 private:
  static long area(const Bounds& b) { return static_cast<long>(b.width()) * b.height(); }
  static std::string base_id(const std::string& id) {
    const auto hash = id.find('#');
    return hash == std::string::npos ? id : id.substr(0, hash) + "_" + id.substr(hash + 1);
  }

  void tick() {
    if (clock_) clock_->advance(sc_.action_ms);
  }

  void reset_all() {
    actual_ = sc_.data;
    intended_ = sc_.data;
    initial_ = sc_.data;
    state_ = sc_.start;
  }

  const FaultVariant* active(const std::vector<FaultVariant>& fs) const {
    for (const auto& f : fs)
      if (faults_.count(f.kind)) return &f;
    return nullptr;
  }

  std::optional<RenderedWidget> render_one(const SimWidget& w, std::string id, const ExprScope& scope, int i) const {
    RenderedWidget r;
    r.id = std::move(id);
    r.class_name = w.class_name;
    r.hint = w.hint;
    r.clickable = w.clickable;
    r.long_clickable = w.long_clickable;
    r.checkable = w.checkable;
    r.scrollable = w.scrollable;
    r.bounds = w.bounds;
    r.bounds.left += w.dx * i;
    r.bounds.right += w.dx * i;
    r.bounds.top += w.dy * i;
    r.bounds.bottom += w.dy * i;
    std::string tpl = w.text;
    const FaultVariant* f = active(w.faults);
    if (f && f->hidden) return std::nullopt;
    if (f && f->text) tpl = *f->text;
    if (f && f->bounds) r.bounds = *f->bounds;
    r.text = render_text(tpl, scope);
    if (f && f->garble) r.text = garble(r.text);
    if (!w.checked.empty()) r.checked = truthy(evaluate_template(w.checked, scope));
    return r;
  }

  static void apply_effects(const json& effects, json& data, const std::string& input) {
    if (!effects.is_array()) throw Error(ErrorCode::UnknownState, "effects must be a list");
    for (const auto& e : effects) {
      const std::string op = e.value("op", "");
      const std::string key = e.value("key", "");
      if (key.empty()) throw Error(ErrorCode::UnknownState, "effect without key");
      const auto value = [&]() -> json {
        const json v = e.value("value", json(nullptr));
        if (v.is_string() && v.get<std::string>() == "$input") return input;
        if (v.is_string()) return evaluate_template(v.get<std::string>(), ExprScope{data});
        return v;
      };
      if (op == "set") {
        data[key] = value();
      } else if (op == "append") {
        if (!data.contains(key)) data[key] = json::array();
        if (!data[key].is_array()) throw Error(ErrorCode::UnknownState, "append to non-list '" + key + "'");
        data[key].push_back(value());
      } else if (op == "remove_last") {
        if (data.contains(key) && data[key].is_array() && !data[key].empty()) data[key].erase(data[key].size() - 1);
      } else if (op == "toggle") {
        data[key] = !truthy(data.value(key, json(false)));
      } else {
        throw Error(ErrorCode::UnknownState, "unknown effect op '" + op + "'");
      }
    }
  }

  Outcome apply(const std::string& widget_id, ActionKind kind, const std::string& input) {
    const std::string base = widget_id.substr(0, widget_id.find('#'));
    const SimTransition* t = nullptr;
    for (const auto& tr : sc_.transitions)
      if (tr.state == state_ && tr.widget == base && tr.action == kind) t = &tr;
    if (!t && kind == ActionKind::Check)  // a check is a tap
      for (const auto& tr : sc_.transitions)
        if (tr.state == state_ && tr.widget == base && tr.action == ActionKind::Click) t = &tr;
    if (!t) return Outcome::ok();

    apply_effects(t->effects, intended_, input);
    const FaultVariant* f = active(t->faults);
    apply_effects(f && f->effects ? *f->effects : t->effects, actual_, input);
    const std::string to = f && f->to ? *f->to : t->to;
    if (to == "$exit") {
      state_ = kExited;
      return Outcome::app_exited("left " + sc_.package);
    }
    if (!to.empty()) {
      if (!sc_.states.count(to)) throw Error(ErrorCode::UnknownState, "transition to undeclared state '" + to + "'");
      state_ = to;
    }
    return Outcome::ok();
  }

  void paint_widget(Raster& img, const RenderedWidget& w) const {
    const Bounds& b = w.bounds;
    const bool button = text::ends_with(w.class_name, "Button");
    const bool edit = text::ends_with(w.class_name, "EditText");
    if (button) fill_rect(img, b.left, b.top, b.right, b.bottom, {222, 226, 232});
    if (edit) fill_rect(img, b.left, b.bottom - 3, b.right, b.bottom, {90, 90, 90});
    if (w.checkable) {
      const int s = std::min(28, b.height() - 4);
      const int x0 = b.right - s - 8, y0 = b.top + (b.height() - s) / 2;
      fill_rect(img, x0, y0, x0 + s, y0 + s, w.checked ? Rgb{30, 136, 229} : Rgb{189, 189, 189});
    }
    const bool hint = w.text.empty() && !w.hint.empty();
    const std::string& s = hint ? w.hint : w.text;
    if (s.empty()) return;
    constexpr int kScale = 2;
    const int y = b.top + std::max(0, (b.height() - font::kGlyphHeight * kScale) / 2);
    const int room = std::max(0, (b.width() - 50) / (font::kAdvance * kScale));
    draw_text(img, b.left + 44, y, std::string_view(s).substr(0, static_cast<std::size_t>(room)),
              hint ? Rgb{150, 150, 150} : Rgb{20, 20, 20}, kScale);
  }

  Scenario sc_;
  FaultSet faults_;
  ManualClock* clock_;
  json actual_, intended_, initial_;
  std::string state_;
  bool launched_ = false;
};

// ---------------------------------------------------------------------------
// Consistency assertions

struct AssertionResult {
  std::string name;
  bool passed = true;
  std::vector<std::string> failures;
};

/// Runs every assertion's probe on a fresh simulator and compares what the
/// screen shows with what the fault-free data model says it should show.
inline std::vector<AssertionResult> check_assertions(const Scenario& sc, const FaultSet& faults) {
  std::vector<AssertionResult> out;
  for (const auto& a : sc.assertions) {
    AssertionResult r{a.name, true, {}};
    SimDriver sim(sc, faults);
    sim.launch(sc.package);
    for (const auto& p : a.probe) {
      const auto o = sim.perform_on(p.widget, p.action, p.input);
      if (o.kind != OutcomeKind::Ok) {
        r.failures.push_back("probe " + p.widget + ": " + (o.reason.empty() ? "app exited" : o.reason));
        break;
      }
    }
    if (r.failures.empty()) {
      const auto widgets = sim.render();
      const auto find = [&](const std::string& id) -> const RenderedWidget* {
        for (const auto& w : widgets)
          if (w.id == id) return &w;
        return nullptr;
      };
      for (const auto& c : a.checks) {
        if (c.state && sim.state() != *c.state)
          r.failures.push_back("on state " + sim.state() + ", expected " + *c.state);
        const RenderedWidget* w = c.widget.empty() ? nullptr : find(c.widget);
        if (!c.widget.empty()) {
          const bool want = c.exists.value_or(true);
          if ((w != nullptr) != want) {
            r.failures.push_back("widget " + c.widget + (want ? " missing" : " present"));
            continue;
          }
        }
        if (w && c.text && w->text != sim.intended_text(*c.text))
          r.failures.push_back("widget " + c.widget + " shows \"" + w->text + "\", expected \"" + sim.intended_text(*c.text) + "\"");
        if (w && c.checked && w->checked != sim.intended_flag(*c.checked))
          r.failures.push_back("widget " + c.widget + " checked state differs from the data model");
        for (std::size_t i = 0; i < c.no_overlap.size(); ++i) {
          for (std::size_t j = i + 1; j < c.no_overlap.size(); ++j) {
            const auto* x = find(c.no_overlap[i]);
            const auto* y = find(c.no_overlap[j]);
            if (!x || !y) continue;
            const bool overlap = x->bounds.left < y->bounds.right && y->bounds.left < x->bounds.right &&
                                 x->bounds.top < y->bounds.bottom && y->bounds.top < x->bounds.bottom;
            if (overlap) r.failures.push_back(c.no_overlap[i] + " overlaps " + c.no_overlap[j]);
          }
        }
      }
    }
    r.passed = r.failures.empty();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace droidlens::device
