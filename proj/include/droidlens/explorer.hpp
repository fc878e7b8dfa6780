#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/annotator.hpp"
#include "droidlens/clock.hpp"
#include "droidlens/device/driver.hpp"
#include "droidlens/error.hpp"
#include "droidlens/gui_model.hpp"
#include "droidlens/history.hpp"
#include "droidlens/image_store.hpp"
#include "droidlens/llm/gateway.hpp"
#include "droidlens/log.hpp"
#include "droidlens/prompts.hpp"
#include "droidlens/response_fields.hpp"
#include "droidlens/text.hpp"

namespace droidlens {

enum class QueryMode { GeneralAction, TextInput };

struct ExplorationBudget {
  std::optional<std::int64_t> wall_clock_s = 3000;
  std::optional<int> step_limit;
  /// Action queries per step, first attempt included.
  int retry_limit = 3;
};

enum class FindingVerdict { Bug, Clean };

struct IntraPageFinding {
  int seq = -1;
  std::string page_digest;
  std::string activity_name;
  FindingVerdict verdict = FindingVerdict::Clean;
  std::string description;
  std::string model;
  int transcript_index = -1;

  friend bool operator==(const IntraPageFinding&, const IntraPageFinding&) = default;
};

inline void to_json(nlohmann::json& j, const IntraPageFinding& f) {
  j = {{"seq", f.seq},
       {"page_digest", f.page_digest},
       {"activity", f.activity_name},
       {"verdict", f.verdict == FindingVerdict::Bug ? "bug" : "clean"},
       {"description", f.description},
       {"model", f.model},
       {"transcript_index", f.transcript_index}};
}

inline void from_json(const nlohmann::json& j, IntraPageFinding& f) {
  f.seq = j.at("seq").get<int>();
  f.page_digest = j.at("page_digest").get<std::string>();
  f.activity_name = j.at("activity").get<std::string>();
  f.verdict = j.at("verdict").get<std::string>() == "bug" ? FindingVerdict::Bug : FindingVerdict::Clean;
  f.description = j.at("description").get<std::string>();
  f.model = j.value("model", "");
  f.transcript_index = j.value("transcript_index", -1);
}

/// The page-level inputs every explorer prompt draws on.
struct PageContext {
  const AppInfo& app;
  const GuiPage& page;
  const AnnotatedScreenshot& annotated;
  const TestingHistory& history;
  const ImageStore& images;
};

inline std::string short_activity(std::string_view name) {
  const auto dot = name.rfind('.');
  return std::string(dot == std::string_view::npos ? name : name.substr(dot + 1));
}

// ---------------------------------------------------------------------------
// Prompt assembly

namespace detail {

inline std::string activity_list(const AppInfo& app) {
  std::vector<std::string> names;
  for (const auto& a : app.activity_names) names.push_back(short_activity(a));
  return names.empty() ? "(none declared)" : text::join(names, ", ");
}

inline std::string page_texts(const GuiPage& page) {
  std::vector<std::string> texts;
  std::set<std::string> seen;
  for (const auto& w : page.widgets) {
    const std::string t = text::collapse_ws(widget_label_text(w));
    if (!t.empty() && seen.insert(t).second) texts.push_back("\"" + t + "\"");
  }
  return texts.empty() ? "(no text)" : text::join(texts, ", ");
}

inline std::map<std::string, std::string> app_vars(const AppInfo& app) {
  return {{"app_name", app.app_name}, {"package", app.package_id}, {"activities", activity_list(app)}};
}

}  // namespace detail

struct ExplorerPrompt {
  PromptBundle bundle;
  std::vector<llm::ImagePtr> images;

  llm::Messages messages() const {
    return {llm::ChatMessage::system(bundle.system), llm::ChatMessage::user(bundle.user_text(), images)};
  }
};

/// Shared context blocks: text info, current legend, explored functions and
/// the recent-screenshot legend. Image 1 is the current annotated screenshot.
inline ExplorerPrompt explorer_context(const PageContext& ctx, const TemplateSet& t) {
  ExplorerPrompt p;
  p.bundle.system = t.render("explorer.system");
  auto vars = detail::app_vars(ctx.app);
  vars["activity"] = short_activity(ctx.page.activity_name);
  vars["page_texts"] = detail::page_texts(ctx.page);
  p.bundle.sections.emplace_back("app_info", t.render("explorer.app_info", vars));
  p.bundle.sections.emplace_back(
      "current_legend",
      t.render("explorer.current_legend", {{"widget_count", std::to_string(ctx.annotated.label_map.entries.size())},
                                           {"row_count", std::to_string(ctx.annotated.row_count)}}));
  p.images.push_back(std::make_shared<const Raster>(ctx.annotated.image));

  if (ctx.history.empty()) {
    p.bundle.sections.emplace_back("first_run", t.render("explorer.first_run"));
    return p;
  }
  std::vector<std::string> lines;
  for (const auto& f : text_view(ctx.history)) lines.push_back("- " + f.name + ": " + std::to_string(f.visits));
  p.bundle.sections.emplace_back("explored_functions",
                                 t.render("explorer.explored_functions", {{"function_lines", text::join(lines, "\n")}}));

  std::vector<std::string> recent;
  for (const auto& step : image_view(ctx.history)) {
    const int image_no = static_cast<int>(p.images.size()) + 1;
    p.images.push_back(std::make_shared<const Raster>(ctx.images.get(step.screenshot_ref)));
    recent.push_back(t.render("explorer.recent_item", {{"image_no", std::to_string(image_no)},
                                                       {"function_label", step.function_label()},
                                                       {"activity", short_activity(step.activity_name)},
                                                       {"action", describe(step.action)}}));
  }
  p.bundle.sections.emplace_back("recent_legend",
                                 t.render("explorer.recent_legend", {{"recent_lines", text::join(recent, "\n")}}));
  return p;
}

inline ExplorerPrompt build_explorer_prompt(const PageContext& ctx, QueryMode mode,
                                            const std::optional<std::string>& feedback,
                                            const TemplateSet& t = {}) {
  ExplorerPrompt p = explorer_context(ctx, t);
  if (mode == QueryMode::GeneralAction)
    p.bundle.sections.emplace_back("action_general", t.render("explorer.action_general"));
  else
    p.bundle.sections.emplace_back("action_text_input", t.render("explorer.action_text_input"));
  if (feedback) p.bundle.sections.emplace_back("feedback", t.render("explorer.feedback", {{"feedback", *feedback}}));
  return p;
}

inline ExplorerPrompt build_function_prompt(const PageContext& ctx, const TemplateSet& t = {}) {
  ExplorerPrompt p = explorer_context(ctx, t);
  p.bundle.sections.emplace_back("function_inquiry", t.render("explorer.function_inquiry"));
  return p;
}

/// Single-screenshot check; no history and no exemplars.
inline ExplorerPrompt build_bug_detect_prompt(const AppInfo& app, const GuiPage& page,
                                              const AnnotatedScreenshot& annotated, const TemplateSet& t = {}) {
  ExplorerPrompt p;
  p.bundle.system = t.render("explorer.system");
  auto vars = detail::app_vars(app);
  vars["activity"] = short_activity(page.activity_name);
  vars["page_texts"] = detail::page_texts(page);
  p.bundle.sections.emplace_back("app_info", t.render("explorer.app_info", vars));
  p.bundle.sections.emplace_back("bug_detect", t.render("explorer.bug_detect", {{"activity", vars["activity"]}}));
  p.images.push_back(std::make_shared<const Raster>(annotated.image));
  return p;
}

// ---------------------------------------------------------------------------
// Response parsing

struct Malformed {
  std::string reason;
};

using ActionParse = std::variant<Action, Malformed>;

inline ActionParse parse_action_response(std::string_view reply) {
  const auto f = extract_fields(reply, {"Action", "Widget", "Text", "Input", "Direction"});
  const auto fragment = [&] { return std::string(reply.substr(0, 120)); };
  if (!f.count("Action")) return Malformed{"no Action field in: " + fragment()};
  const auto kind = parse_action_kind(f.at("Action"));
  if (!kind) return Malformed{"unknown action \"" + f.at("Action") + "\""};
  if (!f.count("Widget")) return Malformed{"no Widget field in: " + fragment()};
  const auto num = first_integer(f.at("Widget"));
  if (!num || *num < 1) return Malformed{"widget \"" + f.at("Widget") + "\" is not a positive integer"};

  Action a = Action::make(*kind, static_cast<int>(*num), f.count("Text") ? f.at("Text") : "");
  if (*kind == ActionKind::Input) {
    if (!f.count("Input")) return Malformed{"input action without an Input field"};
    a.input_text = f.at("Input");
  }
  if (*kind == ActionKind::Scroll && f.count("Direction")) {
    if (auto d = parse_scroll_direction(f.at("Direction"))) a.scroll_direction = *d;
  }
  return a;
}

struct FunctionInference {
  std::string name;
  std::string status;
  friend bool operator==(const FunctionInference&, const FunctionInference&) = default;
};

inline std::optional<FunctionInference> parse_function_response(std::string_view reply) {
  const auto f = extract_fields(reply, {"Function", "Status"});
  if (!f.count("Function")) return std::nullopt;
  const std::string name = normalize_function_name(f.at("Function"));
  if (name.empty()) return std::nullopt;
  return FunctionInference{name, f.count("Status") ? f.at("Status") : ""};
}

struct BugDetectParse {
  bool has_bug = false;
  std::string description;
};

inline std::optional<BugDetectParse> parse_bug_detect_response(std::string_view reply) {
  const auto f = extract_fields(reply, {"Bug", "Reason"});
  if (!f.count("Bug")) return std::nullopt;
  std::string rest;
  const auto yes = parse_yes_no(f.at("Bug"), &rest);
  if (!yes) return std::nullopt;
  BugDetectParse out{*yes, {}};
  if (*yes) {
    out.description = f.count("Reason") && !f.at("Reason").empty() ? f.at("Reason") : rest;
    if (out.description.empty()) out.description = "unspecified display problem";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model-driven decisions

struct ChosenAction {
  Action action;
  int node_index = -1;
  int retries = 0;
  bool fallback = false;
  std::vector<std::string> feedback_sent;
};

namespace detail {

inline std::string fallback_input_text(std::uint64_t seed, int seq) {
  static constexpr const char* kSamples[] = {"42", "test", "100", "hello", "7"};
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(seq + 1)));
  return kSamples[rng() % std::size(kSamples)];
}

}  // namespace detail

/// Lowest-numeral widget not yet acted on for this page, else widget 1 with Click.
inline ChosenAction fallback_action(const PageContext& ctx, std::uint64_t seed) {
  std::set<std::pair<std::string, int>> explored;
  for (const auto& s : ctx.history.steps) explored.emplace(s.page_digest, s.target_node_index);
  const auto& entries = ctx.annotated.label_map.entries;
  for (const auto& e : entries) {
    if (explored.count({ctx.page.source_digest, e.node_index})) continue;
    Action a = Action::make(e.kind, e.numeral, e.widget_text);
    if (a.kind == ActionKind::Input) a.input_text = detail::fallback_input_text(seed, static_cast<int>(ctx.history.steps.size()));
    return {a, e.node_index, 0, true, {}};
  }
  return {Action::make(ActionKind::Click, 1, entries.front().widget_text), entries.front().node_index, 0, true, {}};
}

inline std::string mismatch_feedback(int numeral, const std::string& expected, const std::string& claimed) {
  return "widget text mismatch: expected '" + expected + "' for widget " + std::to_string(numeral) +
         ", but your answer says '" + claimed + "'.";
}

/// Queries the model, validates the numeral/text pair against the label map and
/// retries with feedback until `budget.retry_limit` attempts are used up.
inline ChosenAction next_action(const PageContext& ctx, QueryMode mode, llm::Gateway& gateway,
                                const ExplorationBudget& budget, const TemplateSet& t = {},
                                std::uint64_t seed = 0) {
  const auto& entries = ctx.annotated.label_map.entries;
  if (entries.empty())
    throw Error(ErrorCode::NoActionableWidgets, "page " + ctx.page.source_digest.substr(0, 12) + " has no actionable widgets");

  std::optional<std::string> feedback;
  std::vector<std::string> sent;
  const int attempts = std::max(1, budget.retry_limit);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (feedback) sent.push_back(*feedback);
    const auto reply = gateway.complete(build_explorer_prompt(ctx, mode, feedback, t).messages());
    const auto parsed = parse_action_response(reply);
    if (const auto* bad = std::get_if<Malformed>(&parsed)) {
      feedback = "your answer could not be read (" + bad->reason + "). Use the output template exactly.";
      continue;
    }
    const Action& action = std::get<Action>(parsed);
    const auto res = resolve_label(ctx.annotated.label_map, action.target_label, action.target_text);
    if (const auto* ok = std::get_if<LabelMatch>(&res)) return {action, ok->node_index, attempt, false, sent};
    if (const auto* mm = std::get_if<LabelMismatch>(&res)) {
      feedback = mismatch_feedback(action.target_label, mm->expected_text, action.target_text);
    } else {
      feedback = "widget " + std::to_string(action.target_label) + " does not exist; the screenshot numbers widgets 1 to " +
                 std::to_string(entries.size()) + ".";
    }
  }
  ChosenAction fb = fallback_action(ctx, seed);
  fb.retries = attempts - 1;
  fb.feedback_sent = std::move(sent);
  log::warn("no valid action after " + std::to_string(attempts) + " attempts; falling back to widget " +
            std::to_string(fb.action.target_label));
  return fb;
}

inline FunctionInference infer_function(const PageContext& ctx, llm::Gateway& gateway, const TemplateSet& t = {}) {
  const auto reply = gateway.complete(build_function_prompt(ctx, t).messages());
  if (auto parsed = parse_function_response(reply)) return *parsed;
  log::warn("function inquiry answer unreadable; using activity name");
  return {short_activity(ctx.page.activity_name), "unknown"};
}

inline IntraPageFinding intra_page_check(const AppInfo& app, const GuiPage& page, const AnnotatedScreenshot& annotated,
                                         llm::Gateway& gateway, const TemplateSet& t = {}) {
  IntraPageFinding f;
  f.transcript_index = static_cast<int>(gateway.call_count());
  f.model = gateway.model_id();
  const auto reply = gateway.complete(build_bug_detect_prompt(app, page, annotated, t).messages());
  f.page_digest = page.source_digest;
  f.activity_name = page.activity_name;
  const auto parsed = parse_bug_detect_response(reply);
  if (!parsed) {
    log::warn("bug-detect answer unreadable; treating page as clean");
    return f;
  }
  if (parsed->has_bug) {
    f.verdict = FindingVerdict::Bug;
    f.description = parsed->description;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Exploration loop

/// A distinct page seen during exploration, as persisted in the session.
struct PageRecord {
  GuiPage page;
  LabelMap label_map;
  int row_count = 0;
};

struct ExploreOptions {
  TemplateSet templates;
  AnnotationStyle style;
  std::uint64_t seed = 0;
  /// Called after every recorded step (session checkpointing).
  std::function<void(const TestingHistory&, const std::vector<IntraPageFinding>&, const std::map<std::string, PageRecord>&)>
      on_step;
  /// Consecutive restarts without a recorded step before giving up.
  int max_idle_restarts = 3;
};

struct ExploreResult {
  TestingHistory history;
  std::vector<IntraPageFinding> findings;
  std::map<std::string, PageRecord> pages;
  std::int64_t elapsed_ms = 0;
  /// Set when the driver failed; history holds everything up to that point.
  std::optional<std::string> driver_failure;
};

inline ExploreResult explore(const AppInfo& app, device::DeviceDriver& driver, llm::Gateway& gateway,
                             const ExplorationBudget& budget, ImageStore& images, Clock& clock,
                             const ExploreOptions& opts = {}) {
  if (!budget.wall_clock_s && !budget.step_limit)
    throw Error(ErrorCode::ConfigError, "exploration budget needs a wall-clock or step limit");
  ExploreResult r;
  const std::int64_t start = clock.now_ms();
  bool focused_input = false;
  int idle_restarts = 0;

  const auto checkpoint = [&] {
    if (opts.on_step) opts.on_step(r.history, r.findings, r.pages);
  };
  const auto fail = [&](const std::string& why) {
    r.history.events.push_back({static_cast<int>(r.history.steps.size()), "driver_failure", why});
    r.driver_failure = why;
    r.elapsed_ms = clock.now_ms() - start;
    checkpoint();
    return r;
  };
  const auto restart = [&](const std::string& why) -> bool {
    r.history.events.push_back({static_cast<int>(r.history.steps.size()), "restart", why});
    const auto o = driver.restart();
    focused_input = false;
    return o.kind != device::OutcomeKind::Failed;
  };

  while (true) {
    const int seq = static_cast<int>(r.history.steps.size());
    if (budget.step_limit && seq >= *budget.step_limit) break;
    if (budget.wall_clock_s && clock.now_ms() - start >= *budget.wall_clock_s * 1000) break;

    std::string markup, activity;
    Raster shot;
    try {
      markup = driver.dump_hierarchy();
      shot = driver.capture_screenshot();
      activity = driver.current_activity();
    } catch (const Error& e) {
      return fail(e.what());
    }
    GuiPage page = parse_view_hierarchy(markup, activity);
    char name[32];
    std::snprintf(name, sizeof name, "step_%04d_raw", seq);
    page.screenshot_ref = images.put(name, shot);
    const AnnotatedScreenshot annotated = annotate(shot, page, opts.style);

    if (annotated.label_map.entries.empty()) {
      if (++idle_restarts > opts.max_idle_restarts) {
        r.history.events.push_back({seq, "stopped", "no actionable widgets after repeated restarts"});
        break;
      }
      if (!restart("no actionable widgets on " + short_activity(activity))) return fail("restart failed");
      continue;
    }
    idle_restarts = 0;

    const PageContext ctx{app, page, annotated, r.history, images};
    const QueryMode mode = focused_input ? QueryMode::TextInput : QueryMode::GeneralAction;
    const ChosenAction chosen = next_action(ctx, mode, gateway, budget, opts.templates, opts.seed);
    const FunctionInference fn = infer_function(ctx, gateway, opts.templates);
    IntraPageFinding finding = intra_page_check(app, page, annotated, gateway, opts.templates);
    finding.seq = seq;
    r.findings.push_back(std::move(finding));

    const Widget* target = page.find(chosen.node_index);
    StepRecord step;
    step.seq = seq;
    step.page_digest = page.source_digest;
    step.raw_screenshot_ref = page.screenshot_ref;
    step.action = chosen.action;
    step.target_node_index = chosen.node_index;
    step.function_name = fn.name;
    step.function_status = fn.status;
    step.activity_name = activity;
    step.timestamp_ms = clock.now_ms();
    step.retries = chosen.retries;
    step.fallback = chosen.fallback;
    record_step(r.history, step, images, annotated.image, target->bounds, opts.style);
    r.pages.try_emplace(page.source_digest, PageRecord{page, annotated.label_map, annotated.row_count});

    const auto outcome = driver.perform(chosen.action, target->bounds);
    focused_input = chosen.action.kind == ActionKind::Click && target->is_edit_text();
    if (outcome.kind == device::OutcomeKind::Failed) return fail(outcome.reason);
    if (outcome.kind == device::OutcomeKind::AppExited) {
      if (!restart(outcome.reason.empty() ? "app exited" : outcome.reason)) return fail("restart failed");
    }
    checkpoint();
  }
  r.elapsed_ms = clock.now_ms() - start;
  checkpoint();
  return r;
}

}  // namespace droidlens
