#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/annotator.hpp"
#include "droidlens/error.hpp"
#include "droidlens/fsutil.hpp"
#include "droidlens/gui_model.hpp"
#include "droidlens/image_store.hpp"
#include "droidlens/text.hpp"

namespace droidlens {

inline constexpr const char* kHistorySchema = "droidlens.history/1";
inline constexpr const char* kHistoryFile = "history.json";

struct StepRecord {
  int seq = 0;
  std::string page_digest;
  std::string screenshot_ref;      // action-marked copy
  std::string raw_screenshot_ref;  // as captured
  Action action;
  int target_node_index = -1;
  std::string function_name;
  std::string function_status;
  int function_step_id = 0;
  std::string activity_name;
  std::int64_t timestamp_ms = 0;
  int retries = 0;
  bool fallback = false;

  /// "Check budget-2" style label used in prompt legends.
  std::string function_label() const { return function_name + "-" + std::to_string(function_step_id); }

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// Non-step occurrences kept alongside the trace (app restarts, driver errors).
struct HistoryEvent {
  int seq = 0;  // number of steps recorded when the event happened
  std::string kind;
  std::string detail;
  friend bool operator==(const HistoryEvent&, const HistoryEvent&) = default;
};

struct TestingHistory {
  std::vector<StepRecord> steps;
  std::map<std::string, int> catalog;  // function name -> visits
  std::vector<HistoryEvent> events;

  bool empty() const noexcept { return steps.empty(); }
  friend bool operator==(const TestingHistory&, const TestingHistory&) = default;
};

/// Trim, collapse whitespace, drop a trailing "-<digits>" step id.
inline std::string normalize_function_name(std::string_view raw) {
  std::string s = text::collapse_ws(raw);
  std::size_t end = s.size();
  std::size_t p = end;
  while (p > 0 && text::is_digit(s[p - 1])) --p;
  if (p < end) {
    std::size_t q = p;
    while (q > 0 && s[q - 1] == ' ') --q;
    if (q > 0 && s[q - 1] == '-') {
      s.resize(q - 1);
      s = text::collapse_ws(s);
    }
  }
  return s;
}

inline int prior_function_steps(const TestingHistory& h, const std::string& name) {
  return static_cast<int>(std::count_if(h.steps.begin(), h.steps.end(),
                                        [&](const StepRecord& s) { return s.function_name == name; }));
}

/// Appends a step. The marked screenshot is derived from `annotated` with the
/// acted widget re-stroked and stored under the step's name.
inline void record_step(TestingHistory& h, StepRecord step, ImageStore& images,
                        const Raster& annotated, const Bounds& acted,
                        const AnnotationStyle& style = {}) {
  if (step.seq != static_cast<int>(h.steps.size()))
    throw Error(ErrorCode::SequenceGap, "step seq " + std::to_string(step.seq) + " but history has " +
                                            std::to_string(h.steps.size()) + " steps");
  step.function_name = normalize_function_name(step.function_name);
  step.function_step_id = 1 + prior_function_steps(h, step.function_name);
  char name[32];
  std::snprintf(name, sizeof name, "step_%04d_marked", step.seq);
  step.screenshot_ref = images.put(name, mark_acted(annotated, acted, style));
  ++h.catalog[step.function_name];
  h.steps.push_back(std::move(step));
}

struct FunctionRecord {
  std::string name;
  int visits = 0;
  friend bool operator==(const FunctionRecord&, const FunctionRecord&) = default;
};

/// Catalog sorted by descending visits, then name.
inline std::vector<FunctionRecord> text_view(const TestingHistory& h) {
  std::vector<FunctionRecord> out;
  for (const auto& [name, visits] : h.catalog) out.push_back({name, visits});
  std::stable_sort(out.begin(), out.end(), [](const FunctionRecord& a, const FunctionRecord& b) {
    return a.visits > b.visits;
  });
  return out;
}

inline constexpr std::size_t kRecentScreenshots = 4;

/// The last n steps, oldest first.
inline std::vector<StepRecord> image_view(const TestingHistory& h, std::size_t n = kRecentScreenshots) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "image_view needs n >= 1");
  const std::size_t start = h.steps.size() > n ? h.steps.size() - n : 0;
  return {h.steps.begin() + static_cast<std::ptrdiff_t>(start), h.steps.end()};
}

// ---------------------------------------------------------------------------
// JSON + persistence

inline void to_json(nlohmann::json& j, const StepRecord& s) {
  j = {{"seq", s.seq},
       {"page_digest", s.page_digest},
       {"screenshot_ref", s.screenshot_ref},
       {"raw_screenshot_ref", s.raw_screenshot_ref},
       {"action", s.action},
       {"target_node_index", s.target_node_index},
       {"function_name", s.function_name},
       {"function_status", s.function_status},
       {"function_step_id", s.function_step_id},
       {"activity_name", s.activity_name},
       {"timestamp_ms", s.timestamp_ms},
       {"retries", s.retries},
       {"fallback", s.fallback}};
}

inline void from_json(const nlohmann::json& j, StepRecord& s) {
  s.seq = j.at("seq").get<int>();
  s.page_digest = j.at("page_digest").get<std::string>();
  s.screenshot_ref = j.at("screenshot_ref").get<std::string>();
  s.raw_screenshot_ref = j.value("raw_screenshot_ref", "");
  s.action = j.at("action").get<Action>();
  s.target_node_index = j.value("target_node_index", -1);
  s.function_name = j.at("function_name").get<std::string>();
  s.function_status = j.value("function_status", "");
  s.function_step_id = j.at("function_step_id").get<int>();
  s.activity_name = j.value("activity_name", "");
  s.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  s.retries = j.value("retries", 0);
  s.fallback = j.value("fallback", false);
}

inline void to_json(nlohmann::json& j, const HistoryEvent& e) {
  j = {{"seq", e.seq}, {"kind", e.kind}, {"detail", e.detail}};
}

inline void from_json(const nlohmann::json& j, HistoryEvent& e) {
  e.seq = j.at("seq").get<int>();
  e.kind = j.at("kind").get<std::string>();
  e.detail = j.value("detail", "");
}

inline nlohmann::json history_to_json(const TestingHistory& h) {
  nlohmann::json catalog = nlohmann::json::array();
  for (const auto& [name, visits] : h.catalog) catalog.push_back({{"name", name}, {"visits", visits}});
  return {{"schema", kHistorySchema}, {"steps", h.steps}, {"catalog", catalog}, {"events", h.events}};
}

/// Validates schema and the visit-count invariant.
inline TestingHistory history_from_json(const nlohmann::json& j) {
  try {
    if (j.value("schema", "") != kHistorySchema)
      throw Error(ErrorCode::CorruptSession, "unsupported history schema " + j.value("schema", "<none>"));
    TestingHistory h;
    h.steps = j.at("steps").get<std::vector<StepRecord>>();
    for (const auto& rec : j.at("catalog")) h.catalog[rec.at("name").get<std::string>()] = rec.at("visits").get<int>();
    h.events = j.value("events", std::vector<HistoryEvent>{});
    std::map<std::string, int> counted;
    for (std::size_t i = 0; i < h.steps.size(); ++i) {
      if (h.steps[i].seq != static_cast<int>(i))
        throw Error(ErrorCode::CorruptSession, "step " + std::to_string(i) + " has seq " + std::to_string(h.steps[i].seq));
      ++counted[h.steps[i].function_name];
    }
    if (counted != h.catalog) throw Error(ErrorCode::CorruptSession, "catalog visits disagree with steps");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptSession, std::string("history schema: ") + e.what());
  }
}

/// Writes history.json and every referenced image into `dir`.
inline void persist_history(const TestingHistory& h, const ImageStore& images, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : h.steps) {
    images.export_to(s.screenshot_ref, dir);
    if (!s.raw_screenshot_ref.empty()) images.export_to(s.raw_screenshot_ref, dir);
  }
  fs::write_atomic(dir / kHistoryFile, history_to_json(h).dump(2) + "\n");
}

/// Missing history.json means an empty history. Every referenced image must exist.
inline TestingHistory load_history(const std::filesystem::path& dir) {
  const auto file = dir / kHistoryFile;
  if (!std::filesystem::exists(file)) return {};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(fs::read_text(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::CorruptSession, file.string() + ": " + e.what());
  }
  TestingHistory h = history_from_json(j);
  for (const auto& s : h.steps) {
    for (const auto* ref : {&s.screenshot_ref, &s.raw_screenshot_ref}) {
      if (ref->empty()) continue;
      if (!std::filesystem::exists(dir / *ref))
        throw Error(ErrorCode::CorruptSession, "step " + std::to_string(s.seq) + " references missing image " + *ref);
    }
  }
  return h;
}

}  // namespace droidlens
