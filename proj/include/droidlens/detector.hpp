#pragma once

#include <algorithm>
#include <atomic>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/error.hpp"
#include "droidlens/example_store.hpp"
#include "droidlens/explorer.hpp"
#include "droidlens/history.hpp"
#include "droidlens/image_store.hpp"
#include "droidlens/llm/gateway.hpp"
#include "droidlens/log.hpp"
#include "droidlens/prompts.hpp"
#include "droidlens/response_fields.hpp"
#include "droidlens/segmenter.hpp"

namespace droidlens {

// ---------------------------------------------------------------------------
// Prompt

struct DetectorPrompt {
  PromptBundle bundle;
  std::vector<llm::ImagePtr> images;

  llm::Messages messages() const {
    return {llm::ChatMessage::system(bundle.system), llm::ChatMessage::user(bundle.user_text(), images)};
  }
};

inline DetectorPrompt build_detector_prompt(const AppInfo& app, const std::vector<StepRecord>& steps,
                                            const std::vector<ExampleBug>& examples, const ImageStore& images,
                                            const TemplateSet& t = {}) {
  if (steps.empty()) throw Error(ErrorCode::InvalidArgument, "detector prompt needs a non-empty sub-sequence");
  DetectorPrompt p;
  p.bundle.system = t.render("detector.system");
  p.bundle.sections.emplace_back("app_info", t.render("detector.app_info", detail::app_vars(app)));

  std::vector<std::string> lines;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    p.images.push_back(std::make_shared<const Raster>(images.get(steps[i].screenshot_ref)));
    lines.push_back(t.render("detector.legend_item", {{"step_no", std::to_string(i)},
                                                      {"image_no", std::to_string(i + 1)},
                                                      {"function_label", steps[i].function_label()},
                                                      {"activity", short_activity(steps[i].activity_name)},
                                                      {"action", describe(steps[i].action)}}));
  }
  p.bundle.sections.emplace_back("legend", t.render("detector.legend", {{"image_count", std::to_string(steps.size())},
                                                                        {"step_lines", text::join(lines, "\n")}}));
  if (!examples.empty()) {
    std::vector<std::string> ex;
    for (std::size_t i = 0; i < examples.size(); ++i)
      ex.push_back(t.render("detector.example_item", {{"example_no", std::to_string(i + 1)},
                                                      {"description", examples[i].description},
                                                      {"reproduction_path", examples[i].reproduction_path}}));
    p.bundle.sections.emplace_back("examples", t.render("detector.examples", {{"example_lines", text::join(ex, "\n")}}));
  }
  p.bundle.sections.emplace_back("question", t.render("detector.question"));
  return p;
}

inline DetectorPrompt build_detector_prompt(const AppInfo& app, const SubSequence& sub,
                                            const std::vector<ExampleBug>& examples, const ImageStore& images,
                                            const TemplateSet& t = {}) {
  return build_detector_prompt(app, sub.steps, examples, images, t);
}

// ---------------------------------------------------------------------------
// Verdict

struct Verdict {
  bool has_bug = false;
  std::optional<int> faulty_step;  // index into the sub-sequence
  std::string description;
  std::vector<std::string> warnings;
};

using VerdictParse = std::variant<Verdict, Malformed>;

inline VerdictParse parse_verdict(std::string_view reply, std::size_t subseq_len) {
  if (subseq_len == 0) throw Error(ErrorCode::InvalidArgument, "parse_verdict on an empty sub-sequence");
  const auto f = extract_fields(reply, {"Bug", "Step", "Reason"});
  if (!f.count("Bug")) return Malformed{"no Bug field in: " + std::string(reply.substr(0, 120))};
  std::string rest;
  const auto yes = parse_yes_no(f.at("Bug"), &rest);
  if (!yes) return Malformed{"Bug field \"" + f.at("Bug") + "\" is neither yes nor no"};
  Verdict v;
  if (!*yes) return v;
  v.has_bug = true;
  v.description = f.count("Reason") && !f.at("Reason").empty() ? f.at("Reason") : rest;
  if (v.description.empty()) v.description = "unspecified functional bug";
  const int last = static_cast<int>(subseq_len) - 1;
  std::optional<long> step;
  if (f.count("Step")) step = first_integer(f.at("Step"));
  if (!step) {
    v.warnings.push_back("verdict names no step; using last step " + std::to_string(last));
    v.faulty_step = last;
  } else if (*step > last) {
    v.warnings.push_back("step " + std::to_string(*step) + " out of range; clamped to " + std::to_string(last));
    v.faulty_step = last;
  } else {
    v.faulty_step = static_cast<int>(*step);
  }
  return v;
}

/// Fail-safe reading: unreadable answers count as "no bug".
inline Verdict verdict_or_clean(const VerdictParse& p) {
  if (const auto* v = std::get_if<Verdict>(&p)) return *v;
  Verdict clean;
  clean.warnings.push_back("unreadable verdict treated as no bug: " + std::get<Malformed>(p).reason);
  return clean;
}

// ---------------------------------------------------------------------------
// Reports

struct StepRef {
  int seq = 0;
  std::string screenshot_ref;
  std::string function_label;
  std::string activity_name;
  friend bool operator==(const StepRef&, const StepRef&) = default;
};

struct VerdictSource {
  std::string model;
  int transcript_index = -1;
  int subsequence_id = -1;  // -1 for intra-page checks
  friend bool operator==(const VerdictSource&, const VerdictSource&) = default;
};

struct BugReport {
  BugKind kind = BugKind::InterPage;
  std::string description;
  std::string package;
  int subsequence_id = -1;
  std::vector<StepRef> steps;
  int faulty_seq = -1;
  std::string faulty_activity;
  std::vector<VerdictSource> sources;  // first entry is the kept report's own
  std::string dedupe_key;
  friend bool operator==(const BugReport&, const BugReport&) = default;
};

inline StepRef step_ref(const StepRecord& s) { return {s.seq, s.screenshot_ref, s.function_label(), s.activity_name}; }

/// Package + faulty activity + lowercased description without digits.
inline std::string dedupe_key(const std::string& package, const std::string& activity, std::string_view description) {
  std::string d;
  for (char c : text::lower(description))
    if (!text::is_digit(c)) d += c;
  return package + "|" + activity + "|" + text::collapse_ws(d);
}

inline std::string dedupe_key(const BugReport& r) { return dedupe_key(r.package, r.faulty_activity, r.description); }

/// Identical keys merge into the earliest report (lowest faulty step, then
/// input order); references and verdict sources accumulate.
inline std::vector<BugReport> merge_duplicates(std::vector<BugReport> reports) {
  for (auto& r : reports) r.dedupe_key = dedupe_key(r);
  std::stable_sort(reports.begin(), reports.end(),
                   [](const BugReport& a, const BugReport& b) { return a.faulty_seq < b.faulty_seq; });
  std::vector<BugReport> out;
  std::map<std::string, std::size_t> by_key;
  for (auto& r : reports) {
    const auto it = by_key.find(r.dedupe_key);
    if (it == by_key.end()) {
      by_key.emplace(r.dedupe_key, out.size());
      out.push_back(std::move(r));
      continue;
    }
    BugReport& kept = out[it->second];
    for (const auto& s : r.steps)
      if (std::find(kept.steps.begin(), kept.steps.end(), s) == kept.steps.end()) kept.steps.push_back(s);
    std::sort(kept.steps.begin(), kept.steps.end(), [](const StepRef& a, const StepRef& b) { return a.seq < b.seq; });
    for (const auto& src : r.sources)
      if (std::find(kept.sources.begin(), kept.sources.end(), src) == kept.sources.end()) kept.sources.push_back(src);
  }
  return out;
}

/// One detector request and its raw answer, as persisted in the session.
struct DetectionRecord {
  int subsequence_id = 0;
  int community = 0;
  std::vector<int> seqs;
  std::vector<std::string> example_ids;
  std::string model;
  int transcript_index = -1;
  std::optional<std::string> reply;
  std::optional<std::string> error;  // set when the request failed
  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

/// Pure: turns persisted raw answers and intra-page findings into reports.
inline std::vector<BugReport> assemble_reports(const AppInfo& app, const TestingHistory& h,
                                               const std::vector<DetectionRecord>& records,
                                               const std::vector<IntraPageFinding>& findings) {
  const auto step_at = [&](int seq) -> const StepRecord& {
    if (seq < 0 || static_cast<std::size_t>(seq) >= h.steps.size())
      throw Error(ErrorCode::CorruptSession, "report refers to missing step " + std::to_string(seq));
    return h.steps[static_cast<std::size_t>(seq)];
  };
  std::vector<BugReport> reports;
  for (const auto& rec : records) {
    if (!rec.reply || rec.seqs.empty()) continue;
    const Verdict v = verdict_or_clean(parse_verdict(*rec.reply, rec.seqs.size()));
    if (!v.has_bug) continue;
    BugReport r;
    r.kind = BugKind::InterPage;
    r.description = v.description;
    r.package = app.package_id;
    r.subsequence_id = rec.subsequence_id;
    for (int seq : rec.seqs) r.steps.push_back(step_ref(step_at(seq)));
    const StepRecord& faulty = step_at(rec.seqs[static_cast<std::size_t>(*v.faulty_step)]);
    r.faulty_seq = faulty.seq;
    r.faulty_activity = faulty.activity_name;
    r.sources.push_back({rec.model, rec.transcript_index, rec.subsequence_id});
    reports.push_back(std::move(r));
  }
  for (const auto& f : findings) {
    if (f.verdict != FindingVerdict::Bug) continue;
    BugReport r;
    r.kind = BugKind::IntraPage;
    r.description = f.description;
    r.package = app.package_id;
    const StepRecord& s = step_at(f.seq);
    r.steps.push_back(step_ref(s));
    r.faulty_seq = s.seq;
    r.faulty_activity = f.activity_name;
    r.sources.push_back({f.model, f.transcript_index, -1});
    reports.push_back(std::move(r));
  }
  return merge_duplicates(std::move(reports));
}

struct DetectOptions {
  std::size_t k = kDefaultTopK;
  TemplateSet templates;
  /// Concurrent detector requests; results are merged in sub-sequence order.
  int parallelism = 1;
};

/// Queries the detector for every sub-sequence. A failing request is recorded
/// and skipped; the others proceed.
inline std::vector<DetectionRecord> query_detector(const AppInfo& app, const std::vector<SubSequence>& subs,
                                                   llm::Gateway& gateway, const ExampleStore& store,
                                                   const ImageStore& images, const DetectOptions& opts = {}) {
  std::vector<DetectionRecord> records(subs.size());
  const auto run_one = [&](std::size_t i) {
    const SubSequence& sub = subs[i];
    DetectionRecord& rec = records[i];
    rec.subsequence_id = sub.id;
    rec.community = sub.community;
    for (const auto& s : sub.steps) rec.seqs.push_back(s.seq);
    rec.model = gateway.model_id();
    try {
      std::vector<ExampleBug> examples;
      if (store.size() > 0)
        for (auto& se : top_k(store, short_activity(sub.steps.front().activity_name), opts.k))
          examples.push_back(std::move(se.example));
      for (const auto& e : examples) rec.example_ids.push_back(e.id);
      const auto prompt = build_detector_prompt(app, sub, examples, images, opts.templates);
      auto [reply, index] = gateway.complete_indexed(prompt.messages());
      rec.reply = std::move(reply);
      rec.transcript_index = static_cast<int>(index);
      const auto parsed = parse_verdict(*rec.reply, sub.steps.size());
      for (const auto& w : verdict_or_clean(parsed).warnings)
        log::warn("sub-sequence " + std::to_string(sub.id) + ": " + w);
    } catch (const Error& e) {
      rec.error = std::string(to_string(e.code())) + ": " + e.what();
      log::error("detector request for sub-sequence " + std::to_string(sub.id) + " failed: " + e.what());
    }
  };
  const int workers = std::clamp(opts.parallelism, 1, std::max(1, static_cast<int>(subs.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < subs.size(); ++i) run_one(i);
    return records;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < subs.size(); i = next++) run_one(i);
    });
  for (auto& th : pool) th.join();
  return records;
}

struct DetectResult {
  std::vector<DetectionRecord> records;
  std::vector<BugReport> reports;
};

inline DetectResult detect(const AppInfo& app, const TestingHistory& h, const Partition& partition,
                           const std::vector<IntraPageFinding>& findings, llm::Gateway& gateway,
                           const ExampleStore& store, const ImageStore& images, const DetectOptions& opts = {}) {
  DetectResult r;
  if (!h.steps.empty()) r.records = query_detector(app, segments(h, partition), gateway, store, images, opts);
  r.reports = assemble_reports(app, h, r.records, findings);
  return r;
}

/// Turns a confirmed report into an exemplar keyed like retrieval queries.
inline ExampleStore enrich(const ExampleStore& store, const BugReport& report) {
  if (report.steps.empty()) throw Error(ErrorCode::InvalidArgument, "report has no steps");
  ExampleBug b;
  b.id = store.next_id();
  b.description = report.description;
  b.kind = report.kind;
  b.activity_context = short_activity(report.steps.front().activity_name);
  std::vector<std::string> path;
  for (const auto& s : report.steps) path.push_back(s.function_label);
  b.reproduction_path = text::join(path, " -> ");
  for (const auto& s : report.steps)
    if (s.seq == report.faulty_seq) b.screenshot_ref = s.screenshot_ref;
  return store.with(std::move(b));
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const DetectionRecord& r) {
  j = {{"subsequence", r.subsequence_id}, {"community", r.community},  {"steps", r.seqs},
       {"examples", r.example_ids},       {"model", r.model},          {"transcript_index", r.transcript_index}};
  j["reply"] = r.reply ? nlohmann::json(*r.reply) : nlohmann::json(nullptr);
  j["error"] = r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, DetectionRecord& r) {
  r.subsequence_id = j.at("subsequence").get<int>();
  r.community = j.at("community").get<int>();
  r.seqs = j.at("steps").get<std::vector<int>>();
  r.example_ids = j.at("examples").get<std::vector<std::string>>();
  r.model = j.at("model").get<std::string>();
  r.transcript_index = j.at("transcript_index").get<int>();
  r.reply = j.at("reply").is_null() ? std::nullopt : std::optional<std::string>(j.at("reply").get<std::string>());
  r.error = j.at("error").is_null() ? std::nullopt : std::optional<std::string>(j.at("error").get<std::string>());
}

inline nlohmann::json report_to_json(const BugReport& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"seq", s.seq}, {"screenshot", s.screenshot_ref}, {"function", s.function_label}, {"activity", s.activity_name}});
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : r.sources)
    sources.push_back({{"model", s.model}, {"transcript_index", s.transcript_index}, {"subsequence", s.subsequence_id}});
  return {{"kind", to_string(r.kind)},
          {"description", r.description},
          {"package", r.package},
          {"subsequence", r.subsequence_id},
          {"faulty_step", r.faulty_seq},
          {"faulty_activity", r.faulty_activity},
          {"steps", steps},
          {"sources", sources},
          {"dedupe_key", r.dedupe_key}};
}

inline nlohmann::json report_manifest(const AppInfo& app, const std::vector<BugReport>& reports,
                                      const std::vector<std::string>& notes = {}) {
  nlohmann::json list = nlohmann::json::array();
  std::size_t intra = 0, inter = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto j = report_to_json(reports[i]);
    j["id"] = "bug-" + std::to_string(i + 1);
    list.push_back(std::move(j));
    (reports[i].kind == BugKind::IntraPage ? intra : inter)++;
  }
  return {{"schema", "droidlens.report/1"},
          {"app", app.app_name},
          {"package", app.package_id},
          {"counts", {{"intra_page", intra}, {"inter_page", inter}}},
          {"reports", list},
          {"notes", notes}};
}

inline std::string render_report_markdown(const AppInfo& app, const std::vector<BugReport>& reports,
                                          const std::vector<std::string>& notes = {}) {
  std::string out = "# Bug report: " + app.app_name + " (" + app.package_id + ")\n\n";
  for (const auto& n : notes) out += "> " + n + "\n";
  if (!notes.empty()) out += "\n";
  if (reports.empty()) out += "No non-crash functional bugs were reported.\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out += "## bug-" + std::to_string(i + 1) + " (" + to_string(r.kind) + ")\n\n";
    out += r.description + "\n\n";
    out += "- faulty step: " + std::to_string(r.faulty_seq) + " on " + short_activity(r.faulty_activity) + "\n";
    if (r.subsequence_id >= 0) out += "- sub-sequence: " + std::to_string(r.subsequence_id) + "\n";
    out += "- path:\n";
    for (const auto& s : r.steps) {
      out += "  " + std::to_string(s.seq) + ". " + s.function_label + " on " + short_activity(s.activity_name) + " ![step " +
             std::to_string(s.seq) + "](" + s.screenshot_ref + ")" + (s.seq == r.faulty_seq ? " <- faulty" : "") + "\n";
    }
    out += "- verdict source:";
    for (const auto& s : r.sources) out += " " + s.model + "#" + std::to_string(s.transcript_index);
    out += "\n\n";
  }
  return out;
}

}  // namespace droidlens
