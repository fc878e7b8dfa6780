#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/clock.hpp"
#include "droidlens/detector.hpp"
#include "droidlens/device/adb_driver.hpp"
#include "droidlens/device/sim_app.hpp"
#include "droidlens/error.hpp"
#include "droidlens/example_store.hpp"
#include "droidlens/explorer.hpp"
#include "droidlens/fsutil.hpp"
#include "droidlens/history.hpp"
#include "droidlens/image_store.hpp"
#include "droidlens/llm/gateway.hpp"
#include "droidlens/llm/http_backend.hpp"
#include "droidlens/llm/replay.hpp"
#include "droidlens/log.hpp"
#include "droidlens/segmenter.hpp"

namespace droidlens {

namespace stdfs = std::filesystem;

enum class DriverKind { Sim, Adb };
enum class BackendKind { Http, Replay };

struct RunConfig {
  DriverKind driver = DriverKind::Sim;
  stdfs::path scenario;                   // sim
  std::optional<std::vector<std::string>> faults;  // sim; unset: the scenario's own list
  device::AdbConfig adb;                  // real device
  std::string package;                    // real device; sim takes it from the scenario
  stdfs::path manifest;                   // empty: AndroidManifest.xml beside the scenario
  std::string pre_run_hook;               // shell command run once before launch

  BackendKind backend = BackendKind::Replay;
  stdfs::path replay_script;
  llm::ModelConfig model;

  ExplorationBudget budget;
  std::size_t k = kDefaultTopK;
  stdfs::path session_dir = "session";
  stdfs::path corpus;       // empty: no exemplars
  stdfs::path embeddings;
  stdfs::path templates;    // empty: built-in prompts
  std::uint64_t seed = 0;
  ModularityVariant variant = ModularityVariant::Newman;
  int parallelism = 1;
  /// Sim only: drive all timing from a virtual clock so runs are reproducible.
  bool virtual_time = true;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitDriver = 3,
  kExitGateway = 4,
  kExitSession = 5,
};

struct RunSummary {
  int steps = 0;
  std::vector<std::string> activities_visited;  // sorted, full names
  double activity_coverage = 0.0;
  std::size_t manifest_activities = 0;
  std::size_t functions = 0;
  std::size_t intra_page_reports = 0;
  std::size_t inter_page_reports = 0;
  std::int64_t wall_clock_ms = 0;
  std::size_t model_calls = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  int exit_code = kExitOk;
  std::string status = "ok";
  friend bool operator==(const RunSummary&, const RunSummary&) = default;
};

inline nlohmann::json summary_to_json(const RunSummary& s) {
  return {{"schema", "droidlens.summary/1"},
          {"steps", s.steps},
          {"activities_visited", s.activities_visited},
          {"manifest_activities", s.manifest_activities},
          {"activity_coverage", s.activity_coverage},
          {"coverage_metric", "activity coverage; code coverage is not measured"},
          {"functions", s.functions},
          {"reports", {{"intra_page", s.intra_page_reports}, {"inter_page", s.inter_page_reports}}},
          {"wall_clock_ms", s.wall_clock_ms},
          {"model_calls", s.model_calls},
          {"prompt_tokens", s.prompt_tokens},
          {"completion_tokens", s.completion_tokens},
          {"exit_code", s.exit_code},
          {"status", s.status}};
}

inline std::string summary_to_text(const RunSummary& s) {
  char cov[32];
  std::snprintf(cov, sizeof cov, "%.2f", s.activity_coverage);
  std::string out;
  out += "status:             " + s.status + "\n";
  out += "steps:              " + std::to_string(s.steps) + "\n";
  out += "activity coverage:  " + std::string(cov) + " (" + std::to_string(s.activities_visited.size()) + " visited, " +
         std::to_string(s.manifest_activities) + " in manifest; code coverage not measured)\n";
  out += "functions:          " + std::to_string(s.functions) + "\n";
  out += "reports:            " + std::to_string(s.intra_page_reports) + " intra-page, " +
         std::to_string(s.inter_page_reports) + " inter-page\n";
  out += "wall clock:         " + std::to_string(s.wall_clock_ms) + " ms\n";
  out += "model calls:        " + std::to_string(s.model_calls) + " (" + std::to_string(s.prompt_tokens) + " prompt / " +
         std::to_string(s.completion_tokens) + " completion tokens)\n";
  return out;
}

/// |visited ∩ manifest| / |manifest|; 0 for an empty manifest.
inline double activity_coverage(const AppInfo& app, const TestingHistory& h) {
  if (app.activity_names.empty()) return 0.0;
  std::set<std::string> hit;
  for (const auto& s : h.steps)
    if (app.activity_names.count(s.activity_name)) hit.insert(s.activity_name);
  return static_cast<double>(hit.size()) / static_cast<double>(app.activity_names.size());
}

// ---------------------------------------------------------------------------
// Session files

namespace session {

inline constexpr const char* kApp = "app.json";
inline constexpr const char* kFindings = "findings.json";
inline constexpr const char* kPartition = "partition.json";
inline constexpr const char* kDetections = "detections.json";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kReportMd = "report.md";
inline constexpr const char* kSummaryJson = "summary.json";
inline constexpr const char* kSummaryTxt = "summary.txt";
inline constexpr const char* kTranscript = "transcript.jsonl";
inline constexpr const char* kPages = "pages";

inline void write_json(const stdfs::path& file, const nlohmann::json& j) { fs::write_atomic(file, j.dump(2) + "\n"); }

inline std::optional<nlohmann::json> read_json(const stdfs::path& file) {
  if (!stdfs::exists(file)) return std::nullopt;
  try {
    return nlohmann::json::parse(fs::read_text(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::CorruptSession, file.string() + ": " + e.what());
  }
}

inline void write_pages(const stdfs::path& dir, const std::map<std::string, PageRecord>& pages) {
  for (const auto& [digest, rec] : pages) {
    const auto file = dir / kPages / (digest + ".json");
    if (stdfs::exists(file)) continue;
    write_json(file, {{"page", rec.page}, {"label_map", rec.label_map}, {"row_count", rec.row_count}});
  }
}

inline void write_findings(const stdfs::path& dir, const std::vector<IntraPageFinding>& findings) {
  write_json(dir / kFindings, {{"schema", "droidlens.findings/1"}, {"findings", findings}});
}

inline std::optional<std::vector<IntraPageFinding>> read_findings(const stdfs::path& dir) {
  const auto j = read_json(dir / kFindings);
  if (!j) return std::nullopt;
  try {
    return j->at("findings").get<std::vector<IntraPageFinding>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptSession, std::string("findings: ") + e.what());
  }
}

inline void write_detections(const stdfs::path& dir, const std::vector<DetectionRecord>& records) {
  write_json(dir / kDetections, {{"schema", "droidlens.detections/1"}, {"records", records}});
}

inline std::optional<std::vector<DetectionRecord>> read_detections(const stdfs::path& dir) {
  const auto j = read_json(dir / kDetections);
  if (!j) return std::nullopt;
  try {
    return j->at("records").get<std::vector<DetectionRecord>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptSession, std::string("detections: ") + e.what());
  }
}

inline std::optional<AppInfo> read_app(const stdfs::path& dir) {
  const auto j = read_json(dir / kApp);
  if (!j) return std::nullopt;
  try {
    return j->get<AppInfo>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptSession, std::string("app: ") + e.what());
  }
}

}  // namespace session

struct RenderedReports {
  std::vector<BugReport> reports;
  std::vector<std::string> notes;
};

/// Rebuilds report.json / report.md from what the session holds; never
/// queries anything. Missing stages are noted instead.
inline RenderedReports render_reports(const stdfs::path& dir) {
  if (!stdfs::is_directory(dir)) throw Error(ErrorCode::CorruptSession, "session directory not found: " + dir.string());
  RenderedReports out;
  const auto app = session::read_app(dir);
  const AppInfo info = app.value_or(AppInfo{});
  if (!app) out.notes.push_back("session has no app record; nothing was explored");
  const TestingHistory h = load_history(dir);
  if (h.steps.empty()) out.notes.push_back("session has no recorded steps");
  const auto findings = session::read_findings(dir);
  if (!findings && !h.steps.empty()) out.notes.push_back("intra-page findings missing; exploration did not finish");
  const auto records = session::read_detections(dir);
  if (!records && !h.steps.empty()) out.notes.push_back("detection stage did not run; only intra-page findings are reported");
  if (records)
    for (const auto& r : *records)
      if (r.error) out.notes.push_back("sub-sequence " + std::to_string(r.subsequence_id) + " skipped: " + *r.error);
  out.reports = assemble_reports(info, h, records.value_or(std::vector<DetectionRecord>{}),
                                 findings.value_or(std::vector<IntraPageFinding>{}));
  session::write_json(dir / session::kReportJson, report_manifest(info, out.reports, out.notes));
  fs::write_atomic(dir / session::kReportMd, render_report_markdown(info, out.reports, out.notes));
  return out;
}

/// Re-runs community detection over a persisted history and rewrites partition.json.
inline Partition resegment(const stdfs::path& dir, ModularityVariant variant = ModularityVariant::Newman) {
  const TestingHistory h = load_history(dir);
  if (h.steps.empty()) throw Error(ErrorCode::CorruptSession, "session has no steps to segment");
  Partition p = louvain(build_graph(h), variant);
  session::write_json(dir / session::kPartition, partition_to_json(p, variant));
  return p;
}

// ---------------------------------------------------------------------------
// run

namespace detail {

inline ExampleStore load_exemplars(const RunConfig& cfg) {
  if (cfg.corpus.empty()) return ExampleStore(EmbeddingTable(1));
  if (cfg.embeddings.empty()) throw Error(ErrorCode::ConfigError, "a corpus needs an embedding table (--embeddings)");
  return ingest_file(cfg.corpus, EmbeddingTable::load(cfg.embeddings));
}

inline AppInfo load_app(const RunConfig& cfg, const device::Scenario* sc) {
  stdfs::path manifest = cfg.manifest;
  if (manifest.empty() && sc) manifest = cfg.scenario.parent_path() / "AndroidManifest.xml";
  if (!manifest.empty() && stdfs::exists(manifest)) {
    AppInfo app = parse_manifest(fs::read_text(manifest));
    for (const auto& w : app.warnings) log::warn("manifest: " + w);
    return app;
  }
  if (!cfg.manifest.empty()) throw Error(ErrorCode::ConfigError, "manifest not found: " + cfg.manifest.string());
  if (!sc) throw Error(ErrorCode::ConfigError, "a real-device run needs --manifest");
  AppInfo app;
  app.package_id = sc->package;
  app.app_name = sc->app_name;
  for (const auto& [_, st] : sc->states) app.activity_names.insert(expand_activity_name(sc->package, st.activity));
  log::warn("no manifest beside the scenario; using the scenario's activities as the coverage denominator");
  return app;
}

inline bool gateway_error(ErrorCode c) {
  return c == ErrorCode::Transport || c == ErrorCode::RateLimited || c == ErrorCode::EndpointError ||
         c == ErrorCode::ScriptExhausted || c == ErrorCode::ExpectationMismatch;
}

inline int exit_code_for(ErrorCode c) {
  if (gateway_error(c)) return kExitGateway;
  if (c == ErrorCode::DriverFailure) return kExitDriver;
  if (c == ErrorCode::CorruptSession) return kExitSession;
  return kExitConfig;
}

}  // namespace detail

/// explore -> persist -> segment -> detect -> report -> summary. Every stage
/// that completes is persisted, even when a later one fails.
inline RunSummary run(const RunConfig& cfg) {
  RunSummary summary;
  const auto failed = [&](int code, const std::string& why) {
    summary.exit_code = code;
    summary.status = why;
    log::error(why);
    return summary;
  };

  // Configuration: everything is checked before the first model call.
  std::optional<device::Scenario> scenario;
  AppInfo app;
  ExampleStore exemplars;
  TemplateSet templates;
  std::unique_ptr<llm::ChatBackend> backend;
  try {
    if (cfg.driver == DriverKind::Sim) {
      if (cfg.scenario.empty()) throw Error(ErrorCode::ConfigError, "the simulator needs --scenario");
      scenario = device::load_scenario(cfg.scenario);
    }
    app = detail::load_app(cfg, scenario ? &*scenario : nullptr);
    if (cfg.driver == DriverKind::Adb && !cfg.package.empty() && cfg.package != app.package_id)
      throw Error(ErrorCode::ConfigError, "--package " + cfg.package + " does not match manifest " + app.package_id);
    exemplars = detail::load_exemplars(cfg);
    if (!cfg.templates.empty()) templates = TemplateSet::with_overrides(cfg.templates);
    if (cfg.budget.retry_limit < 1) throw Error(ErrorCode::ConfigError, "retry limit must be >= 1");
    if (!cfg.budget.wall_clock_s && !cfg.budget.step_limit)
      throw Error(ErrorCode::ConfigError, "set a wall-clock or step limit");
    if (cfg.k < 1) throw Error(ErrorCode::ConfigError, "K must be >= 1");
    if (cfg.backend == BackendKind::Replay) {
      if (cfg.replay_script.empty()) throw Error(ErrorCode::ConfigError, "replay backend needs --replay");
      if (!stdfs::exists(cfg.replay_script))
        throw Error(ErrorCode::ConfigError, "replay script not found: " + cfg.replay_script.string());
      backend = std::make_unique<llm::ReplayBackend>(llm::load_replay_script(cfg.replay_script), "replay");
    } else {
      backend = std::make_unique<llm::HttpBackend>(cfg.model);
    }
  } catch (const Error& e) {
    return failed(kExitConfig, std::string("config error: ") + e.what());
  }

  device::FaultSet faults = scenario ? scenario->faults : device::FaultSet{};
  if (cfg.faults) {
    faults.clear();
    for (const auto& f : *cfg.faults) {
      const auto k = device::parse_fault_kind(f);
      if (!k) return failed(kExitConfig, "config error: unknown fault kind " + f);
      faults.insert(*k);
    }
  }

  const stdfs::path dir = cfg.session_dir;
  stdfs::create_directories(dir);
  for (const char* stale : {kHistoryFile, session::kFindings, session::kPartition, session::kDetections,
                            session::kReportJson, session::kReportMd, session::kSummaryJson, session::kSummaryTxt})
    stdfs::remove(dir / stale);
  stdfs::remove_all(dir / "images");
  stdfs::remove_all(dir / session::kPages);
  session::write_json(dir / session::kApp, app);

  ManualClock virtual_clock;
  SystemClock wall_clock;
  const bool virt = cfg.driver == DriverKind::Sim && cfg.virtual_time;
  Clock& clock = virt ? static_cast<Clock&>(virtual_clock) : static_cast<Clock&>(wall_clock);

  llm::Gateway gateway(std::move(backend), &clock);
  gateway.set_transcript_file(dir / session::kTranscript);

  std::unique_ptr<device::DeviceDriver> driver;
  if (scenario)
    driver = std::make_unique<device::SimDriver>(*scenario, faults, virt ? &virtual_clock : nullptr);
  else
    driver = std::make_unique<device::AdbDriver>(cfg.adb);

  const auto finish = [&](const TestingHistory& h, std::int64_t elapsed) {
    summary.steps = static_cast<int>(h.steps.size());
    std::set<std::string> visited;
    for (const auto& s : h.steps) visited.insert(s.activity_name);
    summary.activities_visited.assign(visited.begin(), visited.end());
    summary.manifest_activities = app.activity_names.size();
    summary.activity_coverage = activity_coverage(app, h);
    summary.functions = h.catalog.size();
    summary.wall_clock_ms = elapsed;
    summary.model_calls = gateway.call_count();
    summary.prompt_tokens = gateway.prompt_tokens();
    summary.completion_tokens = gateway.completion_tokens();
    try {
      const auto rendered = render_reports(dir);
      for (const auto& r : rendered.reports) (r.kind == BugKind::IntraPage ? summary.intra_page_reports : summary.inter_page_reports)++;
    } catch (const Error& e) {
      log::error(std::string("report rendering failed: ") + e.what());
    }
    session::write_json(dir / session::kSummaryJson, summary_to_json(summary));
    fs::write_atomic(dir / session::kSummaryTxt, summary_to_text(summary));
    return summary;
  };

  if (!cfg.pre_run_hook.empty()) {
    if (std::system(cfg.pre_run_hook.c_str()) != 0) {
      failed(kExitDriver, "pre-run hook failed: " + cfg.pre_run_hook);
      return finish({}, 0);
    }
  }
  const auto launched = driver->launch(app.package_id);
  if (launched.kind == device::OutcomeKind::Failed) {
    failed(kExitDriver, "driver failure: " + launched.reason);
    return finish({}, 0);
  }

  ImageStore images(dir);
  ExploreOptions opts;
  opts.templates = templates;
  opts.seed = cfg.seed;
  TestingHistory last_history;
  std::vector<IntraPageFinding> last_findings;
  opts.on_step = [&](const TestingHistory& h, const std::vector<IntraPageFinding>& f,
                     const std::map<std::string, PageRecord>& pages) {
    persist_history(h, images, dir);
    session::write_pages(dir, pages);
    last_history = h;
    last_findings = f;
  };

  const std::int64_t start = clock.now_ms();
  ExploreResult explored;
  try {
    explored = explore(app, *driver, gateway, cfg.budget, images, clock, opts);
  } catch (const Error& e) {
    // Partial history was checkpointed after the last complete step.
    session::write_findings(dir, last_findings);
    failed(detail::exit_code_for(e.code()), std::string(detail::gateway_error(e.code()) ? "gateway failure: " : "error: ") + e.what());
    return finish(last_history, clock.now_ms() - start);
  }
  persist_history(explored.history, images, dir);
  session::write_pages(dir, explored.pages);
  session::write_findings(dir, explored.findings);
  if (explored.driver_failure) {
    failed(kExitDriver, "driver failure: " + *explored.driver_failure);
    return finish(explored.history, explored.elapsed_ms);
  }

  if (!explored.history.steps.empty()) {
    Partition partition = louvain(build_graph(explored.history), cfg.variant);
    session::write_json(dir / session::kPartition, partition_to_json(partition, cfg.variant));
    DetectOptions dopts;
    dopts.k = cfg.k;
    dopts.templates = templates;
    dopts.parallelism = cfg.parallelism;
    const auto records = query_detector(app, segments(explored.history, partition), gateway, exemplars, images, dopts);
    session::write_detections(dir, records);
    for (const auto& r : records) {
      if (r.error && summary.exit_code == kExitOk) {
        summary.exit_code = kExitGateway;
        summary.status = "gateway failure on sub-sequence " + std::to_string(r.subsequence_id) + ": " + *r.error;
      }
    }
  } else {
    session::write_detections(dir, {});
  }
  return finish(explored.history, clock.now_ms() - start);
}

// ---------------------------------------------------------------------------
// corpus

/// Appends every report of a session to a corpus file as new exemplars.
inline std::size_t enrich_corpus(const stdfs::path& corpus, const stdfs::path& embeddings, const stdfs::path& session_dir,
                                 const std::optional<std::string>& report_id = std::nullopt) {
  ExampleStore store = stdfs::exists(corpus) ? ingest_file(corpus, EmbeddingTable::load(embeddings))
                                             : ExampleStore(EmbeddingTable::load(embeddings));
  const auto rendered = render_reports(session_dir);
  std::size_t added = 0;
  for (std::size_t i = 0; i < rendered.reports.size(); ++i) {
    if (report_id && *report_id != "bug-" + std::to_string(i + 1)) continue;
    store = enrich(store, rendered.reports[i]);
    ++added;
  }
  if (report_id && added == 0) throw Error(ErrorCode::InvalidArgument, "no report " + *report_id + " in " + session_dir.string());
  fs::write_atomic(corpus, corpus_to_jsonl(store));
  return added;
}

}  // namespace droidlens
