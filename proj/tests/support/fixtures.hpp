#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "droidlens/pipeline.hpp"

#ifndef DROIDLENS_SOURCE_DIR
#define DROIDLENS_SOURCE_DIR "."
#endif

namespace droidlens::testing {

namespace stdfs = std::filesystem;

inline stdfs::path source_dir() { return DROIDLENS_SOURCE_DIR; }
inline stdfs::path scenario_path() { return source_dir() / "scenarios/budget-app/scenario.json"; }
inline stdfs::path fixture(const std::string& name) { return source_dir() / "tests/fixtures/budget-app" / name; }
inline stdfs::path corpus_path() { return source_dir() / "resources/corpus/seed_bugs.jsonl"; }
inline stdfs::path embeddings_path() { return source_dir() / "resources/embeddings/toy.txt"; }

/// Removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = stdfs::temp_directory_path() /
            ("droidlens-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    stdfs::remove_all(path_);
    stdfs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    stdfs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const stdfs::path& path() const { return path_; }
  stdfs::path operator/(const std::string& p) const { return path_ / p; }

 private:
  stdfs::path path_;
};

inline const std::vector<std::string> kFixtureFaults{"data_operation_failure", "numerical_calculation_error"};

/// Sim run of the budget app driven by a replay fixture.
inline RunConfig fixture_config(const std::string& script, bool faults_on, const stdfs::path& session, int steps = 8) {
  RunConfig cfg;
  cfg.driver = DriverKind::Sim;
  cfg.scenario = scenario_path();
  cfg.faults = faults_on ? kFixtureFaults : std::vector<std::string>{};
  cfg.backend = BackendKind::Replay;
  cfg.replay_script = fixture(script);
  cfg.budget.step_limit = steps;
  cfg.session_dir = session;
  cfg.corpus = corpus_path();
  cfg.embeddings = embeddings_path();
  return cfg;
}

/// Widget with the fields tests usually care about.
inline Widget widget(int index, std::string text, Bounds b, bool clickable = true) {
  Widget w;
  w.node_index = index;
  w.text = std::move(text);
  w.class_name = "android.widget.Button";
  w.clickable = clickable;
  w.bounds = b;
  return w;
}

inline AppInfo budget_app() {
  AppInfo a;
  a.app_name = "Budget";
  a.package_id = "com.example.budget";
  a.activity_names = {"com.example.budget.AddExpenseActivity", "com.example.budget.MainActivity",
                      "com.example.budget.RecordsActivity", "com.example.budget.SettingsActivity"};
  return a;
}

/// History whose steps carry the given function names; screenshots are blank
/// images kept in `images`.
inline TestingHistory history_of(const std::vector<std::string>& names, ImageStore& images,
                                 const std::string& activity = "com.example.budget.MainActivity") {
  TestingHistory h;
  const Raster blank(40, 30, {255, 255, 255});
  for (const auto& name : names) {
    StepRecord s;
    s.seq = static_cast<int>(h.steps.size());
    s.page_digest = "page" + std::to_string(s.seq);
    s.action = Action::make(ActionKind::Click, 1, "OK");
    s.target_node_index = 0;
    s.function_name = name;
    s.activity_name = activity;
    s.timestamp_ms = 1000 * s.seq;
    record_step(h, s, images, blank, Bounds{2, 2, 20, 12});
  }
  return h;
}

}  // namespace droidlens::testing
