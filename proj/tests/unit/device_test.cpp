#include <gtest/gtest.h>

#include "droidlens/device/adb_driver.hpp"
#include "droidlens/device/sim_app.hpp"
#include "support/fixtures.hpp"

using namespace droidlens;
using namespace droidlens::device;
using droidlens::testing::scenario_path;

namespace {

/// Records argv and answers from a script keyed by the adb subcommand words.
class FakeRunner final : public CommandRunner {
 public:
  CommandResult run(const std::vector<std::string>& argv, int) override {
    calls.push_back(argv);
    std::string joined;
    for (std::size_t i = 1; i < argv.size(); ++i) joined += (i > 1 ? " " : "") + argv[i];
    for (const auto& [prefix, result] : answers)
      if (joined.find(prefix) != std::string::npos) return result;
    return {};
  }
  std::vector<std::vector<std::string>> calls;
  std::vector<std::pair<std::string, CommandResult>> answers;
};

const char* kDumpsys =
    "ACTIVITY MANAGER ACTIVITIES\n"
    "  topResumedActivity=ActivityRecord{5d1 u0 com.example.budget/.RecordsActivity t12}\n";

Scenario scenario() { return load_scenario(scenario_path()); }

const RenderedWidget* find(const std::vector<RenderedWidget>& ws, const std::string& id) {
  for (const auto& w : ws)
    if (w.id == id) return &w;
  return nullptr;
}

}  // namespace

TEST(Gestures, TapAndScrollGeometry) {
  const Bounds b{100, 200, 300, 600};
  EXPECT_EQ(tap_at_center(b), (Gesture{Gesture::Kind::Tap, 200, 400, 200, 400, 0}));
  EXPECT_EQ(scroll_gesture(b, ScrollDirection::Down, 300), (Gesture{Gesture::Kind::Swipe, 200, 500, 200, 300, 300}));
  EXPECT_EQ(scroll_gesture(b, ScrollDirection::Up, 300), (Gesture{Gesture::Kind::Swipe, 200, 300, 200, 500, 300}));
  EXPECT_EQ(scroll_gesture(b, ScrollDirection::Right, 300), (Gesture{Gesture::Kind::Swipe, 250, 400, 150, 400, 300}));
  EXPECT_EQ(scroll_gesture(b, ScrollDirection::Left, 300), (Gesture{Gesture::Kind::Swipe, 150, 400, 250, 400, 300}));
}

TEST(Adb, EscapesInputText) {
  EXPECT_EQ(escape_input_text("12.5"), "12.5");
  EXPECT_EQ(escape_input_text("a b"), "a%sb");
  EXPECT_EQ(escape_input_text("it's $5 (ok)"), "it\\'s%s\\$5%s\\(ok\\)");
}

TEST(Adb, ParsesResumedActivity) {
  EXPECT_EQ(parse_resumed_activity(kDumpsys), "com.example.budget.RecordsActivity");
  EXPECT_EQ(parse_resumed_activity("  mResumedActivity: ActivityRecord{1 u0 org.x/org.y.Main t2}"), "org.y.Main");
  EXPECT_FALSE(parse_resumed_activity("nothing resumed"));
}

TEST(Adb, CommandsPerAction) {
  auto runner = std::make_shared<FakeRunner>();
  runner->answers.push_back({"dumpsys", {0, kDumpsys, "", false, false}});
  AdbConfig cfg;
  cfg.adb_path = "/opt/adb";
  cfg.serial = "emulator-5554";
  AdbDriver adb(cfg, runner);
  ASSERT_EQ(adb.launch("com.example.budget").kind, OutcomeKind::Ok);
  EXPECT_EQ(runner->calls[0], (std::vector<std::string>{"/opt/adb", "-s", "emulator-5554", "shell", "monkey", "-p",
                                                         "com.example.budget", "-c", "android.intent.category.LAUNCHER", "1"}));
  runner->calls.clear();

  const Bounds b{0, 100, 200, 300};
  EXPECT_EQ(adb.perform(Action::make(ActionKind::Input, 1, "Amount", "4 2"), b).kind, OutcomeKind::Ok);
  ASSERT_EQ(runner->calls.size(), 3u);
  EXPECT_EQ(std::vector<std::string>(runner->calls[0].begin() + 3, runner->calls[0].end()),
            AdbDriver::tap_cmd(tap_at_center(b)));
  EXPECT_EQ(runner->calls[1].back(), "4%s2");
  runner->calls.clear();

  adb.perform(Action::make(ActionKind::LongClick, 1, "x"), b);
  EXPECT_EQ(std::vector<std::string>(runner->calls[0].begin() + 3, runner->calls[0].end()),
            (std::vector<std::string>{"shell", "input", "swipe", "100", "200", "100", "200", "800"}));
}

TEST(Adb, ForegroundChangeIsAppExit) {
  auto runner = std::make_shared<FakeRunner>();
  runner->answers.push_back({"dumpsys", {0, "topResumedActivity=ActivityRecord{1 u0 com.android.launcher/.Home t1}", "", false, false}});
  AdbDriver adb({}, runner);
  adb.launch("com.example.budget");
  const auto o = adb.perform(Action::make(ActionKind::Click, 1, "x"), Bounds{0, 0, 10, 10});
  EXPECT_EQ(o.kind, OutcomeKind::AppExited);
  EXPECT_NE(o.reason.find("com.android.launcher"), std::string::npos);
}

TEST(Adb, MissingBinaryExplainsFix) {
  AdbConfig cfg;
  cfg.adb_path = "/nonexistent/adb-binary";
  AdbDriver adb(cfg);
  const auto o = adb.launch("com.example.budget");
  EXPECT_EQ(o.kind, OutcomeKind::Failed);
  EXPECT_NE(o.reason.find("install Android platform-tools"), std::string::npos);
  try {
    adb.dump_hierarchy();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DriverFailure);
  }
}

TEST(Adb, NonZeroExitCarriesStderr) {
  auto runner = std::make_shared<FakeRunner>();
  runner->answers.push_back({"uiautomator", {1, "", "ERROR: null root node\n", false, false}});
  AdbDriver adb({}, runner);
  try {
    adb.dump_hierarchy();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("null root node"), std::string::npos);
  }
}

TEST(Adb, RealProcessRunner) {
  PosixRunner r;
  const auto ok = r.run({"sh", "-c", "printf hi; printf err >&2; exit 3"}, 5000);
  EXPECT_EQ(ok.out, "hi");
  EXPECT_EQ(ok.err, "err");
  EXPECT_EQ(ok.exit_code, 3);
  const auto slow = r.run({"sleep", "5"}, 100);
  EXPECT_TRUE(slow.timed_out);
}

TEST(Expr, TemplatesAndFunctions) {
  const nlohmann::json data = {{"records", {120, 45}}, {"name", "x"}, {"dark", false}};
  const ExprScope scope{data};
  EXPECT_EQ(render_text("Total: ${sum(records)}", scope), "Total: 165");
  EXPECT_EQ(render_text("${len(records)} / ${last(records)}", scope), "2 / 45");
  EXPECT_EQ(render_text("${name + 'y'}", scope), "xy");
  EXPECT_EQ(render_text("${1 + 2 - 4}", scope), "-1");
  EXPECT_TRUE(truthy(evaluate_template("${not(dark)}", scope)));
  EXPECT_THROW(render_text("${nope}", scope), Error);
  EXPECT_THROW(render_text("${sum(records}", scope), Error);
}

TEST(Sim, LaunchAndRenderMain) {
  SimDriver sim(scenario());
  EXPECT_EQ(sim.launch("com.other").kind, OutcomeKind::Failed);
  ASSERT_EQ(sim.launch("com.example.budget").kind, OutcomeKind::Ok);
  EXPECT_EQ(sim.current_activity(), "com.example.budget.MainActivity");
  const auto page = parse_view_hierarchy(sim.dump_hierarchy(), sim.current_activity());
  EXPECT_EQ(page.activity_name, "com.example.budget.MainActivity");
  EXPECT_GE(actionable_widgets(page).size(), 3u);
  const auto shot = sim.capture_screenshot();
  EXPECT_EQ(shot.width(), 540);
  EXPECT_EQ(shot.height(), 960);
}

TEST(Sim, DeterministicAcrossInstances) {
  const auto drive = [] {
    SimDriver sim(scenario());
    sim.launch("com.example.budget");
    std::vector<std::string> out;
    for (const auto& [id, kind, input] : std::vector<std::tuple<std::string, ActionKind, std::string>>{
             {"add", ActionKind::Click, ""}, {"amount", ActionKind::Input, "30"}, {"save", ActionKind::Click, ""},
             {"records", ActionKind::Click, ""}}) {
      sim.perform_on(id, kind, input);
      out.push_back(sim.dump_hierarchy());
      out.push_back(raster_digest(sim.capture_screenshot()));
    }
    return out;
  };
  EXPECT_EQ(drive(), drive());
}

TEST(Sim, AddExpenseFlow) {
  SimDriver sim(scenario());
  sim.launch("com.example.budget");
  ASSERT_EQ(sim.perform_on("add", ActionKind::Click).kind, OutcomeKind::Ok);
  EXPECT_EQ(sim.current_activity(), "com.example.budget.AddExpenseActivity");
  sim.perform_on("amount", ActionKind::Input, "30");
  sim.perform_on("save", ActionKind::Click);
  EXPECT_EQ(sim.state(), "main");
  EXPECT_EQ(sim.actual_data()["records"].size(), 3u);
  sim.perform_on("records", ActionKind::Click);
  const auto ws = sim.render();
  ASSERT_TRUE(find(ws, "total"));
  EXPECT_EQ(find(ws, "total")->text, "Total: 195");
  ASSERT_TRUE(find(ws, "rec#2"));
  EXPECT_EQ(find(ws, "rec#2")->bounds.top - find(ws, "rec#1")->bounds.top, 70);
  EXPECT_EQ(sim.perform_on("save", ActionKind::Click).kind, OutcomeKind::Failed);
}

TEST(Sim, PerformHitsByBoundsAndIgnoresEmptySpace) {
  SimDriver sim(scenario());
  sim.launch("com.example.budget");
  const auto ws = sim.render();
  const auto* add = find(ws, "add");
  ASSERT_TRUE(add);
  EXPECT_EQ(sim.perform(Action::make(ActionKind::Click, 1, "x"), Bounds{530, 930, 539, 959}).kind, OutcomeKind::Ok);
  EXPECT_EQ(sim.state(), "main");
  sim.perform(Action::make(ActionKind::Click, 1, "x"), add->bounds);
  EXPECT_EQ(sim.state(), "add");
}

TEST(Sim, RestartResetsTransientData) {
  ManualClock clock;
  SimDriver sim(scenario(), std::nullopt, &clock);
  sim.launch("com.example.budget");
  sim.perform_on("add", ActionKind::Click);
  sim.perform_on("amount", ActionKind::Input, "77");
  EXPECT_EQ(sim.actual_data()["draft"], "77");
  sim.restart();
  EXPECT_EQ(sim.state(), "main");
  EXPECT_EQ(sim.actual_data()["draft"], "");
  EXPECT_EQ(clock.now_ms(), 3 * 1500);
}

TEST(Sim, FaultFreeAssertionsHold) {
  for (const auto& r : check_assertions(scenario(), {})) EXPECT_TRUE(r.passed) << r.name << ": " << r.failures.front();
}

TEST(Sim, EveryFaultBreaksSomeAssertion) {
  for (auto k : kAllFaults) {
    const auto results = check_assertions(scenario(), {k});
    const auto failing = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed; });
    EXPECT_GE(failing, 1) << to_string(k);
  }
}

TEST(Sim, DataOperationFailureKeepsIntendedModel) {
  SimDriver sim(scenario(), FaultSet{FaultKind::DataOperationFailure});
  sim.launch("com.example.budget");
  sim.perform_on("add", ActionKind::Click);
  sim.perform_on("amount", ActionKind::Input, "30");
  sim.perform_on("save", ActionKind::Click);
  EXPECT_EQ(sim.actual_data()["records"].size(), 2u);
  EXPECT_EQ(sim.intended_data()["records"].size(), 3u);
  EXPECT_EQ(sim.actual_data()["status"], "Expense saved");
}

TEST(Sim, FaultNamesRoundTrip) {
  for (auto k : kAllFaults) EXPECT_EQ(parse_fault_kind(to_string(k)), k);
  EXPECT_FALSE(parse_fault_kind("made_up"));
}

TEST(Sim, ScenarioValidation) {
  EXPECT_THROW(scenario_from_json(nlohmann::json::object()), Error);
  auto j = nlohmann::json::parse(fs::read_text(scenario_path()));
  j["transitions"].push_back({{"state", "main"}, {"widget", "ghost"}, {"action", "click"}, {"to", "nowhere"}});
  EXPECT_THROW(scenario_from_json(j), Error);
  EXPECT_THROW(load_scenario("/nonexistent/scenario.json"), Error);
}
