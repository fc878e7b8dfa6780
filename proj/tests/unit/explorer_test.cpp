#include <gtest/gtest.h>

#include "droidlens/explorer.hpp"
#include "droidlens/device/sim_app.hpp"
#include "droidlens/llm/replay.hpp"
#include "support/fixtures.hpp"

using namespace droidlens;
using droidlens::testing::budget_app;
using droidlens::testing::history_of;
using droidlens::testing::scenario_path;

namespace {

llm::Gateway replay(std::vector<std::string> responses) {
  return llm::Gateway(std::make_unique<llm::ReplayBackend>(llm::ReplayScript{std::move(responses), {}}));
}

std::vector<std::string> section_names(const ExplorerPrompt& p) {
  std::vector<std::string> out;
  for (const auto& [name, body] : p.bundle.sections) out.push_back(name);
  return out;
}

/// Main page of the simulated budget app, annotated.
struct SimPage {
  AppInfo app = budget_app();
  GuiPage page;
  AnnotatedScreenshot annotated;
  TestingHistory history;
  ImageStore images;

  SimPage() {
    device::SimDriver sim(device::load_scenario(scenario_path()));
    page = parse_view_hierarchy(sim.dump_hierarchy(), sim.current_activity());
    annotated = annotate(sim.capture_screenshot(), page);
  }
  PageContext ctx() const { return {app, page, annotated, history, images}; }
  const LabelEntry& entry(int numeral) const { return *annotated.label_map.by_numeral(numeral); }
};

std::string click(int numeral, const std::string& text) {
  return "-Action: click -Widget: " + std::to_string(numeral) + " -Text: " + text;
}

std::string user_text(const llm::TranscriptEntry& e) { return e.request.at(1).at("text").get<std::string>(); }

}  // namespace

TEST(ExplorerPrompt, FirstRunSections) {
  SimPage s;
  const auto p = build_explorer_prompt(s.ctx(), QueryMode::GeneralAction, std::nullopt);
  EXPECT_EQ(section_names(p), (std::vector<std::string>{"app_info", "current_legend", "first_run", "action_general"}));
  EXPECT_EQ(p.images.size(), 1u);
  const auto text = p.bundle.user_text();
  EXPECT_NE(text.find("MainActivity"), std::string::npos);
  EXPECT_NE(text.find(std::to_string(s.annotated.label_map.entries.size()) + " actionable widgets in " +
                      std::to_string(s.annotated.row_count) + " rows"),
            std::string::npos);
}

TEST(ExplorerPrompt, TextInputModeAndFeedback) {
  SimPage s;
  const auto p = build_explorer_prompt(s.ctx(), QueryMode::TextInput, std::string("try again"));
  EXPECT_EQ(section_names(p),
            (std::vector<std::string>{"app_info", "current_legend", "first_run", "action_text_input", "feedback"}));
  EXPECT_NE(p.bundle.user_text().find("try again"), std::string::npos);
}

TEST(ExplorerPrompt, HistoryAddsFunctionsAndRecentImages) {
  SimPage s;
  s.history = history_of({"Add expense", "Add expense", "Check records", "Setting", "Setting", "Add expense"}, s.images);
  const auto p = build_explorer_prompt(s.ctx(), QueryMode::GeneralAction, std::nullopt);
  EXPECT_EQ(section_names(p), (std::vector<std::string>{"app_info", "current_legend", "explored_functions",
                                                        "recent_legend", "action_general"}));
  EXPECT_EQ(p.images.size(), 1u + kRecentScreenshots);
  const auto text = p.bundle.user_text();
  EXPECT_NE(text.find("- Add expense: 3"), std::string::npos);
  EXPECT_NE(text.find("- Check records: 1"), std::string::npos);
  EXPECT_NE(text.find("Image 5:"), std::string::npos);
  EXPECT_EQ(text.find("Image 6:"), std::string::npos);
}

TEST(ExplorerPrompt, ShortHistoryShowsEveryStep) {
  SimPage s;
  s.history = history_of({"Add expense", "Setting"}, s.images);
  EXPECT_EQ(build_explorer_prompt(s.ctx(), QueryMode::GeneralAction, std::nullopt).images.size(), 3u);
}

TEST(ExplorerPrompt, FunctionAndBugDetectPrompts) {
  SimPage s;
  EXPECT_EQ(section_names(build_function_prompt(s.ctx())),
            (std::vector<std::string>{"app_info", "current_legend", "first_run", "function_inquiry"}));
  const auto bd = build_bug_detect_prompt(s.app, s.page, s.annotated);
  EXPECT_EQ(section_names(bd), (std::vector<std::string>{"app_info", "bug_detect"}));
  EXPECT_EQ(bd.images.size(), 1u);
}

TEST(ParseAction, ReadsFields) {
  const auto r = parse_action_response("I think:\n-Action: input -Widget: 3 -Text: Amount -Input: 12.5");
  ASSERT_TRUE(std::holds_alternative<Action>(r));
  const auto& a = std::get<Action>(r);
  EXPECT_EQ(a.kind, ActionKind::Input);
  EXPECT_EQ(a.target_label, 3);
  EXPECT_EQ(a.target_text, "Amount");
  EXPECT_EQ(a.input_text.value_or(""), "12.5");
}

TEST(ParseAction, ScrollDirection) {
  const auto r = parse_action_response("-Action: scroll -Widget: 2 -Text: list -Direction: up");
  ASSERT_TRUE(std::holds_alternative<Action>(r));
  EXPECT_EQ(std::get<Action>(r).scroll_direction, ScrollDirection::Up);
}

TEST(ParseAction, MalformedReasons) {
  const auto reason = [](std::string_view s) {
    const auto r = parse_action_response(s);
    return std::holds_alternative<Malformed>(r) ? std::get<Malformed>(r).reason : std::string("parsed");
  };
  EXPECT_NE(reason("click the button").find("no Action"), std::string::npos);
  EXPECT_NE(reason("-Action: dance -Widget: 1").find("unknown action"), std::string::npos);
  EXPECT_NE(reason("-Action: click -Text: OK").find("no Widget"), std::string::npos);
  EXPECT_NE(reason("-Action: click -Widget: 0 -Text: OK").find("positive"), std::string::npos);
}

TEST(ParseFunction, NormalizesName) {
  EXPECT_EQ(parse_function_response("-Function: Add expense-2 -Status: ongoing"),
            (FunctionInference{"Add expense", "ongoing"}));
  EXPECT_FALSE(parse_function_response("nothing here"));
}

TEST(ParseBugDetect, YesNoAndReason) {
  const auto yes = parse_bug_detect_response("-Bug: yes -Reason: total disagrees with records");
  ASSERT_TRUE(yes);
  EXPECT_TRUE(yes->has_bug);
  EXPECT_EQ(yes->description, "total disagrees with records");
  const auto no = parse_bug_detect_response("-Bug: no");
  ASSERT_TRUE(no);
  EXPECT_FALSE(no->has_bug);
  EXPECT_FALSE(parse_bug_detect_response("-Bug: perhaps"));
}

TEST(NextAction, CorrectFirstAnswer) {
  SimPage s;
  const auto& e = s.entry(2);
  auto g = replay({click(2, e.widget_text)});
  const auto c = next_action(s.ctx(), QueryMode::GeneralAction, g, {});
  EXPECT_EQ(c.node_index, e.node_index);
  EXPECT_EQ(c.retries, 0);
  EXPECT_FALSE(c.fallback);
  EXPECT_TRUE(c.feedback_sent.empty());
  EXPECT_EQ(g.call_count(), 1u);
}

TEST(NextAction, TwoMismatchesThenCorrect) {
  SimPage s;
  const auto& e = s.entry(2);
  auto g = replay({click(2, "Wrong one"), click(2, "Still wrong"), click(2, e.widget_text)});
  const auto c = next_action(s.ctx(), QueryMode::GeneralAction, g, {});
  EXPECT_FALSE(c.fallback);
  EXPECT_EQ(c.retries, 2);
  EXPECT_EQ(c.node_index, e.node_index);
  ASSERT_EQ(c.feedback_sent.size(), 2u);

  const auto t = g.transcript();
  ASSERT_EQ(t.size(), 3u);
  const std::string phrase = "expected '" + e.widget_text + "' for widget 2";
  EXPECT_EQ(user_text(t[0]).find("Testing feedback"), std::string::npos);
  int with_feedback = 0;
  for (const auto& entry : t) with_feedback += user_text(entry).find(phrase) != std::string::npos;
  EXPECT_EQ(with_feedback, 2);
  EXPECT_NE(user_text(t[1]).find("your answer says 'Wrong one'"), std::string::npos);
  EXPECT_NE(user_text(t[2]).find("your answer says 'Still wrong'"), std::string::npos);
}

TEST(NextAction, ThreeMismatchesFallBack) {
  SimPage s;
  auto g = replay({click(1, "nope"), click(1, "nope"), click(1, "nope")});
  const auto c = next_action(s.ctx(), QueryMode::GeneralAction, g, {});
  EXPECT_TRUE(c.fallback);
  EXPECT_EQ(c.retries, 2);
  EXPECT_EQ(c.feedback_sent.size(), 2u);
  EXPECT_EQ(c.node_index, s.entry(1).node_index);
  EXPECT_EQ(g.call_count(), 3u);

  auto again = replay({click(1, "nope"), click(1, "nope"), click(1, "nope")});
  const auto c2 = next_action(s.ctx(), QueryMode::GeneralAction, again, {});
  EXPECT_EQ(c2.action, c.action);
}

TEST(NextAction, FallbackSkipsExploredWidgets) {
  SimPage s;
  StepRecord step;
  step.seq = 0;
  step.page_digest = s.page.source_digest;
  step.target_node_index = s.entry(1).node_index;
  step.function_name = "Add expense";
  step.action = Action::make(ActionKind::Click, 1, s.entry(1).widget_text);
  record_step(s.history, step, s.images, s.annotated.image, s.entry(1).bounds);
  const auto c = fallback_action(s.ctx(), 0);
  EXPECT_EQ(c.node_index, s.entry(2).node_index);
  EXPECT_TRUE(c.fallback);
}

TEST(NextAction, UnknownNumeralAndGarbageGetFeedback) {
  SimPage s;
  const int n = static_cast<int>(s.annotated.label_map.entries.size());
  auto g = replay({click(n + 5, "x"), "no idea", click(1, s.entry(1).widget_text)});
  const auto c = next_action(s.ctx(), QueryMode::GeneralAction, g, {});
  ASSERT_EQ(c.feedback_sent.size(), 2u);
  EXPECT_NE(c.feedback_sent[0].find("does not exist"), std::string::npos);
  EXPECT_NE(c.feedback_sent[1].find("could not be read"), std::string::npos);
  EXPECT_FALSE(c.fallback);
}

TEST(NextAction, RetryLimitOneMeansSingleQuery) {
  SimPage s;
  auto g = replay({click(1, "nope"), click(1, s.entry(1).widget_text)});
  ExplorationBudget b;
  b.retry_limit = 1;
  EXPECT_TRUE(next_action(s.ctx(), QueryMode::GeneralAction, g, b).fallback);
  EXPECT_EQ(g.call_count(), 1u);
}

TEST(InferFunction, FallsBackToActivity) {
  SimPage s;
  auto g = replay({"I am not sure"});
  EXPECT_EQ(infer_function(s.ctx(), g), (FunctionInference{"MainActivity", "unknown"}));
}

TEST(IntraPage, VerdictsAndUnreadable) {
  SimPage s;
  auto g = replay({"-Bug: yes -Reason: overlapping labels", "-Bug: no", "hmm"});
  const auto bug = intra_page_check(s.app, s.page, s.annotated, g);
  EXPECT_EQ(bug.verdict, FindingVerdict::Bug);
  EXPECT_EQ(bug.description, "overlapping labels");
  EXPECT_EQ(bug.transcript_index, 0);
  EXPECT_EQ(bug.model, "replay");
  EXPECT_EQ(intra_page_check(s.app, s.page, s.annotated, g).verdict, FindingVerdict::Clean);
  const auto unread = intra_page_check(s.app, s.page, s.annotated, g);
  EXPECT_EQ(unread.verdict, FindingVerdict::Clean);
  EXPECT_EQ(unread.transcript_index, 2);
}

namespace {

/// One-button app whose button closes it.
class ExitingDriver final : public device::DeviceDriver {
 public:
  device::Outcome launch(const std::string&) override { return device::Outcome::ok(); }
  Raster capture_screenshot() override { return Raster(200, 200, {255, 255, 255}); }
  std::string dump_hierarchy() override {
    return R"(<hierarchy><node index="0" text="Quit" class="android.widget.Button" package="com.example.quit" )"
           R"(clickable="true" bounds="[10,10][190,90]" /></hierarchy>)";
  }
  std::string current_activity() override { return "com.example.quit.MainActivity"; }
  device::Outcome perform(const Action&, const Bounds&) override {
    ++taps;
    return device::Outcome::app_exited("closed by Quit");
  }
  device::Outcome restart() override {
    ++restarts;
    return device::Outcome::ok();
  }
  int taps = 0;
  int restarts = 0;
};

/// Nothing actionable, ever.
class BlankDriver final : public device::DeviceDriver {
 public:
  device::Outcome launch(const std::string&) override { return device::Outcome::ok(); }
  Raster capture_screenshot() override { return Raster(50, 50); }
  std::string dump_hierarchy() override { return R"(<hierarchy><node index="0" bounds="[0,0][50,50]" /></hierarchy>)"; }
  std::string current_activity() override { return "com.example.blank.MainActivity"; }
  device::Outcome perform(const Action&, const Bounds&) override { return device::Outcome::ok(); }
  device::Outcome restart() override {
    ++restarts;
    return device::Outcome::ok();
  }
  int restarts = 0;
};

std::vector<std::string> step_responses(int steps, const std::string& action) {
  std::vector<std::string> out;
  for (int i = 0; i < steps; ++i) {
    out.push_back(action);
    out.push_back("-Function: Quit -Status: completed");
    out.push_back("-Bug: no");
  }
  return out;
}

}  // namespace

TEST(Explore, StepLimitAndRestartOnExit) {
  ExitingDriver driver;
  auto g = replay(step_responses(3, click(1, "Quit")));
  ImageStore images;
  ManualClock clock;
  ExplorationBudget b;
  b.step_limit = 3;
  const auto r = explore(AppInfo{}, driver, g, b, images, clock);
  EXPECT_EQ(r.history.steps.size(), 3u);
  EXPECT_EQ(r.findings.size(), 3u);
  EXPECT_EQ(driver.taps, 3);
  EXPECT_EQ(driver.restarts, 3);
  EXPECT_FALSE(r.driver_failure);
  int restart_events = 0;
  for (const auto& e : r.history.events) restart_events += e.kind == "restart";
  EXPECT_EQ(restart_events, 3);
  EXPECT_EQ(r.history.steps[0].function_name, "Quit");
  EXPECT_EQ(r.pages.size(), 1u);
  EXPECT_EQ(g.call_count(), 9u);
}

TEST(Explore, WallClockBudget) {
  ManualClock clock;
  device::SimDriver timed(device::load_scenario(scenario_path()), std::nullopt, &clock);
  SimPage s;
  auto g = replay(step_responses(50, click(1, s.entry(1).widget_text)));
  ImageStore images;
  ExplorationBudget b;
  b.wall_clock_s = 5;
  const auto r = explore(s.app, timed, g, b, images, clock);
  ASSERT_FALSE(r.history.steps.empty());
  EXPECT_GE(r.elapsed_ms, 5000);
  EXPECT_LT(r.history.steps.size(), 50u);
}

TEST(Explore, NeedsSomeBudget) {
  ExitingDriver driver;
  auto g = replay({});
  ImageStore images;
  ManualClock clock;
  ExplorationBudget b;
  b.wall_clock_s.reset();
  try {
    explore(AppInfo{}, driver, g, b, images, clock);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Explore, StopsAfterIdleRestarts) {
  BlankDriver driver;
  auto g = replay({});
  ImageStore images;
  ManualClock clock;
  ExplorationBudget b;
  b.step_limit = 5;
  const auto r = explore(AppInfo{}, driver, g, b, images, clock);
  EXPECT_TRUE(r.history.steps.empty());
  EXPECT_EQ(driver.restarts, 3);
  ASSERT_FALSE(r.history.events.empty());
  EXPECT_EQ(r.history.events.back().kind, "stopped");
  EXPECT_EQ(g.call_count(), 0u);
}

TEST(Explore, CheckpointsEveryStep) {
  ExitingDriver driver;
  auto g = replay(step_responses(2, click(1, "Quit")));
  ImageStore images;
  ManualClock clock;
  ExplorationBudget b;
  b.step_limit = 2;
  ExploreOptions opts;
  std::vector<std::size_t> seen;
  opts.on_step = [&](const TestingHistory& h, const auto&, const auto&) { seen.push_back(h.steps.size()); };
  explore(AppInfo{}, driver, g, b, images, clock, opts);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 2}));
}
