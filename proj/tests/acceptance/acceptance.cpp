// One line per acceptance criterion; exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "droidlens/llm/replay.hpp"
#include "support/fixtures.hpp"
#include "support/golden.hpp"
#include "support/oracle.hpp"
#include "support/pixel_oracle.hpp"

using namespace droidlens;
using namespace droidlens::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failed checks; the first few end up on the PASS/FAIL line.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failed_;
    if (failed_ <= 3) msgs_.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    if (failed_ == 0) return {true, summary};
    std::string d = std::to_string(failed_) + " failed check(s): ";
    for (std::size_t i = 0; i < msgs_.size(); ++i) d += (i ? "; " : "") + msgs_[i];
    return {false, d};
  }

 private:
  int failed_ = 0;
  std::vector<std::string> msgs_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

Outcome modularity_oracle() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  int matched = 0;
  long partitions = 0;
  for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
    const auto g = random_graph(seed);
    const auto best = brute_force_max(g);
    partitions += best.partitions;
    const auto p = louvain(g);
    const bool ok = std::abs(p.modularity - best.modularity) <= 1e-9;
    matched += ok;
    c.expect(ok, "seed " + std::to_string(seed) + " louvain " + fmt(p.modularity, 12) + " vs " + fmt(best.modularity, 12));
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "took " + fmt(secs) + " s");
  return c.outcome(std::to_string(matched) + "/100 graphs at the exhaustive optimum (" + std::to_string(partitions) +
                   " partitions), " + fmt(secs) + " s");
}

Outcome modularity_identities() {
  Checks c;
  for (std::uint64_t seed = 1; seed <= 500; ++seed) {
    const auto g = random_graph(seed);
    const double q = modularity(g, std::vector<int>(static_cast<std::size_t>(g.node_count()), 0));
    c.expect(std::abs(q) <= 1e-12, "seed " + std::to_string(seed) + " all-in-one Q = " + fmt(q, 15));
  }
  const auto g = two_cliques();
  const auto p = louvain(g);
  const auto best = canonical_labels(brute_force_max(g).community);
  c.expect(p.community == best, "two-clique partition differs from brute force");
  c.expect(p.community == std::vector<int>{0, 0, 0, 1, 1, 1}, "two cliques not split per clique");
  return c.outcome("all-in-one Q = 0 on 500 graphs; two cliques split 000111, Q = " + fmt(p.modularity, 6));
}

Outcome similarity_anchors() {
  Checks c;
  c.expect(name_similarity("Check budget-2", "Setting-1") == 0.0, "disjoint example is not exactly 0");
  const std::vector<std::string> names{"Check budget-2", "Setting-1", "Add expense", "add expense-3", "Expense add",
                                       "Budget setting", "Dark mode", "Check records", ""};
  for (const auto& a : names)
    for (const auto& b : names) {
      c.expect(name_similarity(a, b) == name_similarity(b, a), "asymmetric: " + a + " / " + b);
      if (!tokenize_function_name(a).empty() && tokenize_function_name(a) == tokenize_function_name(b))
        c.expect(name_similarity(a, b) == 1.0, "equal token sets below 1: " + a + " / " + b);
    }
  return c.outcome("disjoint pair 0, symmetric over " + std::to_string(names.size() * names.size()) +
                   " pairs, equal token sets 1");
}

Outcome annotation_pixels() {
  Checks c;
  const auto screens = pixels::sim_screens();
  std::set<ActionKind> kinds;
  std::size_t widgets = 0;
  for (const auto& s : screens) {
    for (const auto& v : pixels::screen_violations(s)) c.expect(false, v);
    const auto a = annotate(s.shot, s.page);
    widgets += a.label_map.entries.size();
    for (const auto& e : a.label_map.entries) kinds.insert(e.kind);
  }
  c.expect(kinds.size() == 5, "only " + std::to_string(kinds.size()) + " of 5 kinds exercised");
  return c.outcome(std::to_string(screens.size()) + " sim screens, " + std::to_string(widgets) +
                   " widgets, all 5 kinds: colours, numerals and label maps verified");
}

Outcome alignment_retry() {
  Checks c;
  const auto sc = device::load_scenario(scenario_path());
  device::SimDriver sim(sc, device::FaultSet{});
  sim.launch(sc.package);
  const GuiPage page = parse_view_hierarchy(sim.dump_hierarchy(), sim.current_activity());
  const AnnotatedScreenshot annotated = annotate(sim.capture_screenshot(), page);
  const AppInfo app = budget_app();
  const TestingHistory history;
  const ImageStore images;
  const PageContext ctx{app, page, annotated, history, images};
  const LabelEntry& target = *annotated.label_map.by_numeral(2);
  const auto click = [](int n, const std::string& text) { return "-Action: click -Widget: " + std::to_string(n) + " -Text: " + text; };
  const auto gateway = [](std::vector<std::string> r) {
    return llm::Gateway(std::make_unique<llm::ReplayBackend>(llm::ReplayScript{std::move(r), {}}));
  };

  auto g = gateway({click(2, "Settings"), click(2, "Budget"), click(2, target.widget_text)});
  const auto chosen = next_action(ctx, QueryMode::GeneralAction, g, {});
  const std::string phrase = "expected '" + target.widget_text + "' for widget 2";
  int with_feedback = 0;
  for (const auto& e : g.transcript())
    with_feedback += e.request.at(1).at("text").get<std::string>().find(phrase) != std::string::npos;
  c.expect(g.call_count() == 3, "expected 3 requests, saw " + std::to_string(g.call_count()));
  c.expect(with_feedback == 2, std::to_string(with_feedback) + " feedback-bearing requests");
  c.expect(!chosen.fallback && chosen.node_index == target.node_index, "third answer not adopted");

  const auto fallback_once = [&] {
    auto g3 = gateway({click(1, "nope"), click(1, "nope"), click(1, "nope")});
    return next_action(ctx, QueryMode::GeneralAction, g3, {});
  };
  const auto f1 = fallback_once(), f2 = fallback_once();
  c.expect(f1.fallback, "3 mismatches did not fall back");
  c.expect(f1.action == f2.action && f1.node_index == f2.node_index, "fallback not deterministic");
  return c.outcome("2 feedback requests then adoption of answer 3; 3 mismatches fall back to widget " +
                   std::to_string(f1.action.target_label));
}

std::map<std::string, std::string> snapshot(const stdfs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : stdfs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[stdfs::relative(e.path(), dir).string()] = fs::read_text(e.path());
  return out;
}

// Hand-checked ground truth: the saved expense is dropped at step 3 and first
// visible (with the wrong total) on the records page at step 5.
constexpr int kFaultyStep = 5;

Outcome detection_fixture() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::map<std::string, std::string>> snaps;
  for (int i = 0; i < 3; ++i) {
    TempDir dir("accept-on");
    const auto s = run(fixture_config("replay_faults_on.json", true, dir.path()));
    c.expect(s.exit_code == kExitOk, "faults-on run: " + s.status);
    const auto reports = render_reports(dir.path()).reports;
    int inter = 0, intra = 0;
    for (const auto& r : reports) {
      (r.kind == BugKind::InterPage ? inter : intra)++;
      c.expect(r.faulty_seq == kFaultyStep, "report at step " + std::to_string(r.faulty_seq));
    }
    c.expect(inter == 1 && intra == 1, std::to_string(inter) + " inter / " + std::to_string(intra) + " intra");
    snaps.push_back(snapshot(dir.path()));
  }
  c.expect(snaps[0] == snaps[1] && snaps[1] == snaps[2], "session files differ between runs");
  TempDir off("accept-off");
  const auto s = run(fixture_config("replay_faults_off.json", false, off.path()));
  c.expect(s.exit_code == kExitOk && s.inter_page_reports + s.intra_page_reports == 0, "faults-off run reported bugs");
  const double secs = seconds_since(t0);
  c.expect(secs < 30.0, "took " + fmt(secs) + " s");
  return c.outcome("faults on: 1 inter + 1 intra at step " + std::to_string(kFaultyStep) + ", " +
                   std::to_string(snaps[0].size()) + " files identical over 3 runs; faults off: 0; " + fmt(secs) + " s");
}

Outcome coverage_metric() {
  Checks c;
  TempDir full("accept-full"), part("accept-part");
  const auto a = run(fixture_config("replay_faults_off.json", false, full.path()));
  const auto b = run(fixture_config("replay_partial.json", false, part.path(), 6));
  c.expect(a.activity_coverage == 1.0, "full run coverage " + fmt(a.activity_coverage));
  c.expect(b.activity_coverage == 0.75, "3-of-4 run coverage " + fmt(b.activity_coverage));
  return c.outcome("full run " + fmt(a.activity_coverage, 2) + ", 3-of-4 run " + fmt(b.activity_coverage, 2));
}

Outcome retrieval() {
  Checks c;
  const auto store = ingest_file(corpus_path(), EmbeddingTable::load(embeddings_path()));
  for (const auto& e : store.examples()) {
    const auto hits = top_k(store, e.activity_context);
    c.expect(!hits.empty() && hits.front().example.id == e.id, e.id + " not ranked first for its own context");
    c.expect(!hits.empty() && std::abs(hits.front().similarity - 1.0) <= 1e-9, e.id + " self similarity below 1");
    c.expect(hits.size() == std::min(kDefaultTopK, store.size()), "default K not honoured");
  }
  for (std::size_t k = 1; k <= store.size() + 2; ++k)
    c.expect(top_k(store, "SettingsActivity", k).size() == std::min(k, store.size()), "|top_k| wrong for K=" + std::to_string(k));
  return c.outcome(std::to_string(store.size()) + " exemplars each retrieve themselves first at 1.0; |top_k| = min(K, n), default K = " +
                   std::to_string(kDefaultTopK));
}

Outcome persistence() {
  Checks c;
  TempDir dir("accept-persist"), copy("accept-copy");
  run(fixture_config("replay_faults_on.json", true, dir.path()));
  const TestingHistory h = load_history(dir.path());
  ImageStore images(dir.path());
  persist_history(h, images, copy.path());
  const TestingHistory back = load_history(copy.path());
  c.expect(back.steps == h.steps && back.catalog == h.catalog && back.events == h.events, "history reload differs");
  c.expect(fs::read_text(copy / "history.json") == fs::read_text(dir / "history.json"), "history.json not reproduced");

  const auto findings = session::read_findings(dir.path());
  const auto detections = session::read_detections(dir.path());
  const auto app = session::read_app(dir.path());
  c.expect(findings && detections && app, "session files missing");
  if (findings && detections && app) {
    session::write_findings(copy.path(), *findings);
    session::write_detections(copy.path(), *detections);
    session::write_json(copy / session::kApp, *app);
    c.expect(session::read_findings(copy.path()) == findings, "findings reload differs");
    c.expect(session::read_detections(copy.path()) == detections, "detections reload differs");
    c.expect(session::read_app(copy.path()) == app, "app reload differs");
    for (const char* f : {session::kFindings, session::kDetections, session::kApp})
      c.expect(fs::read_text(copy / f) == fs::read_text(dir / f), std::string(f) + " not reproduced byte for byte");
  }
  for (const auto& e : stdfs::directory_iterator(dir / session::kPages)) {
    const auto j = nlohmann::json::parse(fs::read_text(e.path()));
    const auto page = j.at("page").get<GuiPage>();
    const auto labels = j.at("label_map").get<LabelMap>();
    c.expect(nlohmann::json(page) == j.at("page") && nlohmann::json(labels) == j.at("label_map"),
             "page record " + e.path().filename().string() + " reload differs");
  }

  const auto json_before = fs::read_text(dir / "report.json");
  const auto md_before = fs::read_text(dir / "report.md");
  render_reports(dir.path());
  c.expect(fs::read_text(dir / "report.json") == json_before, "report.json re-render differs");
  c.expect(fs::read_text(dir / "report.md") == md_before, "report.md re-render differs");
  return c.outcome(std::to_string(h.steps.size()) + "-step history and session reload identical; reports re-render byte-identical");
}

Outcome golden_prompts() {
  Checks c;
  TempDir dir("accept-golden");
  const auto cases = golden_cases(dir.path());
  for (const auto& miss : golden_mismatches(cases)) c.expect(false, miss);
  return c.outcome(std::to_string(cases.size()) + " explorer and detector prompts match tests/golden");
}

}  // namespace

int main() {
  log::set_sink([](log::Level, const std::string&) {});  // keep stdout to the ten result lines
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"modularity oracle", modularity_oracle},     {"modularity identities", modularity_identities},
      {"similarity anchors", similarity_anchors},   {"annotation pixels", annotation_pixels},
      {"alignment retry", alignment_retry},         {"end-to-end detection", detection_fixture},
      {"coverage metric", coverage_metric},         {"retrieval", retrieval},
      {"persistence round-trips", persistence},     {"golden prompts", golden_prompts},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
