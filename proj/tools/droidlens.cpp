// Command-line front end: run, report, segment, corpus.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "droidlens/pipeline.hpp"

#ifndef DROIDLENS_RESOURCE_DIR
#define DROIDLENS_RESOURCE_DIR "resources"
#endif

namespace dl = droidlens;

namespace {

int report_error(const dl::Error& e) {
  std::cerr << "droidlens: " << e.what() << "\n";
  return dl::detail::exit_code_for(e.code());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Screenshot-driven GUI testing agent for non-crash functional bugs"};
  app.require_subcommand(1);

  dl::RunConfig cfg;
  cfg.corpus = std::string(DROIDLENS_RESOURCE_DIR) + "/corpus/seed_bugs.jsonl";
  cfg.embeddings = std::string(DROIDLENS_RESOURCE_DIR) + "/embeddings/toy.txt";
  std::string driver = "sim", backend = "replay", variant = "newman";
  std::vector<std::string> faults;
  bool no_faults = false, wall_time = false, no_corpus = false;
  std::int64_t wall_s = 3000;
  int steps = 0;

  auto* run = app.add_subcommand("run", "explore an app, segment the trace and detect bugs");
  run->add_option("--driver", driver, "sim or adb")->check(CLI::IsMember({"sim", "adb"}));
  run->add_option("--scenario", cfg.scenario, "simulator scenario file");
  run->add_option("--fault", faults, "switch on a simulator fault (repeatable)");
  run->add_flag("--no-faults", no_faults, "switch every simulator fault off");
  run->add_option("--serial", cfg.adb.serial, "device serial");
  run->add_option("--adb", cfg.adb.adb_path, "debug bridge binary");
  run->add_option("--adb-timeout-ms", cfg.adb.timeout_ms);
  run->add_option("--package", cfg.package, "package under test (real device)");
  run->add_option("--manifest", cfg.manifest, "AndroidManifest.xml of the app under test");
  run->add_option("--pre-run-hook", cfg.pre_run_hook, "shell command run before launch (e.g. a login script)");
  run->add_option("--backend", backend, "http or replay")->check(CLI::IsMember({"http", "replay"}));
  run->add_option("--replay", cfg.replay_script, "replay script (.json) or recorded transcript (.jsonl)");
  run->add_option("--endpoint", cfg.model.endpoint);
  run->add_option("--model", cfg.model.model);
  run->add_option("--temperature", cfg.model.temperature)->check(CLI::NonNegativeNumber);
  run->add_option("--max-tokens", cfg.model.max_tokens);
  run->add_option("--timeout-s", cfg.model.timeout_s);
  run->add_option("--retry-budget", cfg.model.retry_budget)->check(CLI::NonNegativeNumber);
  run->add_option("--api-key-env", cfg.model.api_key_env, "environment variable holding the endpoint key");
  run->add_option("--wall-clock-s", wall_s, "exploration time budget (seconds, 0 = none)");
  run->add_option("--steps", steps, "exploration step limit (0 = none)");
  run->add_option("--retries", cfg.budget.retry_limit, "action attempts per step");
  run->add_option("-k,--top-k", cfg.k, "exemplars per detector prompt");
  run->add_option("--session", cfg.session_dir, "session directory")->required();
  run->add_option("--corpus", cfg.corpus, "exemplar corpus (JSON lines)");
  run->add_flag("--no-corpus", no_corpus, "run the detector without exemplars");
  run->add_option("--embeddings", cfg.embeddings, "word vector table");
  run->add_option("--templates", cfg.templates, "directory of prompt template overrides");
  run->add_option("--seed", cfg.seed);
  run->add_option("--modularity", variant, "newman or printed")->check(CLI::IsMember({"newman", "printed"}));
  run->add_option("--parallelism", cfg.parallelism, "concurrent detector requests");
  run->add_flag("--wall-time", wall_time, "use the real clock with the simulator");

  std::string session_dir;
  auto* report = app.add_subcommand("report", "re-render reports of a session");
  report->add_option("session", session_dir)->required();

  std::string seg_variant = "newman";
  auto* segment = app.add_subcommand("segment", "re-segment a session");
  segment->add_option("session", session_dir)->required();
  segment->add_option("--modularity", seg_variant)->check(CLI::IsMember({"newman", "printed"}));

  auto* corpus = app.add_subcommand("corpus", "inspect or grow an exemplar corpus");
  corpus->require_subcommand(1);
  std::string corpus_file = cfg.corpus, table_file = cfg.embeddings;
  std::optional<std::string> report_id;
  auto* ingest = corpus->add_subcommand("ingest", "validate a corpus and print its size");
  ingest->add_option("file", corpus_file)->required();
  ingest->add_option("--embeddings", table_file);
  auto* enrich = corpus->add_subcommand("enrich", "append a session's reports as exemplars");
  enrich->add_option("file", corpus_file)->required();
  enrich->add_option("--session", session_dir)->required();
  enrich->add_option("--report", report_id, "only this report (bug-N)");
  enrich->add_option("--embeddings", table_file);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends print and succeed; anything else is a usage error
    return app.exit(e) == 0 ? 0 : dl::kExitUsage;
  }

  try {
    if (run->parsed()) {
      cfg.driver = driver == "adb" ? dl::DriverKind::Adb : dl::DriverKind::Sim;
      cfg.backend = backend == "http" ? dl::BackendKind::Http : dl::BackendKind::Replay;
      cfg.variant = variant == "printed" ? dl::ModularityVariant::Printed : dl::ModularityVariant::Newman;
      cfg.budget.wall_clock_s = wall_s > 0 ? std::optional<std::int64_t>(wall_s) : std::nullopt;
      cfg.budget.step_limit = steps > 0 ? std::optional<int>(steps) : std::nullopt;
      cfg.virtual_time = !wall_time;
      if (no_corpus) cfg.corpus.clear();
      if (no_faults) cfg.faults = std::vector<std::string>{};
      else if (!faults.empty()) cfg.faults = faults;
      const auto summary = dl::run(cfg);
      std::cout << dl::summary_to_text(summary);
      return summary.exit_code;
    }
    if (report->parsed()) {
      const auto r = dl::render_reports(session_dir);
      std::cout << r.reports.size() << " report(s) written to " << session_dir << "\n";
      for (const auto& n : r.notes) std::cout << "note: " << n << "\n";
      return 0;
    }
    if (segment->parsed()) {
      const auto p = dl::resegment(session_dir, seg_variant == "printed" ? dl::ModularityVariant::Printed
                                                                         : dl::ModularityVariant::Newman);
      int communities = 0;
      for (int c : p.community) communities = std::max(communities, c + 1);
      std::cout << communities << " communities, Q = " << p.modularity << "\n";
      return 0;
    }
    if (ingest->parsed()) {
      const auto store = dl::ingest_file(corpus_file, dl::EmbeddingTable::load(table_file));
      std::cout << store.size() << " exemplars, dimension " << store.table().dimension() << "\n";
      return 0;
    }
    if (enrich->parsed()) {
      const auto added = dl::enrich_corpus(corpus_file, table_file, session_dir, report_id);
      std::cout << added << " exemplar(s) appended to " << corpus_file << "\n";
      return 0;
    }
  } catch (const dl::Error& e) {
    return report_error(e);
  }
  return dl::kExitUsage;
}
