// tclt: run declarative fluctuation experiments and report on finished runs.

#include "tclt/harness/config.hpp"
#include "tclt/harness/experiments.hpp"
#include "tclt/harness/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <unistd.h>

#include <cstdlib>
#include <iostream>

namespace {

bool color_enabled() { return std::getenv("NO_COLOR") == nullptr && isatty(STDOUT_FILENO); }

int fail(const std::exception& e, int code) {
  nlohmann::json rec = tclt::harness::error_record(e);
  rec["error"]["exit_code"] = code;
  std::cerr << rec.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace tclt::harness;
  CLI::App app{"Fluctuation experiments for interacting particle systems on the 2-torus"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(TCLT_VERSION));

  struct Cmd {
    std::string kind;
    CLI::App* sub = nullptr;
  };
  std::vector<Cmd> cmds;
  std::string config;
  std::string out;
  RunOptions opt;
  std::uint64_t seed = 0;
  bool quiet = false;
  for (const auto& kind : experiment_kinds()) {
    CLI::App* s = app.add_subcommand(kind, "run a " + kind + " experiment");
    s->add_option("--config", config, "YAML or JSON experiment config")->required()->check(CLI::ExistingFile);
    s->add_option("--out", out, "run directory (overrides `output`)");
    s->add_option("--workers", opt.workers, "replica worker threads")->check(CLI::PositiveNumber);
    s->add_flag("--deterministic,!--no-deterministic", opt.deterministic,
                "bitwise reproducible pair sums (default on)");
    s->add_flag("--force", opt.force, "overwrite a run directory holding a previous run");
    s->add_flag("--dry-run", opt.dry_run, "validate and print the resolved plan only");
    s->add_option("--seed", seed, "override the config seed");
    s->add_flag("--emit-plot-script", opt.emit_plot_script, "write a gnuplot script next to the CSVs");
    s->add_flag("-q,--quiet", quiet, "no progress lines on stderr");
    cmds.push_back({kind, s});
  }
  std::string report_dir;
  CLI::App* rep = app.add_subcommand("report", "summarize a finished run against its assertions");
  rep->add_option("dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (rep->parsed()) {
    try {
      return report(report_dir, std::cout, color_enabled());
    } catch (const IncompleteRun& e) {
      nlohmann::json rec = {{"error", {{"kind", "incomplete"}, {"message", e.what()}, {"file", e.file()}, {"exit_code", 4}}}};
      std::cerr << rec.dump() << std::endl;
      return 4;
    } catch (const std::exception& e) {
      return fail(e, 4);
    }
  }

  for (const auto& c : cmds) {
    if (!c.sub->parsed()) continue;
    if (c.sub->count("--seed")) opt.seed = seed;
    opt.out = out;
    opt.quiet = quiet;
    try {
      const Plan plan = load_plan(config, c.kind, opt);
      if (opt.dry_run) {
        std::cout << nlohmann::json({{"plan", plan.describe()}, {"config", plan.normalized}}).dump(2) << std::endl;
        return 0;
      }
      run_plan(plan, opt, std::cerr);
      const std::string dir = out.empty() ? plan.output : out;
      if (!quiet) std::cerr << "wrote " << dir << std::endl;
      return 0;
    } catch (const std::exception& e) {
      return fail(e, exit_code_for(e));
    }
  }
  return 1;
}
