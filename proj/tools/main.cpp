#include <CLI11.hpp>

#include "sbmhe/experiment.hpp"

namespace {

sbmhe::CliOptions* add_common(CLI::App* cmd) {
  auto* opt = new sbmhe::CliOptions();
  cmd->add_option("--config", opt->config_path, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", opt->out_dir, "Output directory (overrides the config)");
  cmd->add_option("--seed", opt->seed, "Seed override");
  cmd->add_option("--workers", opt->workers, "Worker thread count")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", opt->quiet, "Suppress progress output");
  cmd->add_flag("--strict", opt->strict, "Exit 3 when a horizon solve fails to converge");
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sample-based moving horizon estimation toolkit"};
  app.require_subcommand(1);

  int rc = 0;
  auto* sim = app.add_subcommand("simulate", "Integrate the model and record sampled outputs");
  auto* sim_opt = add_common(sim);
  sim->callback([&] { rc = sbmhe::cmd_simulate(*sim_opt); });

  auto* est = app.add_subcommand("estimate", "Run the moving horizon estimator on simulated data");
  auto* est_opt = add_common(est);
  est->callback([&] { rc = sbmhe::cmd_estimate(*est_opt); });

  auto* ana = app.add_subcommand("analyze-linear",
                                 "Spectral split, sample-count bound, schedule design, observer");
  auto* ana_opt = add_common(ana);
  ana->callback([&] { rc = sbmhe::cmd_analyze_linear(*ana_opt); });

  auto* chk = app.add_subcommand("check-certificates",
                                 "Falsification sweep of the stability certificate on random pairs");
  auto* chk_opt = add_common(chk);
  chk->callback([&] { rc = sbmhe::cmd_check_certificates(*chk_opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Bad flags and missing files are validation failures, same as bad configs.
    return app.exit(e) == 0 ? 0 : 2;
  }
  return rc;
}
