// scdmd-lab: train, evaluate and sample few-step distilled generators on
// toy targets, and run the acceptance suite.

#include <CLI11.hpp>

#include <iostream>

#include "scdmd/acceptance.hpp"
#include "scdmd/error.hpp"
#include "scdmd/kernels.hpp"
#include "scdmd/run.hpp"

namespace {

using scdmd::ExperimentKind;

struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string resume;
  std::string checkpoint;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool resume, bool checkpoint) {
  cmd->add_option("--config", f.config, "JSON run config (defaults when omitted)");
  cmd->add_option("--seed,--seeds", f.seeds, "seed(s); overrides the config's list")
      ->delimiter(',');
  cmd->add_option("--out", f.out, "output directory (default: $SCDMD_OUT_ROOT/<kind>-<hash>)");
  cmd->add_flag("--dry-run", f.dry_run, "validate the config and print resolved grids");
  if (resume) cmd->add_option("--resume", f.resume, "checkpoint to continue from");
  if (checkpoint) {
    cmd->add_option("--checkpoint", f.checkpoint, "trained checkpoint to evaluate");
  }
}

scdmd::RunOptions options_from(const CommonFlags& f) {
  scdmd::RunOptions o;
  if (!f.out.empty()) o.out = f.out;
  o.seeds = f.seeds;
  if (!f.resume.empty()) o.resume = f.resume;
  if (!f.checkpoint.empty()) o.checkpoint = f.checkpoint;
  o.dry_run = f.dry_run;
  return o;
}

// Explicit config first, then the one embedded in the checkpoint, then the
// defaults for `kind`.
scdmd::RunConfig resolve_config(const CommonFlags& f, ExperimentKind kind) {
  if (!f.config.empty()) return scdmd::load_run_config(f.config, kind);
  const std::string& ckpt = !f.checkpoint.empty() ? f.checkpoint : f.resume;
  if (!ckpt.empty()) return scdmd::config_from_checkpoint(scdmd::read_checkpoint(ckpt));
  return scdmd::default_run_config(kind);
}

void require_kind(const scdmd::RunConfig& c, ExperimentKind kind, const char* cmd) {
  if (c.kind != kind) {
    throw scdmd::ConfigError(std::string("kind: ") + cmd + " expects \"" +
                             scdmd::kind_name(kind) + "\", config has \"" +
                             scdmd::kind_name(c.kind) + "\"");
  }
}

int exit_code(const scdmd::json& report) {
  if (report.contains("runs")) {
    for (const auto& r : report["runs"]) {
      if (r.value("status", "") != "ok") return 3;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scdmd-lab: few-step distillation experiments on toy targets"};
  app.require_subcommand(1);
  bool show_kernels = false;
  app.add_flag("--kernels", show_kernels, "print the active kernel variant");

  CommonFlags nonar, ar, defect, long_flags, sample, report;
  add_common(app.add_subcommand("train-nonar", "distill a non-autoregressive generator"), nonar,
             true, false);
  add_common(app.add_subcommand("train-ar", "distill the chunked autoregressive generator"), ar,
             true, false);
  auto* defect_cmd = app.add_subcommand("eval-defect", "semigroup defect along the sampler path");
  add_common(defect_cmd, defect, false, true);
  auto* long_cmd = app.add_subcommand("eval-long", "long-horizon per-chunk drift");
  add_common(long_cmd, long_flags, false, true);
  auto* sample_cmd = app.add_subcommand("sample", "draw samples to CSV");
  add_common(sample_cmd, sample, false, true);
  std::size_t count = 1024, steps = 4;
  sample_cmd->add_option("--count", count, "number of samples (sequences for ar)");
  sample_cmd->add_option("--steps", steps, "sampler step count");
  auto* report_cmd = app.add_subcommand("report", "run the acceptance suite and write report.json");
  report_cmd->add_option("--out", report.out, "output directory");
  report_cmd->add_flag("--dry-run", report.dry_run, "list criteria without running them");
  std::vector<int> only;
  report_cmd->add_option("--only", only, "criterion ids to run")->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  if (show_kernels) std::cerr << "kernels: " << scdmd::kernels::active().name << "\n";

  try {
    if (app.got_subcommand("train-nonar")) {
      const auto c = resolve_config(nonar, ExperimentKind::kNonAr);
      require_kind(c, ExperimentKind::kNonAr, "train-nonar");
      return exit_code(scdmd::cmd_train(c, options_from(nonar), std::cout));
    }
    if (app.got_subcommand("train-ar")) {
      const auto c = resolve_config(ar, ExperimentKind::kAr);
      require_kind(c, ExperimentKind::kAr, "train-ar");
      return exit_code(scdmd::cmd_train(c, options_from(ar), std::cout));
    }
    if (app.got_subcommand("eval-defect")) {
      scdmd::cmd_eval_defect(resolve_config(defect, ExperimentKind::kDefectEval),
                             options_from(defect), std::cout);
      return 0;
    }
    if (app.got_subcommand("eval-long")) {
      scdmd::cmd_eval_long(resolve_config(long_flags, ExperimentKind::kAr),
                           options_from(long_flags), std::cout);
      return 0;
    }
    if (app.got_subcommand("sample")) {
      auto o = options_from(sample);
      o.sample_count = count;
      o.sample_steps = steps;
      scdmd::cmd_sample(resolve_config(sample, ExperimentKind::kNonAr), o, std::cout);
      return 0;
    }
    if (app.got_subcommand("report")) {
      scdmd::AcceptanceOptions o;
      o.only = only;
      o.work_dir = report.out.empty() ? scdmd::default_out_root() / "acceptance"
                                      : std::filesystem::path(report.out);
      o.log = &std::cout;
      if (report.dry_run) {
        for (const auto& [id, name] : scdmd::acceptance_criteria()) {
          std::cout << id << "  " << name << "\n";
        }
        return 0;
      }
      const auto results = scdmd::run_acceptance(o);
      const auto path = scdmd::write_acceptance_report(results, o.work_dir);
      std::cout << "report: " << path.string() << "\n";
      for (const auto& r : results) {
        if (!r.passed) return 4;
      }
      return 0;
    }
  } catch (const scdmd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const scdmd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
