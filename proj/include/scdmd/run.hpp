#pragma once

// Run orchestration behind the scdmd-lab subcommands: seed sweeps, output
// directories, evaluation and plot data.
//
// Sweep layout under the output directory:
//   report.json              aggregate over seeds
//   <run_id>/config.echo.json
//   <run_id>/checkpoints/    step_<n>.ckpt, final.ckpt, last_good.ckpt
//   <run_id>/metrics.jsonl
//   <run_id>/report.json
//   <run_id>/plots/*.csv

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "scdmd/checkpoint.hpp"
#include "scdmd/config.hpp"
#include "scdmd/field.hpp"
#include "scdmd/stats.hpp"
#include "scdmd/transport.hpp"

namespace scdmd {

inline constexpr const char* kOutRootEnv = "SCDMD_OUT_ROOT";
inline constexpr int kReportFormatVersion = 1;

/// $SCDMD_OUT_ROOT, or "runs" when unset or empty.
std::filesystem::path default_out_root();

struct RunOptions {
  std::optional<std::filesystem::path> out;  // sweep directory
  std::vector<std::uint64_t> seeds;          // overrides config.seeds
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> checkpoint;  // input of eval/sample
  bool dry_run = false;
  std::size_t sample_count = 1024;
  std::size_t sample_steps = 4;
};

/// Sweep directory: options.out, else config.output_dir, else
/// <default root>/<kind>-<hash prefix>.
std::filesystem::path sweep_dir(const RunConfig& config, const RunOptions& options);

/// Resolved grids and derived counts, for --dry-run.
json describe(const RunConfig& config);

struct NonArEvaluation {
  DefectReport defect;  // inference grid
  double cross_step = 0.0;
  std::vector<std::size_t> step_counts;
  std::vector<double> sliced_w;  // per step count, against the teacher
};

/// Shared evaluation noises from config.eval.seed, so runs that differ only
/// in training are compared on the same draws.
NonArEvaluation evaluate_nonar(const VectorField& generator, const GaussianMixture& teacher,
                               const RunConfig& config);
json to_json(const NonArEvaluation& e);

struct ArEvaluation {
  std::vector<std::size_t> step_counts;
  std::vector<std::vector<double>> per_chunk;  // [k][chunk]
  std::vector<double> mean_energy;             // per step count
};

ArEvaluation evaluate_ar(const VectorField& generator, const RunConfig& config);
json to_json(const ArEvaluation& e);

/// Generator network wrapped as a field for `config.kind`.
std::unique_ptr<TrainableField> make_generator_field(const MlpParams& params,
                                                     const RunConfig& config);

/// Config embedded in checkpoints, with seeds narrowed to `seed`.
json checkpoint_meta(const RunConfig& config, std::uint64_t seed);

/// Hash of the config with iteration count and cadences cleared; a resumed
/// run must match the checkpoint on this key.
std::string resume_key(const RunConfig& config);

/// Subcommands. Each returns the aggregate report (also written to disk
/// unless dry-run) and logs progress to `log`.
json cmd_train(const RunConfig& config, const RunOptions& options, std::ostream& log);
json cmd_eval_defect(const RunConfig& config, const RunOptions& options, std::ostream& log);
json cmd_eval_long(const RunConfig& config, const RunOptions& options, std::ostream& log);
json cmd_sample(const RunConfig& config, const RunOptions& options, std::ostream& log);

/// Config stored in a checkpoint's metadata.
RunConfig config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace scdmd
