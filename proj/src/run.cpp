#include "scdmd/run.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "scdmd/error.hpp"

namespace scdmd {
namespace fs = std::filesystem;

namespace {

struct RunPaths {
  fs::path root, checkpoints, plots, metrics, report, echo;

  explicit RunPaths(const fs::path& r)
      : root(r),
        checkpoints(r / "checkpoints"),
        plots(r / "plots"),
        metrics(r / "metrics.jsonl"),
        report(r / "report.json"),
        echo(r / "config.echo.json") {}

  void create() const {
    std::error_code ec;
    for (const fs::path& d : {root, checkpoints, plots}) {
      fs::create_directories(d, ec);
      if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
    }
  }
};

void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

class Csv {
 public:
  explicit Csv(const std::string& header) { text_ = header + "\n"; }
  template <class... T>
  void row(const T&... cells) {
    std::string line;
    ((line += (line.empty() ? "" : ",") + cell(cells)), ...);
    text_ += line + "\n";
  }
  void save(const fs::path& path) const { write_text(path, text_); }

 private:
  static std::string cell(double v) { return num(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }
  std::string text_;
};

std::vector<Vec> eval_noises(const RunConfig& config, std::size_t dim) {
  Rng rng = stream_rng(config.eval.seed, Stream::kEval);
  std::vector<Vec> noises(config.eval.samples, Vec(dim));
  for (Vec& z : noises) rng.fill_normal(z);
  return noises;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json seed_stats(const std::vector<double>& v) {
  return {{"per_seed", v}, {"mean", mean_of(v)}, {"std", stddev_of(v)}};
}

bool is_ar(const RunConfig& c) { return c.kind == ExperimentKind::kAr; }

RunConfig single_seed(const RunConfig& config, std::uint64_t seed) {
  RunConfig c = config;
  c.seeds = {seed};
  return c;
}

std::vector<std::uint64_t> seeds_of(const RunConfig& config, const RunOptions& options) {
  return options.seeds.empty() ? config.seeds : options.seeds;
}

// Keeps only records from iterations before `step`, so a resumed run
// reproduces the log an uninterrupted run would have written.
void truncate_metrics(const fs::path& path, std::uint64_t step) {
  if (!fs::exists(path)) return;
  std::string kept;
  for (const json& rec : read_jsonl(path)) {
    if (rec.value("iter", std::uint64_t{0}) < step) kept += rec.dump() + "\n";
  }
  write_text(path, kept);
}

void write_loss_curve(const fs::path& metrics, const fs::path& out, bool ar) {
  Csv csv(ar ? "iter,k,loss_dmd,loss_sc,loss_align,loss_critic"
             : "iter,loss_dmd,loss_sc,loss_critic");
  for (const json& r : read_jsonl(metrics)) {
    if (ar) {
      csv.row(r["iter"].get<std::size_t>(), r["k"].get<std::size_t>(),
              r["loss_dmd"].get<double>(), r["loss_sc"].get<double>(),
              r["loss_align"].get<double>(), r["loss_critic"].get<double>());
    } else {
      csv.row(r["iter"].get<std::size_t>(), r["loss_dmd"].get<double>(),
              r["loss_sc"].get<double>(), r["loss_critic"].get<double>());
    }
  }
  csv.save(out);
}

void write_defect_csv(const DefectReport& rep, const fs::path& out) {
  Csv csv("t_s,t_e,t_m,defect_mean,defect_stderr,n");
  for (const auto& r : rep.rows) {
    csv.row(r.t_s, r.t_e, r.t_m, r.defect_mean, r.defect_stderr, r.n);
  }
  csv.save(out);
}

json defect_json(const DefectReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"t_s", r.t_s}, {"t_e", r.t_e}, {"t_m", r.t_m},
                    {"defect_mean", r.defect_mean}, {"defect_stderr", r.defect_stderr},
                    {"n", r.n}});
  }
  return {{"rows", rows}, {"interval_means", rep.interval_means},
          {"path_average", rep.path_average}};
}

Checkpoint load_checked(const fs::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  if (!ckpt.meta.contains("config")) throw IoError("checkpoint " + path.string() + " has no config");
  return ckpt;
}

// Trains one seed into `paths`. Returns the per-seed report.
json train_seed(const RunConfig& sweep_config, std::uint64_t seed, const RunPaths& paths,
                const RunOptions& options, std::ostream& log) {
  const RunConfig config = single_seed(sweep_config, seed);
  const std::string id = run_id(config, seed);
  const std::string hash = config_hash(config);
  const json meta = checkpoint_meta(config, seed);
  paths.create();
  write_json(paths.echo, {{"format_version", kReportFormatVersion}, {"run_id", id},
                          {"config_hash", hash}, {"config", to_json(config)}});

  const DistillConfig dc = config.distill_for(seed);
  const ArConfig arc = config.ar_config(seed);
  DistillState state;
  bool append = false;
  if (options.resume) {
    const Checkpoint ckpt = load_checked(*options.resume);
    if (ckpt.meta.value("resume_key", std::string()) != resume_key(config)) {
      throw ConfigError("resume: checkpoint " + options.resume->string() +
                        " was written for a different config");
    }
    if (ckpt.meta.value("seed", std::uint64_t{0}) != seed) {
      throw ConfigError("resume: checkpoint seed differs from requested seed " +
                        std::to_string(seed));
    }
    state = state_from_checkpoint(ckpt, dc);
    truncate_metrics(paths.metrics, state.step);
    append = true;
    log << id << ": resuming at step " << state.step << "\n";
  } else {
    state = is_ar(config) ? init_ar_state(arc) : init_distill_state(dc, config.teacher.dim);
  }

  JsonlWriter writer(paths.metrics, id, hash, append);
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const DistillState& s) {
    write_checkpoint(paths.checkpoints / ("step_" + std::to_string(s.step) + ".ckpt"),
                     checkpoint_from_state(s, meta));
  };

  json report = {{"format_version", kReportFormatVersion}, {"run_id", id},
                 {"config_hash", hash}, {"seed", seed}, {"kind", kind_name(config.kind)}};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (is_ar(config)) {
      train_ar(state, arc, writer, hooks);
    } else {
      train_nonar(state, config.teacher, writer, hooks);
    }
  } catch (const TrainingError& e) {
    write_checkpoint(paths.checkpoints / "last_good.ckpt", checkpoint_from_state(state, meta));
    report["status"] = "diverged";
    report["error"] = e.what();
    report["last_good_step"] = state.step;
    write_json(paths.report, report);
    log << id << ": diverged at step " << state.step << ": " << e.what() << "\n";
    return report;
  }
  report["train_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_checkpoint(paths.checkpoints / "final.ckpt", checkpoint_from_state(state, meta));
  write_loss_curve(paths.metrics, paths.plots / "loss_curve.csv", is_ar(config));

  const auto gen = make_generator_field(state.generator, config);
  if (is_ar(config)) {
    const ArEvaluation e = evaluate_ar(*gen, config);
    Csv csv("k,chunk,energy");
    for (std::size_t i = 0; i < e.step_counts.size(); ++i) {
      for (std::size_t c = 0; c < e.per_chunk[i].size(); ++c) {
        csv.row(e.step_counts[i], c, e.per_chunk[i][c]);
      }
    }
    csv.save(paths.plots / "per_chunk_energy.csv");
    report["evaluation"] = to_json(e);
  } else {
    const NonArEvaluation e = evaluate_nonar(*gen, config.teacher, config);
    write_defect_csv(e.defect, paths.plots / "defect_intervals.csv");
    Csv csv("k,sliced_w");
    for (std::size_t i = 0; i < e.step_counts.size(); ++i) csv.row(e.step_counts[i], e.sliced_w[i]);
    csv.save(paths.plots / "sliced_w_by_k.csv");
    report["evaluation"] = to_json(e);
  }
  report["status"] = "ok";
  report["final_step"] = state.step;
  write_json(paths.report, report);
  log << id << ": done in " << report["train_seconds"].get<double>() << " s\n";
  return report;
}

json summarize(const RunConfig& config, const std::vector<json>& runs) {
  json summary = json::object();
  std::vector<const json*> ok;
  for (const json& r : runs) {
    if (r["status"] == "ok") ok.push_back(&r["evaluation"]);
  }
  if (ok.empty()) return summary;
  auto collect = [&](auto&& get) {
    std::vector<double> v;
    for (const json* e : ok) v.push_back(get(*e));
    return seed_stats(v);
  };
  if (is_ar(config)) {
    const auto& ks = (*ok.front())["step_counts"];
    for (std::size_t i = 0; i < ks.size(); ++i) {
      summary["mean_energy_k" + std::to_string(ks[i].get<std::size_t>())] =
          collect([&](const json& e) { return e["mean_energy"][i].get<double>(); });
    }
  } else {
    summary["defect_path_average"] =
        collect([](const json& e) { return e["defect"]["path_average"].get<double>(); });
    summary["cross_step"] = collect([](const json& e) { return e["cross_step"].get<double>(); });
    const auto& ks = (*ok.front())["step_counts"];
    for (std::size_t i = 0; i < ks.size(); ++i) {
      summary["sliced_w_k" + std::to_string(ks[i].get<std::size_t>())] =
          collect([&](const json& e) { return e["sliced_w"][i].get<double>(); });
    }
  }
  return summary;
}

json grid_json(const TimestepGrid& g) { return {{"shift", g.shift}, {"points", g.points}}; }

}  // namespace

fs::path default_out_root() {
  const char* env = std::getenv(kOutRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path sweep_dir(const RunConfig& config, const RunOptions& options) {
  if (options.out) return *options.out;
  if (!config.output_dir.empty()) return config.output_dir;
  return default_out_root() / (kind_name(config.kind) + "-" + config_hash(config).substr(0, 8));
}

json describe(const RunConfig& config) {
  const DistillConfig& d = config.distill;
  json grids = json::object();
  for (std::size_t k : config.eval.step_counts) {
    grids[std::to_string(k)] = grid_json(make_grid(k, d.infer_grid.shift, GridKind::kInference));
  }
  json out = {{"kind", kind_name(config.kind)},
              {"config_hash", config_hash(config)},
              {"seeds", config.seeds},
              {"train_grid", grid_json(make_grid(d.train_grid.points, d.train_grid.shift,
                                                 GridKind::kTraining))},
              {"infer_grid", grid_json(make_grid(d.infer_grid.points, d.infer_grid.shift,
                                                 GridKind::kInference))},
              {"eval_grids", grids},
              {"iterations", d.iterations},
              {"warmstart_iters", d.warmstart_iters}};
  if (is_ar(config)) {
    const MixedStepConfig& m = config.mixed;
    json ks = json::object();
    const std::vector<std::size_t> counts =
        m.fixed_k ? std::vector<std::size_t>{m.fixed_k} : m.step_counts;
    for (std::size_t k : counts) {
      ks[std::to_string(k)] = {{"grid", make_grid(k, d.infer_grid.shift, GridKind::kInference).points},
                               {"reference_k", reference_step_count(k)}};
    }
    out["mixed_step"] = {{"step_counts", ks},
                         {"probabilities", m.fixed_k ? json::array({1.0}) : json(m.probabilities)},
                         {"align_warmup_iters", m.warmup(d.iterations)},
                         {"sc_gate", m.sc_gate == ScGate::kK8 ? "k8" : "always"}};
    out["toy"] = {{"chunk_dim", config.toy.chunk_dim()},
                  {"context_dim", config.toy.context_dim()}};
  }
  return out;
}

NonArEvaluation evaluate_nonar(const VectorField& generator, const GaussianMixture& teacher,
                               const RunConfig& config) {
  const DistillConfig& d = config.distill;
  const std::size_t dim = teacher.dim;
  const std::vector<Vec> noises = eval_noises(config, dim);
  const TimestepGrid infer = make_grid(d.infer_grid.points, d.infer_grid.shift, GridKind::kInference);
  const TimestepGrid train = make_grid(d.train_grid.points, d.train_grid.shift, GridKind::kTraining);

  NonArEvaluation e;
  e.defect = evaluate_defect_path(generator, infer, train, noises, {}, d.defect_epsilon);
  e.step_counts = config.eval.step_counts;

  std::vector<TimestepGrid> grids;
  for (std::size_t k : e.step_counts) grids.push_back(make_grid(k, d.infer_grid.shift, GridKind::kInference));
  if (grids.size() >= 2) e.cross_step = cross_step_consistency(generator, grids, noises);

  Rng data = stream_rng(config.eval.seed, Stream::kData);
  std::vector<Vec> target;
  target.reserve(noises.size());
  for (std::size_t i = 0; i < noises.size(); ++i) target.push_back(gmm_sample(teacher, data));
  const PointSet target_set = PointSet::from_rows(target);
  for (std::size_t g = 0; g < grids.size(); ++g) {
    std::vector<Vec> out;
    out.reserve(noises.size());
    for (const Vec& z : noises) out.push_back(sample_k_steps(generator, grids[g], z).final_state());
    Rng proj = stream_rng(config.eval.seed, Stream::kEval, 1);
    e.sliced_w.push_back(
        sliced_wasserstein(PointSet::from_rows(out), target_set, config.eval.projections, proj));
  }
  return e;
}

json to_json(const NonArEvaluation& e) {
  return {{"defect", defect_json(e.defect)},
          {"cross_step", e.cross_step},
          {"step_counts", e.step_counts},
          {"sliced_w", e.sliced_w}};
}

ArEvaluation evaluate_ar(const VectorField& generator, const RunConfig& config) {
  ArEvaluation e;
  e.step_counts = config.eval.step_counts;
  for (std::size_t k : e.step_counts) {
    e.per_chunk.push_back(per_chunk_energy(generator, config.toy, k, config.distill.infer_grid.shift,
                                           config.toy.n_chunks, config.eval.samples,
                                           config.eval.seed));
    e.mean_energy.push_back(mean_of(e.per_chunk.back()));
  }
  return e;
}

json to_json(const ArEvaluation& e) {
  return {{"step_counts", e.step_counts},
          {"per_chunk_energy", e.per_chunk},
          {"mean_energy", e.mean_energy}};
}

std::unique_ptr<TrainableField> make_generator_field(const MlpParams& params,
                                                     const RunConfig& config) {
  if (is_ar(config)) return std::make_unique<TokenMlpField>(params, config.toy);
  return std::make_unique<MlpField>(params, config.teacher.dim);
}

json checkpoint_meta(const RunConfig& config, std::uint64_t seed) {
  const RunConfig c = single_seed(config, seed);
  return {{"run_id", run_id(c, seed)}, {"config_hash", config_hash(c)},
          {"resume_key", resume_key(c)}, {"seed", seed},
          {"kind", kind_name(c.kind)}, {"config", to_json(c)}};
}

std::string resume_key(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  j.erase("seeds");
  j.erase("eval");
  for (const char* k : {"iterations", "checkpoint_every", "eval_every"}) j["distill"].erase(k);
  return fnv1a_hex(j.dump());
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) throw IoError("checkpoint has no embedded config");
  return parse_run_config(ckpt.meta["config"]);
}

json cmd_train(const RunConfig& config, const RunOptions& options, std::ostream& log) {
  RunConfig c = config;
  c.seeds = seeds_of(config, options);
  validate(c);
  if (options.resume && c.seeds.size() != 1) {
    throw ConfigError("--resume needs exactly one seed");
  }
  if (options.dry_run) {
    json d = describe(c);
    d["out"] = sweep_dir(c, options).string();
    log << d.dump(2) << "\n";
    return d;
  }
  const fs::path dir = sweep_dir(c, options);
  ensure_dir(dir);
  std::vector<json> runs;
  for (std::uint64_t seed : c.seeds) {
    fs::path run_dir = dir / run_id(c, seed);
    // A checkpoint inside a run directory resumes into that directory.
    if (options.resume) {
      const fs::path owner = options.resume->parent_path().parent_path();
      if (fs::exists(owner / "config.echo.json")) run_dir = owner;
    }
    runs.push_back(train_seed(c, seed, RunPaths(run_dir), options, log));
  }
  json report = {{"format_version", kReportFormatVersion},
                 {"kind", kind_name(c.kind)},
                 {"config_hash", config_hash(c)},
                 {"seeds", c.seeds},
                 {"runs", runs},
                 {"summary", summarize(c, runs)}};
  write_json(dir / "report.json", report);
  return report;
}

json cmd_eval_defect(const RunConfig& config, const RunOptions& options, std::ostream& log) {
  const DistillConfig& d = config.distill;
  if (options.dry_run) {
    json out = describe(config);
    log << out.dump(2) << "\n";
    return out;
  }
  std::optional<Checkpoint> ckpt;
  if (options.checkpoint) ckpt = load_checked(*options.checkpoint);

  const std::size_t dim = is_ar(config) ? config.toy.chunk_dim() : config.teacher.dim;
  const Vec context = is_ar(config) ? ChunkContext::initial(config.toy).flat() : Vec{};
  std::unique_ptr<VectorField> field;
  std::optional<MlpParams> params;
  std::string source = "teacher";
  if (ckpt) {
    params = ckpt->network("generator").params;
    field = make_generator_field(*params, config);
    source = options.checkpoint->string();
  } else if (is_ar(config)) {
    throw ConfigError("eval-defect on an ar config needs --checkpoint");
  } else {
    field = std::make_unique<TeacherVelocityField>(config.teacher);
  }

  const TimestepGrid infer = make_grid(d.infer_grid.points, d.infer_grid.shift, GridKind::kInference);
  const TimestepGrid train = make_grid(d.train_grid.points, d.train_grid.shift, GridKind::kTraining);
  const DefectReport rep =
      evaluate_defect_path(*field, infer, train, eval_noises(config, dim), context, d.defect_epsilon);

  const fs::path dir = sweep_dir(config, options);
  ensure_dir(dir / "plots");
  std::string lines;
  for (const auto& r : rep.rows) {
    lines += json({{"t_s", r.t_s}, {"t_e", r.t_e}, {"t_m", r.t_m},
                   {"defect_mean", r.defect_mean}, {"defect_stderr", r.defect_stderr},
                   {"n", r.n}, {"config_hash", config_hash(config)}})
                 .dump() +
             "\n";
  }
  write_text(dir / "defect.jsonl", lines);
  write_defect_csv(rep, dir / "plots" / "defect_intervals.csv");
  json report = {{"format_version", kReportFormatVersion},
                 {"kind", "defect-eval"},
                 {"config_hash", config_hash(config)},
                 {"field", source},
                 {"defect", defect_json(rep)}};
  write_json(dir / "report.json", report);
  log << "path-average defect " << rep.path_average << " (" << rep.rows.size() << " rows) -> "
      << dir.string() << "\n";
  return report;
}

json cmd_eval_long(const RunConfig& config, const RunOptions& options, std::ostream& log) {
  if (!is_ar(config)) throw ConfigError("kind: eval-long needs an ar config");
  if (options.dry_run) {
    json out = describe(config);
    out["long_chunks"] = config.eval.long_chunks;
    log << out.dump(2) << "\n";
    return out;
  }
  if (!options.checkpoint) throw ConfigError("eval-long needs --checkpoint");
  const Checkpoint ckpt = load_checked(*options.checkpoint);
  const MlpParams params = ckpt.network("generator").params;
  const auto gen = make_generator_field(params, config);

  const std::vector<std::uint64_t> seeds = options.seeds.empty()
                                               ? std::vector<std::uint64_t>{config.eval.seed}
                                               : options.seeds;
  const fs::path dir = sweep_dir(config, options);
  ensure_dir(dir / "plots");
  Csv csv("k,chunk,energy");
  std::string lines;
  json curves = json::object();
  for (std::size_t k : config.eval.step_counts) {
    const DriftCurve curve = eval_long_rollout(*gen, config.toy, config.eval.long_chunks, k,
                                               config.distill.infer_grid.shift,
                                               config.eval.samples, seeds);
    for (std::size_t c = 0; c < curve.energy.size(); ++c) {
      csv.row(k, c, curve.energy[c]);
      lines += json({{"k", k}, {"chunk", c}, {"energy", curve.energy[c]}}).dump() + "\n";
    }
    curves[std::to_string(k)] = {{"energy", curve.energy}, {"slope", curve.slope}};
    log << "K=" << k << " drift slope " << curve.slope << "\n";
  }
  write_text(dir / "drift.jsonl", lines);
  csv.save(dir / "plots" / "drift.csv");
  json report = {{"format_version", kReportFormatVersion},
                 {"kind", "eval-long"},
                 {"config_hash", config_hash(config)},
                 {"checkpoint", options.checkpoint->string()},
                 {"seeds", seeds},
                 {"curves", curves}};
  write_json(dir / "report.json", report);
  return report;
}

json cmd_sample(const RunConfig& config, const RunOptions& options, std::ostream& log) {
  const std::size_t k = options.sample_steps;
  if (k == 0) throw ConfigError("--steps must be >= 1");
  const TimestepGrid grid = make_grid(k, config.distill.infer_grid.shift, GridKind::kInference);
  if (options.dry_run) {
    json out = {{"steps", k}, {"grid", grid.points}, {"count", options.sample_count}};
    log << out.dump(2) << "\n";
    return out;
  }
  std::optional<Checkpoint> ckpt;
  if (options.checkpoint) ckpt = load_checked(*options.checkpoint);
  if (!ckpt && is_ar(config)) throw ConfigError("sample on an ar config needs --checkpoint");

  const fs::path dir = sweep_dir(config, options);
  ensure_dir(dir);
  Rng rng = stream_rng(options.seeds.empty() ? config.eval.seed : options.seeds.front(),
                       Stream::kEval, 2);
  std::optional<MlpParams> params;
  if (ckpt) params = ckpt->network("generator").params;

  if (is_ar(config)) {
    const auto gen = make_generator_field(*params, config);
    const ToyProcessSpec& toy = config.toy;
    Csv csv("sequence,chunk,frame,token,x,y");
    for (std::size_t s = 0; s < options.sample_count; ++s) {
      const std::vector<Vec> seq = rollout_sequence(*gen, toy, grid, toy.n_chunks, rng);
      for (std::size_t c = 0; c < seq.size(); ++c) {
        for (std::size_t f = 0; f < toy.frames; ++f) {
          for (std::size_t t = 0; t < toy.tokens; ++t) {
            const std::size_t o = (f * toy.tokens + t) * toy.channels;
            csv.row(s, c, f, t, seq[c][o], seq[c][o + 1]);
          }
        }
      }
    }
    csv.save(dir / "samples.csv");
  } else {
    std::unique_ptr<VectorField> field;
    if (params) {
      field = make_generator_field(*params, config);
    } else {
      field = std::make_unique<TeacherVelocityField>(config.teacher);
    }
    std::string header = "index";
    for (std::size_t i = 0; i < config.teacher.dim; ++i) header += ",x" + std::to_string(i);
    std::string text = header + "\n";
    Vec z(config.teacher.dim);
    for (std::size_t s = 0; s < options.sample_count; ++s) {
      rng.fill_normal(z);
      const Vec x = sample_k_steps(*field, grid, z).final_state();
      text += std::to_string(s);
      for (double v : x) text += "," + num(v);
      text += "\n";
    }
    write_text(dir / "samples.csv", text);
  }
  log << "wrote " << options.sample_count << " samples (" << k << " steps) to "
      << (dir / "samples.csv").string() << "\n";
  return {{"steps", k}, {"count", options.sample_count}, {"path", (dir / "samples.csv").string()}};
}

}  // namespace scdmd
