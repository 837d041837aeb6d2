#include "scdmd/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "scdmd/error.hpp"

namespace scdmd {
namespace {

template <class E>
using NameTable = std::vector<std::pair<E, const char*>>;

const NameTable<ExperimentKind> kKinds{{ExperimentKind::kNonAr, "nonar"},
                                       {ExperimentKind::kAr, "ar"},
                                       {ExperimentKind::kDefectEval, "defect-eval"}};
const NameTable<Objective> kObjectives{{Objective::kDmd, "dmd"},
                                       {Objective::kScDmd, "sc-dmd"}};
const NameTable<DmdNormalization> kNorms{{DmdNormalization::kL1, "l1"},
                                         {DmdNormalization::kNone, "none"}};
const NameTable<ScDetach> kDetach{{ScDetach::kNone, "none"},
                                  {ScDetach::kDirect, "direct"},
                                  {ScDetach::kComposed, "composed"}};
const NameTable<Activation> kActivations{{Activation::kTanh, "tanh"},
                                         {Activation::kSilu, "silu"}};
const NameTable<ScGate> kGates{{ScGate::kK8, "k8"}, {ScGate::kAlways, "always"}};

template <class E>
const char* name_of(const NameTable<E>& table, E value) {
  for (const auto& [v, n] : table) {
    if (v == value) return n;
  }
  throw ConfigError("unnamed enum value");
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Typed reader over one JSON object. Tracks which keys were consumed so
// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& msg) {
    throw ConfigError((path.empty() ? std::string("config") : path) + ": " + msg);
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void num(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_double(*v, join(path_, key));
  }
  void size(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = static_cast<std::size_t>(as_u64(*v, join(path_, key)));
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_u64(*v, join(path_, key));
  }
  void flag(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(join(path_, key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void str(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(join(path_, key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class E>
  void choice(const std::string& key, const NameTable<E>& table, E& out) {
    const json* v = find(key);
    if (!v) return;
    const std::string p = join(path_, key);
    if (!v->is_string()) fail(p, "expected a string");
    const std::string s = v->get<std::string>();
    for (const auto& [value, name] : table) {
      if (s == name) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& entry : table) allowed += std::string(allowed.empty() ? "" : ", ") + entry.second;
    fail(p, "unknown value \"" + s + "\" (allowed: " + allowed + ")");
  }
  void sizes(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      const std::string p = join(path_, key);
      if (!v->is_array()) fail(p, "expected an array");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(static_cast<std::size_t>(as_u64((*v)[i], p + "[" + std::to_string(i) + "]")));
      }
    }
  }
  void nums(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      const std::string p = join(path_, key);
      if (!v->is_array()) fail(p, "expected an array");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_double((*v)[i], p + "[" + std::to_string(i) + "]"));
      }
    }
  }
  template <class F>
  void object(const std::string& key, F&& body) {
    if (const json* v = find(key)) {
      Reader sub(*v, join(path_, key));
      body(sub);
      sub.finish();
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(join(path_, item.key()), "unknown key");
    }
  }

  const std::string& path() const { return path_; }

  static double as_double(const json& v, const std::string& p) {
    if (!v.is_number()) fail(p, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(p, "must be finite");
    return d;
  }
  static std::uint64_t as_u64(const json& v, const std::string& p) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) fail(p, "must be non-negative");
    fail(p, "expected a non-negative integer");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_opt(Reader& r, AdamWHyper& h) {
  r.num("learning_rate", h.learning_rate);
  r.num("beta1", h.beta1);
  r.num("beta2", h.beta2);
  r.num("epsilon", h.epsilon);
  r.num("weight_decay", h.weight_decay);
}

json opt_json(const AdamWHyper& h) {
  return {{"learning_rate", h.learning_rate}, {"beta1", h.beta1}, {"beta2", h.beta2},
          {"epsilon", h.epsilon}, {"weight_decay", h.weight_decay}};
}

void read_grid(Reader& r, GridConfig& g) {
  r.size("points", g.points);
  r.num("shift", g.shift);
}

void read_teacher(const json& v, const std::string& path, GaussianMixture& gmm) {
  Reader r(v, path);
  std::size_t dim = gmm.dim;
  r.size("dim", dim);
  if (const json* comps = r.find("components")) {
    const std::string cp = join(path, "components");
    if (!comps->is_array() || comps->empty()) Reader::fail(cp, "expected a non-empty array");
    std::vector<GaussianComponent> out;
    for (std::size_t i = 0; i < comps->size(); ++i) {
      const std::string ip = cp + "[" + std::to_string(i) + "]";
      Reader c((*comps)[i], ip);
      GaussianComponent g;
      g.mean.assign(dim, 0.0);
      c.num("weight", g.weight);
      c.nums("mean", g.mean);
      c.num("variance", g.variance);
      c.finish();
      if (g.mean.size() != dim) Reader::fail(join(ip, "mean"), "length must equal dim");
      out.push_back(std::move(g));
    }
    gmm.components = std::move(out);
  } else if (dim != gmm.dim) {
    Reader::fail(join(path, "dim"), "changing dim requires components");
  }
  gmm.dim = dim;
  r.finish();
}

json teacher_json(const GaussianMixture& gmm) {
  json comps = json::array();
  for (const auto& c : gmm.components) {
    comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"variance", c.variance}});
  }
  return {{"dim", gmm.dim}, {"components", comps}};
}

void read_distill(Reader& r, DistillConfig& d) {
  r.choice("objective", kObjectives, d.objective);
  r.num("lambda_sc", d.lambda_sc);
  r.size("critic_updates_per_gen_update", d.critic_updates_per_gen_update);
  r.flag("backward_simulation", d.backward_simulation);
  r.object("train_grid", [&](Reader& g) { read_grid(g, d.train_grid); });
  r.object("infer_grid", [&](Reader& g) { read_grid(g, d.infer_grid); });
  r.size("batch_size", d.batch_size);
  r.size("iterations", d.iterations);
  r.sizes("generator_hidden", d.generator_hidden);
  r.sizes("critic_hidden", d.critic_hidden);
  r.choice("activation", kActivations, d.activation);
  r.object("generator_opt", [&](Reader& o) { read_opt(o, d.generator_opt); });
  r.object("critic_opt", [&](Reader& o) { read_opt(o, d.critic_opt); });
  r.choice("dmd_normalization", kNorms, d.dmd_normalization);
  r.choice("sc_detach", kDetach, d.sc_detach);
  r.flag("sc_terminal_anchor", d.sc_terminal_anchor);
  r.num("t_jitter", d.t_jitter);
  r.size("warmstart_iters", d.warmstart_iters);
  r.size("eval_every", d.eval_every);
  r.size("eval_samples", d.eval_samples);
  r.num("defect_epsilon", d.defect_epsilon);
  r.size("checkpoint_every", d.checkpoint_every);
}

json distill_json(const DistillConfig& d) {
  return {{"objective", name_of(kObjectives, d.objective)},
          {"lambda_sc", d.lambda_sc},
          {"critic_updates_per_gen_update", d.critic_updates_per_gen_update},
          {"backward_simulation", d.backward_simulation},
          {"train_grid", {{"points", d.train_grid.points}, {"shift", d.train_grid.shift}}},
          {"infer_grid", {{"points", d.infer_grid.points}, {"shift", d.infer_grid.shift}}},
          {"batch_size", d.batch_size},
          {"iterations", d.iterations},
          {"generator_hidden", d.generator_hidden},
          {"critic_hidden", d.critic_hidden},
          {"activation", name_of(kActivations, d.activation)},
          {"generator_opt", opt_json(d.generator_opt)},
          {"critic_opt", opt_json(d.critic_opt)},
          {"dmd_normalization", name_of(kNorms, d.dmd_normalization)},
          {"sc_detach", name_of(kDetach, d.sc_detach)},
          {"sc_terminal_anchor", d.sc_terminal_anchor},
          {"t_jitter", d.t_jitter},
          {"warmstart_iters", d.warmstart_iters},
          {"eval_every", d.eval_every},
          {"eval_samples", d.eval_samples},
          {"defect_epsilon", d.defect_epsilon},
          {"checkpoint_every", d.checkpoint_every}};
}

void read_mixed(Reader& r, MixedStepConfig& m) {
  r.sizes("step_counts", m.step_counts);
  r.nums("probabilities", m.probabilities);
  r.size("fixed_k", m.fixed_k);
  r.num("lambda_sc", m.lambda_sc);
  r.num("lambda_align", m.lambda_align);
  if (const json* v = r.find("align_warmup_iters")) {
    if (v->is_null()) {
      m.align_warmup_iters.reset();
    } else {
      m.align_warmup_iters = static_cast<std::size_t>(
          Reader::as_u64(*v, join(r.path(), "align_warmup_iters")));
    }
  }
  r.num("align_apply_prob", m.align_apply_prob);
  r.num("align_delta", m.align_delta);
  r.choice("sc_gate", kGates, m.sc_gate);
}

json mixed_json(const MixedStepConfig& m) {
  return {{"step_counts", m.step_counts},
          {"probabilities", m.probabilities},
          {"fixed_k", m.fixed_k},
          {"lambda_sc", m.lambda_sc},
          {"lambda_align", m.lambda_align},
          {"align_warmup_iters",
           m.align_warmup_iters ? json(*m.align_warmup_iters) : json(nullptr)},
          {"align_apply_prob", m.align_apply_prob},
          {"align_delta", m.align_delta},
          {"sc_gate", name_of(kGates, m.sc_gate)}};
}

void read_toy(Reader& r, ToyProcessSpec& t) {
  r.size("n_chunks", t.n_chunks);
  r.size("frames", t.frames);
  r.size("tokens", t.tokens);
  r.size("channels", t.channels);
  r.size("memory", t.memory);
  r.num("angular_step", t.angular_step);
  r.num("noise", t.noise);
  r.num("start_angle", t.start_angle);
  if (const json* v = r.find("offsets")) {
    const std::string p = join(r.path(), "offsets");
    if (!v->is_array()) Reader::fail(p, "expected an array");
    t.offsets.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string ip = p + "[" + std::to_string(i) + "]";
      const json& o = (*v)[i];
      if (!o.is_array() || o.size() != 2) Reader::fail(ip, "expected [x, y]");
      t.offsets.push_back({Reader::as_double(o[0], ip + "[0]"),
                           Reader::as_double(o[1], ip + "[1]")});
    }
  }
}

json toy_json(const ToyProcessSpec& t) {
  json offsets = json::array();
  for (const auto& o : t.offsets) offsets.push_back({o[0], o[1]});
  return {{"n_chunks", t.n_chunks}, {"frames", t.frames},
          {"tokens", t.tokens}, {"channels", t.channels},
          {"memory", t.memory}, {"angular_step", t.angular_step},
          {"noise", t.noise}, {"start_angle", t.start_angle},
          {"offsets", offsets}};
}

void read_eval(Reader& r, EvalConfig& e) {
  r.size("samples", e.samples);
  r.size("projections", e.projections);
  r.sizes("step_counts", e.step_counts);
  r.size("long_chunks", e.long_chunks);
  r.u64("seed", e.seed);
}

json eval_json(const EvalConfig& e) {
  return {{"samples", e.samples}, {"projections", e.projections},
          {"step_counts", e.step_counts}, {"long_chunks", e.long_chunks},
          {"seed", e.seed}};
}

void check(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) Reader::fail(path, msg);
}

void check_opt(const AdamWHyper& h, const std::string& path) {
  check(h.learning_rate > 0.0, join(path, "learning_rate"), "must be > 0");
  check(h.beta1 >= 0.0 && h.beta1 < 1.0, join(path, "beta1"), "must be in [0, 1)");
  check(h.beta2 >= 0.0 && h.beta2 < 1.0, join(path, "beta2"), "must be in [0, 1)");
  check(h.epsilon > 0.0, join(path, "epsilon"), "must be > 0");
  check(h.weight_decay >= 0.0, join(path, "weight_decay"), "must be >= 0");
}

// Re-throws library validation errors as ConfigError under `path`.
template <class F>
void nested(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    Reader::fail(path, e.what());
  }
}

}  // namespace

std::string kind_name(ExperimentKind kind) { return name_of(kKinds, kind); }

ExperimentKind parse_kind(const std::string& name) {
  for (const auto& [k, n] : kKinds) {
    if (name == n) return k;
  }
  throw ConfigError("kind: unknown value \"" + name + "\"");
}

ArConfig RunConfig::ar_config(std::uint64_t seed) const {
  ArConfig c;
  c.distill = distill_for(seed);
  c.mixed = mixed;
  c.toy = toy;
  return c;
}

DistillConfig RunConfig::distill_for(std::uint64_t seed) const {
  DistillConfig d = distill;
  d.seed = seed;
  return d;
}

GaussianMixture default_nonar_teacher() {
  return GaussianMixture(2, {{0.5, {4.0, 0.0}, 0.25}, {0.5, {-4.0, 0.0}, 0.25}});
}

RunConfig default_run_config(ExperimentKind kind) {
  RunConfig c;
  c.kind = kind;
  c.teacher = default_nonar_teacher();
  if (kind == ExperimentKind::kAr) {
    const ArConfig ar = ArConfig::defaults();
    c.distill = ar.distill;
    c.mixed = ar.mixed;
    c.toy = ar.toy;
    c.eval.samples = 256;
  }
  return c;
}

RunConfig parse_run_config(const json& j, ExperimentKind fallback) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  ExperimentKind kind = fallback;
  if (auto it = j.find("kind"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("kind: expected a string");
    kind = parse_kind(it->get<std::string>());
  }
  RunConfig c = default_run_config(kind);

  Reader r(j, "");
  r.find("kind");
  if (const json* v = r.find("seeds")) {
    if (!v->is_array() || v->empty()) Reader::fail("seeds", "expected a non-empty array");
    c.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      c.seeds.push_back(Reader::as_u64((*v)[i], "seeds[" + std::to_string(i) + "]"));
    }
  }
  r.str("output_dir", c.output_dir);
  if (const json* v = r.find("teacher")) read_teacher(*v, "teacher", c.teacher);
  r.object("distill", [&](Reader& d) { read_distill(d, c.distill); });
  r.object("mixed", [&](Reader& m) { read_mixed(m, c.mixed); });
  r.object("toy", [&](Reader& t) { read_toy(t, c.toy); });
  r.object("eval", [&](Reader& e) { read_eval(e, c.eval); });
  r.finish();

  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path, ExperimentKind fallback) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_run_config(j, fallback);
}

json to_json(const RunConfig& c) {
  // nlohmann::json objects are std::map backed, so keys come out sorted.
  return {{"kind", kind_name(c.kind)},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir},
          {"teacher", teacher_json(c.teacher)},
          {"distill", distill_json(c.distill)},
          {"mixed", mixed_json(c.mixed)},
          {"toy", toy_json(c.toy)},
          {"eval", eval_json(c.eval)}};
}

void validate(const RunConfig& c) {
  check(!c.seeds.empty(), "seeds", "must not be empty");
  nested("teacher", [&] { c.teacher.validate(); });
  check(c.teacher.dim >= 1, "teacher.dim", "must be >= 1");

  const DistillConfig& d = c.distill;
  check(d.lambda_sc >= 0.0, "distill.lambda_sc", "must be >= 0");
  check(d.critic_updates_per_gen_update >= 1, "distill.critic_updates_per_gen_update",
        "must be >= 1");
  check(d.train_grid.points >= 2, "distill.train_grid.points", "must be >= 2");
  check(d.infer_grid.points >= 1, "distill.infer_grid.points", "must be >= 1");
  check(d.train_grid.shift > 0.0, "distill.train_grid.shift", "must be > 0");
  check(d.infer_grid.shift > 0.0, "distill.infer_grid.shift", "must be > 0");
  check(d.batch_size >= 1, "distill.batch_size", "must be >= 1");
  check(!d.generator_hidden.empty(), "distill.generator_hidden", "must not be empty");
  check(!d.critic_hidden.empty(), "distill.critic_hidden", "must not be empty");
  for (std::size_t w : d.generator_hidden) check(w >= 1, "distill.generator_hidden", "widths must be >= 1");
  for (std::size_t w : d.critic_hidden) check(w >= 1, "distill.critic_hidden", "widths must be >= 1");
  check_opt(d.generator_opt, "distill.generator_opt");
  check_opt(d.critic_opt, "distill.critic_opt");
  check(d.t_jitter >= 0.0 && d.t_jitter < 0.5, "distill.t_jitter", "must be in [0, 0.5)");
  check(d.defect_epsilon > 0.0, "distill.defect_epsilon", "must be > 0");
  check(d.eval_samples >= 1, "distill.eval_samples", "must be >= 1");

  nested("mixed", [&] { c.mixed.validate(); });
  check(c.mixed.lambda_sc >= 0.0, "mixed.lambda_sc", "must be >= 0");
  check(c.mixed.lambda_align >= 0.0, "mixed.lambda_align", "must be >= 0");
  nested("toy", [&] { c.toy.validate(); });

  check(c.eval.samples >= 2, "eval.samples", "must be >= 2");
  check(c.eval.projections >= 1, "eval.projections", "must be >= 1");
  check(!c.eval.step_counts.empty(), "eval.step_counts", "must not be empty");
  for (std::size_t k : c.eval.step_counts) check(k >= 1, "eval.step_counts", "entries must be >= 1");
  check(c.eval.long_chunks >= 1, "eval.long_chunks", "must be >= 1");
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  // Neither the output location nor the seed list changes what one seed
  // computes; the seed itself is part of the run id.
  j.erase("output_dir");
  j.erase("seeds");
  return fnv1a_hex(j.dump());
}

std::string run_id(const RunConfig& config, std::uint64_t seed) {
  return kind_name(config.kind) + "-" + config_hash(config).substr(0, 8) + "-s" +
         std::to_string(seed);
}

}  // namespace scdmd
