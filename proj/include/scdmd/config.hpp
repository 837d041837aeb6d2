#pragma once

// Run configuration: JSON schema, validation, canonical serialization and
// the config hash stamped into every artifact.

#include <cstdint>
#include <string>
#include <vector>

#include "scdmd/ar.hpp"
#include "scdmd/metrics.hpp"

namespace scdmd {

enum class ExperimentKind { kNonAr, kAr, kDefectEval };

std::string kind_name(ExperimentKind kind);
ExperimentKind parse_kind(const std::string& name);

struct EvalConfig {
  std::size_t samples = 2048;      // points per evaluation set
  std::size_t projections = 64;    // sliced Wasserstein directions
  std::vector<std::size_t> step_counts{2, 4, 8};
  std::size_t long_chunks = 32;    // eval-long horizon
  std::uint64_t seed = 1000;       // evaluation noise, independent of training

  bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
  ExperimentKind kind = ExperimentKind::kNonAr;
  GaussianMixture teacher;  // non-AR target
  DistillConfig distill;
  MixedStepConfig mixed;
  ToyProcessSpec toy;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir;  // empty: the CLI decides

  ArConfig ar_config(std::uint64_t seed) const;
  DistillConfig distill_for(std::uint64_t seed) const;
};

/// Two well-separated isotropic components in the plane.
GaussianMixture default_nonar_teacher();

/// Defaults for the given kind; AR kinds start from ArConfig::defaults().
RunConfig default_run_config(ExperimentKind kind);

/// Overlays `j` on the defaults for its "kind" (or `fallback` when absent).
/// Unknown keys and type errors throw ConfigError naming the key path.
RunConfig parse_run_config(const json& j, ExperimentKind fallback = ExperimentKind::kNonAr);
RunConfig load_run_config(const std::string& path,
                          ExperimentKind fallback = ExperimentKind::kNonAr);

/// Full canonical form: every field, keys sorted.
json to_json(const RunConfig& config);

/// Semantic checks beyond the schema (counts >= 1, grids, probabilities).
void validate(const RunConfig& config);

/// 64-bit FNV-1a of the canonical dump as 16 hex digits.
std::string config_hash(const RunConfig& config);
std::string fnv1a_hex(const std::string& bytes);

/// "<kind>-<first 8 hash digits>-s<seed>".
std::string run_id(const RunConfig& config, std::uint64_t seed);

}  // namespace scdmd
