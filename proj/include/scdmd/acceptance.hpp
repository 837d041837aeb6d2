#pragma once

// The acceptance suite: criteria 1-10, each a self-contained check with a
// pass/fail verdict and a JSON detail block. Shared by the acceptance test
// binary and `scdmd-lab report`.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "scdmd/metrics.hpp"

namespace scdmd {

struct CriterionResult {
  CriterionResult() = default;
  CriterionResult(int id_, std::string name_) : id(id_), name(std::move(name_)) {}

  int id = 0;
  std::string name;
  bool passed = false;
  bool ran = false;
  json detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  std::vector<int> only;  // empty: every criterion
  std::filesystem::path work_dir = "acceptance";  // scratch runs for criterion 9
  std::ostream* log = nullptr;
};

/// (id, short name) for every criterion, in order.
std::vector<std::pair<int, std::string>> acceptance_criteria();

/// Runs the selected criteria; unselected ones come back with ran = false.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options);

/// Writes <dir>/report.json and returns its path.
std::filesystem::path write_acceptance_report(const std::vector<CriterionResult>& results,
                                              const std::filesystem::path& dir);

CriterionResult criterion_gradients();
CriterionResult criterion_analytic_oracles();
CriterionResult criterion_loss_oracles();
/// Criteria 4-6 share one set of trained runs.
std::vector<CriterionResult> criteria_nonar_orderings(std::ostream* log);
CriterionResult criterion_ar_ablation(std::ostream* log);
CriterionResult criterion_statistics();
CriterionResult criterion_determinism(const std::filesystem::path& work_dir);
CriterionResult criterion_ablation_identities();

}  // namespace scdmd
