#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mrseg/morphology.hpp"
#include "mrseg/volume.hpp"

namespace mrseg {

/// 2|X n Y| / (|X| + |Y|); 1 when both are empty, 0 when exactly one is.
double dice(const Mask& x, const Mask& y);
/// Dice of the non-zero voxels. AlignmentError on differing geometry.
double dice(const Volume& x, const Volume& y);

struct MannWhitney {
  double u = 0.0;  // statistic of the first sample
  double p = 1.0;  // two-tailed
  bool exact = false;
};

/// Two-tailed Mann-Whitney U test with midranks for ties. Exact (enumerating
/// every split of the pooled sample) when the combined size is at most
/// `exact_limit`, otherwise the tie-corrected normal approximation with
/// continuity correction. StatError on an empty sample.
MannWhitney mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b, int exact_limit = 16);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// Mean, sample SD and a percentile-bootstrap confidence interval.
Summary summarize(const std::vector<double>& scores, double ci_level = 0.95, int resamples = 10000,
                  std::uint64_t seed = 0);

enum class Metric { Parenchyma, Abnormality, Merged, Left, Right };
inline constexpr Metric kMetrics[] = {Metric::Parenchyma, Metric::Abnormality, Metric::Merged, Metric::Left,
                                      Metric::Right};
std::string to_string(Metric m);

struct CaseReport {
  std::string id;
  std::map<Metric, std::optional<double>> dice;  // nullopt = not applicable
  double pred_volume_mm3 = 0.0;  // merged kidney
  double ref_volume_mm3 = 0.0;
};

struct EvalOptions {
  /// When the reference holds no abnormality the abnormality score is not
  /// applicable and left out of the mean; otherwise it is scored with the
  /// empty-mask conventions.
  bool abnormality_na_when_absent = true;
  double ci_level = 0.95;
  int resamples = 10000;
  std::uint64_t seed = 0;
};

CaseReport evaluate_case(const std::string& id, const Volume& pred, const Volume& ref, const EvalOptions& opt = {});

struct CohortReport {
  std::vector<CaseReport> cases;
  std::map<Metric, Summary> summary;
};

CohortReport summarize_cohort(std::vector<CaseReport> cases, const EvalOptions& opt = {});

/// Matches `<id>.nii` label files between the two directories. MissingCase
/// when either side lacks a counterpart.
CohortReport evaluate_cohort(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir,
                             const EvalOptions& opt = {});

void write_case_csv(const CohortReport& r, std::ostream& os);
void write_summary_table(const CohortReport& r, std::ostream& os);

/// Per-metric Mann-Whitney comparison of two systems on their applicable scores.
std::map<Metric, MannWhitney> compare_systems(const CohortReport& a, const CohortReport& b);

}  // namespace mrseg
