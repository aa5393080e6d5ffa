#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmos/dataset.hpp"

namespace cmos {

/// Mean of exactly 16 scores on the 0-3 scale.
double msi(std::span<const int> scores);

/// Product-moment correlation. Throws InvalidArgument ("degenerate") for fewer than
/// two points or zero variance in either input.
double pearson(std::span<const double> x, std::span<const double> y);

/// 0 stays 0 (normal); 1, 2, 3 become 1 (abnormal).
std::vector<int> binary_collapse(std::span<const int> scores);

template <std::size_t K>
using Confusion = std::array<std::array<long, K>, K>;  // [truth][pred]

template <std::size_t K>
Confusion<K> confusion_matrix(std::span<const int> truth, std::span<const int> pred);

/// trace / total.
template <std::size_t K>
double accuracy(const Confusion<K>& c);

/// (p_o - p_e) / (1 - p_e) with marginal-product chance agreement; 0 when p_e == 1.
double cohen_kappa(const Confusion<2>& c);
double cohen_kappa(std::span<const int> pred, std::span<const int> truth);

/// Predictions for one subject by the model of the fold that held it out.
struct SubjectResult {
  std::string subject_id;
  int fold = 0;
  std::array<int, kSegmentsPerSubject> truth{};
  std::array<int, kSegmentsPerSubject> pred{};
};

struct FoldMetrics {
  int fold = 0;
  std::size_t n_subjects = 0;
  std::size_t n_segments = 0;
  double acc_ms = 0.0;
  std::optional<double> rho_msi;
  double acc_ad = 0.0;
  double kappa_ad = 0.0;
};

struct MetricsReport {
  double acc_ms = 0.0;
  std::optional<double> rho_msi;  // undefined when either MSI series is constant
  double acc_ad = 0.0;
  double kappa_ad = 0.0;
  std::size_t n_subjects = 0;
  std::size_t n_segments = 0;
  Confusion<4> confusion_4x4{};
  Confusion<2> confusion_2x2{};
  std::vector<FoldMetrics> folds;
};

/// Pools every subject's segment predictions into one report; the per-fold breakdown
/// is computed from the same predictions.
MetricsReport compute_metrics(const std::vector<SubjectResult>& results);

/// Human-readable table; the per-fold section is included only when requested.
std::string format_report_table(const MetricsReport& report, bool per_fold);

/// Exactly the keys acc_ms, rho_msi, acc_ad, kappa_ad, n_subjects, n_segments, one per
/// line as key=value. An undefined rho_msi is written as "nan".
std::string format_report_kv(const MetricsReport& report);

}  // namespace cmos
