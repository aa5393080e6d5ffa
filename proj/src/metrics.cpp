#include "cmos/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace cmos {
namespace {

std::string fixed(double v, int digits = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

std::string optional_fixed(const std::optional<double>& v) { return v ? fixed(*v) : std::string("nan"); }

struct Pooled {
  std::vector<int> truth, pred;
  std::vector<double> msi_truth, msi_pred;
};

void summarize(const Pooled& p, std::size_t subjects, double& acc_ms, std::optional<double>& rho, double& acc_ad,
               double& kappa_ad, Confusion<4>* c4_out, Confusion<2>* c2_out) {
  const auto c4 = confusion_matrix<4>(p.truth, p.pred);
  const auto bt = binary_collapse(p.truth), bp = binary_collapse(p.pred);
  const auto c2 = confusion_matrix<2>(bt, bp);
  acc_ms = accuracy(c4);
  acc_ad = accuracy(c2);
  kappa_ad = cohen_kappa(c2);
  rho.reset();
  if (subjects >= 2) {
    try {
      rho = pearson(p.msi_pred, p.msi_truth);
    } catch (const InvalidArgument&) {
    }
  }
  if (c4_out) *c4_out = c4;
  if (c2_out) *c2_out = c2;
}

void append(Pooled& p, const SubjectResult& r) {
  p.truth.insert(p.truth.end(), r.truth.begin(), r.truth.end());
  p.pred.insert(p.pred.end(), r.pred.begin(), r.pred.end());
  p.msi_truth.push_back(msi(r.truth));
  p.msi_pred.push_back(msi(r.pred));
}

}  // namespace

double msi(std::span<const int> scores) {
  if (scores.size() != kSegmentsPerSubject) {
    throw InvalidArgument("msi needs 16 scores, got " + std::to_string(scores.size()));
  }
  double s = 0;
  for (int v : scores) {
    if (v < 0 || v >= kNumClasses) throw InvalidArgument("score out of range: " + std::to_string(v));
    s += v;
  }
  return s / static_cast<double>(kSegmentsPerSubject);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("pearson: length mismatch");
  if (x.size() < 2) throw InvalidArgument("pearson: degenerate input (fewer than 2 points)");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw InvalidArgument("pearson: degenerate input (zero variance)");
  return sxy / std::sqrt(sxx * syy);
}

std::vector<int> binary_collapse(std::span<const int> scores) {
  std::vector<int> out;
  out.reserve(scores.size());
  for (int s : scores) {
    if (s < 0 || s >= kNumClasses) throw InvalidArgument("score out of range: " + std::to_string(s));
    out.push_back(s == 0 ? 0 : 1);
  }
  return out;
}

template <std::size_t K>
Confusion<K> confusion_matrix(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) throw InvalidArgument("confusion_matrix: length mismatch");
  Confusion<K> c{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || truth[i] >= static_cast<int>(K) || pred[i] >= static_cast<int>(K)) {
      throw InvalidArgument("confusion_matrix: label out of range");
    }
    ++c[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return c;
}

template <std::size_t K>
double accuracy(const Confusion<K>& c) {
  long trace = 0, total = 0;
  for (std::size_t i = 0; i < K; ++i) {
    trace += c[i][i];
    for (std::size_t j = 0; j < K; ++j) total += c[i][j];
  }
  if (total == 0) throw InvalidArgument("accuracy of an empty confusion matrix");
  return static_cast<double>(trace) / static_cast<double>(total);
}

double cohen_kappa(const Confusion<2>& c) {
  const double n = static_cast<double>(c[0][0] + c[0][1] + c[1][0] + c[1][1]);
  if (n == 0) throw InvalidArgument("cohen_kappa of an empty confusion matrix");
  const double po = static_cast<double>(c[0][0] + c[1][1]) / n;
  const double truth0 = static_cast<double>(c[0][0] + c[0][1]) / n, pred0 = static_cast<double>(c[0][0] + c[1][0]) / n;
  const double pe = truth0 * pred0 + (1 - truth0) * (1 - pred0);
  if (pe == 1.0) return 0.0;
  return (po - pe) / (1 - pe);
}

double cohen_kappa(std::span<const int> pred, std::span<const int> truth) {
  return cohen_kappa(confusion_matrix<2>(truth, pred));
}

MetricsReport compute_metrics(const std::vector<SubjectResult>& results) {
  if (results.empty()) throw InvalidArgument("compute_metrics: no subjects");
  MetricsReport report;
  Pooled all;
  std::map<int, std::pair<Pooled, std::size_t>> by_fold;
  for (const auto& r : results) {
    append(all, r);
    auto& [pool, count] = by_fold[r.fold];
    append(pool, r);
    ++count;
  }
  report.n_subjects = results.size();
  report.n_segments = all.truth.size();
  summarize(all, results.size(), report.acc_ms, report.rho_msi, report.acc_ad, report.kappa_ad, &report.confusion_4x4,
            &report.confusion_2x2);
  for (const auto& [fold, entry] : by_fold) {
    FoldMetrics f;
    f.fold = fold;
    f.n_subjects = entry.second;
    f.n_segments = entry.first.truth.size();
    summarize(entry.first, entry.second, f.acc_ms, f.rho_msi, f.acc_ad, f.kappa_ad, nullptr, nullptr);
    report.folds.push_back(f);
  }
  return report;
}

std::string format_report_table(const MetricsReport& r, bool per_fold) {
  static const char* kNames[] = {"normal", "hypokinetic", "akinetic", "dyskinetic"};
  std::ostringstream out;
  out << "metric      value\n"
      << "acc_ms      " << fixed(r.acc_ms) << '\n'
      << "rho_msi     " << optional_fixed(r.rho_msi) << '\n'
      << "acc_ad      " << fixed(r.acc_ad) << '\n'
      << "kappa_ad    " << fixed(r.kappa_ad) << '\n'
      << "subjects    " << r.n_subjects << '\n'
      << "segments    " << r.n_segments << "\n\n";
  out << "confusion (rows = truth, cols = prediction)\n" << std::setw(12) << "";
  for (const char* n : kNames) out << std::setw(12) << n;
  out << '\n';
  for (std::size_t i = 0; i < 4; ++i) {
    out << std::setw(12) << kNames[i];
    for (std::size_t j = 0; j < 4; ++j) out << std::setw(12) << r.confusion_4x4[i][j];
    out << '\n';
  }
  out << "\nbinary (rows = truth, cols = prediction)\n"
      << std::setw(12) << "" << std::setw(12) << "normal" << std::setw(12) << "abnormal" << '\n'
      << std::setw(12) << "normal" << std::setw(12) << r.confusion_2x2[0][0] << std::setw(12) << r.confusion_2x2[0][1]
      << '\n'
      << std::setw(12) << "abnormal" << std::setw(12) << r.confusion_2x2[1][0] << std::setw(12)
      << r.confusion_2x2[1][1] << '\n';
  if (per_fold) {
    out << "\nper-fold breakdown\n"
        << "fold  subjects  segments  acc_ms   rho_msi  acc_ad   kappa_ad\n";
    for (const auto& f : r.folds) {
      out << std::left << std::setw(6) << f.fold << std::setw(10) << f.n_subjects << std::setw(10) << f.n_segments
          << std::setw(9) << fixed(f.acc_ms) << std::setw(9) << optional_fixed(f.rho_msi) << std::setw(9)
          << fixed(f.acc_ad) << fixed(f.kappa_ad) << std::right << '\n';
    }
  }
  return out.str();
}

std::string format_report_kv(const MetricsReport& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "acc_ms=" << r.acc_ms << '\n';
  out << "rho_msi=";
  if (r.rho_msi) {
    out << *r.rho_msi;
  } else {
    out << "nan";
  }
  out << '\n'
      << "acc_ad=" << r.acc_ad << '\n'
      << "kappa_ad=" << r.kappa_ad << '\n'
      << "n_subjects=" << r.n_subjects << '\n'
      << "n_segments=" << r.n_segments << '\n';
  return out.str();
}

template Confusion<2> confusion_matrix<2>(std::span<const int>, std::span<const int>);
template Confusion<4> confusion_matrix<4>(std::span<const int>, std::span<const int>);
template double accuracy<2>(const Confusion<2>&);
template double accuracy<4>(const Confusion<4>&);

}  // namespace cmos
