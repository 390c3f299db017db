#include "affectlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "affectlab/error.hpp"

namespace affectlab::metrics {

namespace {

void require_same_length(Series a, Series b, std::size_t min_len) {
  if (a.size() != b.size())
    throw LengthMismatch("series lengths differ: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  if (a.size() < min_len)
    throw LengthMismatch("series too short: need at least " + std::to_string(min_len) +
                         " values, got " + std::to_string(a.size()));
}

double mean_of(Series a) {
  double s = 0.0;
  for (double v : a) s += v;
  return s / static_cast<double>(a.size());
}

struct PairStats {
  double mean_a, mean_b, var_a, var_b, cov;
};

// Two-pass population statistics.
PairStats pair_stats(Series a, Series b) {
  PairStats s{mean_of(a), mean_of(b), 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - s.mean_a;
    const double db = b[i] - s.mean_b;
    s.var_a += da * da;
    s.var_b += db * db;
    s.cov += da * db;
  }
  const double n = static_cast<double>(a.size());
  s.var_a /= n;
  s.var_b /= n;
  s.cov /= n;
  return s;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

Moments mean_var(Series a) {
  if (a.empty()) throw LengthMismatch("mean_var of empty series");
  Moments m;
  m.mean = mean_of(a);
  for (double v : a) m.variance += (v - m.mean) * (v - m.mean);
  m.variance /= static_cast<double>(a.size());
  return m;
}

double pearson(Series a, Series b) {
  require_same_length(a, b, 2);
  const PairStats s = pair_stats(a, b);
  if (s.var_a == 0.0 && s.var_b == 0.0)
    throw DegenerateSeries("pearson: both series are constant");
  // One constant side has zero covariance; define r = 0.
  if (s.var_a == 0.0 || s.var_b == 0.0) return 0.0;
  const double r = s.cov / std::sqrt(s.var_a * s.var_b);
  return std::clamp(r, -1.0, 1.0);
}

double ccc(Series pred, Series truth) {
  require_same_length(pred, truth, 2);
  const PairStats s = pair_stats(pred, truth);
  const double gap = s.mean_a - s.mean_b;
  const double den = std::max(s.var_a + s.var_b + gap * gap, kCccEpsilon);
  return std::clamp(2.0 * s.cov / den, -1.0, 1.0);
}

double mse(Series pred, Series truth) {
  require_same_length(pred, truth, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

AgreementMatrix agreement_matrix(const std::vector<std::vector<double>>& series_by_annotator,
                                 const std::vector<std::string>& ids, AgreementMetric metric) {
  const std::size_t k = series_by_annotator.size();
  if (k < 2) throw LengthMismatch("agreement needs at least 2 annotators, got " + std::to_string(k));
  if (ids.size() != k) throw LengthMismatch("annotator id count does not match series count");
  for (const auto& s : series_by_annotator)
    if (s.size() != series_by_annotator.front().size())
      throw LengthMismatch("annotator series lengths differ");

  AgreementMatrix m{ids, std::vector<std::vector<double>>(k, std::vector<double>(k, 1.0))};
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double v = metric == AgreementMetric::ccc
                           ? ccc(series_by_annotator[i], series_by_annotator[j])
                           : pearson(series_by_annotator[i], series_by_annotator[j]);
      m.cells[i][j] = v;
      m.cells[j][i] = v;
    }
  }
  return m;
}

double mean_agreement(const AgreementMatrix& m) {
  const std::size_t k = m.size();
  if (k < 2) throw LengthMismatch("mean_agreement needs at least 2 annotators");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      sum += m.cells[i][j];
      ++count;
    }
  return sum / static_cast<double>(count);
}

std::string render_agreement_table(const AgreementMatrix& m) {
  std::size_t width = 5;
  for (const auto& id : m.annotator_ids) width = std::max(width, id.size());
  auto pad = [width](const std::string& s) {
    return s + std::string(width + 2 - std::min(width + 2, s.size()), ' ');
  };
  std::ostringstream out;
  out << pad("");
  for (const auto& id : m.annotator_ids) out << pad(id);
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << pad(m.annotator_ids[i]);
    for (std::size_t j = 0; j < m.size(); ++j) out << pad(i == j ? "" : fmt3(m.cells[i][j]));
    out << '\n';
  }
  return out.str();
}

std::string render_agreement_csv(const AgreementMatrix& m) {
  std::ostringstream out;
  out << "annotator";
  for (const auto& id : m.annotator_ids) out << ',' << id;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.annotator_ids[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      out << ',';
      if (i != j) out << fmt3(m.cells[i][j]);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace affectlab::metrics
