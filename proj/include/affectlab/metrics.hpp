#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace affectlab::metrics {

using Series = std::span<const double>;

// Denominator floor for CCC: max(denominator, kCccEpsilon).
inline constexpr double kCccEpsilon = 1e-8;

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population (divide by N)
};

Moments mean_var(Series a);

// Throws DegenerateSeries when both inputs are constant.
double pearson(Series a, Series b);

// Concordance correlation coefficient with population moments.
// Both-constant equal-mean inputs give 0 instead of NaN.
double ccc(Series pred, Series truth);

double mse(Series pred, Series truth);

enum class AgreementMetric { ccc, pearson };

struct AgreementMatrix {
  std::vector<std::string> annotator_ids;
  // cells[i][j]; diagonal is unused and kept at 1.0.
  std::vector<std::vector<double>> cells;

  std::size_t size() const { return annotator_ids.size(); }
};

AgreementMatrix agreement_matrix(const std::vector<std::vector<double>>& series_by_annotator,
                                 const std::vector<std::string>& ids,
                                 AgreementMetric metric = AgreementMetric::ccc);

double mean_agreement(const AgreementMatrix& m);

// Aligned text table with a blank diagonal, values to 3 decimals.
std::string render_agreement_table(const AgreementMatrix& m);

// CSV with header `annotator,<id1>,<id2>,...`; diagonal cells left empty.
std::string render_agreement_csv(const AgreementMatrix& m);

}  // namespace affectlab::metrics
