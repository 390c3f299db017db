#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

// Direct-formula reference implementations in long double, written independently
// of the library: explicit sums, no shared helpers.
namespace oracles {

inline long double mean(const std::vector<double>& a) {
  long double s = 0;
  for (double v : a) s += v;
  return s / a.size();
}

inline long double var(const std::vector<double>& a) {
  const long double m = mean(a);
  long double s = 0;
  for (double v : a) s += (v - m) * (v - m);
  return s / a.size();
}

inline long double cov(const std::vector<double>& a, const std::vector<double>& b) {
  const long double ma = mean(a), mb = mean(b);
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / a.size();
}

inline double ccc(const std::vector<double>& p, const std::vector<double>& t) {
  const long double d = mean(p) - mean(t);
  return static_cast<double>(2 * cov(p, t) / (var(p) + var(t) + d * d));
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  return static_cast<double>(cov(a, b) / std::sqrt(var(a) * var(b)));
}

inline double mse(const std::vector<double>& p, const std::vector<double>& t) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * static_cast<long double>(p[i] - t[i]);
  return static_cast<double>(s / p.size());
}

inline double rel(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace oracles
