#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace testing {

struct ChiSquare {
  double statistic = 0;
  double threshold = 0;  // df + 3 * sqrt(2 df)
  bool ok() const { return statistic <= threshold; }
};

// Pearson goodness of fit of `counts` against `probs`, accepted at three
// standard deviations of the chi-square distribution above its mean.
inline ChiSquare chi_square(const std::vector<std::size_t>& counts, const std::vector<double>& probs) {
  double n = 0;
  for (auto c : counts) n += static_cast<double>(c);
  ChiSquare r;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = n * probs[i];
    const double d = static_cast<double>(counts[i]) - e;
    r.statistic += d * d / e;
  }
  const double df = static_cast<double>(counts.size()) - 1;
  r.threshold = df + 3 * std::sqrt(2 * df);
  return r;
}

inline ChiSquare chi_square_uniform(const std::vector<std::size_t>& counts) {
  return chi_square(counts, std::vector<double>(counts.size(), 1.0 / static_cast<double>(counts.size())));
}

}  // namespace testing
