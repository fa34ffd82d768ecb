#pragma once

// Independent reference computations for the test suites. These stay
// deliberately naive (counting ranks, exhaustive partitions, long double
// accumulation) so they share no code path with the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pqr/error.hpp"

namespace oracle {

// Fractional ranks by pairwise counting, 1-based, ties get the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    size_t less = 0, equal = 0;
    for (size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    out[i] = static_cast<double>(less) + 1.0 + 0.5 * static_cast<double>(equal - 1);
  }
  return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  long double mean_a = 0, mean_b = 0;
  for (size_t i = 0; i < n; ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= static_cast<long double>(n);
  mean_b /= static_cast<long double>(n);
  long double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < n; ++i) {
    const long double da = a[i] - mean_a;
    const long double db = b[i] - mean_b;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return static_cast<double>(cov / std::sqrt(va * vb));
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(ranks(a), ranks(b));
}

// Classic no-ties formula 1 - 6*sum(d^2)/(n(n^2-1)).
inline double spearman_distance_formula(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

// Minimum mean squared quantization error over all contiguous partitions of
// the sorted scores into m non-empty cells.
inline double best_partition_mse(std::vector<double> scores, int m) {
  std::sort(scores.begin(), scores.end());
  const int n = static_cast<int>(scores.size());

  auto cell_sse = [&](int a, int b) {  // [a, b)
    double mean = 0.0;
    for (int i = a; i < b; ++i) mean += scores[i];
    mean /= (b - a);
    double sse = 0.0;
    for (int i = a; i < b; ++i) sse += (scores[i] - mean) * (scores[i] - mean);
    return sse;
  };

  double best = std::numeric_limits<double>::infinity();
  std::vector<int> cuts(static_cast<size_t>(m) + 1);
  cuts[0] = 0;
  cuts[static_cast<size_t>(m)] = n;

  // Enumerate interior cut positions recursively.
  auto rec = [&](auto&& self, int level, int start) -> void {
    if (level == m) {
      double sse = 0.0;
      for (int c = 0; c < m; ++c) sse += cell_sse(cuts[static_cast<size_t>(c)], cuts[static_cast<size_t>(c) + 1]);
      best = std::min(best, sse);
      return;
    }
    for (int cut = start + 1; cut <= n - (m - level); ++cut) {
      cuts[static_cast<size_t>(level)] = cut;
      self(self, level + 1, cut);
    }
  };
  if (m == 1) {
    best = cell_sse(0, n);
  } else {
    rec(rec, 1, 0);
  }
  return best / n;
}

template <typename Fn>
pqr::Errc error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const pqr::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected the call to raise a pqr::Error");
}

}  // namespace oracle
