#include "pqr/anchors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "pqr/error.hpp"

namespace pqr {

namespace {

void require_valid_range(const ScoreRange& r) {
  if (!(r.lo < r.hi)) fail(Errc::invalid_parameter, "score range must satisfy lo < hi");
}

// Cell index (0-based) for y given interior boundaries; half-open cells,
// top edge owned by the last cell.
int cell_of(const std::vector<double>& boundaries, double y) {
  int idx = 0;
  while (idx < static_cast<int>(boundaries.size()) && y >= boundaries[idx]) ++idx;
  return idx;
}

double mean_square_error(std::span<const double> scores,
                         const std::vector<double>& centers,
                         const std::vector<double>& boundaries) {
  double sse = 0.0;
  for (double y : scores) {
    double d = y - centers[static_cast<size_t>(cell_of(boundaries, y))];
    sse += d * d;
  }
  return sse / static_cast<double>(scores.size());
}

std::vector<double> midpoint_boundaries(const std::vector<double>& centers) {
  std::vector<double> b;
  b.reserve(centers.size() - 1);
  for (size_t m = 0; m + 1 < centers.size(); ++m) b.push_back(0.5 * (centers[m] + centers[m + 1]));
  return b;
}

// Globally optimal contiguous partition of the score multiset into m cells,
// by dynamic programming over the distinct sorted values. Plain alternation
// from a data-independent start can stall in a local optimum; seeding it
// with the exact partition keeps the iteration's fixed point at the true
// minimum-MSE quantizer.
std::vector<double> optimal_partition_centers(std::span<const double> scores, int m) {
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> values;
  std::vector<double> counts;
  for (double y : sorted) {
    if (!values.empty() && values.back() == y) {
      counts.back() += 1.0;
    } else {
      values.push_back(y);
      counts.push_back(1.0);
    }
  }
  const int n = static_cast<int>(values.size());

  std::vector<double> pc(static_cast<size_t>(n) + 1, 0.0);   // counts
  std::vector<double> ps(static_cast<size_t>(n) + 1, 0.0);   // sums
  std::vector<double> pss(static_cast<size_t>(n) + 1, 0.0);  // squared sums
  for (int i = 0; i < n; ++i) {
    pc[static_cast<size_t>(i) + 1] = pc[static_cast<size_t>(i)] + counts[static_cast<size_t>(i)];
    ps[static_cast<size_t>(i) + 1] =
        ps[static_cast<size_t>(i)] + counts[static_cast<size_t>(i)] * values[static_cast<size_t>(i)];
    pss[static_cast<size_t>(i) + 1] =
        pss[static_cast<size_t>(i)] +
        counts[static_cast<size_t>(i)] * values[static_cast<size_t>(i)] * values[static_cast<size_t>(i)];
  }
  auto cell_sse = [&](int a, int b) {  // values [a, b)
    const double cnt = pc[static_cast<size_t>(b)] - pc[static_cast<size_t>(a)];
    const double sum = ps[static_cast<size_t>(b)] - ps[static_cast<size_t>(a)];
    const double ssq = pss[static_cast<size_t>(b)] - pss[static_cast<size_t>(a)];
    return std::max(0.0, ssq - sum * sum / cnt);
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dp(static_cast<size_t>(m) + 1,
                                      std::vector<double>(static_cast<size_t>(n) + 1, inf));
  std::vector<std::vector<int>> from(static_cast<size_t>(m) + 1,
                                     std::vector<int>(static_cast<size_t>(n) + 1, 0));
  dp[0][0] = 0.0;
  for (int k = 1; k <= m; ++k)
    for (int j = k; j <= n; ++j)
      for (int i = k - 1; i < j; ++i) {
        const double cost = dp[static_cast<size_t>(k) - 1][static_cast<size_t>(i)] + cell_sse(i, j);
        if (cost < dp[static_cast<size_t>(k)][static_cast<size_t>(j)]) {
          dp[static_cast<size_t>(k)][static_cast<size_t>(j)] = cost;
          from[static_cast<size_t>(k)][static_cast<size_t>(j)] = i;
        }
      }

  std::vector<double> centers(static_cast<size_t>(m), 0.0);
  int j = n;
  for (int k = m; k >= 1; --k) {
    const int i = from[static_cast<size_t>(k)][static_cast<size_t>(j)];
    const double cnt = pc[static_cast<size_t>(j)] - pc[static_cast<size_t>(i)];
    centers[static_cast<size_t>(k) - 1] = (ps[static_cast<size_t>(j)] - ps[static_cast<size_t>(i)]) / cnt;
    j = i;
  }
  return centers;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

AnchorSet uniform_anchors(ScoreRange range, int m) {
  require_valid_range(range);
  if (m < 1) fail(Errc::invalid_parameter, "anchor count must be >= 1");

  AnchorSet out;
  out.method = AnchorMethod::uniform;
  out.range = range;
  const double bin = range.width() / m;
  for (int i = 0; i < m; ++i) out.centers.push_back(range.lo + (i + 0.5) * bin);
  for (int i = 1; i < m; ++i) out.boundaries.push_back(range.lo + i * bin);
  return out;
}

LloydMaxResult lloyd_max(std::span<const double> scores, int m, ScoreRange range,
                         int max_iter, double tol) {
  require_valid_range(range);
  if (scores.empty()) fail(Errc::invalid_parameter, "lloyd_max needs a non-empty score list");
  if (m < 1) fail(Errc::invalid_parameter, "anchor count must be >= 1");
  if (max_iter < 1) fail(Errc::invalid_parameter, "max_iter must be >= 1");
  for (double y : scores) {
    if (!range.contains(y))
      fail(Errc::invalid_parameter, "score " + format_double(y) + " outside the quantizer range");
  }
  std::set<double> distinct(scores.begin(), scores.end());
  if (static_cast<size_t>(m) > distinct.size())
    fail(Errc::degenerate_quantizer,
         "requested " + std::to_string(m) + " anchors but scores have only " +
             std::to_string(distinct.size()) + " distinct values");

  std::vector<double> centers = optimal_partition_centers(scores, m);
  std::vector<double> boundaries = midpoint_boundaries(centers);

  QuantizerReport report;
  double prev_mse = std::numeric_limits<double>::infinity();
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    // Centroid step: each center moves to the mean of its cell.
    std::vector<double> sum(static_cast<size_t>(m), 0.0);
    std::vector<int> count(static_cast<size_t>(m), 0);
    for (double y : scores) {
      int c = cell_of(boundaries, y);
      sum[static_cast<size_t>(c)] += y;
      ++count[static_cast<size_t>(c)];
    }
    for (int c = 0; c < m; ++c) {
      if (count[static_cast<size_t>(c)] > 0)
        centers[static_cast<size_t>(c)] = sum[static_cast<size_t>(c)] / count[static_cast<size_t>(c)];
    }
    // Re-seed empty cells at the score farthest from the idle center,
    // skipping values already occupied by another center.
    for (int c = 0; c < m; ++c) {
      if (count[static_cast<size_t>(c)] > 0) continue;
      double best = centers[static_cast<size_t>(c)];
      double best_dist = -1.0;
      for (double y : scores) {
        bool taken = false;
        for (int o = 0; o < m; ++o) {
          if (o != c && centers[static_cast<size_t>(o)] == y) { taken = true; break; }
        }
        if (taken) continue;
        double d = std::abs(y - centers[static_cast<size_t>(c)]);
        if (d > best_dist) { best_dist = d; best = y; }
      }
      centers[static_cast<size_t>(c)] = best;
    }
    std::sort(centers.begin(), centers.end());

    // Boundary step: nearest-center partition.
    boundaries = midpoint_boundaries(centers);

    double mse = mean_square_error(scores, centers, boundaries);
    report.mse_trace.push_back(mse);
    if (std::abs(prev_mse - mse) < tol) {
      prev_mse = mse;
      report.converged = true;
      ++iter;
      break;
    }
    prev_mse = mse;
  }

  report.iterations = iter;
  report.mse = prev_mse;

  LloydMaxResult out;
  out.anchors.centers = std::move(centers);
  out.anchors.boundaries = std::move(boundaries);
  out.anchors.method = AnchorMethod::lloyd_max;
  out.anchors.range = range;
  out.report = report;
  validate_anchor_set(out.anchors);
  return out;
}

int assign_bin(const AnchorSet& anchors, double y) {
  if (!anchors.range.contains(y))
    fail(Errc::out_of_range, "score " + format_double(y) + " outside the anchor range");
  return cell_of(anchors.boundaries, y) + 1;
}

void validate_anchor_set(const AnchorSet& anchors) {
  require_valid_range(anchors.range);
  const auto& c = anchors.centers;
  const auto& b = anchors.boundaries;
  if (c.empty()) fail(Errc::invalid_parameter, "anchor set has no centers");
  if (b.size() + 1 != c.size())
    fail(Errc::invalid_parameter, "anchor set needs exactly M-1 boundaries");
  for (size_t i = 0; i < c.size(); ++i) {
    if (!anchors.range.contains(c[i]))
      fail(Errc::invalid_parameter, "anchor center outside the score range");
    if (i > 0 && !(c[i - 1] < c[i]))
      fail(Errc::invalid_parameter, "anchor centers must be strictly increasing");
  }
  for (size_t i = 0; i < b.size(); ++i) {
    if (i > 0 && !(b[i - 1] < b[i]))
      fail(Errc::invalid_parameter, "anchor boundaries must be strictly increasing");
    if (!(c[i] < b[i] && b[i] < c[i + 1]))
      fail(Errc::invalid_parameter, "boundaries must interleave centers");
    if (anchors.method == AnchorMethod::lloyd_max &&
        std::abs(b[i] - 0.5 * (c[i] + c[i + 1])) > 1e-9)
      fail(Errc::invalid_parameter, "lloyd_max boundaries must be center midpoints");
  }
}

std::string anchor_record(const AnchorSet& anchors) {
  std::string out = "method=";
  out += anchor_method_name(anchors.method);
  out += " range=" + format_double(anchors.range.lo) + "," + format_double(anchors.range.hi);
  out += " centers=";
  for (size_t i = 0; i < anchors.centers.size(); ++i) {
    if (i) out += ",";
    out += format_double(anchors.centers[i]);
  }
  out += " boundaries=";
  for (size_t i = 0; i < anchors.boundaries.size(); ++i) {
    if (i) out += ",";
    out += format_double(anchors.boundaries[i]);
  }
  return out;
}

namespace {

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  if (csv.empty()) return out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const char* first = item.data();
    const char* last = item.data() + item.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
      fail(Errc::invalid_parameter, "bad number in anchor record: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

AnchorSet parse_anchor_record(const std::string& record) {
  AnchorSet out;
  std::stringstream ss(record);
  std::string field;
  bool saw_centers = false;
  while (ss >> field) {
    auto eq = field.find('=');
    if (eq == std::string::npos)
      fail(Errc::invalid_parameter, "malformed anchor record field: '" + field + "'");
    std::string key = field.substr(0, eq);
    std::string value = field.substr(eq + 1);
    if (key == "method") {
      out.method = parse_anchor_method(value);
    } else if (key == "range") {
      auto vals = parse_double_list(value);
      if (vals.size() != 2) fail(Errc::invalid_parameter, "anchor range needs lo,hi");
      out.range = {vals[0], vals[1]};
    } else if (key == "centers") {
      out.centers = parse_double_list(value);
      saw_centers = true;
    } else if (key == "boundaries") {
      out.boundaries = parse_double_list(value);
    } else {
      fail(Errc::invalid_parameter, "unknown anchor record key: '" + key + "'");
    }
  }
  if (!saw_centers) fail(Errc::invalid_parameter, "anchor record has no centers");
  validate_anchor_set(out);
  return out;
}

const char* anchor_method_name(AnchorMethod m) {
  return m == AnchorMethod::uniform ? "uniform" : "lloyd_max";
}

AnchorMethod parse_anchor_method(const std::string& name) {
  if (name == "uniform") return AnchorMethod::uniform;
  if (name == "lloyd_max") return AnchorMethod::lloyd_max;
  fail(Errc::invalid_parameter, "unknown anchor method '" + name + "'");
}

}  // namespace pqr
