#include "pqr/codec.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "pqr/error.hpp"

namespace pqr {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

double anchor_distance(double y, double c, DistanceKind kind) {
  double d = y - c;
  return kind == DistanceKind::squared_euclidean ? d * d : std::abs(d);
}

// Solves the symmetric positive (semi-)definite system in place by Cholesky.
// Returns false on a non-positive pivot.
bool cholesky_solve(std::vector<double>& a, std::vector<double>& rhs, int n) {
  // a is row-major n x n, lower triangle used.
  for (int j = 0; j < n; ++j) {
    double diag = a[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      double l = a[static_cast<size_t>(j) * n + k];
      diag -= l * l;
    }
    if (!(diag > 1e-14)) return false;
    diag = std::sqrt(diag);
    a[static_cast<size_t>(j) * n + j] = diag;
    for (int i = j + 1; i < n; ++i) {
      double v = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        v -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
      a[static_cast<size_t>(i) * n + j] = v / diag;
    }
  }
  // Forward then back substitution.
  for (int i = 0; i < n; ++i) {
    double v = rhs[static_cast<size_t>(i)];
    for (int k = 0; k < i; ++k) v -= a[static_cast<size_t>(i) * n + k] * rhs[static_cast<size_t>(k)];
    rhs[static_cast<size_t>(i)] = v / a[static_cast<size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double v = rhs[static_cast<size_t>(i)];
    for (int k = i + 1; k < n; ++k) v -= a[static_cast<size_t>(k) * n + i] * rhs[static_cast<size_t>(k)];
    rhs[static_cast<size_t>(i)] = v / a[static_cast<size_t>(i) * n + i];
  }
  return true;
}

}  // namespace

PqrVector encode(double y, const EncoderConfig& cfg) {
  if (!(cfg.beta > 0.0)) fail(Errc::invalid_parameter, "beta must be positive");
  const AnchorSet& a = cfg.anchors;
  if (!a.range.contains(y))
    fail(Errc::out_of_range, "score " + format_double(y) + " outside the anchor range");

  const int m = a.size();
  PqrVector logits(static_cast<size_t>(m));
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    double l = -cfg.beta * anchor_distance(y, a.centers[static_cast<size_t>(i)], cfg.distance);
    logits[static_cast<size_t>(i)] = l;
    max_logit = std::max(max_logit, l);
  }
  double sum = 0.0;
  for (int i = 0; i < m; ++i) {
    double e = std::exp(logits[static_cast<size_t>(i)] - max_logit);
    logits[static_cast<size_t>(i)] = e;
    sum += e;
  }
  for (int i = 0; i < m; ++i) logits[static_cast<size_t>(i)] /= sum;
  return logits;
}

std::vector<PqrVector> encode_batch(std::span<const double> ys, const EncoderConfig& cfg) {
  std::vector<PqrVector> out;
  out.reserve(ys.size());
  for (size_t i = 0; i < ys.size(); ++i) {
    try {
      out.push_back(encode(ys[i], cfg));
    } catch (const Error& e) {
      fail(e.code(), "score at index " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

ReverseMapper fit_reverse_map(const std::vector<PqrVector>& pqrs, std::span<const double> ys,
                              ScoreRange range, double ridge) {
  if (pqrs.empty() || pqrs.size() != ys.size())
    fail(Errc::invalid_parameter, "reverse map needs equal-length non-empty pqr/score lists");
  if (ridge < 0.0) fail(Errc::invalid_parameter, "ridge must be non-negative");
  const int m = static_cast<int>(pqrs[0].size());
  for (const auto& q : pqrs) {
    if (static_cast<int>(q.size()) != m)
      fail(Errc::invalid_parameter, "inconsistent pqr dimensions in reverse-map fit");
  }

  // Normal equations over [q, 1]; ridge on the weight block only.
  const int n = m + 1;
  std::vector<double> ata(static_cast<size_t>(n) * n, 0.0);
  std::vector<double> aty(static_cast<size_t>(n), 0.0);
  for (size_t r = 0; r < pqrs.size(); ++r) {
    const auto& q = pqrs[r];
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j <= i; ++j)
        ata[static_cast<size_t>(i) * n + j] += q[static_cast<size_t>(i)] * q[static_cast<size_t>(j)];
      ata[static_cast<size_t>(m) * n + i] += q[static_cast<size_t>(i)];
      aty[static_cast<size_t>(i)] += q[static_cast<size_t>(i)] * ys[r];
    }
    ata[static_cast<size_t>(m) * n + m] += 1.0;
    aty[static_cast<size_t>(m)] += ys[r];
  }
  for (int i = 0; i < m; ++i) ata[static_cast<size_t>(i) * n + i] += ridge;

  std::vector<double> sol = aty;
  if (!cholesky_solve(ata, sol, n)) {
    fail(Errc::singular_fit,
         "reverse-map normal equations are rank deficient; retry with ridge > 0");
  }

  ReverseMapper mapper;
  mapper.weights.assign(sol.begin(), sol.begin() + m);
  mapper.bias = sol[static_cast<size_t>(m)];
  mapper.range = range;

  double abs_err = 0.0;
  for (size_t r = 0; r < pqrs.size(); ++r) {
    double pred = mapper.bias;
    for (int i = 0; i < m; ++i) pred += mapper.weights[static_cast<size_t>(i)] * pqrs[r][static_cast<size_t>(i)];
    abs_err += std::abs(pred - ys[r]);
  }
  mapper.fit_mae = abs_err / static_cast<double>(pqrs.size());
  return mapper;
}

double apply_reverse_map(const ReverseMapper& mapper, const PqrVector& q) {
  if (q.size() != mapper.weights.size())
    fail(Errc::invalid_parameter, "pqr dimension does not match the reverse mapper");
  double pred = mapper.bias;
  for (size_t i = 0; i < q.size(); ++i) pred += mapper.weights[i] * q[i];
  return std::clamp(pred, mapper.range.lo, mapper.range.hi);
}

double kl_divergence(const PqrVector& target, const PqrVector& pred) {
  if (target.size() != pred.size())
    fail(Errc::invalid_parameter, "kl_divergence needs equal-length vectors");
  double kl = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    if (pred[i] <= 0.0)
      fail(Errc::divergent_loss, "prediction entry " + std::to_string(i) +
                                     " is zero where the target is positive");
    kl += target[i] * std::log(target[i] / pred[i]);
  }
  return std::max(kl, 0.0);
}

double cross_entropy(const PqrVector& target, const PqrVector& pred) {
  if (target.size() != pred.size())
    fail(Errc::invalid_parameter, "cross_entropy needs equal-length vectors");
  double ce = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    if (pred[i] <= 0.0)
      fail(Errc::divergent_loss, "prediction entry " + std::to_string(i) +
                                     " is zero where the target is positive");
    ce -= target[i] * std::log(pred[i]);
  }
  return ce;
}

double entropy(const PqrVector& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

void validate_pqr(const PqrVector& q) {
  if (q.empty()) fail(Errc::invalid_parameter, "empty pqr vector");
  double sum = 0.0;
  for (double v : q) {
    if (!(v >= 0.0 && v <= 1.0)) fail(Errc::invalid_parameter, "pqr entry outside [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(Errc::invalid_parameter, "pqr entries must sum to 1");
}

std::string mapper_record(const ReverseMapper& mapper) {
  std::string out = "weights=";
  for (size_t i = 0; i < mapper.weights.size(); ++i) {
    if (i) out += ",";
    out += format_double(mapper.weights[i]);
  }
  out += " bias=" + format_double(mapper.bias);
  out += " fit_mae=" + format_double(mapper.fit_mae);
  out += " range=" + format_double(mapper.range.lo) + "," + format_double(mapper.range.hi);
  return out;
}

ReverseMapper parse_mapper_record(const std::string& record) {
  auto parse_list = [](const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc{} || ptr != item.data() + item.size())
        fail(Errc::invalid_parameter, "bad number in mapper record: '" + item + "'");
      out.push_back(v);
    }
    return out;
  };

  ReverseMapper out;
  bool saw_weights = false;
  std::stringstream ss(record);
  std::string field;
  while (ss >> field) {
    auto eq = field.find('=');
    if (eq == std::string::npos)
      fail(Errc::invalid_parameter, "malformed mapper record field: '" + field + "'");
    std::string key = field.substr(0, eq);
    std::string value = field.substr(eq + 1);
    if (key == "weights") {
      out.weights = parse_list(value);
      saw_weights = true;
    } else if (key == "bias") {
      out.bias = parse_list(value).at(0);
    } else if (key == "fit_mae") {
      out.fit_mae = parse_list(value).at(0);
    } else if (key == "range") {
      auto vals = parse_list(value);
      if (vals.size() != 2) fail(Errc::invalid_parameter, "mapper range needs lo,hi");
      out.range = {vals[0], vals[1]};
    } else {
      fail(Errc::invalid_parameter, "unknown mapper record key: '" + key + "'");
    }
  }
  if (!saw_weights) fail(Errc::invalid_parameter, "mapper record has no weights");
  return out;
}

}  // namespace pqr
