#pragma once

#include <span>
#include <string>
#include <vector>

namespace pqr {

// Global interval quality scores live on. Scores are normalized to [0,1]
// before encoding, but the range is kept explicit so [0,100]-style scales
// work too.
struct ScoreRange {
  double lo = 0.0;
  double hi = 1.0;

  double width() const { return hi - lo; }
  bool contains(double y) const { return y >= lo && y <= hi; }
};

enum class AnchorMethod { uniform, lloyd_max };

// M anchor values with the M-1 decision boundaries between them.
// Cells are half-open [b[m-1], b[m]) with the top edge closed, so every
// in-range score belongs to exactly one cell.
struct AnchorSet {
  std::vector<double> centers;
  std::vector<double> boundaries;
  AnchorMethod method = AnchorMethod::uniform;
  ScoreRange range;

  int size() const { return static_cast<int>(centers.size()); }
};

struct QuantizerReport {
  double mse = 0.0;  // mean-square quantization error at convergence
  int iterations = 0;
  bool converged = false;
  std::vector<double> mse_trace;  // one value per iteration, non-increasing
};

struct LloydMaxResult {
  AnchorSet anchors;
  QuantizerReport report;
};

// Midpoints of m equal-width bins of the range; boundaries are the interior
// bin edges.
AnchorSet uniform_anchors(ScoreRange range, int m);

// Alternating centroid / boundary updates starting from the uniform anchor
// centers. Stops when the MSE improvement drops below tol or after max_iter
// rounds. Requires m <= number of distinct score values.
LloydMaxResult lloyd_max(std::span<const double> scores, int m, ScoreRange range,
                         int max_iter = 1000, double tol = 1e-10);

// 1-based cell index for an in-range score.
int assign_bin(const AnchorSet& anchors, double y);

// Throws if ordering/interleaving invariants are broken (and, for lloyd_max
// sets, if boundaries are not center midpoints).
void validate_anchor_set(const AnchorSet& anchors);

// One-line text record, e.g. for embedding in checkpoints and manifests.
std::string anchor_record(const AnchorSet& anchors);
AnchorSet parse_anchor_record(const std::string& record);

const char* anchor_method_name(AnchorMethod m);
AnchorMethod parse_anchor_method(const std::string& name);

}  // namespace pqr
