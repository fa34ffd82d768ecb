#pragma once

#include <span>
#include <vector>

#include "pqr/anchors.hpp"

namespace pqr {

// Length-M probability vector over the quality anchors. Entries are in
// [0,1] and sum to 1 (within 1e-9); see validate_pqr.
using PqrVector = std::vector<double>;

enum class DistanceKind { squared_euclidean, l1 };

struct EncoderConfig {
  double beta = 64.0;
  AnchorSet anchors;
  DistanceKind distance = DistanceKind::squared_euclidean;
};

// Linear map from a probability vector back to a scalar score. Predictions
// are clamped to the score range the mapper was fitted on. fit_mae is the
// unclamped mean absolute error on the fitting set.
struct ReverseMapper {
  std::vector<double> weights;
  double bias = 0.0;
  double fit_mae = 0.0;
  ScoreRange range;
};

// Soft assignment of a score to the anchors: softmax of -beta * d(y, c_m),
// computed with max-subtraction.
PqrVector encode(double y, const EncoderConfig& cfg);

// Elementwise encode; an out-of-range score reports its index.
std::vector<PqrVector> encode_batch(std::span<const double> ys, const EncoderConfig& cfg);

// Least-squares fit of weights/bias minimizing sum (w*q + b - y)^2 with a
// ridge penalty on the weights (bias unpenalized). ridge=0 on a
// rank-deficient system raises singular-fit.
ReverseMapper fit_reverse_map(const std::vector<PqrVector>& pqrs, std::span<const double> ys,
                              ScoreRange range, double ridge = 1e-8);

double apply_reverse_map(const ReverseMapper& mapper, const PqrVector& q);

// sum_m t_m * log(t_m / p_m), with 0*log(0) = 0. Raises divergent-loss when
// a prediction entry is 0 where the target is positive.
double kl_divergence(const PqrVector& target, const PqrVector& pred);

// -sum_m t_m * log(p_m). Equals kl_divergence(target, pred) + entropy(target).
double cross_entropy(const PqrVector& target, const PqrVector& pred);

// -sum_m p_m * log(p_m), with 0*log(0) = 0.
double entropy(const PqrVector& p);

void validate_pqr(const PqrVector& q);

// Text record for checkpoints; inverse of parse_mapper_record.
std::string mapper_record(const ReverseMapper& mapper);
ReverseMapper parse_mapper_record(const std::string& record);

}  // namespace pqr
