#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pqr/codec.hpp"
#include "pqr/distortion_lab.hpp"
#include "pqr/network.hpp"

namespace pqr {

struct MetricPair {
  double srcc = 0.0;
  double plcc = 0.0;
};

// Mean ranks for ties (standard Spearman); raises undefined-correlation on
// constant input.
double srcc(std::span<const double> a, std::span<const double> b);
double plcc(std::span<const double> a, std::span<const double> b);

double pool_average(std::span<const double> patch_scores);

double median(std::vector<double> values);
double sample_std(std::span<const double> values);

// Shuffles source ids with the seed and partitions them by the fractions
// (largest-remainder rounding). All images of a source share its label;
// two fractions label train/test, three label train/val/test. Sources left
// over when the fractions sum below 1 stay unassigned.
DatasetManifest split_by_content(const DatasetManifest& manifest, std::span<const double> fractions,
                                 uint64_t seed);

// Manifest plus all of its images decoded into memory.
struct LoadedDataset {
  DatasetManifest manifest;
  std::string root;
  std::unordered_map<std::string, Image> images;
};

LoadedDataset load_dataset(const std::string& manifest_path);

struct ImagePrediction {
  std::string id;
  double mos = 0.0;
  double prediction = 0.0;
};

struct EvalResult {
  MetricPair metrics;
  std::vector<ImagePrediction> per_image;
};

// Grid patches per image -> per-patch prediction (reverse-mapped for the
// pqr head) -> average pooling -> SRCC/PLCC against the manifest MOS.
// split "all" evaluates every image regardless of label.
EvalResult evaluate_model(const Network& net, const ReverseMapper* mapper,
                          const LoadedDataset& data, const std::string& split, int stride);

struct ExperimentConfig {
  std::string manifest_path;
  HeadKind head = HeadKind::pqr;

  // Encoder settings (pqr head only). The reverse-map ridge is larger than
  // the codec default: anchors the training scores never activate would
  // otherwise pick up huge ill-determined weights, and an early-epoch
  // network that is still far from the encoding manifold then maps every
  // image onto the same clamped endpoint.
  double beta = 64.0;
  int m = 5;
  AnchorMethod anchor_method = AnchorMethod::uniform;
  DistanceKind distance = DistanceKind::squared_euclidean;
  double ridge = 1e-4;

  ArchConfig arch = desk_arch(HeadKind::pqr);
  TrainConfig train;

  std::vector<double> fractions = {0.8, 0.2};
  int repetitions = 10;
  int test_stride = 16;
  int patches_per_image = 16;
  uint64_t seed = 42;
  int threads = 0;  // 0 = hardware concurrency; repetitions run independently
};

struct EpochRow {
  int repetition = 0;  // 1-based
  int epoch = 0;       // 1-based
  double lr = 0.0;
  double mean_loss = 0.0;
  double srcc = 0.0;
  double plcc = 0.0;
};

struct RepetitionInfo {
  int repetition = 0;
  uint64_t split_seed = 0;
  std::vector<std::string> train_sources;
  std::vector<std::string> test_sources;
  int convergence_epoch = 0;  // first epoch reaching 95% of the final SRCC
};

struct ExperimentReport {
  HeadKind head = HeadKind::pqr;
  uint64_t seed = 0;
  int repetitions = 0;
  int epochs = 0;
  std::vector<EpochRow> rows;  // repetition-major, then epoch
  std::vector<RepetitionInfo> reps;

  std::vector<double> median_srcc_per_epoch;
  std::vector<double> median_plcc_per_epoch;
  std::vector<double> std_srcc_per_epoch;
  std::vector<double> std_plcc_per_epoch;

  double best_median_srcc = 0.0;
  int best_srcc_epoch = 0;
  double best_median_plcc = 0.0;
  int best_plcc_epoch = 0;
  double final_median_srcc = 0.0;
  double final_median_plcc = 0.0;
  double median_convergence_epoch = 0.0;

  std::string to_csv() const;        // one row per (repetition, epoch)
  std::string epoch_csv() const;     // per-epoch medians and deviations
  std::string summary() const;
};

// One repetition = content-disjoint split, anchors refit on the training
// scores (lloyd_max), label encoding, training, and per-epoch test-set
// evaluation. Deterministic in cfg.seed; the split/patch/init streams do
// not depend on the head, so pqr and sqr runs with the same seed see
// identical splits and patches.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

enum class SweepParameter { beta, m };

SweepParameter parse_sweep_parameter(const std::string& name);

struct SweepRow {
  double value = 0.0;
  std::string method;
  double best_median_srcc = 0.0;
  double best_median_plcc = 0.0;
  double final_median_srcc = 0.0;
  double final_median_plcc = 0.0;
};

// beta over {2^0..2^9}, or M over [2,10] with the config's anchor method.
std::vector<SweepRow> sweep(const ExperimentConfig& cfg, SweepParameter parameter);
std::string sweep_csv(const std::vector<SweepRow>& rows, SweepParameter parameter);

}  // namespace pqr
