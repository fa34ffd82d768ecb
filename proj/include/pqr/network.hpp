#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pqr/anchors.hpp"
#include "pqr/codec.hpp"

namespace pqr {

enum class HeadKind { pqr, sqr };

const char* head_kind_name(HeadKind h);
HeadKind parse_head_kind(const std::string& name);

struct ConvSpec {
  int kernel = 3;
  int out_channels = 0;
};

// Stage = conv (stride 1, no padding) -> 2x2 max-pool (stride 2, skipped
// once the map is 1x1) -> ReLU. After the stages: FC + ReLU, dropout
// (inverted, train only), then the head layer (softmax for pqr).
struct ArchConfig {
  int input_size = 32;
  int input_channels = 3;
  std::vector<ConvSpec> conv_specs = {{3, 8}, {3, 16}, {3, 32}, {2, 64}};
  int fc_width = 64;
  HeadKind head = HeadKind::pqr;
  int head_dim = 5;  // M for pqr, 1 for sqr
  double dropout_rate = 0.5;
};

// Scaled-down default: 32x32 input, 4 stages, ~19k parameters.
ArchConfig desk_arch(HeadKind head, int m = 5);
// Full-size variant: 64x64 input, 5 stages up to 512 channels.
ArchConfig full_arch(HeadKind head, int m = 5);

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<int> shape);
  size_t size() const { return data.size(); }
};

// Per-stage spatial bookkeeping, derived from ArchConfig.
struct StageDims {
  int in_ch, in_h, in_w;
  int out_ch, conv_h, conv_w;
  bool pooled;
  int out_h, out_w;  // after optional pooling
};

struct Network {
  ArchConfig arch;
  uint64_t rng_seed = 0;
  std::vector<Tensor> params;  // conv w,b per stage; fc w,b; head w,b
  std::vector<StageDims> stages;
  int flat_features = 0;

  size_t parameter_count() const;
};

// Raises invalid-architecture when a conv kernel no longer fits the map or
// the head is malformed.
std::vector<StageDims> compute_stage_dims(const ArchConfig& arch);

// He-initialized network: weights ~ N(0, 2/fan_in), biases zero,
// deterministic in seed.
Network build(const ArchConfig& arch, uint64_t seed);

// Patch batch, layout data[((p*channels + c)*height + y)*width + x].
// Pixel values are in [0,1]; the network centers them at 0.5 internally.
struct Batch {
  int n = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;

  static Batch zeros(int n, int channels, int height, int width);
  double* patch(int p) {
    return data.data() + static_cast<size_t>(p) * channels * height * width;
  }
};

enum class RunMode { train, eval };

using Prediction = std::vector<double>;  // M probabilities or a single scalar

// Dropout is active only in train mode with a seed supplied; eval mode is
// deterministic and needs no rescaling.
std::vector<Prediction> forward(const Network& net, const Batch& batch, RunMode mode,
                                std::optional<uint64_t> dropout_seed = {});

struct LossResult {
  double loss = 0.0;
  std::vector<Tensor> grads;  // same shapes/order as Network::params
};

// Mean loss over the batch: cross-entropy against PQR targets, or squared
// error against scalar targets, with gradients by backpropagation.
LossResult loss_and_grad(const Network& net, const Batch& batch,
                         const std::vector<std::vector<double>>& targets,
                         std::optional<uint64_t> dropout_seed = {});

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct OptimizerState {
  std::vector<Tensor> velocity;
};

OptimizerState make_optimizer_state(const Network& net);

// v <- mu*v - lr*(g + wd*w); w <- w + v
void sgd_step(Network& net, const std::vector<Tensor>& grads, OptimizerState& state, double lr,
              const SgdConfig& sgd);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr_start = 1e-2;
  double lr_end = 1e-3;  // per-epoch rates logarithmically spaced
  double momentum = 0.9;
  double weight_decay = 1e-4;
  uint64_t seed = 42;
};

// Patches with targets already in head space (length M for pqr, 1 for sqr).
struct PatchSet {
  Batch patches;
  std::vector<std::vector<double>> targets;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double mean_loss = 0.0;
};

using EpochCallback = std::function<void(const Network& net, const EpochStats& stats)>;

// Seeded shuffled mini-batches; returns the per-epoch loss trace. The
// callback (when given) runs after each epoch, e.g. for test-set tracking.
std::vector<EpochStats> train(Network& net, const PatchSet& data, const TrainConfig& cfg,
                              const EpochCallback& callback = {});

double epoch_learning_rate(const TrainConfig& cfg, int epoch_index);

// Versioned binary container: header + anchor/mapper text records + raw
// row-major float64 tensors. Round trips are bit-exact.
void save_checkpoint(const Network& net, const ReverseMapper* mapper, const AnchorSet* anchors,
                     const std::string& path);

struct Checkpoint {
  Network net;
  std::optional<AnchorSet> anchors;
  std::optional<ReverseMapper> mapper;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace pqr
