#pragma once

#include <string>

#include "pqr/eval_harness.hpp"

namespace pqr {

// Declarative experiment description: [section] headers over key = value
// lines, '#' comments. Unknown sections or keys are rejected.
//
//   [dataset]  manifest
//   [arch]     preset (desk|full), dropout
//   [train]    epochs, batch, lr_start, lr_end, momentum, weight_decay,
//              patches_per_image
//   [encoder]  beta, m, method (uniform|lloyd_max), distance (squared|l1)
//   [eval]     fractions (comma list), repetitions, stride, seed, threads
struct RunConfig {
  std::string manifest;

  std::string arch_preset = "desk";
  double dropout = 0.5;

  int epochs = 30;
  int batch = 32;
  double lr_start = 1e-2;
  double lr_end = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int patches_per_image = 16;

  double beta = 64.0;
  int m = 5;
  AnchorMethod anchor_method = AnchorMethod::uniform;
  DistanceKind distance = DistanceKind::squared_euclidean;

  std::vector<double> fractions = {0.8, 0.2};
  int repetitions = 10;
  int stride = 16;
  uint64_t seed = 42;
  int threads = 0;
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

ExperimentConfig to_experiment_config(const RunConfig& rc, HeadKind head);

}  // namespace pqr
