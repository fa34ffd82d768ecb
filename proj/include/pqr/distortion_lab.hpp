#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pqr/image.hpp"

namespace pqr {

enum class DistortionKind { gaussian_blur, awgn, contrast_decrement, block_quantization };

const char* distortion_kind_name(DistortionKind k);
DistortionKind parse_distortion_kind(const std::string& name);

struct DistortionSpec {
  DistortionKind kind = DistortionKind::gaussian_blur;
  double severity = 0.0;  // in [0,1]; 0 is the identity
  uint64_t seed = 0;      // stream for stochastic kinds
};

// Simulated panel of raters: each image's MOS is the mean of `subjects`
// draws around the latent quality with std `sigma`.
struct OpinionModel {
  double sigma = 0.19;
  int subjects = 35;
};

struct MosSample {
  double true_quality = 0.0;  // latent quality before opinion noise
  double mos = 0.0;
  double opinion_std = 0.0;
};

struct ImageRecord {
  std::string id;
  std::string source_id;
  DistortionSpec spec;
  double true_quality = 0.0;
  double mos = 0.0;
  double opinion_std = 0.0;
  std::string split;  // "-" when unassigned
  std::string path;   // relative to the manifest directory
};

struct PatchRecord {
  std::string image_id;
  int x = 0;
  int y = 0;
  int size = 0;
};

struct DatasetManifest {
  uint64_t seed = 0;
  int source_size = 0;
  OpinionModel opinions;
  std::vector<std::string> source_ids;
  std::vector<ImageRecord> images;
  std::vector<PatchRecord> patches;
  std::optional<std::string> anchor_record;  // carried through when present
};

// Procedural test content: smoothed value noise, gradients and hard edges,
// deterministic in (seed, index).
Image generate_source(int size, uint64_t seed, int index);
std::vector<Image> generate_sources(int count, int size, uint64_t seed);

// severity 0 returns the input bit-exactly for every kind.
Image apply_distortion(const Image& img, const DistortionSpec& spec);

// Latent quality decays exponentially in severity and is mapped onto
// [0.05, 0.95]; the MOS adds simulated rater spread.
MosSample synth_mos(const DistortionSpec& spec, const OpinionModel& opinions, uint64_t seed);

struct DatasetConfig {
  int n_sources = 8;
  int source_size = 64;
  std::vector<DistortionKind> kinds;
  int levels = 3;
  OpinionModel opinions;
  uint64_t seed = 42;
};

// Severity of level l (1-based) out of `levels`: evenly spaced on
// [0.2, 0.8], or 0.5 for a single level.
double level_severity(int level, int levels);

// Full factorial sources x kinds x levels. Images are written as PPM files
// under out_dir/images; the manifest is returned (not yet written).
DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir);

struct RandomPatches {
  int count = 0;
  uint64_t seed = 0;
};
struct GridPatches {
  int stride = 0;
};

// Seeded uniform offsets, with replacement.
std::vector<PatchRecord> extract_patches_random(const Image& img, const std::string& image_id,
                                                RandomPatches mode, int size);
// All offsets {0, stride, ...} plus a final offset flush to each edge.
std::vector<PatchRecord> extract_patches_grid(const Image& img, const std::string& image_id,
                                              GridPatches mode, int size);

// Manifest I/O: line-delimited text records, written atomically.
void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

// Structural checks: patches reference known images, MOS in [0,1], splits
// content-disjoint.
void validate_manifest(const DatasetManifest& manifest);

}  // namespace pqr
