#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "pqr/distortion_lab.hpp"
#include "pqr/error.hpp"
#include "pqr/image.hpp"
#include "pqr/rng.hpp"

using namespace pqr;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::path("tmp_" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str() const { return path.string(); }
};

double max_abs_diff(const Image& a, const Image& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

}  // namespace

TEST_CASE("source generation is deterministic, seeded and in range") {
  auto a = generate_sources(3, 64, 1);
  auto b = generate_sources(3, 64, 1);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].data == b[i].data);

  for (const auto& img : a) {
    double lo = 1.0, hi = 0.0;
    for (double v : img.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
  }

  Image seed1 = generate_source(64, 1, 0);
  Image seed2 = generate_source(64, 2, 0);
  CHECK(max_abs_diff(seed1, seed2) > 0.01);

  // distinct indices under one seed decorrelate too
  Image idx1 = generate_source(64, 1, 1);
  CHECK(max_abs_diff(seed1, idx1) > 0.01);
}

TEST_CASE("severity zero is the bit-exact identity for every kind") {
  Image img = generate_source(48, 5, 0);
  for (auto kind : {DistortionKind::gaussian_blur, DistortionKind::awgn,
                    DistortionKind::contrast_decrement, DistortionKind::block_quantization}) {
    Image out = apply_distortion(img, {kind, 0.0, 9});
    CHECK(out.data == img.data);
  }
}

TEST_CASE("contrast decrement at severity one collapses to mid gray") {
  Image img = generate_source(32, 5, 1);
  Image out = apply_distortion(img, {DistortionKind::contrast_decrement, 1.0, 0});
  for (double v : out.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("awgn matches its nominal standard deviation on a flat image") {
  Image flat = Image::zeros(128, 128, 3);
  for (double& v : flat.data) v = 0.5;
  const double severity = 0.4;  // sigma = 0.1, far from the clamp boundaries
  Image noisy = apply_distortion(flat, {DistortionKind::awgn, severity, 1234});
  double mean = 0.0;
  for (double v : noisy.data) mean += v;
  mean /= static_cast<double>(noisy.data.size());
  double var = 0.0;
  for (double v : noisy.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(noisy.data.size());
  const double sd = std::sqrt(var);
  CHECK(noisy.data.size() >= 10000);
  CHECK(std::abs(sd - 0.1) < 0.01);

  // seeded: same spec reproduces the same noise
  Image again = apply_distortion(flat, {DistortionKind::awgn, severity, 1234});
  CHECK(again.data == noisy.data);
}

TEST_CASE("gaussian blur reduces the gradient energy of a detailed image") {
  Image img = generate_source(64, 8, 0);
  Image soft = apply_distortion(img, {DistortionKind::gaussian_blur, 0.5, 0});
  auto grad_energy = [](const Image& im) {
    double e = 0.0;
    for (int c = 0; c < im.channels; ++c)
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x + 1 < im.width; ++x) {
          const double d = im.at(c, y, x + 1) - im.at(c, y, x);
          e += d * d;
        }
    return e;
  };
  CHECK(grad_energy(soft) < 0.25 * grad_energy(img));
}

TEST_CASE("block quantization reduces distinct levels inside blocks") {
  Image img = generate_source(64, 9, 0);
  Image blocky = apply_distortion(img, {DistortionKind::block_quantization, 0.8, 0});
  // severity 0.8 -> ceil(0.2*31)+1 = 8 levels per block and channel
  for (int c = 0; c < 3; ++c) {
    std::set<long long> levels;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        levels.insert(std::llround(blocky.at(c, y, x) * 1e12));
    CHECK(levels.size() <= 8);
  }
  CHECK(max_abs_diff(img, blocky) > 1e-4);
}

TEST_CASE("synth_mos endpoints and spread behave as calibrated") {
  MosSample clean = synth_mos({DistortionKind::gaussian_blur, 0.0, 0}, {0.0, 10}, 1);
  CHECK(clean.true_quality == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(clean.mos == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(clean.opinion_std == doctest::Approx(0.0));

  MosSample worst = synth_mos({DistortionKind::gaussian_blur, 1.0, 0}, {0.0, 10}, 2);
  CHECK(worst.true_quality == doctest::Approx(0.05).epsilon(1e-12));

  // Monte-Carlo: with sigma=0.19 and 35 subjects the standard error is
  // ~0.032, so |mos - y*| < 0.1 in at least 99% of trials.
  int within = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    MosSample s = synth_mos({DistortionKind::awgn, 0.5, 0}, {0.19, 35}, 1000 + t);
    CHECK(s.mos >= 0.0);
    CHECK(s.mos <= 1.0);
    if (std::abs(s.mos - s.true_quality) < 0.1) ++within;
  }
  CHECK(within >= 990);
}

TEST_CASE("synth_mos is strictly decreasing in severity for every kind") {
  for (auto kind : {DistortionKind::gaussian_blur, DistortionKind::awgn,
                    DistortionKind::contrast_decrement, DistortionKind::block_quantization}) {
    double prev = 1.0;
    for (int i = 0; i <= 100; ++i) {
      const double severity = static_cast<double>(i) / 100.0;
      MosSample s = synth_mos({kind, severity, 0}, {0.0, 3}, 7);
      CHECK(s.true_quality < prev);
      prev = s.true_quality;
    }
  }
}

TEST_CASE("level severities span [0.2, 0.8] evenly") {
  CHECK(level_severity(1, 3) == doctest::Approx(0.2));
  CHECK(level_severity(2, 3) == doctest::Approx(0.5));
  CHECK(level_severity(3, 3) == doctest::Approx(0.8));
  CHECK(level_severity(1, 1) == doctest::Approx(0.5));
  CHECK(oracle::error_code_of([] { level_severity(4, 3); }) == Errc::invalid_parameter);
}

TEST_CASE("build_dataset is a deterministic full factorial") {
  TempDir dir("dataset_a");
  DatasetConfig cfg;
  cfg.n_sources = 2;
  cfg.source_size = 48;
  cfg.kinds = {DistortionKind::gaussian_blur, DistortionKind::awgn};
  cfg.levels = 3;
  cfg.opinions = {0.0, 5};
  cfg.seed = 77;

  DatasetManifest manifest = build_dataset(cfg, dir.str());
  CHECK(manifest.images.size() == 12);  // 2 sources x 2 kinds x 3 levels
  CHECK(manifest.source_ids.size() == 2);
  for (const auto& rec : manifest.images)
    CHECK(std::filesystem::exists(dir.path / rec.path));

  // byte-identical manifest on a rerun with the same seed
  write_manifest(manifest, (dir.path / "manifest.txt").string());
  TempDir dir2("dataset_b");
  DatasetManifest manifest2 = build_dataset(cfg, dir2.str());
  write_manifest(manifest2, (dir2.path / "manifest.txt").string());
  auto read_all = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(read_all(dir.path / "manifest.txt") == read_all(dir2.path / "manifest.txt"));

  // with zero opinion spread, mos decreases strictly with severity within
  // each (source, kind)
  for (const auto& a : manifest.images)
    for (const auto& b : manifest.images)
      if (a.source_id == b.source_id && a.spec.kind == b.spec.kind &&
          a.spec.severity < b.spec.severity)
        CHECK(a.mos > b.mos);
}

TEST_CASE("manifest io round trips and validates") {
  TempDir dir("manifest_rt");
  DatasetConfig cfg;
  cfg.n_sources = 2;
  cfg.source_size = 48;
  cfg.kinds = {DistortionKind::contrast_decrement};
  cfg.levels = 2;
  cfg.opinions = {0.1, 7};
  cfg.seed = 3;
  DatasetManifest manifest = build_dataset(cfg, dir.str());
  manifest.patches.push_back({manifest.images[0].id, 4, 6, 16});
  const std::string path = (dir.path / "manifest.txt").string();
  write_manifest(manifest, path);

  DatasetManifest loaded = read_manifest(path);
  CHECK(loaded.seed == manifest.seed);
  CHECK(loaded.opinions.subjects == manifest.opinions.subjects);
  REQUIRE(loaded.images.size() == manifest.images.size());
  for (size_t i = 0; i < loaded.images.size(); ++i) {
    CHECK(loaded.images[i].id == manifest.images[i].id);
    CHECK(loaded.images[i].mos == manifest.images[i].mos);  // shortest round trip is exact
    CHECK(loaded.images[i].spec.severity == manifest.images[i].spec.severity);
  }
  REQUIRE(loaded.patches.size() == 1);
  CHECK(loaded.patches[0].image_id == manifest.images[0].id);

  // a patch referencing a missing image is rejected
  DatasetManifest broken = loaded;
  broken.patches.push_back({"no_such_image", 0, 0, 8});
  CHECK(oracle::error_code_of([&] { validate_manifest(broken); }) == Errc::invalid_parameter);

  // sources split across two labels are rejected
  DatasetManifest leaky = loaded;
  leaky.images[0].split = "train";
  leaky.images[1].split = "test";  // same source, different split
  CHECK(oracle::error_code_of([&] { validate_manifest(leaky); }) == Errc::invalid_parameter);
}

TEST_CASE("ppm io round trips the 8-bit quantization exactly") {
  TempDir dir("ppm_rt");
  Image img = generate_source(32, 14, 0);
  const std::string path = (dir.path / "img.ppm").string();
  write_ppm(img, path);
  Image loaded = read_ppm(path);
  REQUIRE(loaded.width == img.width);
  REQUIRE(loaded.height == img.height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double quantized = std::lround(img.data[i] * 255.0) / 255.0;
    CHECK(loaded.data[i] == doctest::Approx(quantized).epsilon(1e-12));
  }
  // a second write->read is the exact identity
  write_ppm(loaded, path);
  Image again = read_ppm(path);
  CHECK(again.data == loaded.data);

  CHECK(oracle::error_code_of([&] { read_ppm((dir.path / "missing.ppm").string()); }) ==
        Errc::io_error);
}

TEST_CASE("grayscale P5 files load as replicated 3-channel images") {
  TempDir dir("pgm");
  const std::string path = (dir.path / "gray.pgm").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "P5\n# comment line\n4 2\n255\n";
    const unsigned char bytes[8] = {0, 51, 102, 153, 204, 255, 10, 20};
    f.write(reinterpret_cast<const char*>(bytes), 8);
  }
  Image img = read_ppm(path);
  REQUIRE(img.width == 4);
  REQUIRE(img.height == 2);
  REQUIRE(img.channels == 3);
  CHECK(img.at(0, 0, 1) == doctest::Approx(51.0 / 255.0));
  CHECK(img.at(1, 0, 1) == img.at(0, 0, 1));  // replicated channels
  CHECK(img.at(2, 1, 3) == doctest::Approx(20.0 / 255.0));

  // 16-bit files are rejected
  const std::string deep = (dir.path / "deep.ppm").string();
  {
    std::ofstream f(deep, std::ios::binary);
    f << "P6\n1 1\n65535\n";
    f.write("\0\0\0\0\0\0", 6);
  }
  CHECK(oracle::error_code_of([&] { read_ppm(deep); }) == Errc::unsupported_format);
}

TEST_CASE("random patch extraction is seeded and in bounds") {
  Image img = generate_source(64, 20, 0);
  auto a = extract_patches_random(img, "img", {50, 5}, 32);
  auto b = extract_patches_random(img, "img", {50, 5}, 32);
  REQUIRE(a.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
    CHECK(a[i].x >= 0);
    CHECK(a[i].y >= 0);
    CHECK(a[i].x + 32 <= 64);
    CHECK(a[i].y + 32 <= 64);
  }
  CHECK(oracle::error_code_of([&] { extract_patches_random(img, "img", {5, 1}, 65); }) ==
        Errc::invalid_parameter);
}

TEST_CASE("grid patch extraction covers the image including flush edges") {
  Image exact = Image::zeros(64, 64, 3);
  auto one = extract_patches_grid(exact, "a", {32}, 64);
  REQUIRE(one.size() == 1);
  CHECK(one[0].x == 0);
  CHECK(one[0].y == 0);

  Image img96 = Image::zeros(96, 96, 3);
  auto four = extract_patches_grid(img96, "b", {32}, 64);
  CHECK(four.size() == 4);  // offsets {0,32} x {0,32}

  // 70x70 with stride 32: offsets {0, 6} per axis, covering the borders
  Image img70 = Image::zeros(70, 70, 3);
  auto flush = extract_patches_grid(img70, "c", {32}, 64);
  REQUIRE(flush.size() == 4);
  CHECK(flush[3].x == 6);
  CHECK(flush[3].y == 6);

  // coverage property: stride <= size covers every pixel
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 40 + static_cast<int>(rng.below(60));
    const int size = 16 + static_cast<int>(rng.below(static_cast<uint64_t>(w - 16)));
    const int stride = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(size)));
    Image im = Image::zeros(w, w, 3);
    auto patches = extract_patches_grid(im, "p", {stride}, size);
    std::vector<char> covered(static_cast<size_t>(w) * w, 0);
    for (const auto& p : patches)
      for (int y = p.y; y < p.y + size; ++y)
        for (int x = p.x; x < p.x + size; ++x) covered[static_cast<size_t>(y) * w + x] = 1;
    for (char c : covered) REQUIRE(c == 1);
  }
}
