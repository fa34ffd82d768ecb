#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "pqr/error.hpp"
#include "pqr/eval_harness.hpp"
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

std::string make_tiny_dataset(const TempDir& dir, int sources, uint64_t seed, double sigma = 0.0) {
  DatasetConfig cfg;
  cfg.n_sources = sources;
  cfg.source_size = 48;
  cfg.kinds = {DistortionKind::gaussian_blur, DistortionKind::awgn};
  cfg.levels = 3;
  cfg.opinions = {sigma, 5};
  cfg.seed = seed;
  DatasetManifest manifest = build_dataset(cfg, dir.str());
  const std::string path = (dir.path / "manifest.txt").string();
  write_manifest(manifest, path);
  return path;
}

ExperimentConfig tiny_experiment(const std::string& manifest, HeadKind head) {
  ExperimentConfig cfg;
  cfg.manifest_path = manifest;
  cfg.head = head;
  cfg.m = 5;
  cfg.arch.input_size = 24;
  cfg.arch.conv_specs = {{3, 4}, {3, 8}};
  cfg.arch.fc_width = 16;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 16;
  cfg.repetitions = 2;
  cfg.test_stride = 24;
  cfg.patches_per_image = 2;
  cfg.seed = 42;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("srcc matches hand values") {
  std::vector<double> a = {1, 2, 3, 4};
  CHECK(srcc(a, a) == doctest::Approx(1.0));
  std::vector<double> r = {3, 2, 1};
  std::vector<double> f = {1, 2, 3};
  CHECK(srcc(f, r) == doctest::Approx(-1.0));
  std::vector<double> b = {1, 3, 2, 4};
  CHECK(srcc(a, b) == 0.8);  // exact: 1 - 6*2/(4*15)
}

TEST_CASE("plcc matches hand values") {
  std::vector<double> a = {0.3, 1.7, 2.9, 5.5};
  std::vector<double> affine;
  for (double v : a) affine.push_back(2.0 * v + 3.0);
  CHECK(plcc(a, affine) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> neg;
  for (double v : a) neg.push_back(-v);
  CHECK(plcc(a, neg) == doctest::Approx(-1.0).epsilon(1e-12));
  std::vector<double> x = {0, 1, 2};
  std::vector<double> y = {0, 1, 0};
  CHECK(plcc(x, y) == doctest::Approx(0.0));
}

TEST_CASE("correlations reject constant and malformed input") {
  std::vector<double> c = {2, 2, 2};
  std::vector<double> v = {1, 2, 3};
  CHECK(oracle::error_code_of([&] { srcc(c, v); }) == Errc::undefined_correlation);
  CHECK(oracle::error_code_of([&] { plcc(v, c); }) == Errc::undefined_correlation);
  std::vector<double> one = {1};
  CHECK(oracle::error_code_of([&] { srcc(one, one); }) == Errc::invalid_parameter);
  std::vector<double> short2 = {1, 2};
  CHECK(oracle::error_code_of([&] { plcc(v, short2); }) == Errc::invalid_parameter);
}

TEST_CASE("srcc and plcc agree with the brute-force oracles, ties included") {
  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(3, 40);
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
      // quantized values produce frequent ties
      a.push_back(rng.uniform_int(0, 9) / 3.0);
      b.push_back(rng.uniform(0.0, 5.0));
    }
    if (std::adjacent_find(a.begin(), a.end(), std::not_equal_to<>()) == a.end()) continue;
    CHECK(std::abs(srcc(a, b) - oracle::spearman(a, b)) < 1e-12);
    CHECK(std::abs(plcc(a, b) - oracle::pearson(a, b)) < 1e-12);

    // no-ties vectors also satisfy the distance formula
    std::vector<double> na, nb;
    for (int i = 0; i < n; ++i) {
      na.push_back(rng.uniform());
      nb.push_back(rng.uniform());
    }
    CHECK(std::abs(srcc(na, nb) - oracle::spearman_distance_formula(na, nb)) < 1e-12);
  }
}

TEST_CASE("srcc is invariant under strictly increasing transforms") {
  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(5, 30);
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
      a.push_back(rng.uniform());
      b.push_back(rng.uniform());
    }
    std::vector<double> ta, tb;
    for (double v : a) ta.push_back(std::exp(3.0 * v) + v);     // strictly increasing
    for (double v : b) tb.push_back(std::atan(5.0 * v - 2.0));  // strictly increasing
    CHECK(std::abs(srcc(a, b) - srcc(ta, tb)) < 1e-9);

    // plcc under positive affine maps
    std::vector<double> aa, ab;
    for (double v : a) aa.push_back(1.7 * v + 0.3);
    for (double v : b) ab.push_back(0.2 * v - 5.0);
    CHECK(std::abs(plcc(a, b) - plcc(aa, ab)) < 1e-9);
  }
}

TEST_CASE("pool_average basics") {
  std::vector<double> single = {0.4};
  CHECK(pool_average(single) == doctest::Approx(0.4));
  std::vector<double> pair = {0.2, 0.8};
  CHECK(pool_average(pair) == doctest::Approx(0.5));
  std::vector<double> perm = {0.8, 0.2};
  CHECK(pool_average(perm) == pool_average(pair));
  std::vector<double> empty;
  CHECK(oracle::error_code_of([&] { pool_average(empty); }) == Errc::invalid_parameter);
}

TEST_CASE("split_by_content partitions sources deterministically") {
  TempDir dir("split");
  std::string manifest_path = make_tiny_dataset(dir, 10, 5);
  DatasetManifest manifest = read_manifest(manifest_path);

  std::vector<double> fractions = {0.8, 0.2};
  DatasetManifest a = split_by_content(manifest, fractions, 7);
  DatasetManifest b = split_by_content(manifest, fractions, 7);

  std::set<std::string> train, test;
  for (const auto& rec : a.images) {
    if (rec.split == "train") train.insert(rec.source_id);
    if (rec.split == "test") test.insert(rec.source_id);
  }
  CHECK(train.size() == 8);
  CHECK(test.size() == 2);
  for (const auto& s : test) CHECK(train.count(s) == 0);

  for (size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].split == b.images[i].split);

  DatasetManifest c = split_by_content(manifest, fractions, 8);
  bool differs = false;
  for (size_t i = 0; i < a.images.size(); ++i) differs |= a.images[i].split != c.images[i].split;
  CHECK(differs);

  // 60/20/20 three-way split
  std::vector<double> three = {0.6, 0.2, 0.2};
  DatasetManifest v = split_by_content(manifest, three, 1);
  std::set<std::string> val;
  for (const auto& rec : v.images)
    if (rec.split == "val") val.insert(rec.source_id);
  CHECK(val.size() == 2);

  // a fraction that rounds to zero sources is an error
  std::vector<double> starved = {0.99, 0.01};
  CHECK(oracle::error_code_of([&] { split_by_content(manifest, starved, 1); }) ==
        Errc::invalid_parameter);
}

TEST_CASE("evaluate_model pools grid patches and surfaces degenerate predictions") {
  TempDir dir("eval");
  std::string manifest_path = make_tiny_dataset(dir, 4, 11);
  LoadedDataset data = load_dataset(manifest_path);

  ArchConfig arch;
  arch.input_size = 24;
  arch.conv_specs = {{3, 4}, {3, 8}};
  arch.fc_width = 16;
  arch.head = HeadKind::sqr;
  arch.head_dim = 1;
  Network net = build(arch, 33);

  EvalResult result = evaluate_model(net, nullptr, data, "all", 24);
  CHECK(result.per_image.size() == data.manifest.images.size());
  CHECK(std::abs(result.metrics.srcc) <= 1.0);
  CHECK(std::abs(result.metrics.plcc) <= 1.0);

  // image order must not matter
  LoadedDataset shuffled = data;
  std::reverse(shuffled.manifest.images.begin(), shuffled.manifest.images.end());
  EvalResult reversed = evaluate_model(net, nullptr, shuffled, "all", 24);
  CHECK(reversed.metrics.srcc == doctest::Approx(result.metrics.srcc).epsilon(1e-12));
  CHECK(reversed.metrics.plcc == doctest::Approx(result.metrics.plcc).epsilon(1e-12));

  // a constant-output network surfaces undefined-correlation, not NaN
  for (auto& t : net.params) t.data.assign(t.data.size(), 0.0);
  CHECK(oracle::error_code_of([&] { evaluate_model(net, nullptr, data, "all", 24); }) ==
        Errc::undefined_correlation);
}

TEST_CASE("predictions equal to the ground truth give perfect correlations") {
  // oracle short circuit on the metric path used by evaluate_model
  std::vector<double> mos = {0.2, 0.5, 0.9, 0.4, 0.7};
  CHECK(srcc(mos, mos) == doctest::Approx(1.0));
  CHECK(plcc(mos, mos) == doctest::Approx(1.0));
}

TEST_CASE("run_experiment is deterministic and keeps heads on identical splits") {
  TempDir dir("exp");
  std::string manifest_path = make_tiny_dataset(dir, 8, 21, 0.15);

  ExperimentConfig pqr_cfg = tiny_experiment(manifest_path, HeadKind::pqr);
  ExperimentReport first = run_experiment(pqr_cfg);
  ExperimentReport second = run_experiment(pqr_cfg);
  CHECK(first.to_csv() == second.to_csv());
  CHECK(first.epoch_csv() == second.epoch_csv());
  CHECK(first.summary() == second.summary());

  REQUIRE(first.rows.size() == 4);  // 2 reps x 2 epochs
  for (const auto& row : first.rows) {
    CHECK(std::abs(row.srcc) <= 1.0);
    CHECK(std::abs(row.plcc) <= 1.0);
    CHECK(std::isfinite(row.mean_loss));
  }
  // medians lie between the per-repetition extremes
  for (int e = 0; e < first.epochs; ++e) {
    std::vector<double> vals;
    for (int r = 0; r < first.repetitions; ++r)
      vals.push_back(first.rows[static_cast<size_t>(r) * first.epochs + e].srcc);
    const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
    CHECK(first.median_srcc_per_epoch[static_cast<size_t>(e)] >= *lo);
    CHECK(first.median_srcc_per_epoch[static_cast<size_t>(e)] <= *hi);
  }

  ExperimentConfig sqr_cfg = tiny_experiment(manifest_path, HeadKind::sqr);
  ExperimentReport sqr_report = run_experiment(sqr_cfg);
  REQUIRE(sqr_report.reps.size() == first.reps.size());
  for (size_t r = 0; r < first.reps.size(); ++r) {
    CHECK(first.reps[r].split_seed == sqr_report.reps[r].split_seed);
    CHECK(first.reps[r].train_sources == sqr_report.reps[r].train_sources);
    CHECK(first.reps[r].test_sources == sqr_report.reps[r].test_sources);
  }

  // parallel and serial schedules agree bit for bit
  ExperimentConfig threaded = pqr_cfg;
  threaded.threads = 2;
  ExperimentReport parallel = run_experiment(threaded);
  CHECK(parallel.to_csv() == first.to_csv());
  CHECK(parallel.summary() == first.summary());

  // single repetition: medians equal that run's values
  ExperimentConfig single = pqr_cfg;
  single.repetitions = 1;
  ExperimentReport solo = run_experiment(single);
  for (int e = 0; e < solo.epochs; ++e)
    CHECK(solo.median_srcc_per_epoch[static_cast<size_t>(e)] ==
          solo.rows[static_cast<size_t>(e)].srcc);
}

TEST_CASE("lloyd_max anchors inside the experiment fit on training scores only") {
  TempDir dir("lloyd_exp");
  std::string manifest_path = make_tiny_dataset(dir, 8, 31, 0.15);
  ExperimentConfig cfg = tiny_experiment(manifest_path, HeadKind::pqr);
  cfg.anchor_method = AnchorMethod::lloyd_max;
  ExperimentReport report = run_experiment(cfg);  // must not throw
  CHECK(report.rows.size() == 4);
}

TEST_CASE("sweep emits the standard grids") {
  TempDir dir("sweep");
  std::string manifest_path = make_tiny_dataset(dir, 8, 41, 0.15);
  ExperimentConfig cfg = tiny_experiment(manifest_path, HeadKind::pqr);
  cfg.repetitions = 1;

  auto beta_rows = sweep(cfg, SweepParameter::beta);
  REQUIRE(beta_rows.size() == 10);
  for (int s = 0; s <= 9; ++s) CHECK(beta_rows[static_cast<size_t>(s)].value == std::pow(2.0, s));

  auto m_rows = sweep(cfg, SweepParameter::m);
  REQUIRE(m_rows.size() == 9);
  for (int m = 2; m <= 10; ++m) CHECK(m_rows[static_cast<size_t>(m - 2)].value == m);

  // a sweep point with the config's own values equals the plain experiment
  ExperimentConfig plain = cfg;
  plain.beta = 64.0;
  ExperimentReport direct = run_experiment(plain);
  CHECK(beta_rows[6].value == 64.0);
  CHECK(beta_rows[6].best_median_srcc == doctest::Approx(direct.best_median_srcc).epsilon(1e-12));

  const std::string csv = sweep_csv(beta_rows, SweepParameter::beta);
  CHECK(csv.find("beta,method,") == 0);

  CHECK(oracle::error_code_of([&] {
          ExperimentConfig bad = cfg;
          bad.head = HeadKind::sqr;
          sweep(bad, SweepParameter::beta);
        }) == Errc::invalid_parameter);
}
