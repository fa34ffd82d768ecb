#include "pqr/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <thread>

#include "pqr/error.hpp"
#include "pqr/rng.hpp"

namespace pqr {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::vector<double> average_ranks(std::span<const double> v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of 1-based positions
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(Errc::invalid_parameter, "correlation needs equal-length vectors");
  if (a.size() < 2) fail(Errc::invalid_parameter, "correlation needs at least two samples");
  const double n = static_cast<double>(a.size());
  double mean_a = 0.0, mean_b = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= n;
  mean_b /= n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0)
    fail(Errc::undefined_correlation, "correlation is undefined for constant input");
  return cov / std::sqrt(var_a * var_b);
}

}  // namespace

double srcc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(Errc::invalid_parameter, "srcc needs equal-length vectors");
  if (a.size() < 2) fail(Errc::invalid_parameter, "srcc needs at least two samples");
  std::vector<double> ra = average_ranks(a);
  std::vector<double> rb = average_ranks(b);
  return pearson(ra, rb);
}

double plcc(std::span<const double> a, std::span<const double> b) { return pearson(a, b); }

double pool_average(std::span<const double> patch_scores) {
  if (patch_scores.empty()) fail(Errc::invalid_parameter, "cannot pool an empty score list");
  double sum = 0.0;
  for (double v : patch_scores) sum += v;
  return sum / static_cast<double>(patch_scores.size());
}

double median(std::vector<double> values) {
  if (values.empty()) fail(Errc::invalid_parameter, "median of an empty list");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

DatasetManifest split_by_content(const DatasetManifest& manifest, std::span<const double> fractions,
                                 uint64_t seed) {
  if (fractions.empty() || fractions.size() > 3)
    fail(Errc::invalid_parameter, "split supports 1 to 3 fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) fail(Errc::invalid_parameter, "split fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-9) fail(Errc::invalid_parameter, "split fractions must sum to at most 1");

  static const char* kLabels2[] = {"train", "test"};
  static const char* kLabels3[] = {"train", "val", "test"};
  std::vector<std::string> labels;
  if (fractions.size() == 1) labels = {"train"};
  else if (fractions.size() == 2) labels = {kLabels2[0], kLabels2[1]};
  else labels = {kLabels3[0], kLabels3[1], kLabels3[2]};

  std::vector<std::string> sources = manifest.source_ids;
  Rng rng(derive_seed(seed, {seed_tag::split}));
  rng.shuffle(sources);

  // Largest-remainder apportionment of the shuffled sources.
  const size_t n = sources.size();
  std::vector<size_t> counts(fractions.size(), 0);
  std::vector<double> remainders(fractions.size(), 0.0);
  size_t assigned = 0;
  for (size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    counts[i] = static_cast<size_t>(exact);
    remainders[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  size_t target = static_cast<size_t>(std::llround(total * static_cast<double>(n)));
  target = std::min(target, n);
  while (assigned < target) {
    size_t best = 0;
    for (size_t i = 1; i < remainders.size(); ++i)
      if (remainders[i] > remainders[best]) best = i;
    ++counts[best];
    remainders[best] = -1.0;
    ++assigned;
  }
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0)
      fail(Errc::invalid_parameter,
           "split fraction " + format_double(fractions[i]) + " rounds to an empty split");
  }

  std::unordered_map<std::string, std::string> label_of;
  size_t cursor = 0;
  for (size_t i = 0; i < counts.size(); ++i)
    for (size_t k = 0; k < counts[i]; ++k) label_of[sources[cursor++]] = labels[i];

  DatasetManifest out = manifest;
  for (auto& rec : out.images) {
    auto it = label_of.find(rec.source_id);
    rec.split = it == label_of.end() ? "-" : it->second;
  }
  validate_manifest(out);
  return out;
}

LoadedDataset load_dataset(const std::string& manifest_path) {
  LoadedDataset data;
  data.manifest = read_manifest(manifest_path);
  data.root = std::filesystem::path(manifest_path).parent_path().string();
  for (const auto& rec : data.manifest.images) {
    std::string path = (std::filesystem::path(data.root) / rec.path).string();
    try {
      data.images.emplace(rec.id, read_ppm(path));
    } catch (const Error& e) {
      fail(Errc::io_error, "image '" + rec.id + "': " + e.what());
    }
  }
  return data;
}

namespace {

Batch patches_to_batch(const Image& img, const std::vector<PatchRecord>& records) {
  if (records.empty()) fail(Errc::invalid_parameter, "no patches");
  const int size = records[0].size;
  Batch batch = Batch::zeros(static_cast<int>(records.size()), img.channels, size, size);
  for (size_t p = 0; p < records.size(); ++p) {
    const PatchRecord& rec = records[p];
    for (int c = 0; c < img.channels; ++c)
      for (int y = 0; y < size; ++y) {
        const double* src =
            &img.data[(static_cast<size_t>(c) * img.height + rec.y + y) * img.width + rec.x];
        double* dst = batch.data.data() +
                      ((static_cast<size_t>(p) * img.channels + c) * size + y) * size;
        std::copy(src, src + size, dst);
      }
  }
  return batch;
}

double patch_score(const Prediction& pred, const ReverseMapper* mapper, HeadKind head) {
  if (head == HeadKind::pqr) return apply_reverse_map(*mapper, pred);
  return pred[0];
}

}  // namespace

EvalResult evaluate_model(const Network& net, const ReverseMapper* mapper,
                          const LoadedDataset& data, const std::string& split, int stride) {
  if (net.arch.head == HeadKind::pqr && mapper == nullptr)
    fail(Errc::invalid_parameter, "pqr evaluation needs a reverse mapper");
  if (stride < 1) fail(Errc::invalid_parameter, "stride must be >= 1");

  EvalResult result;
  std::vector<double> mos, preds;
  for (const auto& rec : data.manifest.images) {
    if (split != "all" && rec.split != split) continue;
    auto it = data.images.find(rec.id);
    if (it == data.images.end()) fail(Errc::io_error, "image '" + rec.id + "' is not loaded");
    const Image& img = it->second;
    auto records = extract_patches_grid(img, rec.id, {stride}, net.arch.input_size);
    Batch batch = patches_to_batch(img, records);
    auto outputs = forward(net, batch, RunMode::eval);
    std::vector<double> scores;
    scores.reserve(outputs.size());
    for (const auto& out : outputs) scores.push_back(patch_score(out, mapper, net.arch.head));
    const double pooled = pool_average(scores);
    result.per_image.push_back({rec.id, rec.mos, pooled});
    mos.push_back(rec.mos);
    preds.push_back(pooled);
  }
  if (mos.size() < 2)
    fail(Errc::invalid_parameter, "split '" + split + "' has fewer than two images");
  result.metrics.srcc = srcc(preds, mos);
  result.metrics.plcc = plcc(preds, mos);
  return result;
}

namespace {

struct RepetitionOutput {
  std::vector<EpochRow> rows;
  RepetitionInfo info;
};

struct TestImageBatch {
  Batch batch;
  double mos = 0.0;
};

void validate_experiment(const ExperimentConfig& cfg) {
  if (cfg.repetitions < 1) fail(Errc::invalid_parameter, "repetitions must be >= 1");
  if (cfg.patches_per_image < 1) fail(Errc::invalid_parameter, "patches per image must be >= 1");
  if (cfg.test_stride < 1) fail(Errc::invalid_parameter, "test stride must be >= 1");
  if (cfg.head == HeadKind::pqr && cfg.m < 2)
    fail(Errc::invalid_parameter, "pqr experiments need M >= 2");
}

ArchConfig arch_for_head(const ExperimentConfig& cfg) {
  ArchConfig arch = cfg.arch;
  arch.head = cfg.head;
  arch.head_dim = cfg.head == HeadKind::pqr ? cfg.m : 1;
  return arch;
}

RepetitionOutput run_repetition(const ExperimentConfig& cfg, const LoadedDataset& data, int rep) {
  const uint64_t split_seed = derive_seed(cfg.seed, {seed_tag::split, static_cast<uint64_t>(rep)});
  const uint64_t rep_seed =
      derive_seed(cfg.seed, {seed_tag::repetition, static_cast<uint64_t>(rep)});

  DatasetManifest labeled = split_by_content(data.manifest, cfg.fractions, split_seed);
  const std::string test_label = cfg.fractions.size() == 1 ? "train" : "test";

  RepetitionOutput out;
  out.info.repetition = rep + 1;
  out.info.split_seed = split_seed;
  {
    std::unordered_map<std::string, std::string> seen;
    for (const auto& rec : labeled.images) {
      auto [it, fresh] = seen.emplace(rec.source_id, rec.split);
      if (!fresh) continue;
      if (rec.split == "train") out.info.train_sources.push_back(rec.source_id);
      else if (rec.split == test_label) out.info.test_sources.push_back(rec.source_id);
    }
    std::sort(out.info.train_sources.begin(), out.info.train_sources.end());
    std::sort(out.info.test_sources.begin(), out.info.test_sources.end());
  }

  // Training labels and, for the pqr head, anchors and the reverse map
  // fitted on this repetition's training scores only.
  std::vector<const ImageRecord*> train_images, test_images;
  for (const auto& rec : labeled.images) {
    if (rec.split == "train") train_images.push_back(&rec);
    else if (rec.split == test_label) test_images.push_back(&rec);
  }
  if (train_images.empty() || test_images.empty())
    fail(Errc::invalid_parameter, "experiment split produced an empty train or test set");

  const ScoreRange range{0.0, 1.0};
  EncoderConfig encoder;
  ReverseMapper mapper;
  if (cfg.head == HeadKind::pqr) {
    std::vector<double> train_mos;
    train_mos.reserve(train_images.size());
    for (const auto* rec : train_images) train_mos.push_back(rec->mos);
    encoder.beta = cfg.beta;
    encoder.distance = cfg.distance;
    encoder.anchors = cfg.anchor_method == AnchorMethod::lloyd_max
                          ? lloyd_max(train_mos, cfg.m, range).anchors
                          : uniform_anchors(range, cfg.m);
    mapper = fit_reverse_map(encode_batch(train_mos, encoder), train_mos, range, cfg.ridge);
  }

  // Random training crops, fixed per repetition; each crop inherits its
  // image's label.
  const ArchConfig arch = arch_for_head(cfg);
  const int patch = arch.input_size;
  PatchSet train_set;
  train_set.patches = Batch::zeros(static_cast<int>(train_images.size()) * cfg.patches_per_image,
                                   arch.input_channels, patch, patch);
  train_set.targets.reserve(train_set.patches.n);
  const size_t patch_len = static_cast<size_t>(arch.input_channels) * patch * patch;
  size_t cursor = 0;
  for (size_t i = 0; i < train_images.size(); ++i) {
    const ImageRecord& rec = *train_images[i];
    const Image& img = data.images.at(rec.id);
    auto records = extract_patches_random(
        img, rec.id, {cfg.patches_per_image, derive_seed(rep_seed, {seed_tag::patches, i})}, patch);
    std::vector<double> target = cfg.head == HeadKind::pqr
                                     ? encode(rec.mos, encoder)
                                     : std::vector<double>{rec.mos};
    for (const auto& pr : records) {
      Image crop_img = crop(img, pr.x, pr.y, patch);
      std::copy(crop_img.data.begin(), crop_img.data.end(),
                train_set.patches.data.begin() + cursor * patch_len);
      train_set.targets.push_back(target);
      ++cursor;
    }
  }

  // Grid patches of the test images, extracted once and reused per epoch.
  std::vector<TestImageBatch> test_batches;
  test_batches.reserve(test_images.size());
  for (const auto* rec : test_images) {
    const Image& img = data.images.at(rec->id);
    auto records = extract_patches_grid(img, rec->id, {cfg.test_stride}, patch);
    test_batches.push_back({patches_to_batch(img, records), rec->mos});
  }

  Network net = build(arch, derive_seed(rep_seed, {seed_tag::init}));
  TrainConfig train_cfg = cfg.train;
  train_cfg.seed = derive_seed(rep_seed, {seed_tag::shuffle});

  const ReverseMapper* mapper_ptr = cfg.head == HeadKind::pqr ? &mapper : nullptr;
  try {
    train(net, train_set, train_cfg, [&](const Network& current, const EpochStats& stats) {
      std::vector<double> mos, preds;
      mos.reserve(test_batches.size());
      preds.reserve(test_batches.size());
      for (const auto& tb : test_batches) {
        auto outputs = forward(current, tb.batch, RunMode::eval);
        std::vector<double> scores;
        scores.reserve(outputs.size());
        for (const auto& o : outputs) scores.push_back(patch_score(o, mapper_ptr, cfg.head));
        mos.push_back(tb.mos);
        preds.push_back(pool_average(scores));
      }
      EpochRow row;
      row.repetition = rep + 1;
      row.epoch = stats.epoch;
      row.lr = stats.lr;
      row.mean_loss = stats.mean_loss;
      row.srcc = srcc(preds, mos);
      row.plcc = plcc(preds, mos);
      out.rows.push_back(row);
    });
  } catch (const Error& e) {
    fail(e.code(), "repetition " + std::to_string(rep + 1) + ": " + e.what());
  }

  // First epoch reaching 95% of this repetition's final SRCC.
  const double final_srcc = out.rows.back().srcc;
  const double threshold = 0.95 * final_srcc;
  out.info.convergence_epoch = out.rows.back().epoch;
  for (const auto& row : out.rows) {
    if (row.srcc >= threshold) {
      out.info.convergence_epoch = row.epoch;
      break;
    }
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  validate_experiment(cfg);
  (void)compute_stage_dims(arch_for_head(cfg));  // surface bad architectures early
  LoadedDataset data = load_dataset(cfg.manifest_path);

  std::vector<RepetitionOutput> outputs(static_cast<size_t>(cfg.repetitions));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(cfg.repetitions));

  unsigned hw = std::thread::hardware_concurrency();
  int n_threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(hw ? hw : 1);
  n_threads = std::min(n_threads, cfg.repetitions);

  if (n_threads <= 1) {
    for (int r = 0; r < cfg.repetitions; ++r) outputs[static_cast<size_t>(r)] = run_repetition(cfg, data, r);
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= cfg.repetitions) return;
        try {
          outputs[static_cast<size_t>(r)] = run_repetition(cfg, data, r);
        } catch (...) {
          errors[static_cast<size_t>(r)] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  ExperimentReport report;
  report.head = cfg.head;
  report.seed = cfg.seed;
  report.repetitions = cfg.repetitions;
  report.epochs = cfg.train.epochs;
  for (auto& out : outputs) {
    report.rows.insert(report.rows.end(), out.rows.begin(), out.rows.end());
    report.reps.push_back(std::move(out.info));
  }

  const int epochs = cfg.train.epochs;
  report.median_srcc_per_epoch.resize(static_cast<size_t>(epochs));
  report.median_plcc_per_epoch.resize(static_cast<size_t>(epochs));
  report.std_srcc_per_epoch.resize(static_cast<size_t>(epochs));
  report.std_plcc_per_epoch.resize(static_cast<size_t>(epochs));
  for (int e = 0; e < epochs; ++e) {
    std::vector<double> s, p;
    for (int r = 0; r < cfg.repetitions; ++r) {
      const EpochRow& row = report.rows[static_cast<size_t>(r) * epochs + e];
      s.push_back(row.srcc);
      p.push_back(row.plcc);
    }
    report.median_srcc_per_epoch[static_cast<size_t>(e)] = median(s);
    report.median_plcc_per_epoch[static_cast<size_t>(e)] = median(p);
    report.std_srcc_per_epoch[static_cast<size_t>(e)] = sample_std(s);
    report.std_plcc_per_epoch[static_cast<size_t>(e)] = sample_std(p);
  }
  report.best_srcc_epoch = 1;
  report.best_plcc_epoch = 1;
  for (int e = 0; e < epochs; ++e) {
    if (report.median_srcc_per_epoch[static_cast<size_t>(e)] >
        report.median_srcc_per_epoch[static_cast<size_t>(report.best_srcc_epoch - 1)])
      report.best_srcc_epoch = e + 1;
    if (report.median_plcc_per_epoch[static_cast<size_t>(e)] >
        report.median_plcc_per_epoch[static_cast<size_t>(report.best_plcc_epoch - 1)])
      report.best_plcc_epoch = e + 1;
  }
  report.best_median_srcc = report.median_srcc_per_epoch[static_cast<size_t>(report.best_srcc_epoch - 1)];
  report.best_median_plcc = report.median_plcc_per_epoch[static_cast<size_t>(report.best_plcc_epoch - 1)];
  report.final_median_srcc = report.median_srcc_per_epoch.back();
  report.final_median_plcc = report.median_plcc_per_epoch.back();
  {
    std::vector<double> conv;
    for (const auto& info : report.reps) conv.push_back(static_cast<double>(info.convergence_epoch));
    report.median_convergence_epoch = median(conv);
  }
  return report;
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out << "# pqr-experiment head=" << head_kind_name(head) << " seed=" << seed
      << " repetitions=" << repetitions << " epochs=" << epochs << "\n";
  out << "repetition,epoch,lr,loss,srcc,plcc\n";
  for (const auto& row : rows)
    out << row.repetition << "," << row.epoch << "," << format_double(row.lr) << ","
        << format_double(row.mean_loss) << "," << format_double(row.srcc) << ","
        << format_double(row.plcc) << "\n";
  return out.str();
}

std::string ExperimentReport::epoch_csv() const {
  std::ostringstream out;
  out << "# pqr-experiment head=" << head_kind_name(head) << " seed=" << seed
      << " repetitions=" << repetitions << " epochs=" << epochs << "\n";
  out << "epoch,median_srcc,std_srcc,median_plcc,std_plcc\n";
  for (int e = 0; e < epochs; ++e)
    out << (e + 1) << "," << format_double(median_srcc_per_epoch[static_cast<size_t>(e)]) << ","
        << format_double(std_srcc_per_epoch[static_cast<size_t>(e)]) << ","
        << format_double(median_plcc_per_epoch[static_cast<size_t>(e)]) << ","
        << format_double(std_plcc_per_epoch[static_cast<size_t>(e)]) << "\n";
  return out.str();
}

std::string ExperimentReport::summary() const {
  std::ostringstream out;
  out << "head=" << head_kind_name(head) << " seed=" << seed << " repetitions=" << repetitions
      << " epochs=" << epochs << "\n";
  out << "best_median_srcc=" << format_double(best_median_srcc)
      << " at_epoch=" << best_srcc_epoch << "\n";
  out << "best_median_plcc=" << format_double(best_median_plcc)
      << " at_epoch=" << best_plcc_epoch << "\n";
  out << "final_median_srcc=" << format_double(final_median_srcc)
      << " final_median_plcc=" << format_double(final_median_plcc) << "\n";
  out << "median_convergence_epoch=" << format_double(median_convergence_epoch) << "\n";
  out << "split_seeds=";
  for (size_t i = 0; i < reps.size(); ++i) {
    if (i) out << ",";
    out << reps[i].split_seed;
  }
  out << "\n";
  for (const auto& info : reps) {
    out << "repetition " << info.repetition << " convergence_epoch=" << info.convergence_epoch
        << " test_sources=";
    for (size_t i = 0; i < info.test_sources.size(); ++i) {
      if (i) out << ",";
      out << info.test_sources[i];
    }
    out << "\n";
  }
  return out.str();
}

SweepParameter parse_sweep_parameter(const std::string& name) {
  if (name == "beta") return SweepParameter::beta;
  if (name == "M" || name == "m") return SweepParameter::m;
  fail(Errc::invalid_parameter, "unknown sweep parameter '" + name + "' (expected beta or M)");
}

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, SweepParameter parameter) {
  if (cfg.head != HeadKind::pqr) fail(Errc::invalid_parameter, "sweeps need the pqr head");
  std::vector<SweepRow> rows;
  auto run_point = [&](double value) {
    ExperimentConfig point = cfg;
    if (parameter == SweepParameter::beta) point.beta = value;
    else point.m = static_cast<int>(value);
    ExperimentReport report = run_experiment(point);
    SweepRow row;
    row.value = value;
    row.method = anchor_method_name(cfg.anchor_method);
    row.best_median_srcc = report.best_median_srcc;
    row.best_median_plcc = report.best_median_plcc;
    row.final_median_srcc = report.final_median_srcc;
    row.final_median_plcc = report.final_median_plcc;
    rows.push_back(row);
  };
  if (parameter == SweepParameter::beta) {
    for (int s = 0; s <= 9; ++s) run_point(std::pow(2.0, s));
  } else {
    for (int m = 2; m <= 10; ++m) run_point(static_cast<double>(m));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, SweepParameter parameter) {
  std::ostringstream out;
  out << (parameter == SweepParameter::beta ? "beta" : "M")
      << ",method,best_median_srcc,best_median_plcc,final_median_srcc,final_median_plcc\n";
  for (const auto& row : rows)
    out << format_double(row.value) << "," << row.method << ","
        << format_double(row.best_median_srcc) << "," << format_double(row.best_median_plcc) << ","
        << format_double(row.final_median_srcc) << "," << format_double(row.final_median_plcc)
        << "\n";
  return out.str();
}

}  // namespace pqr
