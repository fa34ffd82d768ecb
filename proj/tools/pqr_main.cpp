// pqr - synthetic blind IQA workbench: dataset generation, score encoding,
// CNN training with a probabilistic or scalar head, evaluation, sweeps.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pqr/config_file.hpp"
#include "pqr/distortion_lab.hpp"
#include "pqr/error.hpp"
#include "pqr/eval_harness.hpp"
#include "pqr/io_util.hpp"
#include "pqr/network.hpp"
#include "pqr/rng.hpp"

namespace {

using namespace pqr;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::numerical_failure:
      return 3;
    case Errc::invalid_parameter:
    case Errc::invalid_architecture:
    case Errc::invalid_input:
      return 1;
    default:
      return 2;  // I/O, format, range and fit errors are data errors
  }
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

// Relative output paths can be redirected under $PQR_OUT_ROOT; inputs and
// absolute paths are never rewritten.
std::string out_path(const std::string& path) {
  const char* root = std::getenv("PQR_OUT_ROOT");
  if (root == nullptr || *root == '\0' || path.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(root) / p).string();
}

std::vector<DistortionKind> parse_kinds_csv(const std::string& csv) {
  std::vector<DistortionKind> kinds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) kinds.push_back(parse_distortion_kind(item));
  if (kinds.empty()) fail(Errc::invalid_parameter, "no distortion kinds given");
  return kinds;
}

std::vector<double> read_scores_file(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<double> scores;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string item;
    while (std::getline(ls, item, ',')) {
      size_t a = item.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      size_t b = item.find_last_not_of(" \t\r");
      item = item.substr(a, b - a + 1);
      if (item.empty() || item[0] == '#') break;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc{} || ptr != item.data() + item.size())
        fail(Errc::invalid_parameter, "bad score '" + item + "' in '" + path + "'");
      scores.push_back(v);
    }
  }
  if (scores.empty()) fail(Errc::invalid_parameter, "no scores found in '" + path + "'");
  return scores;
}

// --- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  int sources = 8;
  int size = 96;
  std::string kinds = "blur,awgn,contrast,block";
  int levels = 3;
  double sigma = 0.19;
  int subjects = 35;
  uint64_t seed = 42;
  std::string out_dir;
};

int run_gen_data(const GenDataArgs& args) {
  DatasetConfig cfg;
  cfg.n_sources = args.sources;
  cfg.source_size = args.size;
  cfg.kinds = parse_kinds_csv(args.kinds);
  cfg.levels = args.levels;
  cfg.opinions = {args.sigma, args.subjects};
  cfg.seed = args.seed;

  const std::string out_dir = out_path(args.out_dir);
  DatasetManifest manifest = build_dataset(cfg, out_dir);
  const std::string manifest_path =
      (std::filesystem::path(out_dir) / "manifest.txt").string();
  write_manifest(manifest, manifest_path);

  int hist[10] = {0};
  for (const auto& rec : manifest.images) {
    int bin = std::min(9, static_cast<int>(rec.mos * 10.0));
    ++hist[bin];
  }
  std::cout << "manifest=" << manifest_path << "\n";
  std::cout << "images=" << manifest.images.size() << " sources=" << manifest.source_ids.size()
            << " seed=" << args.seed << "\n";
  std::cout << "mos_histogram=";
  for (int i = 0; i < 10; ++i) std::cout << (i ? "," : "") << hist[i];
  std::cout << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string head = "pqr";
  double beta = 64.0;
  int m = 5;
  std::string anchor_method = "uniform";
  std::string distance = "squared";
  std::string arch = "desk";
  double dropout = 0.5;
  int epochs = 30;
  int batch = 32;
  double lr_start = 1e-2;
  double lr_end = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int patches = 16;
  double train_frac = 0.8;
  uint64_t split_seed = 42;
  uint64_t seed = 42;
  double ridge = 1e-4;  // see ExperimentConfig::ridge
  std::string out = "model.ckpt";
  std::string trace;
};

int run_train(const TrainArgs& args) {
  const HeadKind head = parse_head_kind(args.head);
  if (head == HeadKind::pqr && args.m < 2)
    fail(Errc::invalid_parameter, "--M must be >= 2 with the pqr head");
  if (!(args.train_frac > 0.0 && args.train_frac <= 1.0))
    fail(Errc::invalid_parameter, "--train-frac must lie in (0,1]");

  LoadedDataset data = load_dataset(args.manifest);
  DatasetManifest labeled;
  if (args.train_frac < 1.0) {
    std::vector<double> fractions = {args.train_frac, 1.0 - args.train_frac};
    labeled = split_by_content(data.manifest, fractions, args.split_seed);
  } else {
    labeled = split_by_content(data.manifest, std::vector<double>{1.0}, args.split_seed);
  }

  std::vector<const ImageRecord*> train_images;
  for (const auto& rec : labeled.images)
    if (rec.split == "train") train_images.push_back(&rec);
  if (train_images.empty()) fail(Errc::invalid_parameter, "train split is empty");

  const ScoreRange range{0.0, 1.0};
  EncoderConfig encoder;
  ReverseMapper mapper;
  if (head == HeadKind::pqr) {
    std::vector<double> train_mos;
    for (const auto* rec : train_images) train_mos.push_back(rec->mos);
    encoder.beta = args.beta;
    encoder.distance = args.distance == "l1" ? DistanceKind::l1 : DistanceKind::squared_euclidean;
    encoder.anchors = parse_anchor_method(args.anchor_method) == AnchorMethod::lloyd_max
                          ? lloyd_max(train_mos, args.m, range).anchors
                          : uniform_anchors(range, args.m);
    mapper = fit_reverse_map(encode_batch(train_mos, encoder), train_mos, range, args.ridge);
  }

  ArchConfig arch = args.arch == "full" ? full_arch(head, args.m) : desk_arch(head, args.m);
  arch.dropout_rate = args.dropout;
  const int patch = arch.input_size;

  PatchSet set;
  set.patches = Batch::zeros(static_cast<int>(train_images.size()) * args.patches,
                             arch.input_channels, patch, patch);
  const size_t patch_len = static_cast<size_t>(arch.input_channels) * patch * patch;
  size_t cursor = 0;
  for (size_t i = 0; i < train_images.size(); ++i) {
    const ImageRecord& rec = *train_images[i];
    const Image& img = data.images.at(rec.id);
    auto records = extract_patches_random(
        img, rec.id, {args.patches, derive_seed(args.seed, {seed_tag::patches, i})}, patch);
    std::vector<double> target =
        head == HeadKind::pqr ? encode(rec.mos, encoder) : std::vector<double>{rec.mos};
    for (const auto& pr : records) {
      Image crop_img = crop(img, pr.x, pr.y, patch);
      std::copy(crop_img.data.begin(), crop_img.data.end(),
                set.patches.data.begin() + cursor * patch_len);
      set.targets.push_back(target);
      ++cursor;
    }
  }

  Network net = build(arch, derive_seed(args.seed, {seed_tag::init}));
  TrainConfig cfg;
  cfg.epochs = args.epochs;
  cfg.batch_size = args.batch;
  cfg.lr_start = args.lr_start;
  cfg.lr_end = args.lr_end;
  cfg.momentum = args.momentum;
  cfg.weight_decay = args.weight_decay;
  cfg.seed = derive_seed(args.seed, {seed_tag::shuffle});

  auto trace = train(net, set, cfg);

  const std::string ckpt_path = out_path(args.out);
  save_checkpoint(net, head == HeadKind::pqr ? &mapper : nullptr,
                  head == HeadKind::pqr ? &encoder.anchors : nullptr, ckpt_path);

  std::ostringstream csv;
  csv << "# pqr-train head=" << args.head << " seed=" << args.seed
      << " split_seed=" << args.split_seed << " beta=" << fmt(args.beta) << " M=" << args.m
      << "\n";
  csv << "epoch,lr,mean_loss\n";
  for (const auto& s : trace)
    csv << s.epoch << "," << fmt(s.lr) << "," << fmt(s.mean_loss) << "\n";
  const std::string trace_path =
      args.trace.empty() ? ckpt_path + ".trace.csv" : out_path(args.trace);
  write_text_atomic(trace_path, csv.str());

  std::cout << "checkpoint=" << ckpt_path << " head=" << args.head;
  if (head == HeadKind::pqr)
    std::cout << " M=" << args.m << " beta=" << fmt(args.beta)
              << " fit_mae=" << fmt(mapper.fit_mae);
  std::cout << "\n";
  std::cout << "train_images=" << train_images.size() << " patches=" << set.patches.n
            << " seed=" << args.seed << " split_seed=" << args.split_seed << "\n";
  std::cout << "final_loss=" << fmt(trace.back().mean_loss) << " trace=" << trace_path << "\n";
  return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  double train_frac = 0.8;
  uint64_t split_seed = 42;
  int stride = 16;
  int expect_m = 0;
  std::string per_image;
};

int run_eval(const EvalArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  if (args.expect_m > 0) {
    const int ckpt_m = ckpt.net.arch.head == HeadKind::pqr ? ckpt.net.arch.head_dim : 1;
    if (ckpt_m != args.expect_m)
      fail(Errc::invalid_parameter, "checkpoint M=" + std::to_string(ckpt_m) +
                                        " does not match --expect-M " +
                                        std::to_string(args.expect_m));
  }
  if (ckpt.net.arch.head == HeadKind::pqr && !ckpt.mapper)
    fail(Errc::corrupt_checkpoint, "pqr checkpoint is missing its reverse mapper");

  LoadedDataset data = load_dataset(args.manifest);
  if (args.split != "all") {
    std::vector<double> fractions = {args.train_frac, 1.0 - args.train_frac};
    if (args.train_frac >= 1.0) fractions = {1.0};
    data.manifest = split_by_content(data.manifest, fractions, args.split_seed);
  }

  EvalResult result = evaluate_model(
      ckpt.net, ckpt.mapper ? &*ckpt.mapper : nullptr, data, args.split, args.stride);

  // Patch geometry is uniform across the dataset; report it once.
  const auto& first = data.images.at(result.per_image.front().id);
  const size_t patch_count =
      extract_patches_grid(first, "probe", {args.stride}, ckpt.net.arch.input_size).size();

  std::cout << "SRCC=" << fmt(result.metrics.srcc) << " PLCC=" << fmt(result.metrics.plcc) << "\n";
  std::cout << "images=" << result.per_image.size() << " patches_per_image=" << patch_count
            << " stride=" << args.stride << " split=" << args.split
            << " split_seed=" << args.split_seed << "\n";

  if (!args.per_image.empty()) {
    std::ostringstream csv;
    csv << "id,mos,prediction\n";
    for (const auto& row : result.per_image)
      csv << row.id << "," << fmt(row.mos) << "," << fmt(row.prediction) << "\n";
    const std::string per_image_path = out_path(args.per_image);
    write_text_atomic(per_image_path, csv.str());
    std::cout << "per_image=" << per_image_path << "\n";
  }
  return 0;
}

// --- encode -----------------------------------------------------------------

struct EncodeArgs {
  std::string scores;
  double beta = 64.0;
  int m = 5;
  std::string anchor_method = "uniform";
  std::string distance = "squared";
  std::string lloyd_scores;
  std::string range = "0,1";
  double ridge = 1e-8;
  std::string out;
};

int run_encode(const EncodeArgs& args) {
  if (args.m < 1) fail(Errc::invalid_parameter, "--M must be >= 1");
  std::vector<double> scores = read_scores_file(args.scores);

  ScoreRange range;
  {
    auto comma = args.range.find(',');
    if (comma == std::string::npos)
      fail(Errc::invalid_parameter, "--range expects lo,hi");
    range.lo = std::stod(args.range.substr(0, comma));
    range.hi = std::stod(args.range.substr(comma + 1));
  }

  EncoderConfig encoder;
  encoder.beta = args.beta;
  encoder.distance = args.distance == "l1" ? DistanceKind::l1 : DistanceKind::squared_euclidean;
  if (parse_anchor_method(args.anchor_method) == AnchorMethod::lloyd_max) {
    std::vector<double> fit_scores =
        args.lloyd_scores.empty() ? scores : read_scores_file(args.lloyd_scores);
    encoder.anchors = lloyd_max(fit_scores, args.m, range).anchors;
  } else {
    encoder.anchors = uniform_anchors(range, args.m);
  }

  auto pqrs = encode_batch(scores, encoder);
  ReverseMapper mapper = fit_reverse_map(pqrs, scores, range, args.ridge);

  std::ostringstream csv;
  for (int i = 0; i < args.m; ++i) csv << (i ? "," : "") << "q" << (i + 1);
  csv << "\n";
  for (const auto& q : pqrs) {
    for (size_t i = 0; i < q.size(); ++i) csv << (i ? "," : "") << fmt(q[i]);
    csv << "\n";
  }
  const std::string report = "fit_mae=" + fmt(mapper.fit_mae) + " target=0.01 anchors{" +
                             anchor_record(encoder.anchors) + "}";
  if (args.out.empty()) {
    std::cout << csv.str();
    std::cout << "# " << report << "\n";
  } else {
    const std::string csv_path = out_path(args.out);
    write_text_atomic(csv_path, csv.str());
    std::cout << "pqr_csv=" << csv_path << "\n" << report << "\n";
  }
  return 0;
}

// --- sweep ------------------------------------------------------------------

struct SweepArgs {
  std::string config;
  std::string parameter;
  std::string out;
};

int run_sweep(const SweepArgs& args) {
  RunConfig rc = parse_run_config(args.config);
  ExperimentConfig cfg = to_experiment_config(rc, HeadKind::pqr);
  SweepParameter param = parse_sweep_parameter(args.parameter);
  auto rows = sweep(cfg, param);
  std::string csv = sweep_csv(rows, param);
  if (args.out.empty()) {
    std::cout << csv;
  } else {
    const std::string csv_path = out_path(args.out);
    write_text_atomic(csv_path, csv);
    std::cout << "sweep_csv=" << csv_path << " rows=" << rows.size() << "\n";
  }
  return 0;
}

// --- compare ----------------------------------------------------------------

struct CompareArgs {
  std::string config;
  std::string out_dir = "compare_out";
};

int run_compare(const CompareArgs& args) {
  RunConfig rc = parse_run_config(args.config);
  ExperimentConfig pqr_cfg = to_experiment_config(rc, HeadKind::pqr);
  ExperimentConfig sqr_cfg = to_experiment_config(rc, HeadKind::sqr);

  ExperimentReport pqr_report = run_experiment(pqr_cfg);
  ExperimentReport sqr_report = run_experiment(sqr_cfg);

  bool same_splits = pqr_report.reps.size() == sqr_report.reps.size();
  for (size_t r = 0; same_splits && r < pqr_report.reps.size(); ++r)
    same_splits = pqr_report.reps[r].split_seed == sqr_report.reps[r].split_seed &&
                  pqr_report.reps[r].test_sources == sqr_report.reps[r].test_sources;
  if (!same_splits)
    fail(Errc::numerical_failure, "pqr and sqr repetitions diverged on split assignment");

  const std::string out_dir = out_path(args.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(Errc::io_error, "cannot create '" + out_dir + "': " + ec.message());
  auto path = [&](const char* name) {
    return (std::filesystem::path(out_dir) / name).string();
  };
  write_text_atomic(path("pqr_rows.csv"), pqr_report.to_csv());
  write_text_atomic(path("sqr_rows.csv"), sqr_report.to_csv());
  write_text_atomic(path("pqr_epochs.csv"), pqr_report.epoch_csv());
  write_text_atomic(path("sqr_epochs.csv"), sqr_report.epoch_csv());

  std::ostringstream summary;
  summary << "pqr-compare seed=" << rc.seed << " repetitions=" << rc.repetitions
          << " epochs=" << rc.epochs << " splits_identical=yes\n";
  summary << "metric,head,value,epoch\n";
  summary << "best_median_srcc,pqr," << fmt(pqr_report.best_median_srcc) << ","
          << pqr_report.best_srcc_epoch << "\n";
  summary << "best_median_srcc,sqr," << fmt(sqr_report.best_median_srcc) << ","
          << sqr_report.best_srcc_epoch << "\n";
  summary << "best_median_plcc,pqr," << fmt(pqr_report.best_median_plcc) << ","
          << pqr_report.best_plcc_epoch << "\n";
  summary << "best_median_plcc,sqr," << fmt(sqr_report.best_median_plcc) << ","
          << sqr_report.best_plcc_epoch << "\n";
  summary << "final_median_srcc,pqr," << fmt(pqr_report.final_median_srcc) << ","
          << pqr_report.epochs << "\n";
  summary << "final_median_srcc,sqr," << fmt(sqr_report.final_median_srcc) << ","
          << sqr_report.epochs << "\n";
  summary << "median_convergence_epoch,pqr," << fmt(pqr_report.median_convergence_epoch) << ",-\n";
  summary << "median_convergence_epoch,sqr," << fmt(sqr_report.median_convergence_epoch) << ",-\n";
  summary << "\n[pqr]\n" << pqr_report.summary();
  summary << "\n[sqr]\n" << sqr_report.summary();
  write_text_atomic(path("summary.txt"), summary.str());

  std::cout << summary.str();
  std::cout << "out_dir=" << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "pqr: probabilistic quality representation workbench for blind image "
      "quality models on synthetic distortion datasets. Relative output "
      "paths honor the PQR_OUT_ROOT environment variable."};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic distortion dataset");
  gen->add_option("--sources", gen_args.sources, "Number of source images")->capture_default_str();
  gen->add_option("--size", gen_args.size, "Source image size in pixels")->capture_default_str();
  gen->add_option("--kinds", gen_args.kinds,
                  "Comma list of distortions (blur,awgn,contrast,block)")
      ->capture_default_str();
  gen->add_option("--levels", gen_args.levels, "Severity levels per distortion")
      ->capture_default_str();
  gen->add_option("--sigma", gen_args.sigma, "Opinion spread on the [0,1] scale")
      ->capture_default_str();
  gen->add_option("--subjects", gen_args.subjects, "Simulated raters per image")
      ->capture_default_str();
  gen->add_option("--seed", gen_args.seed, "Dataset seed")->capture_default_str();
  gen->add_option("--out", gen_args.out_dir, "Output directory")->required();

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "Train a quality model on a dataset manifest");
  tr->add_option("--manifest", train_args.manifest, "Dataset manifest path")->required();
  tr->add_option("--head", train_args.head, "Model head: pqr or sqr")->capture_default_str();
  tr->add_option("--beta", train_args.beta, "Encoder scaling constant")->capture_default_str();
  tr->add_option("--M", train_args.m, "Number of quality anchors")->capture_default_str();
  tr->add_option("--anchor-method", train_args.anchor_method, "uniform or lloyd_max")
      ->capture_default_str();
  tr->add_option("--distance", train_args.distance, "Encoder distance: squared or l1")
      ->capture_default_str();
  tr->add_option("--arch", train_args.arch, "Architecture preset: desk or full")
      ->capture_default_str();
  tr->add_option("--dropout", train_args.dropout, "Dropout rate before the head layer")
      ->capture_default_str();
  tr->add_option("--epochs", train_args.epochs, "Training epochs")->capture_default_str();
  tr->add_option("--batch", train_args.batch, "Mini-batch size")->capture_default_str();
  tr->add_option("--lr-start", train_args.lr_start, "First epoch learning rate")
      ->capture_default_str();
  tr->add_option("--lr-end", train_args.lr_end, "Last epoch learning rate (log-spaced schedule)")
      ->capture_default_str();
  tr->add_option("--momentum", train_args.momentum, "SGD momentum")->capture_default_str();
  tr->add_option("--weight-decay", train_args.weight_decay, "L2 weight decay")
      ->capture_default_str();
  tr->add_option("--patches", train_args.patches, "Random training crops per image")
      ->capture_default_str();
  tr->add_option("--train-frac", train_args.train_frac,
                 "Content-disjoint train fraction (80/20 default)")
      ->capture_default_str();
  tr->add_option("--split-seed", train_args.split_seed, "Split shuffling seed")
      ->capture_default_str();
  tr->add_option("--seed", train_args.seed, "Training seed (init, crops, shuffling, dropout)")
      ->capture_default_str();
  tr->add_option("--ridge", train_args.ridge, "Ridge for the reverse-map fit")
      ->capture_default_str();
  tr->add_option("--out", train_args.out, "Checkpoint output path")->capture_default_str();
  tr->add_option("--trace", train_args.trace, "Loss trace CSV path (default <out>.trace.csv)");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  ev->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
  ev->add_option("--manifest", eval_args.manifest, "Dataset manifest path")->required();
  ev->add_option("--split", eval_args.split, "train, test, val or all")->capture_default_str();
  ev->add_option("--train-frac", eval_args.train_frac, "Train fraction used when splitting")
      ->capture_default_str();
  ev->add_option("--split-seed", eval_args.split_seed, "Split seed (must match training)")
      ->capture_default_str();
  ev->add_option("--stride", eval_args.stride, "Test patch grid stride")->capture_default_str();
  ev->add_option("--expect-M", eval_args.expect_m,
                 "Assert the checkpoint anchor count; mismatch is a hard error");
  ev->add_option("--per-image", eval_args.per_image, "Per-image prediction CSV path");

  EncodeArgs enc_args;
  auto* enc = app.add_subcommand("encode", "Encode scalar scores to PQR vectors");
  enc->add_option("--scores", enc_args.scores, "Score file (one value per line)")->required();
  enc->add_option("--beta", enc_args.beta, "Encoder scaling constant")->capture_default_str();
  enc->add_option("--M", enc_args.m, "Number of quality anchors")->capture_default_str();
  enc->add_option("--anchor-method", enc_args.anchor_method, "uniform or lloyd_max")
      ->capture_default_str();
  enc->add_option("--distance", enc_args.distance, "squared or l1")->capture_default_str();
  enc->add_option("--lloyd-scores", enc_args.lloyd_scores,
                  "Separate training scores for lloyd_max anchors");
  enc->add_option("--range", enc_args.range, "Score range lo,hi")->capture_default_str();
  enc->add_option("--ridge", enc_args.ridge, "Ridge for the reverse-map fit")
      ->capture_default_str();
  enc->add_option("--out", enc_args.out, "PQR CSV path (stdout when omitted)");

  SweepArgs sweep_args;
  auto* sw = app.add_subcommand("sweep", "Sweep beta or M over the standard grids");
  sw->add_option("--config", sweep_args.config, "Run config file")->required();
  sw->add_option("--parameter", sweep_args.parameter, "beta (2^0..2^9) or M (2..10)")->required();
  sw->add_option("--out", sweep_args.out, "Sweep CSV path (stdout when omitted)");

  CompareArgs cmp_args;
  auto* cmp = app.add_subcommand("compare",
                                 "Run pqr and sqr heads on identical splits and report both");
  cmp->add_option("--config", cmp_args.config, "Run config file")->required();
  cmp->add_option("--out-dir", cmp_args.out_dir, "Report directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (tr->parsed()) return run_train(train_args);
    if (ev->parsed()) return run_eval(eval_args);
    if (enc->parsed()) return run_encode(enc_args);
    if (sw->parsed()) return run_sweep(sweep_args);
    if (cmp->parsed()) return run_compare(cmp_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
