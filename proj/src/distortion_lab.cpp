#include "pqr/distortion_lab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pqr/error.hpp"
#include "pqr/rng.hpp"

namespace pqr {

const char* distortion_kind_name(DistortionKind k) {
  switch (k) {
    case DistortionKind::gaussian_blur: return "gaussian_blur";
    case DistortionKind::awgn: return "awgn";
    case DistortionKind::contrast_decrement: return "contrast_decrement";
    case DistortionKind::block_quantization: return "block_quantization";
  }
  return "unknown";
}

DistortionKind parse_distortion_kind(const std::string& name) {
  if (name == "gaussian_blur" || name == "blur") return DistortionKind::gaussian_blur;
  if (name == "awgn" || name == "noise") return DistortionKind::awgn;
  if (name == "contrast_decrement" || name == "contrast") return DistortionKind::contrast_decrement;
  if (name == "block_quantization" || name == "block") return DistortionKind::block_quantization;
  fail(Errc::invalid_parameter, "unknown distortion kind '" + name + "'");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

double parse_double_field(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    fail(Errc::invalid_parameter, "bad " + what + " value '" + s + "' in manifest");
  return v;
}

// Bilinear upsampling of a coarse random grid; one octave of value noise.
void add_value_noise(Image& img, Rng& rng, int cells, double amplitude) {
  const int gw = cells + 1;
  std::vector<double> grid(static_cast<size_t>(gw) * gw * 3);
  for (auto& g : grid) g = rng.uniform(-1.0, 1.0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double fx = static_cast<double>(x) / img.width * cells;
        double fy = static_cast<double>(y) / img.height * cells;
        int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        double tx = fx - x0, ty = fy - y0;
        auto g = [&](int gy, int gx) {
          return grid[(static_cast<size_t>(c) * gw + gy) * gw + gx];
        };
        double v = (1 - ty) * ((1 - tx) * g(y0, x0) + tx * g(y0, x0 + 1)) +
                   ty * ((1 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
        img.at(c, y, x) += amplitude * v;
      }
}

}  // namespace

Image generate_source(int size, uint64_t seed, int index) {
  if (size < 1) fail(Errc::invalid_parameter, "source size must be >= 1");
  Rng rng(derive_seed(seed, {seed_tag::source, static_cast<uint64_t>(index)}));

  Image img = Image::zeros(size, size, 3);

  // Base tone per channel plus an oriented gradient.
  double base[3];
  for (double& b : base) b = rng.uniform(0.35, 0.65);
  double angle = rng.uniform(0.0, 6.283185307179586);
  double gx = std::cos(angle), gy = std::sin(angle);
  double gstrength = rng.uniform(0.1, 0.35);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double t = (gx * (x - size / 2.0) + gy * (y - size / 2.0)) / size;
        img.at(c, y, x) = base[c] + gstrength * t;
      }

  // Two octaves of value noise, with cell sizes anchored in pixels so crops
  // carry the same texture statistics regardless of the source size.
  const int coarse = std::max(3, size / 14 + static_cast<int>(rng.below(3)));
  const int fine = std::max(8, size / 4 + static_cast<int>(rng.below(std::max(2, size / 16))));
  add_value_noise(img, rng, coarse, rng.uniform(0.12, 0.22));
  add_value_noise(img, rng, fine, rng.uniform(0.08, 0.16));

  // A few hard-edged rectangles with per-channel offsets.
  int n_rects = 3 + static_cast<int>(rng.below(4));
  for (int r = 0; r < n_rects; ++r) {
    int w = 2 + static_cast<int>(rng.below(static_cast<uint64_t>(std::max(2, size / 2))));
    int h = 2 + static_cast<int>(rng.below(static_cast<uint64_t>(std::max(2, size / 2))));
    int x0 = static_cast<int>(rng.below(static_cast<uint64_t>(std::max(1, size - w))));
    int y0 = static_cast<int>(rng.below(static_cast<uint64_t>(std::max(1, size - h))));
    double delta[3];
    double shared = rng.uniform(-0.35, 0.35);
    for (double& d : delta) d = shared + rng.uniform(-0.08, 0.08);
    for (int c = 0; c < 3; ++c)
      for (int y = y0; y < std::min(size, y0 + h); ++y)
        for (int x = x0; x < std::min(size, x0 + w); ++x) img.at(c, y, x) += delta[c];
  }

  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

std::vector<Image> generate_sources(int count, int size, uint64_t seed) {
  if (count < 1) fail(Errc::invalid_parameter, "source count must be >= 1");
  std::vector<Image> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_source(size, seed, i));
  return out;
}

namespace {

Image gaussian_blur(const Image& img, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  auto reflect = [](int i, int n) {
    // reflect-101-style padding without repeating the border sample twice
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };

  Image tmp = Image::zeros(img.width, img.height, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<size_t>(k + radius)] * img.at(c, y, reflect(x + k, img.width));
        tmp.at(c, y, x) = acc;
      }
  Image out = Image::zeros(img.width, img.height, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<size_t>(k + radius)] * tmp.at(c, reflect(y + k, img.height), x);
        out.at(c, y, x) = acc;
      }
  return out;
}

Image additive_noise(const Image& img, double sigma, uint64_t seed) {
  Rng rng(derive_seed(seed, {seed_tag::distortion}));
  Image out = img;
  for (double& v : out.data) v = std::clamp(v + rng.normal(0.0, sigma), 0.0, 1.0);
  return out;
}

Image contrast_decrement(const Image& img, double severity) {
  Image out = img;
  const double k = 1.0 - severity;
  for (double& v : out.data) v = 0.5 + k * (v - 0.5);
  return out;
}

// Requantizes each 8x8 block (per channel) onto a coarse level grid of
// step 1/(levels-1), anchored at the block minimum. The coarse grid
// posterizes smooth content and the per-block anchor offsets snap
// neighbouring blocks differently, leaving visible 8x8 structure.
Image block_quantization(const Image& img, double severity) {
  constexpr int kBlock = 8;
  constexpr double kMaxLevels = 31.0;
  const int levels = static_cast<int>(std::ceil((1.0 - severity) * kMaxLevels)) + 1;
  const double step = 1.0 / (levels - 1);
  Image out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int by = 0; by < img.height; by += kBlock)
      for (int bx = 0; bx < img.width; bx += kBlock) {
        const int y1 = std::min(img.height, by + kBlock);
        const int x1 = std::min(img.width, bx + kBlock);
        double lo = 1.0;
        for (int y = by; y < y1; ++y)
          for (int x = bx; x < x1; ++x) lo = std::min(lo, img.at(c, y, x));
        for (int y = by; y < y1; ++y)
          for (int x = bx; x < x1; ++x) {
            double v = img.at(c, y, x);
            out.at(c, y, x) = std::clamp(lo + std::round((v - lo) / step) * step, 0.0, 1.0);
          }
      }
  return out;
}

}  // namespace

Image apply_distortion(const Image& img, const DistortionSpec& spec) {
  if (!(spec.severity >= 0.0 && spec.severity <= 1.0))
    fail(Errc::invalid_parameter, "severity must lie in [0,1]");
  if (spec.severity == 0.0) return img;

  switch (spec.kind) {
    case DistortionKind::gaussian_blur:
      return gaussian_blur(img, spec.severity * 4.0);
    case DistortionKind::awgn:
      return additive_noise(img, spec.severity * 0.25, spec.seed);
    case DistortionKind::contrast_decrement:
      return contrast_decrement(img, spec.severity);
    case DistortionKind::block_quantization:
      return block_quantization(img, spec.severity);
  }
  fail(Errc::invalid_parameter, "unknown distortion kind");
}

MosSample synth_mos(const DistortionSpec& spec, const OpinionModel& opinions, uint64_t seed) {
  if (!(spec.severity >= 0.0 && spec.severity <= 1.0))
    fail(Errc::invalid_parameter, "severity must lie in [0,1]");
  if (opinions.sigma < 0.0 || opinions.subjects < 1)
    fail(Errc::invalid_parameter, "opinion model needs sigma >= 0 and subjects >= 1");

  // exp(-3s) remapped so severity 0 -> 0.95 and severity 1 -> 0.05.
  const double e_lo = std::exp(-3.0);
  const double e = std::exp(-3.0 * spec.severity);
  MosSample out;
  out.true_quality = 0.05 + 0.9 * (e - e_lo) / (1.0 - e_lo);

  Rng rng(derive_seed(seed, {seed_tag::opinions}));
  double sum = 0.0, sumsq = 0.0;
  for (int s = 0; s < opinions.subjects; ++s) {
    double draw = std::clamp(rng.normal(out.true_quality, opinions.sigma), 0.0, 1.0);
    sum += draw;
    sumsq += draw * draw;
  }
  const double n = static_cast<double>(opinions.subjects);
  out.mos = sum / n;
  out.opinion_std =
      opinions.subjects > 1 ? std::sqrt(std::max(0.0, (sumsq - sum * sum / n) / (n - 1.0))) : 0.0;
  return out;
}

double level_severity(int level, int levels) {
  if (levels < 1 || level < 1 || level > levels)
    fail(Errc::invalid_parameter, "level out of range");
  if (levels == 1) return 0.5;
  return 0.2 + 0.6 * static_cast<double>(level - 1) / static_cast<double>(levels - 1);
}

DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  if (cfg.levels < 1) fail(Errc::invalid_parameter, "levels must be >= 1");
  if (cfg.kinds.empty()) fail(Errc::invalid_parameter, "at least one distortion kind required");

  std::error_code ec;
  std::filesystem::create_directories(std::filesystem::path(out_dir) / "images", ec);
  if (ec) fail(Errc::io_error, "cannot create '" + out_dir + "/images': " + ec.message());

  DatasetManifest manifest;
  manifest.seed = cfg.seed;
  manifest.source_size = cfg.source_size;
  manifest.opinions = cfg.opinions;

  uint64_t image_index = 0;
  for (int s = 0; s < cfg.n_sources; ++s) {
    char sid[32];
    std::snprintf(sid, sizeof(sid), "s%03d", s);
    manifest.source_ids.emplace_back(sid);
    Image source = generate_source(cfg.source_size, cfg.seed, s);

    for (DistortionKind kind : cfg.kinds) {
      for (int level = 1; level <= cfg.levels; ++level) {
        ImageRecord rec;
        rec.source_id = sid;
        rec.id = std::string(sid) + "_" + distortion_kind_name(kind) + "_l" + std::to_string(level);
        rec.spec.kind = kind;
        rec.spec.severity = level_severity(level, cfg.levels);
        rec.spec.seed = derive_seed(cfg.seed, {seed_tag::distortion, image_index});
        rec.split = "-";
        rec.path = "images/" + rec.id + ".ppm";

        Image distorted = apply_distortion(source, rec.spec);
        MosSample mos =
            synth_mos(rec.spec, cfg.opinions, derive_seed(cfg.seed, {seed_tag::opinions, image_index}));
        rec.true_quality = mos.true_quality;
        rec.mos = mos.mos;
        rec.opinion_std = mos.opinion_std;

        write_ppm(distorted, (std::filesystem::path(out_dir) / rec.path).string());
        manifest.images.push_back(std::move(rec));
        ++image_index;
      }
    }
  }
  validate_manifest(manifest);
  return manifest;
}

std::vector<PatchRecord> extract_patches_random(const Image& img, const std::string& image_id,
                                                RandomPatches mode, int size) {
  if (size > img.width || size > img.height)
    fail(Errc::invalid_parameter, "patch size exceeds image dimensions");
  if (mode.count < 0) fail(Errc::invalid_parameter, "patch count must be >= 0");
  Rng rng(derive_seed(mode.seed, {seed_tag::patches}));
  std::vector<PatchRecord> out;
  out.reserve(static_cast<size_t>(mode.count));
  for (int i = 0; i < mode.count; ++i) {
    PatchRecord p;
    p.image_id = image_id;
    p.x = static_cast<int>(rng.below(static_cast<uint64_t>(img.width - size + 1)));
    p.y = static_cast<int>(rng.below(static_cast<uint64_t>(img.height - size + 1)));
    p.size = size;
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

std::vector<int> grid_offsets(int extent, int size, int stride) {
  std::vector<int> offsets;
  for (int o = 0; o + size <= extent; o += stride) offsets.push_back(o);
  if (offsets.empty() || offsets.back() != extent - size) offsets.push_back(extent - size);
  return offsets;
}

}  // namespace

std::vector<PatchRecord> extract_patches_grid(const Image& img, const std::string& image_id,
                                              GridPatches mode, int size) {
  if (size > img.width || size > img.height)
    fail(Errc::invalid_parameter, "patch size exceeds image dimensions");
  if (mode.stride < 1) fail(Errc::invalid_parameter, "stride must be >= 1");
  std::vector<PatchRecord> out;
  for (int y : grid_offsets(img.height, size, mode.stride))
    for (int x : grid_offsets(img.width, size, mode.stride)) {
      PatchRecord p;
      p.image_id = image_id;
      p.x = x;
      p.y = y;
      p.size = size;
      out.push_back(std::move(p));
    }
  return out;
}

// Manifest text format, one record per line:
//   pqr-manifest v1
//   meta seed=<u64> size=<px> sigma=<f> subjects=<n>
//   anchors <anchor record>                (optional)
//   source <id>
//   image <id> <source> <kind> <severity> <seed> <ytrue> <mos> <opstd> <split> <path>
//   patch <image-id> <x> <y> <size>
void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ostringstream out;
  out << "pqr-manifest v1\n";
  out << "meta seed=" << manifest.seed << " size=" << manifest.source_size
      << " sigma=" << format_double(manifest.opinions.sigma)
      << " subjects=" << manifest.opinions.subjects << "\n";
  if (manifest.anchor_record) out << "anchors " << *manifest.anchor_record << "\n";
  for (const auto& sid : manifest.source_ids) out << "source " << sid << "\n";
  for (const auto& rec : manifest.images) {
    out << "image " << rec.id << " " << rec.source_id << " " << distortion_kind_name(rec.spec.kind)
        << " " << format_double(rec.spec.severity) << " " << rec.spec.seed << " "
        << format_double(rec.true_quality) << " " << format_double(rec.mos) << " "
        << format_double(rec.opinion_std) << " " << (rec.split.empty() ? "-" : rec.split) << " "
        << rec.path << "\n";
  }
  for (const auto& p : manifest.patches)
    out << "patch " << p.image_id << " " << p.x << " " << p.y << " " << p.size << "\n";

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) fail(Errc::io_error, "cannot open '" + tmp + "' for writing");
    f << out.str();
    if (!f) fail(Errc::io_error, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(Errc::io_error, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_error, "cannot open manifest '" + path + "'");

  DatasetManifest manifest;
  std::string line;
  if (!std::getline(in, line) || line != "pqr-manifest v1")
    fail(Errc::unsupported_format, "'" + path + "' is not a v1 manifest");

  auto parse_kv = [&](const std::string& tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos)
      fail(Errc::invalid_parameter, "malformed manifest meta field '" + tok + "'");
    return std::pair<std::string, std::string>(tok.substr(0, eq), tok.substr(eq + 1));
  };

  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "meta") {
      std::string tok;
      while (ss >> tok) {
        auto [key, value] = parse_kv(tok);
        if (key == "seed") manifest.seed = std::stoull(value);
        else if (key == "size") manifest.source_size = std::stoi(value);
        else if (key == "sigma") manifest.opinions.sigma = parse_double_field(value, "sigma");
        else if (key == "subjects") manifest.opinions.subjects = std::stoi(value);
        else fail(Errc::invalid_parameter, "unknown manifest meta key '" + key + "'");
      }
    } else if (kind == "anchors") {
      std::string rest;
      std::getline(ss, rest);
      if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
      manifest.anchor_record = rest;
    } else if (kind == "source") {
      std::string sid;
      ss >> sid;
      manifest.source_ids.push_back(sid);
    } else if (kind == "image") {
      ImageRecord rec;
      std::string kind_name, severity, seed, ytrue, mos, opstd;
      if (!(ss >> rec.id >> rec.source_id >> kind_name >> severity >> seed >> ytrue >> mos >>
            opstd >> rec.split >> rec.path))
        fail(Errc::invalid_parameter, "malformed image record: '" + line + "'");
      rec.spec.kind = parse_distortion_kind(kind_name);
      rec.spec.severity = parse_double_field(severity, "severity");
      rec.spec.seed = std::stoull(seed);
      rec.true_quality = parse_double_field(ytrue, "true quality");
      rec.mos = parse_double_field(mos, "mos");
      rec.opinion_std = parse_double_field(opstd, "opinion std");
      manifest.images.push_back(std::move(rec));
    } else if (kind == "patch") {
      PatchRecord p;
      if (!(ss >> p.image_id >> p.x >> p.y >> p.size))
        fail(Errc::invalid_parameter, "malformed patch record: '" + line + "'");
      manifest.patches.push_back(std::move(p));
    } else {
      fail(Errc::invalid_parameter, "unknown manifest record type '" + kind + "'");
    }
  }
  validate_manifest(manifest);
  return manifest;
}

void validate_manifest(const DatasetManifest& manifest) {
  std::set<std::string> sources(manifest.source_ids.begin(), manifest.source_ids.end());
  std::set<std::string> image_ids;
  std::map<std::string, std::string> source_split;
  for (const auto& rec : manifest.images) {
    if (!sources.count(rec.source_id))
      fail(Errc::invalid_parameter, "image '" + rec.id + "' references unknown source");
    if (!image_ids.insert(rec.id).second)
      fail(Errc::invalid_parameter, "duplicate image id '" + rec.id + "'");
    if (!(rec.mos >= 0.0 && rec.mos <= 1.0))
      fail(Errc::invalid_parameter, "mos outside [0,1] for image '" + rec.id + "'");
    if (rec.split != "-") {
      auto [it, fresh] = source_split.emplace(rec.source_id, rec.split);
      if (!fresh && it->second != rec.split)
        fail(Errc::invalid_parameter,
             "source '" + rec.source_id + "' appears in more than one split");
    }
  }
  for (const auto& p : manifest.patches) {
    if (!image_ids.count(p.image_id))
      fail(Errc::invalid_parameter, "patch references unknown image '" + p.image_id + "'");
  }
}

}  // namespace pqr
