#include "pqr/config_file.hpp"

#include <charconv>
#include <sstream>

#include "pqr/error.hpp"
#include "pqr/io_util.hpp"

namespace pqr {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    fail(Errc::invalid_parameter, "config key '" + key + "' has a bad number: '" + s + "'");
  return v;
}

int to_int(const std::string& s, const std::string& key) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    fail(Errc::invalid_parameter, "config key '" + key + "' has a bad integer: '" + s + "'");
  return v;
}

uint64_t to_u64(const std::string& s, const std::string& key) {
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    fail(Errc::invalid_parameter, "config key '" + key + "' has a bad integer: '" + s + "'");
  return v;
}

std::vector<double> to_double_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item), key));
  return out;
}

DistanceKind parse_distance(const std::string& s) {
  if (s == "squared" || s == "squared_euclidean") return DistanceKind::squared_euclidean;
  if (s == "l1") return DistanceKind::l1;
  fail(Errc::invalid_parameter, "unknown distance '" + s + "' (expected squared or l1)");
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        fail(Errc::invalid_parameter, origin + ":" + std::to_string(line_no) + ": malformed section");
      section = line.substr(1, line.size() - 2);
      if (section != "dataset" && section != "arch" && section != "train" &&
          section != "encoder" && section != "eval")
        fail(Errc::invalid_parameter,
             origin + ":" + std::to_string(line_no) + ": unknown section [" + section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(Errc::invalid_parameter, origin + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    const std::string where = origin + ":" + std::to_string(line_no);

    if (section == "dataset") {
      if (key == "manifest") rc.manifest = value;
      else fail(Errc::invalid_parameter, where + ": unknown key '" + key + "' in [dataset]");
    } else if (section == "arch") {
      if (key == "preset") {
        if (value != "desk" && value != "full")
          fail(Errc::invalid_parameter, where + ": preset must be desk or full");
        rc.arch_preset = value;
      } else if (key == "dropout") {
        rc.dropout = to_double(value, key);
      } else {
        fail(Errc::invalid_parameter, where + ": unknown key '" + key + "' in [arch]");
      }
    } else if (section == "train") {
      if (key == "epochs") rc.epochs = to_int(value, key);
      else if (key == "batch") rc.batch = to_int(value, key);
      else if (key == "lr_start") rc.lr_start = to_double(value, key);
      else if (key == "lr_end") rc.lr_end = to_double(value, key);
      else if (key == "momentum") rc.momentum = to_double(value, key);
      else if (key == "weight_decay") rc.weight_decay = to_double(value, key);
      else if (key == "patches_per_image") rc.patches_per_image = to_int(value, key);
      else fail(Errc::invalid_parameter, where + ": unknown key '" + key + "' in [train]");
    } else if (section == "encoder") {
      if (key == "beta") rc.beta = to_double(value, key);
      else if (key == "m") rc.m = to_int(value, key);
      else if (key == "method") rc.anchor_method = parse_anchor_method(value);
      else if (key == "distance") rc.distance = parse_distance(value);
      else fail(Errc::invalid_parameter, where + ": unknown key '" + key + "' in [encoder]");
    } else if (section == "eval") {
      if (key == "fractions") rc.fractions = to_double_list(value, key);
      else if (key == "repetitions") rc.repetitions = to_int(value, key);
      else if (key == "stride") rc.stride = to_int(value, key);
      else if (key == "seed") rc.seed = to_u64(value, key);
      else if (key == "threads") rc.threads = to_int(value, key);
      else fail(Errc::invalid_parameter, where + ": unknown key '" + key + "' in [eval]");
    } else {
      fail(Errc::invalid_parameter, where + ": key '" + key + "' outside any section");
    }
  }
  if (rc.manifest.empty())
    fail(Errc::invalid_parameter, origin + ": [dataset] manifest is required");
  return rc;
}

RunConfig parse_run_config(const std::string& path) {
  return parse_run_config_text(read_text_file(path), path);
}

ExperimentConfig to_experiment_config(const RunConfig& rc, HeadKind head) {
  ExperimentConfig cfg;
  cfg.manifest_path = rc.manifest;
  cfg.head = head;
  cfg.beta = rc.beta;
  cfg.m = rc.m;
  cfg.anchor_method = rc.anchor_method;
  cfg.distance = rc.distance;
  cfg.arch = rc.arch_preset == "full" ? full_arch(head, rc.m) : desk_arch(head, rc.m);
  cfg.arch.dropout_rate = rc.dropout;
  cfg.train.epochs = rc.epochs;
  cfg.train.batch_size = rc.batch;
  cfg.train.lr_start = rc.lr_start;
  cfg.train.lr_end = rc.lr_end;
  cfg.train.momentum = rc.momentum;
  cfg.train.weight_decay = rc.weight_decay;
  cfg.fractions = rc.fractions;
  cfg.repetitions = rc.repetitions;
  cfg.test_stride = rc.stride;
  cfg.patches_per_image = rc.patches_per_image;
  cfg.seed = rc.seed;
  cfg.threads = rc.threads;
  return cfg;
}

}  // namespace pqr
