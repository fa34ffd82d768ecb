#include "pqr/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "pqr/error.hpp"
#include "pqr/rng.hpp"

namespace pqr {

const char* head_kind_name(HeadKind h) { return h == HeadKind::pqr ? "pqr" : "sqr"; }

HeadKind parse_head_kind(const std::string& name) {
  if (name == "pqr") return HeadKind::pqr;
  if (name == "sqr") return HeadKind::sqr;
  fail(Errc::invalid_parameter, "unknown head kind '" + name + "'");
}

ArchConfig desk_arch(HeadKind head, int m) {
  ArchConfig arch;
  arch.head = head;
  arch.head_dim = head == HeadKind::pqr ? m : 1;
  return arch;
}

ArchConfig full_arch(HeadKind head, int m) {
  ArchConfig arch;
  arch.input_size = 64;
  arch.conv_specs = {{3, 32}, {3, 64}, {3, 128}, {3, 256}, {2, 512}};
  arch.fc_width = 512;
  arch.head = head;
  arch.head_dim = head == HeadKind::pqr ? m : 1;
  return arch;
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.shape = std::move(shape);
  size_t n = 1;
  for (int d : t.shape) n *= static_cast<size_t>(d);
  t.data.assign(n, 0.0);
  return t;
}

size_t Network::parameter_count() const {
  size_t n = 0;
  for (const auto& t : params) n += t.size();
  return n;
}

std::vector<StageDims> compute_stage_dims(const ArchConfig& arch) {
  if (arch.input_size < 1 || arch.input_channels < 1)
    fail(Errc::invalid_architecture, "input size and channels must be >= 1");
  if (arch.conv_specs.empty()) fail(Errc::invalid_architecture, "at least one conv stage required");
  if (arch.fc_width < 1) fail(Errc::invalid_architecture, "fc width must be >= 1");
  if (arch.head == HeadKind::pqr && arch.head_dim < 2)
    fail(Errc::invalid_architecture, "pqr head needs M >= 2");
  if (arch.head == HeadKind::sqr && arch.head_dim != 1)
    fail(Errc::invalid_architecture, "sqr head produces a single scalar");
  if (!(arch.dropout_rate >= 0.0 && arch.dropout_rate < 1.0))
    fail(Errc::invalid_architecture, "dropout rate must lie in [0,1)");

  std::vector<StageDims> dims;
  int h = arch.input_size, w = arch.input_size, ch = arch.input_channels;
  for (size_t s = 0; s < arch.conv_specs.size(); ++s) {
    const ConvSpec& spec = arch.conv_specs[s];
    if (spec.kernel < 1 || spec.out_channels < 1)
      fail(Errc::invalid_architecture, "conv stage " + std::to_string(s + 1) + " is malformed");
    if (spec.kernel > h || spec.kernel > w)
      fail(Errc::invalid_architecture, "conv stage " + std::to_string(s + 1) +
                                           " kernel exceeds its input map (" + std::to_string(h) +
                                           "x" + std::to_string(w) + ")");
    StageDims d;
    d.in_ch = ch;
    d.in_h = h;
    d.in_w = w;
    d.out_ch = spec.out_channels;
    d.conv_h = h - spec.kernel + 1;
    d.conv_w = w - spec.kernel + 1;
    d.pooled = d.conv_h >= 2 && d.conv_w >= 2;
    d.out_h = d.pooled ? d.conv_h / 2 : d.conv_h;
    d.out_w = d.pooled ? d.conv_w / 2 : d.conv_w;
    dims.push_back(d);
    h = d.out_h;
    w = d.out_w;
    ch = d.out_ch;
  }
  return dims;
}

Network build(const ArchConfig& arch, uint64_t seed) {
  Network net;
  net.arch = arch;
  net.rng_seed = seed;
  net.stages = compute_stage_dims(arch);
  const StageDims& last = net.stages.back();
  net.flat_features = last.out_ch * last.out_h * last.out_w;

  auto he_fill = [&](Tensor& t, int fan_in, size_t tensor_index) {
    Rng rng(derive_seed(seed, {seed_tag::init, tensor_index}));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.normal(0.0, sd);
  };

  size_t idx = 0;
  for (size_t s = 0; s < arch.conv_specs.size(); ++s) {
    const ConvSpec& spec = arch.conv_specs[s];
    const StageDims& d = net.stages[s];
    Tensor w = Tensor::zeros({spec.out_channels, d.in_ch, spec.kernel, spec.kernel});
    he_fill(w, d.in_ch * spec.kernel * spec.kernel, idx++);
    net.params.push_back(std::move(w));
    net.params.push_back(Tensor::zeros({spec.out_channels}));
    ++idx;
  }
  Tensor fc_w = Tensor::zeros({arch.fc_width, net.flat_features});
  he_fill(fc_w, net.flat_features, idx++);
  net.params.push_back(std::move(fc_w));
  net.params.push_back(Tensor::zeros({arch.fc_width}));
  ++idx;
  Tensor head_w = Tensor::zeros({arch.head_dim, arch.fc_width});
  he_fill(head_w, arch.fc_width, idx++);
  net.params.push_back(std::move(head_w));
  net.params.push_back(Tensor::zeros({arch.head_dim}));
  return net;
}

Batch Batch::zeros(int n, int channels, int height, int width) {
  Batch b;
  b.n = n;
  b.channels = channels;
  b.height = height;
  b.width = width;
  b.data.assign(static_cast<size_t>(n) * channels * height * width, 0.0);
  return b;
}

namespace {

// Column-blocked kernels: the conv column space is wide (batch * out map),
// so each B row chunk is streamed once while the C / dY chunks stay cached.
constexpr int kColBlock = 1024;

// Four independent accumulator lanes in a fixed combination order: the
// compiler can vectorize the reduction without reassociation licence, and
// the result is bit-stable run to run.
double dot_product(const double* a, const double* b, size_t n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    acc0 += a[j] * b[j];
    acc1 += a[j + 1] * b[j + 1];
    acc2 += a[j + 2] * b[j + 2];
    acc3 += a[j + 3] * b[j + 3];
  }
  double tail = 0.0;
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc0 + acc2) + (acc1 + acc3)) + tail;
}

double lane_sum(const double* a, size_t n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    acc0 += a[j];
    acc1 += a[j + 1];
    acc2 += a[j + 2];
    acc3 += a[j + 3];
  }
  double tail = 0.0;
  for (; j < n; ++j) tail += a[j];
  return ((acc0 + acc2) + (acc1 + acc3)) + tail;
}

// C[m x n] += A[m x k] * B[k x n]; C must be zeroed by the caller.
void gemm_accumulate(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int j0 = 0; j0 < n; j0 += kColBlock) {
    const int jn = std::min(n - j0, kColBlock);
    for (int kk = 0; kk < k; ++kk) {
      const double* brow = b + static_cast<size_t>(kk) * n + j0;
      for (int i = 0; i < m; ++i) {
        const double av = a[static_cast<size_t>(i) * k + kk];
        if (av == 0.0) continue;
        double* crow = c + static_cast<size_t>(i) * n + j0;
        for (int j = 0; j < jn; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// dW[m x k] += dY[m x n] * B^T[n x k]
void gemm_dw_accumulate(const double* dy, const double* b, double* dw, int m, int k, int n) {
  for (int j0 = 0; j0 < n; j0 += kColBlock) {
    const size_t jn = static_cast<size_t>(std::min(n - j0, kColBlock));
    for (int kk = 0; kk < k; ++kk) {
      const double* brow = b + static_cast<size_t>(kk) * n + j0;
      for (int i = 0; i < m; ++i) {
        const double* dyrow = dy + static_cast<size_t>(i) * n + j0;
        dw[static_cast<size_t>(i) * k + kk] += dot_product(dyrow, brow, jn);
      }
    }
  }
}

// dX[k x n] += A^T[k x m] * dY[m x n]
void gemm_dx_accumulate(const double* a, const double* dy, double* dx, int m, int k, int n) {
  for (int j0 = 0; j0 < n; j0 += kColBlock) {
    const int jn = std::min(n - j0, kColBlock);
    for (int i = 0; i < m; ++i) {
      const double* dyrow = dy + static_cast<size_t>(i) * n + j0;
      for (int kk = 0; kk < k; ++kk) {
        const double av = a[static_cast<size_t>(i) * k + kk];
        if (av == 0.0) continue;
        double* dxrow = dx + static_cast<size_t>(kk) * n + j0;
        for (int j = 0; j < jn; ++j) dxrow[j] += av * dyrow[j];
      }
    }
  }
}

struct StageCache {
  std::vector<double> conv_out;  // [oc][(p*conv_h + y)*conv_w + x]
  std::vector<double> act;       // post-pool post-relu, [oc][(p*out_h + y)*out_w + x]
  std::vector<int> argmax;       // flat index into conv_out, only when pooled
  std::vector<double> im2col;    // [K][(p*conv_h + y)*conv_w + x] of the stage input
};

struct ForwardCache {
  std::vector<double> input_cm;  // channel-major copy of the batch
  std::vector<StageCache> stages;
  std::vector<double> flat;          // [p][features]
  std::vector<double> fc_act;        // post-relu [p][fc_width]
  std::vector<double> fc_dropped;    // after dropout (aliases fc_act values when inactive)
  std::vector<double> dropout_mask;  // empty when dropout inactive
  std::vector<double> head_out;      // logits / scalar, [p][head_dim]
  std::vector<double> probs;         // softmax output (pqr only)
};

// A plain sum propagates every NaN/Inf (inf-inf -> NaN), so one reduction
// detects any non-finite element.
void check_finite(const std::vector<double>& v, const char* layer) {
  if (!std::isfinite(lane_sum(v.data(), v.size())))
    fail(Errc::numerical_failure, std::string("non-finite activation in layer ") + layer);
}

void build_im2col(const std::vector<double>& act, int in_ch, int in_h, int in_w, int kernel,
                  int conv_h, int conv_w, int n, std::vector<double>& cols) {
  const size_t col_width = static_cast<size_t>(n) * conv_h * conv_w;
  cols.assign(static_cast<size_t>(in_ch) * kernel * kernel * col_width, 0.0);
  for (int ic = 0; ic < in_ch; ++ic)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const size_t r = (static_cast<size_t>(ic) * kernel + ky) * kernel + kx;
        double* dst_row = cols.data() + r * col_width;
        for (int p = 0; p < n; ++p)
          for (int oy = 0; oy < conv_h; ++oy) {
            const double* src =
                act.data() + (static_cast<size_t>(ic) * n * in_h + static_cast<size_t>(p) * in_h +
                              oy + ky) * in_w + kx;
            double* dst = dst_row + (static_cast<size_t>(p) * conv_h + oy) * conv_w;
            std::copy(src, src + conv_w, dst);
          }
      }
}

// Scatter-add of a column-space gradient back onto the stage input.
void col2im_accumulate(const std::vector<double>& cols, int in_ch, int in_h, int in_w, int kernel,
                       int conv_h, int conv_w, int n, std::vector<double>& d_act) {
  const size_t col_width = static_cast<size_t>(n) * conv_h * conv_w;
  for (int ic = 0; ic < in_ch; ++ic)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const size_t r = (static_cast<size_t>(ic) * kernel + ky) * kernel + kx;
        const double* src_row = cols.data() + r * col_width;
        for (int p = 0; p < n; ++p)
          for (int oy = 0; oy < conv_h; ++oy) {
            double* dst =
                d_act.data() + (static_cast<size_t>(ic) * n * in_h + static_cast<size_t>(p) * in_h +
                                oy + ky) * in_w + kx;
            const double* src = src_row + (static_cast<size_t>(p) * conv_h + oy) * conv_w;
            for (int ox = 0; ox < conv_w; ++ox) dst[ox] += src[ox];
          }
      }
}

void validate_batch(const Network& net, const Batch& batch) {
  if (batch.n < 1) fail(Errc::invalid_input, "empty batch");
  if (batch.channels != net.arch.input_channels || batch.height != net.arch.input_size ||
      batch.width != net.arch.input_size)
    fail(Errc::invalid_input, "batch dimensions do not match the architecture");
}

// Shared by prediction and training; `checked` enables the per-layer
// finite scans used on the training path.
void run_forward(const Network& net, const Batch& batch, RunMode mode,
                 std::optional<uint64_t> dropout_seed, ForwardCache& cache, bool checked) {
  validate_batch(net, batch);
  const int n = batch.n;

  // Channel-major copy, input_cm[c][(p*h + y)*w + x], centered so pixel
  // values straddle zero.
  const int ih = batch.height, iw = batch.width, ic = batch.channels;
  cache.input_cm.assign(static_cast<size_t>(ic) * n * ih * iw, 0.0);
  for (int p = 0; p < n; ++p)
    for (int c = 0; c < ic; ++c) {
      const double* src = batch.data.data() + ((static_cast<size_t>(p) * ic + c) * ih) * iw;
      double* dst = cache.input_cm.data() + (static_cast<size_t>(c) * n + p) * ih * iw;
      for (size_t i = 0; i < static_cast<size_t>(ih) * iw; ++i) dst[i] = src[i] - 0.5;
    }

  cache.stages.assign(net.stages.size(), {});
  const std::vector<double>* prev_act = &cache.input_cm;
  for (size_t s = 0; s < net.stages.size(); ++s) {
    const StageDims& d = net.stages[s];
    StageCache& sc = cache.stages[s];
    const Tensor& w = net.params[2 * s];
    const Tensor& b = net.params[2 * s + 1];
    const int kernel = net.arch.conv_specs[s].kernel;
    const int k_rows = d.in_ch * kernel * kernel;
    const size_t cols = static_cast<size_t>(n) * d.conv_h * d.conv_w;

    build_im2col(*prev_act, d.in_ch, d.in_h, d.in_w, kernel, d.conv_h, d.conv_w, n, sc.im2col);
    sc.conv_out.assign(static_cast<size_t>(d.out_ch) * cols, 0.0);
    gemm_accumulate(w.data.data(), sc.im2col.data(), sc.conv_out.data(), d.out_ch, k_rows,
                    static_cast<int>(cols));
    for (int oc = 0; oc < d.out_ch; ++oc) {
      double* row = sc.conv_out.data() + static_cast<size_t>(oc) * cols;
      const double bias = b.data[static_cast<size_t>(oc)];
      for (size_t j = 0; j < cols; ++j) row[j] += bias;
    }
    if (checked) check_finite(sc.conv_out, ("conv" + std::to_string(s + 1)).c_str());

    const size_t out_cols = static_cast<size_t>(n) * d.out_h * d.out_w;
    sc.act.assign(static_cast<size_t>(d.out_ch) * out_cols, 0.0);
    if (d.pooled) {
      sc.argmax.assign(sc.act.size(), 0);
      for (int oc = 0; oc < d.out_ch; ++oc)
        for (int p = 0; p < n; ++p)
          for (int py = 0; py < d.out_h; ++py)
            for (int px = 0; px < d.out_w; ++px) {
              double best = -std::numeric_limits<double>::infinity();
              int best_idx = 0;
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const int cy = 2 * py + dy, cx = 2 * px + dx;
                  const int idx = static_cast<int>(
                      (static_cast<size_t>(oc) * n + p) * d.conv_h * d.conv_w +
                      static_cast<size_t>(cy) * d.conv_w + cx);
                  const double v = sc.conv_out[static_cast<size_t>(idx)];
                  if (v > best) {  // first maximum wins on ties
                    best = v;
                    best_idx = idx;
                  }
                }
              const size_t out_idx = (static_cast<size_t>(oc) * n + p) * d.out_h * d.out_w +
                                     static_cast<size_t>(py) * d.out_w + px;
              sc.act[out_idx] = std::max(best, 0.0);  // ReLU
              sc.argmax[out_idx] = best_idx;
            }
    } else {
      for (size_t i = 0; i < sc.act.size(); ++i) sc.act[i] = std::max(sc.conv_out[i], 0.0);
    }
    prev_act = &sc.act;
  }

  // Flatten to patch-major feature rows.
  const StageDims& last = net.stages.back();
  const int feat = net.flat_features;
  cache.flat.assign(static_cast<size_t>(n) * feat, 0.0);
  for (int p = 0; p < n; ++p)
    for (int c = 0; c < last.out_ch; ++c)
      for (int y = 0; y < last.out_h; ++y)
        for (int x = 0; x < last.out_w; ++x)
          cache.flat[static_cast<size_t>(p) * feat + (static_cast<size_t>(c) * last.out_h + y) * last.out_w + x] =
              cache.stages.back().act[(static_cast<size_t>(c) * n + p) * last.out_h * last.out_w +
                                      static_cast<size_t>(y) * last.out_w + x];

  // FC + ReLU.
  const Tensor& fc_w = net.params[2 * net.stages.size()];
  const Tensor& fc_b = net.params[2 * net.stages.size() + 1];
  const int fc = net.arch.fc_width;
  cache.fc_act.assign(static_cast<size_t>(n) * fc, 0.0);
  for (int p = 0; p < n; ++p) {
    const double* x = cache.flat.data() + static_cast<size_t>(p) * feat;
    double* z = cache.fc_act.data() + static_cast<size_t>(p) * fc;
    for (int j = 0; j < fc; ++j) {
      const double* wrow = fc_w.data.data() + static_cast<size_t>(j) * feat;
      z[j] = std::max(fc_b.data[static_cast<size_t>(j)] +
                          dot_product(wrow, x, static_cast<size_t>(feat)), 0.0);
    }
  }
  if (checked) check_finite(cache.fc_act, "fc");

  // Inverted dropout before the head layer.
  const bool drop = mode == RunMode::train && dropout_seed.has_value() &&
                    net.arch.dropout_rate > 0.0;
  if (drop) {
    const double rate = net.arch.dropout_rate;
    const double scale = 1.0 / (1.0 - rate);
    Rng rng(derive_seed(*dropout_seed, {seed_tag::dropout}));
    cache.dropout_mask.assign(cache.fc_act.size(), 0.0);
    cache.fc_dropped.assign(cache.fc_act.size(), 0.0);
    for (size_t i = 0; i < cache.fc_act.size(); ++i) {
      if (rng.uniform() >= rate) {
        cache.dropout_mask[i] = scale;
        cache.fc_dropped[i] = cache.fc_act[i] * scale;
      }
    }
  } else {
    cache.dropout_mask.clear();
    cache.fc_dropped = cache.fc_act;
  }

  // Head layer.
  const Tensor& head_w = net.params[2 * net.stages.size() + 2];
  const Tensor& head_b = net.params[2 * net.stages.size() + 3];
  const int hd = net.arch.head_dim;
  cache.head_out.assign(static_cast<size_t>(n) * hd, 0.0);
  for (int p = 0; p < n; ++p) {
    const double* x = cache.fc_dropped.data() + static_cast<size_t>(p) * fc;
    double* z = cache.head_out.data() + static_cast<size_t>(p) * hd;
    for (int j = 0; j < hd; ++j) {
      const double* wrow = head_w.data.data() + static_cast<size_t>(j) * fc;
      z[j] = head_b.data[static_cast<size_t>(j)] + dot_product(wrow, x, static_cast<size_t>(fc));
    }
  }
  if (checked) check_finite(cache.head_out, "head");

  if (net.arch.head == HeadKind::pqr) {
    cache.probs.assign(cache.head_out.size(), 0.0);
    for (int p = 0; p < n; ++p) {
      const double* z = cache.head_out.data() + static_cast<size_t>(p) * hd;
      double* q = cache.probs.data() + static_cast<size_t>(p) * hd;
      double mx = z[0];
      for (int j = 1; j < hd; ++j) mx = std::max(mx, z[j]);
      double sum = 0.0;
      for (int j = 0; j < hd; ++j) {
        q[j] = std::exp(z[j] - mx);
        sum += q[j];
      }
      for (int j = 0; j < hd; ++j) q[j] /= sum;
    }
  }
}

}  // namespace

std::vector<Prediction> forward(const Network& net, const Batch& batch, RunMode mode,
                                std::optional<uint64_t> dropout_seed) {
  thread_local ForwardCache cache;
  run_forward(net, batch, mode, dropout_seed, cache, false);
  const int hd = net.arch.head_dim;
  std::vector<Prediction> out(static_cast<size_t>(batch.n));
  const std::vector<double>& src = net.arch.head == HeadKind::pqr ? cache.probs : cache.head_out;
  for (int p = 0; p < batch.n; ++p)
    out[static_cast<size_t>(p)] =
        Prediction(src.begin() + static_cast<size_t>(p) * hd, src.begin() + static_cast<size_t>(p + 1) * hd);
  return out;
}

LossResult loss_and_grad(const Network& net, const Batch& batch,
                         const std::vector<std::vector<double>>& targets,
                         std::optional<uint64_t> dropout_seed) {
  validate_batch(net, batch);
  const int n = batch.n;
  const int hd = net.arch.head_dim;
  if (static_cast<int>(targets.size()) != n)
    fail(Errc::invalid_input, "target count does not match the batch");
  for (const auto& t : targets) {
    if (static_cast<int>(t.size()) != hd)
      fail(Errc::invalid_input, "target dimension does not match the head");
  }

  thread_local ForwardCache cache;
  run_forward(net, batch, RunMode::train, dropout_seed, cache, true);

  LossResult result;
  result.grads.reserve(net.params.size());
  for (const auto& t : net.params) result.grads.push_back(Tensor::zeros(t.shape));

  // Head-layer gradient; for the softmax head dL/dz = (probs - target)/n.
  thread_local std::vector<double> d_head;
  d_head.assign(static_cast<size_t>(n) * hd, 0.0);
  double loss = 0.0;
  if (net.arch.head == HeadKind::pqr) {
    for (int p = 0; p < n; ++p) {
      const double* z = cache.head_out.data() + static_cast<size_t>(p) * hd;
      const double* q = cache.probs.data() + static_cast<size_t>(p) * hd;
      const auto& tgt = targets[static_cast<size_t>(p)];
      double mx = z[0];
      for (int j = 1; j < hd; ++j) mx = std::max(mx, z[j]);
      double lse = 0.0;
      for (int j = 0; j < hd; ++j) lse += std::exp(z[j] - mx);
      lse = mx + std::log(lse);
      double ce = 0.0;
      for (int j = 0; j < hd; ++j) ce += tgt[static_cast<size_t>(j)] * (lse - z[j]);
      loss += ce;
      double* g = d_head.data() + static_cast<size_t>(p) * hd;
      for (int j = 0; j < hd; ++j) g[j] = (q[j] - tgt[static_cast<size_t>(j)]) / n;
    }
  } else {
    for (int p = 0; p < n; ++p) {
      const double pred = cache.head_out[static_cast<size_t>(p)];
      const double err = pred - targets[static_cast<size_t>(p)][0];
      loss += err * err;
      d_head[static_cast<size_t>(p)] = 2.0 * err / n;
    }
  }
  result.loss = loss / n;
  if (!std::isfinite(result.loss)) fail(Errc::numerical_failure, "non-finite loss");

  const size_t n_stages = net.stages.size();
  const int fc = net.arch.fc_width;
  const int feat = net.flat_features;
  const Tensor& head_w = net.params[2 * n_stages + 2];
  Tensor& d_head_w = result.grads[2 * n_stages + 2];
  Tensor& d_head_b = result.grads[2 * n_stages + 3];

  // Head FC backward.
  thread_local std::vector<double> d_fc_dropped;
  d_fc_dropped.assign(static_cast<size_t>(n) * fc, 0.0);
  for (int p = 0; p < n; ++p) {
    const double* x = cache.fc_dropped.data() + static_cast<size_t>(p) * fc;
    const double* dz = d_head.data() + static_cast<size_t>(p) * hd;
    double* dx = d_fc_dropped.data() + static_cast<size_t>(p) * fc;
    for (int j = 0; j < hd; ++j) {
      const double g = dz[j];
      d_head_b.data[static_cast<size_t>(j)] += g;
      double* dwrow = d_head_w.data.data() + static_cast<size_t>(j) * fc;
      const double* wrow = head_w.data.data() + static_cast<size_t>(j) * fc;
      for (int f = 0; f < fc; ++f) {
        dwrow[f] += g * x[f];
        dx[f] += g * wrow[f];
      }
    }
  }

  // Dropout and FC ReLU backward.
  std::vector<double>& d_fc_act = d_fc_dropped;
  if (!cache.dropout_mask.empty()) {
    for (size_t i = 0; i < d_fc_act.size(); ++i) d_fc_act[i] *= cache.dropout_mask[i];
  }
  for (size_t i = 0; i < d_fc_act.size(); ++i) {
    if (cache.fc_act[i] <= 0.0) d_fc_act[i] = 0.0;
  }

  // First FC backward.
  const Tensor& fc_w = net.params[2 * n_stages];
  Tensor& d_fc_w = result.grads[2 * n_stages];
  Tensor& d_fc_b = result.grads[2 * n_stages + 1];
  thread_local std::vector<double> d_flat;
  d_flat.assign(static_cast<size_t>(n) * feat, 0.0);
  for (int p = 0; p < n; ++p) {
    const double* x = cache.flat.data() + static_cast<size_t>(p) * feat;
    const double* dz = d_fc_act.data() + static_cast<size_t>(p) * fc;
    double* dx = d_flat.data() + static_cast<size_t>(p) * feat;
    for (int j = 0; j < fc; ++j) {
      const double g = dz[j];
      if (g == 0.0) continue;
      d_fc_b.data[static_cast<size_t>(j)] += g;
      double* dwrow = d_fc_w.data.data() + static_cast<size_t>(j) * feat;
      const double* wrow = fc_w.data.data() + static_cast<size_t>(j) * feat;
      for (int f = 0; f < feat; ++f) {
        dwrow[f] += g * x[f];
        dx[f] += g * wrow[f];
      }
    }
  }

  // Unflatten back to the channel-major stage layout.
  const StageDims& last = net.stages.back();
  thread_local std::vector<double> d_act;
  d_act.assign(static_cast<size_t>(last.out_ch) * n * last.out_h * last.out_w, 0.0);
  for (int p = 0; p < n; ++p)
    for (int c = 0; c < last.out_ch; ++c)
      for (int y = 0; y < last.out_h; ++y)
        for (int x = 0; x < last.out_w; ++x)
          d_act[(static_cast<size_t>(c) * n + p) * last.out_h * last.out_w +
                static_cast<size_t>(y) * last.out_w + x] =
              d_flat[static_cast<size_t>(p) * feat +
                     (static_cast<size_t>(c) * last.out_h + y) * last.out_w + x];

  // Conv stages, deepest first.
  thread_local std::vector<double> d_conv, d_cols;
  for (size_t s = n_stages; s-- > 0;) {
    const StageDims& d = net.stages[s];
    const StageCache& sc = cache.stages[s];
    const int kernel = net.arch.conv_specs[s].kernel;
    const int k_rows = d.in_ch * kernel * kernel;
    const size_t cols = static_cast<size_t>(n) * d.conv_h * d.conv_w;
    const size_t out_cols = static_cast<size_t>(n) * d.out_h * d.out_w;

    // ReLU mask, then route gradients through the pooling argmax.
    d_conv.assign(static_cast<size_t>(d.out_ch) * cols, 0.0);
    for (size_t i = 0; i < static_cast<size_t>(d.out_ch) * out_cols; ++i) {
      if (sc.act[i] <= 0.0) continue;
      const double g = d_act[i];
      if (d.pooled)
        d_conv[static_cast<size_t>(sc.argmax[i])] += g;
      else
        d_conv[i] += g;
    }

    const Tensor& w = net.params[2 * s];
    Tensor& d_w = result.grads[2 * s];
    Tensor& d_b = result.grads[2 * s + 1];

    for (int oc = 0; oc < d.out_ch; ++oc)
      d_b.data[static_cast<size_t>(oc)] +=
          lane_sum(d_conv.data() + static_cast<size_t>(oc) * cols, cols);
    gemm_dw_accumulate(d_conv.data(), sc.im2col.data(), d_w.data.data(), d.out_ch, k_rows,
                       static_cast<int>(cols));

    if (s == 0) continue;  // input gradient is not needed

    // dX_col = W^T * dY, then scatter back onto the previous activation.
    d_cols.assign(static_cast<size_t>(k_rows) * cols, 0.0);
    gemm_dx_accumulate(w.data.data(), d_conv.data(), d_cols.data(), d.out_ch, k_rows,
                       static_cast<int>(cols));
    d_act.assign(static_cast<size_t>(d.in_ch) * n * d.in_h * d.in_w, 0.0);
    col2im_accumulate(d_cols, d.in_ch, d.in_h, d.in_w, kernel, d.conv_h, d.conv_w, n, d_act);
  }

  return result;
}

OptimizerState make_optimizer_state(const Network& net) {
  OptimizerState state;
  state.velocity.reserve(net.params.size());
  for (const auto& t : net.params) state.velocity.push_back(Tensor::zeros(t.shape));
  return state;
}

void sgd_step(Network& net, const std::vector<Tensor>& grads, OptimizerState& state, double lr,
              const SgdConfig& sgd) {
  if (grads.size() != net.params.size() || state.velocity.size() != net.params.size())
    fail(Errc::invalid_parameter, "gradient/state shape does not match the network");
  if (!std::isfinite(lr)) fail(Errc::numerical_failure, "non-finite learning rate");
  for (size_t t = 0; t < net.params.size(); ++t) {
    Tensor& w = net.params[t];
    const Tensor& g = grads[t];
    Tensor& v = state.velocity[t];
    if (g.size() != w.size())
      fail(Errc::invalid_parameter, "gradient tensor " + std::to_string(t) + " has a wrong shape");
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = g.data[i];
      if (!std::isfinite(gi))
        fail(Errc::numerical_failure, "non-finite gradient in tensor " + std::to_string(t));
      v.data[i] = sgd.momentum * v.data[i] - lr * (gi + sgd.weight_decay * w.data[i]);
      w.data[i] += v.data[i];
    }
  }
}

double epoch_learning_rate(const TrainConfig& cfg, int epoch_index) {
  if (cfg.epochs == 1 || cfg.lr_start == cfg.lr_end) return cfg.lr_start;
  const double t = static_cast<double>(epoch_index) / static_cast<double>(cfg.epochs - 1);
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, t);
}

std::vector<EpochStats> train(Network& net, const PatchSet& data, const TrainConfig& cfg,
                              const EpochCallback& callback) {
  const int n = data.patches.n;
  if (n < 1) fail(Errc::invalid_parameter, "training set is empty");
  if (static_cast<int>(data.targets.size()) != n)
    fail(Errc::invalid_parameter, "target count does not match the patch count");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    fail(Errc::invalid_parameter, "epochs and batch size must be >= 1");
  if (cfg.lr_start < cfg.lr_end || cfg.lr_end < 0.0)
    fail(Errc::invalid_parameter, "learning rates must satisfy lr_start >= lr_end >= 0");
  if (cfg.lr_start != cfg.lr_end && cfg.lr_end == 0.0)
    fail(Errc::invalid_parameter, "log-spaced schedule needs lr_end > 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
    fail(Errc::invalid_parameter, "momentum must lie in [0,1)");
  if (cfg.weight_decay < 0.0) fail(Errc::invalid_parameter, "weight decay must be >= 0");

  OptimizerState state = make_optimizer_state(net);
  SgdConfig sgd{cfg.momentum, cfg.weight_decay};
  const int c = data.patches.channels, h = data.patches.height, w = data.patches.width;
  const size_t patch_len = static_cast<size_t>(c) * h * w;

  std::vector<EpochStats> trace;
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch_learning_rate(cfg, epoch);
    Rng shuffle_rng(derive_seed(cfg.seed, {seed_tag::shuffle, static_cast<uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batch_index = 0;
    for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const int bs = std::min(cfg.batch_size, n - start);
      Batch sub = Batch::zeros(bs, c, h, w);
      std::vector<std::vector<double>> sub_targets(static_cast<size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        const int src = order[static_cast<size_t>(start + i)];
        std::copy(data.patches.data.begin() + static_cast<size_t>(src) * patch_len,
                  data.patches.data.begin() + static_cast<size_t>(src + 1) * patch_len,
                  sub.data.begin() + static_cast<size_t>(i) * patch_len);
        sub_targets[static_cast<size_t>(i)] = data.targets[static_cast<size_t>(src)];
      }
      std::optional<uint64_t> dropout_seed;
      if (net.arch.dropout_rate > 0.0)
        dropout_seed = derive_seed(cfg.seed, {seed_tag::dropout, static_cast<uint64_t>(epoch),
                                              static_cast<uint64_t>(batch_index)});
      try {
        LossResult res = loss_and_grad(net, sub, sub_targets, dropout_seed);
        sgd_step(net, res.grads, state, lr, sgd);
        loss_sum += res.loss * bs;
      } catch (const Error& e) {
        if (e.code() == Errc::numerical_failure)
          fail(Errc::numerical_failure, "epoch " + std::to_string(epoch + 1) + " batch " +
                                            std::to_string(batch_index + 1) + ": " + e.what());
        throw;
      }
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.mean_loss = loss_sum / n;
    trace.push_back(stats);
    if (callback) callback(net, stats);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Checkpoint container (little-endian binary).

namespace {

constexpr char kMagic[8] = {'P', 'Q', 'R', 'N', 'E', 'T', '1', '\n'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}
void put_u8(std::string& out, uint8_t v) { put_bytes(out, &v, 1); }
void put_u32(std::string& out, uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::string& out, uint64_t v) { put_bytes(out, &v, 8); }
void put_f64(std::string& out, double v) { put_bytes(out, &v, 8); }
void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const char* p;
  const char* end;

  void read(void* dst, size_t n) {
    if (static_cast<size_t>(end - p) < n)
      fail(Errc::corrupt_checkpoint, "truncated checkpoint file");
    std::memcpy(dst, p, n);
    p += n;
  }
  uint8_t u8() { uint8_t v; read(&v, 1); return v; }
  uint32_t u32() { uint32_t v; read(&v, 4); return v; }
  uint64_t u64() { uint64_t v; read(&v, 8); return v; }
  double f64() { double v; read(&v, 8); return v; }
  std::string str() {
    uint32_t n = u32();
    if (static_cast<size_t>(end - p) < n)
      fail(Errc::corrupt_checkpoint, "truncated checkpoint string");
    std::string s(p, n);
    p += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Network& net, const ReverseMapper* mapper, const AnchorSet* anchors,
                     const std::string& path) {
  std::string out;
  put_bytes(out, kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u8(out, net.arch.head == HeadKind::pqr ? 1 : 0);
  put_u32(out, static_cast<uint32_t>(net.arch.head_dim));
  put_u32(out, static_cast<uint32_t>(net.arch.input_size));
  put_u32(out, static_cast<uint32_t>(net.arch.input_channels));
  put_u32(out, static_cast<uint32_t>(net.arch.conv_specs.size()));
  for (const auto& spec : net.arch.conv_specs) {
    put_u32(out, static_cast<uint32_t>(spec.kernel));
    put_u32(out, static_cast<uint32_t>(spec.out_channels));
  }
  put_u32(out, static_cast<uint32_t>(net.arch.fc_width));
  put_f64(out, net.arch.dropout_rate);
  put_u64(out, net.rng_seed);

  put_u8(out, anchors ? 1 : 0);
  if (anchors) put_string(out, anchor_record(*anchors));
  put_u8(out, mapper ? 1 : 0);
  if (mapper) put_string(out, mapper_record(*mapper));

  put_u32(out, static_cast<uint32_t>(net.params.size()));
  for (const auto& t : net.params) {
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    put_u64(out, static_cast<uint64_t>(t.size()));
    put_bytes(out, t.data.data(), t.size() * sizeof(double));
  }

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) fail(Errc::io_error, "cannot open '" + tmp + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) fail(Errc::io_error, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(Errc::io_error, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::io_error, "cannot open checkpoint '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{blob.data(), blob.data() + blob.size()};

  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(Errc::unsupported_format, "'" + path + "' is not a pqr checkpoint");
  if (r.u32() != kVersion)
    fail(Errc::unsupported_format, "unsupported checkpoint version in '" + path + "'");

  ArchConfig arch;
  arch.head = r.u8() ? HeadKind::pqr : HeadKind::sqr;
  arch.head_dim = static_cast<int>(r.u32());
  arch.input_size = static_cast<int>(r.u32());
  arch.input_channels = static_cast<int>(r.u32());
  const uint32_t n_stages = r.u32();
  arch.conv_specs.clear();
  for (uint32_t s = 0; s < n_stages; ++s) {
    ConvSpec spec;
    spec.kernel = static_cast<int>(r.u32());
    spec.out_channels = static_cast<int>(r.u32());
    arch.conv_specs.push_back(spec);
  }
  arch.fc_width = static_cast<int>(r.u32());
  arch.dropout_rate = r.f64();
  const uint64_t rng_seed = r.u64();

  Checkpoint ckpt;
  if (r.u8()) ckpt.anchors = parse_anchor_record(r.str());
  if (r.u8()) ckpt.mapper = parse_mapper_record(r.str());

  Network net = build(arch, rng_seed);
  const uint32_t n_tensors = r.u32();
  if (n_tensors != net.params.size())
    fail(Errc::corrupt_checkpoint, "checkpoint tensor count does not match its architecture");
  for (uint32_t t = 0; t < n_tensors; ++t) {
    const uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(r.u32());
    const uint64_t count = r.u64();
    Tensor& dst = net.params[t];
    if (shape != dst.shape || count != dst.size())
      fail(Errc::corrupt_checkpoint, "checkpoint tensor " + std::to_string(t) + " has a wrong shape");
    r.read(dst.data.data(), count * sizeof(double));
  }
  ckpt.net = std::move(net);
  return ckpt;
}

}  // namespace pqr
