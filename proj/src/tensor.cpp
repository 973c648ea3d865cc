#include "sizerec/tensor.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstring>
#include <unordered_set>

extern "C" void openblas_set_num_threads(int);

namespace sizerec::nn {

namespace {

thread_local bool t_grad_enabled = true;

size_t shape_product(const std::vector<size_t>& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

// Creates a result tensor; records the tape entry only when grad mode is on
// and at least one parent participates in differentiation.
Tensor make_node(std::vector<size_t> shape, std::vector<double> value,
                 std::vector<TensorImplPtr> parents,
                 std::function<void(TensorImpl&)> bw) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(value);
  if (t_grad_enabled) {
    bool any = false;
    for (const auto& p : parents)
      if (p->requires_grad) { any = true; break; }
    if (any) {
      impl->requires_grad = true;
      impl->parents = std::move(parents);
      impl->backward_fn = std::move(bw);
    }
  }
  return Tensor(impl);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(Err::ShapeMismatch, std::string(op) + ": operand shapes differ");
}

size_t last_dim(const Tensor& x) {
  if (x.rank() == 0) fail(Err::ShapeMismatch, "expected rank >= 1");
  return x.shape().back();
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  size_t n = shape_product(shape);
  impl->shape = std::move(shape);
  impl->value.assign(n, 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(std::vector<size_t> shape, double v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_product(shape) != values.size())
    fail(Err::ShapeMismatch, "from(): shape does not match value count");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

// ---------------------------------------------------------------------------
// GEMM backend
// ---------------------------------------------------------------------------

namespace detail {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

void set_blas_threads(int n) { openblas_set_num_threads(n > 0 ? n : 1); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  TensorImpl* ia = a.impl();
  TensorImpl* ib = b.impl();
  return make_node(a.shape(), std::move(out), {a.ptr(), b.ptr()},
                   [ia, ib](TensorImpl& node) {
                     const double* g = node.grad.data();
                     size_t n = node.size();
                     if (ia->requires_grad) {
                       ia->ensure_grad();
                       for (size_t i = 0; i < n; ++i) ia->grad[i] += g[i];
                     }
                     if (ib->requires_grad) {
                       ib->ensure_grad();
                       for (size_t i = 0; i < n; ++i) ib->grad[i] += g[i];
                     }
                   });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  size_t n = last_dim(x);
  if (bias.rank() != 1 || bias.dim(0) != n)
    fail(Err::ShapeMismatch, "add_bias: bias must match last axis");
  size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  const double* px = x.data();
  const double* pb = bias.data();
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < n; ++j) out[r * n + j] = px[r * n + j] + pb[j];
  TensorImpl* ix = x.impl();
  TensorImpl* ib = bias.impl();
  return make_node(x.shape(), std::move(out), {x.ptr(), bias.ptr()},
                   [ix, ib, rows, n](TensorImpl& node) {
                     const double* g = node.grad.data();
                     if (ix->requires_grad) {
                       ix->ensure_grad();
                       for (size_t i = 0; i < node.size(); ++i) ix->grad[i] += g[i];
                     }
                     if (ib->requires_grad) {
                       ib->ensure_grad();
                       for (size_t r = 0; r < rows; ++r)
                         for (size_t j = 0; j < n; ++j) ib->grad[j] += g[r * n + j];
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  TensorImpl* ia = a.impl();
  TensorImpl* ib = b.impl();
  return make_node(a.shape(), std::move(out), {a.ptr(), b.ptr()},
                   [ia, ib](TensorImpl& node) {
                     const double* g = node.grad.data();
                     size_t n = node.size();
                     if (ia->requires_grad) {
                       ia->ensure_grad();
                       for (size_t i = 0; i < n; ++i) ia->grad[i] += g[i] * ib->value[i];
                     }
                     if (ib->requires_grad) {
                       ib->ensure_grad();
                       for (size_t i = 0; i < n; ++i) ib->grad[i] += g[i] * ia->value[i];
                     }
                   });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  const double* px = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = px[i] * c;
  TensorImpl* ix = x.impl();
  return make_node(x.shape(), std::move(out), {x.ptr()},
                   [ix, c](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     for (size_t i = 0; i < node.size(); ++i) ix->grad[i] += g[i] * c;
                   });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  const double* px = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = px[i] > 0.0 ? px[i] : 0.0;
  TensorImpl* ix = x.impl();
  return make_node(x.shape(), std::move(out), {x.ptr()},
                   [ix](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     for (size_t i = 0; i < node.size(); ++i)
                       if (ix->value[i] > 0.0) ix->grad[i] += g[i];
                   });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  const double* px = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-px[i]));
  TensorImpl* ix = x.impl();
  return make_node(x.shape(), std::move(out), {x.ptr()},
                   [ix](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     const double* y = node.value.data();
                     for (size_t i = 0; i < node.size(); ++i)
                       ix->grad[i] += g[i] * y[i] * (1.0 - y[i]);
                   });
}

Tensor tanh_op(const Tensor& x) {
  std::vector<double> out(x.size());
  const double* px = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(px[i]);
  TensorImpl* ix = x.impl();
  return make_node(x.shape(), std::move(out), {x.ptr()},
                   [ix](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     const double* y = node.value.data();
                     for (size_t i = 0; i < node.size(); ++i)
                       ix->grad[i] += g[i] * (1.0 - y[i] * y[i]);
                   });
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) fail(Err::ShapeMismatch, "concat_last: no operands");
  std::vector<size_t> lead(xs[0].shape().begin(), xs[0].shape().end() - 1);
  size_t rows = 1;
  for (size_t d : lead) rows *= d;
  size_t total = 0;
  for (const auto& x : xs) {
    std::vector<size_t> xl(x.shape().begin(), x.shape().end() - 1);
    if (xl != lead) fail(Err::ShapeMismatch, "concat_last: leading shapes differ");
    total += x.shape().back();
  }
  std::vector<double> out(rows * total);
  size_t off = 0;
  for (const auto& x : xs) {
    size_t n = x.shape().back();
    const double* px = x.data();
    for (size_t r = 0; r < rows; ++r)
      std::memcpy(&out[r * total + off], &px[r * n], n * sizeof(double));
    off += n;
  }
  std::vector<size_t> shape = lead;
  shape.push_back(total);
  std::vector<TensorImplPtr> parents;
  std::vector<std::pair<TensorImpl*, size_t>> parts;  // impl, width
  parents.reserve(xs.size());
  for (const auto& x : xs) {
    parents.push_back(x.ptr());
    parts.emplace_back(x.impl(), x.shape().back());
  }
  return make_node(std::move(shape), std::move(out), std::move(parents),
                   [parts, rows, total](TensorImpl& node) {
                     const double* g = node.grad.data();
                     size_t off = 0;
                     for (auto [impl, n] : parts) {
                       if (impl->requires_grad) {
                         impl->ensure_grad();
                         for (size_t r = 0; r < rows; ++r)
                           for (size_t j = 0; j < n; ++j)
                             impl->grad[r * n + j] += g[r * total + off + j];
                       }
                       off += n;
                     }
                   });
}

Tensor reshape_copy(const Tensor& x, std::vector<size_t> shape) {
  if (shape_product(shape) != x.size())
    fail(Err::ShapeMismatch, "reshape_copy: element count mismatch");
  std::vector<double> out = x.values();
  TensorImpl* ix = x.impl();
  return make_node(std::move(shape), std::move(out), {x.ptr()},
                   [ix](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     for (size_t i = 0; i < node.size(); ++i) ix->grad[i] += g[i];
                   });
}

Tensor slice_time(const Tensor& x, size_t t) {
  if (x.rank() != 3) fail(Err::ShapeMismatch, "slice_time: expected [B,T,D]");
  size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (t >= T) fail(Err::IndexOutOfRange, "slice_time: step out of range");
  std::vector<double> out(B * D);
  const double* px = x.data();
  for (size_t b = 0; b < B; ++b)
    std::memcpy(&out[b * D], &px[(b * T + t) * D], D * sizeof(double));
  TensorImpl* ix = x.impl();
  return make_node({B, D}, std::move(out), {x.ptr()},
                   [ix, B, T, D, t](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     for (size_t b = 0; b < B; ++b)
                       for (size_t j = 0; j < D; ++j)
                         ix->grad[(b * T + t) * D + j] += g[b * D + j];
                   });
}

Tensor slice_last(const Tensor& x, size_t c0, size_t n) {
  size_t width = last_dim(x);
  if (c0 + n > width) fail(Err::IndexOutOfRange, "slice_last: window out of range");
  size_t rows = x.size() / width;
  std::vector<double> out(rows * n);
  const double* px = x.data();
  for (size_t r = 0; r < rows; ++r)
    std::memcpy(&out[r * n], &px[r * width + c0], n * sizeof(double));
  std::vector<size_t> shape(x.shape().begin(), x.shape().end() - 1);
  shape.push_back(n);
  TensorImpl* ix = x.impl();
  return make_node(std::move(shape), std::move(out), {x.ptr()},
                   [ix, rows, width, c0, n](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     for (size_t r = 0; r < rows; ++r)
                       for (size_t j = 0; j < n; ++j)
                         ix->grad[r * width + c0 + j] += g[r * n + j];
                   });
}

Tensor select_rows(const std::vector<uint8_t>& take_a, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "select_rows");
  size_t rows = a.dim(0);
  if (take_a.size() != rows) fail(Err::ShapeMismatch, "select_rows: mask size");
  size_t width = a.size() / rows;
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pb = b.data();
  for (size_t r = 0; r < rows; ++r) {
    const double* src = take_a[r] ? &pa[r * width] : &pb[r * width];
    std::memcpy(&out[r * width], src, width * sizeof(double));
  }
  TensorImpl* ia = a.impl();
  TensorImpl* ib = b.impl();
  std::vector<uint8_t> mask = take_a;
  return make_node(a.shape(), std::move(out), {a.ptr(), b.ptr()},
                   [ia, ib, mask, rows, width](TensorImpl& node) {
                     const double* g = node.grad.data();
                     for (size_t r = 0; r < rows; ++r) {
                       TensorImpl* dst = mask[r] ? ia : ib;
                       if (!dst->requires_grad) continue;
                       dst->ensure_grad();
                       for (size_t j = 0; j < width; ++j)
                         dst->grad[r * width + j] += g[r * width + j];
                     }
                   });
}

Tensor lstm_cell(const Tensor& gates, const Tensor& h_prev, const Tensor& c_prev,
                 const std::vector<uint8_t>& active) {
  if (gates.rank() != 2 || h_prev.rank() != 2 || c_prev.rank() != 2)
    fail(Err::ShapeMismatch, "lstm_cell: expected rank-2 inputs");
  size_t B = gates.dim(0), H = h_prev.dim(1);
  if (gates.dim(1) != 4 * H || h_prev.dim(0) != B || c_prev.shape() != h_prev.shape() ||
      active.size() != B)
    fail(Err::ShapeMismatch, "lstm_cell: inconsistent shapes");
  std::vector<double> out(B * 2 * H);
  const double* pg = gates.data();
  const double* ph = h_prev.data();
  const double* pc = c_prev.data();
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (size_t b = 0; b < B; ++b) {
    double* oh = &out[b * 2 * H];
    double* oc = oh + H;
    if (!active[b]) {
      std::memcpy(oh, &ph[b * H], H * sizeof(double));
      std::memcpy(oc, &pc[b * H], H * sizeof(double));
      continue;
    }
    const double* g = &pg[b * 4 * H];
    for (size_t j = 0; j < H; ++j) {
      double gi = sig(g[j]);
      double gf = sig(g[H + j]);
      double gc = std::tanh(g[2 * H + j]);
      double go = sig(g[3 * H + j]);
      double c = gf * pc[b * H + j] + gi * gc;
      oc[j] = c;
      oh[j] = go * std::tanh(c);
    }
  }
  TensorImpl* ig = gates.impl();
  TensorImpl* ih = h_prev.impl();
  TensorImpl* ic = c_prev.impl();
  std::vector<uint8_t> act = active;
  return make_node(
      {B, 2 * H}, std::move(out), {gates.ptr(), h_prev.ptr(), c_prev.ptr()},
      [ig, ih, ic, act, B, H](TensorImpl& node) {
        auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
        if (ig->requires_grad) ig->ensure_grad();
        if (ih->requires_grad) ih->ensure_grad();
        if (ic->requires_grad) ic->ensure_grad();
        const double* grad = node.grad.data();
        for (size_t b = 0; b < B; ++b) {
          const double* dh = &grad[b * 2 * H];
          const double* dc_out = dh + H;
          if (!act[b]) {
            if (ih->requires_grad)
              for (size_t j = 0; j < H; ++j) ih->grad[b * H + j] += dh[j];
            if (ic->requires_grad)
              for (size_t j = 0; j < H; ++j) ic->grad[b * H + j] += dc_out[j];
            continue;
          }
          const double* g = &ig->value[b * 4 * H];
          const double* cp = &ic->value[b * H];
          for (size_t j = 0; j < H; ++j) {
            double gi = sig(g[j]);
            double gf = sig(g[H + j]);
            double gc = std::tanh(g[2 * H + j]);
            double go = sig(g[3 * H + j]);
            double c = gf * cp[j] + gi * gc;
            double tc = std::tanh(c);
            double dc = dc_out[j] + dh[j] * go * (1.0 - tc * tc);
            if (ig->requires_grad) {
              double* dg = &ig->grad[b * 4 * H];
              dg[j] += dc * gc * gi * (1.0 - gi);
              dg[H + j] += dc * cp[j] * gf * (1.0 - gf);
              dg[2 * H + j] += dc * gi * (1.0 - gc * gc);
              dg[3 * H + j] += dh[j] * tc * go * (1.0 - go);
            }
            if (ic->requires_grad) ic->grad[b * H + j] += dc * gf;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  const double* px = x.data();
  for (size_t i = 0; i < x.size(); ++i) s += px[i];
  TensorImpl* ix = x.impl();
  return make_node({1}, {s}, {x.ptr()},
                   [ix](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     double g = node.grad[0];
                     for (size_t i = 0; i < ix->value.size(); ++i) ix->grad[i] += g;
                   });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / x.size()); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  size_t n = last_dim(x);
  if (gain.size() != n || bias.size() != n)
    fail(Err::ShapeMismatch, "layer_norm: gain/bias must match last axis");
  size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_sd = std::make_shared<std::vector<double>>(rows);
  const double* px = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  for (size_t r = 0; r < rows; ++r) {
    const double* row = &px[r * n];
    double mu = 0.0;
    for (size_t j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double d = row[j] - mu;
      var += d * d;
    }
    var /= n;
    double s = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[r] = s;
    for (size_t j = 0; j < n; ++j) {
      double xh = (row[j] - mu) * s;
      (*xhat)[r * n + j] = xh;
      out[r * n + j] = pg[j] * xh + pb[j];
    }
  }
  TensorImpl* ix = x.impl();
  TensorImpl* ig = gain.impl();
  TensorImpl* ib = bias.impl();
  return make_node(x.shape(), std::move(out), {x.ptr(), gain.ptr(), bias.ptr()},
                   [ix, ig, ib, xhat, inv_sd, rows, n](TensorImpl& node) {
                     const double* g = node.grad.data();
                     if (ig->requires_grad) ig->ensure_grad();
                     if (ib->requires_grad) ib->ensure_grad();
                     if (ix->requires_grad) ix->ensure_grad();
                     for (size_t r = 0; r < rows; ++r) {
                       const double* grow = &g[r * n];
                       const double* xh = &(*xhat)[r * n];
                       if (ig->requires_grad)
                         for (size_t j = 0; j < n; ++j) ig->grad[j] += grow[j] * xh[j];
                       if (ib->requires_grad)
                         for (size_t j = 0; j < n; ++j) ib->grad[j] += grow[j];
                       if (ix->requires_grad) {
                         double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
                         for (size_t j = 0; j < n; ++j) {
                           double dxh = grow[j] * ig->value[j];
                           m1 += dxh;
                           m2 += dxh * xh[j];
                         }
                         m1 /= n;
                         m2 /= n;
                         double s = (*inv_sd)[r];
                         for (size_t j = 0; j < n; ++j) {
                           double dxh = grow[j] * ig->value[j];
                           ix->grad[r * n + j] += s * (dxh - m1 - xh[j] * m2);
                         }
                       }
                     }
                   });
}

Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>* mask) {
  size_t n = last_dim(x);
  size_t rows = x.size() / n;
  if (mask && mask->size() != x.size())
    fail(Err::ShapeMismatch, "masked_softmax: mask size must match input");
  std::vector<double> out(x.size());
  const double* px = x.data();
  const uint8_t* pm = mask ? mask->data() : nullptr;
  for (size_t r = 0; r < rows; ++r) {
    const double* row = &px[r * n];
    const uint8_t* mrow = pm ? &pm[r * n] : nullptr;
    double mx = -HUGE_VAL;
    for (size_t j = 0; j < n; ++j)
      if (!mrow || mrow[j]) mx = std::max(mx, row[j]);
    if (mx == -HUGE_VAL) fail(Err::AllMasked, "masked_softmax: fully masked row");
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double e = (!mrow || mrow[j]) ? std::exp(row[j] - mx) : 0.0;
      out[r * n + j] = e;
      sum += e;
    }
    double inv = 1.0 / sum;
    for (size_t j = 0; j < n; ++j)
      out[r * n + j] = (!mrow || mrow[j]) ? out[r * n + j] * inv : 0.0;
  }
  TensorImpl* ix = x.impl();
  std::shared_ptr<std::vector<uint8_t>> mcopy;
  if (mask) mcopy = std::make_shared<std::vector<uint8_t>>(*mask);
  return make_node(x.shape(), std::move(out), {x.ptr()},
                   [ix, mcopy, rows, n](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     const double* p = node.value.data();
                     const uint8_t* pm = mcopy ? mcopy->data() : nullptr;
                     for (size_t r = 0; r < rows; ++r) {
                       double dot = 0.0;
                       for (size_t j = 0; j < n; ++j) dot += g[r * n + j] * p[r * n + j];
                       for (size_t j = 0; j < n; ++j) {
                         if (pm && !pm[r * n + j]) continue;
                         ix->grad[r * n + j] += p[r * n + j] * (g[r * n + j] - dot);
                       }
                     }
                   });
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2) fail(Err::ShapeMismatch, "cross_entropy: expected [B,P]");
  size_t B = probs.dim(0), P = probs.dim(1);
  if (labels.size() != B) fail(Err::ShapeMismatch, "cross_entropy: label count");
  double loss = 0.0;
  const double* pp = probs.data();
  for (size_t b = 0; b < B; ++b) {
    int y = labels[b];
    if (y < 0 || static_cast<size_t>(y) >= P)
      fail(Err::InvalidLabel, "cross_entropy: label out of range");
    double p = pp[b * P + y];
    if (p <= 0.0) fail(Err::InvalidLabel, "cross_entropy: label has zero probability");
    loss -= std::log(p);
  }
  loss /= B;
  TensorImpl* ip = probs.impl();
  std::vector<int> ls = labels;
  return make_node({1}, {loss}, {probs.ptr()},
                   [ip, ls, B, P](TensorImpl& node) {
                     if (!ip->requires_grad) return;
                     ip->ensure_grad();
                     double g = node.grad[0];
                     for (size_t b = 0; b < B; ++b) {
                       size_t idx = b * P + ls[b];
                       ip->grad[idx] += -g / (B * ip->value[idx]);
                     }
                   });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2) fail(Err::ShapeMismatch, "matmul: weight must be [k,n]");
  size_t k = w.dim(0), n = w.dim(1);
  if (last_dim(x) != k) fail(Err::ShapeMismatch, "matmul: inner dims differ");
  size_t m = x.size() / k;
  std::vector<double> out(m * n);
  detail::gemm(false, false, (int)m, (int)n, (int)k, 1.0, x.data(), (int)k,
               w.data(), (int)n, 0.0, out.data(), (int)n);
  std::vector<size_t> shape(x.shape().begin(), x.shape().end() - 1);
  shape.push_back(n);
  TensorImpl* ix = x.impl();
  TensorImpl* iw = w.impl();
  return make_node(std::move(shape), std::move(out), {x.ptr(), w.ptr()},
                   [ix, iw, m, n, k](TensorImpl& node) {
                     const double* g = node.grad.data();
                     if (ix->requires_grad) {
                       ix->ensure_grad();
                       detail::gemm(false, true, (int)m, (int)k, (int)n, 1.0, g, (int)n,
                                    iw->value.data(), (int)n, 1.0, ix->grad.data(), (int)k);
                     }
                     if (iw->requires_grad) {
                       iw->ensure_grad();
                       detail::gemm(true, false, (int)k, (int)n, (int)m, 1.0,
                                    ix->value.data(), (int)k, g, (int)n, 1.0,
                                    iw->grad.data(), (int)n);
                     }
                   });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    fail(Err::ShapeMismatch, "bmm_nt: expected [B,m,k] x [B,n,k]");
  size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<double> out(B * m * n);
  const double* pa = a.data();
  const double* pb = b.data();
  for (size_t bb = 0; bb < B; ++bb) {
    const double* A = &pa[bb * m * k];
    const double* Bm = &pb[bb * n * k];
    double* C = &out[bb * m * n];
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) {
        double s = 0.0;
        const double* ra = &A[i * k];
        const double* rb = &Bm[j * k];
        for (size_t t = 0; t < k; ++t) s += ra[t] * rb[t];
        C[i * n + j] = s;
      }
  }
  TensorImpl* ia = a.impl();
  TensorImpl* ib = b.impl();
  return make_node({B, m, n}, std::move(out), {a.ptr(), b.ptr()},
                   [ia, ib, B, m, n, k](TensorImpl& node) {
                     const double* g = node.grad.data();
                     for (size_t bb = 0; bb < B; ++bb) {
                       const double* G = &g[bb * m * n];
                       if (ia->requires_grad) {
                         ia->ensure_grad();
                         double* dA = &ia->grad[bb * m * k];
                         const double* Bm = &ib->value[bb * n * k];
                         for (size_t i = 0; i < m; ++i)
                           for (size_t j = 0; j < n; ++j) {
                             double c = G[i * n + j];
                             const double* rb = &Bm[j * k];
                             double* ra = &dA[i * k];
                             for (size_t t = 0; t < k; ++t) ra[t] += c * rb[t];
                           }
                       }
                       if (ib->requires_grad) {
                         ib->ensure_grad();
                         double* dB = &ib->grad[bb * n * k];
                         const double* A = &ia->value[bb * m * k];
                         for (size_t j = 0; j < n; ++j)
                           for (size_t i = 0; i < m; ++i) {
                             double c = G[i * n + j];
                             const double* ra = &A[i * k];
                             double* rb = &dB[j * k];
                             for (size_t t = 0; t < k; ++t) rb[t] += c * ra[t];
                           }
                       }
                     }
                   });
}

Tensor attn_mix(const Tensor& p, const Tensor& v) {
  if (p.rank() != 3 || v.rank() != 3 || p.dim(0) != v.dim(0) || p.dim(2) != v.dim(1))
    fail(Err::ShapeMismatch, "attn_mix: expected [B,m,n] x [B,n,k]");
  size_t B = p.dim(0), m = p.dim(1), n = p.dim(2), k = v.dim(2);
  std::vector<double> out(B * m * k, 0.0);
  const double* pp = p.data();
  const double* pv = v.data();
  for (size_t bb = 0; bb < B; ++bb) {
    const double* P = &pp[bb * m * n];
    const double* V = &pv[bb * n * k];
    double* C = &out[bb * m * k];
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) {
        double w = P[i * n + j];
        if (w == 0.0) continue;  // masked keys contribute exactly nothing
        const double* rv = &V[j * k];
        double* rc = &C[i * k];
        for (size_t t = 0; t < k; ++t) rc[t] += w * rv[t];
      }
  }
  TensorImpl* ip = p.impl();
  TensorImpl* iv = v.impl();
  return make_node({B, m, k}, std::move(out), {p.ptr(), v.ptr()},
                   [ip, iv, B, m, n, k](TensorImpl& node) {
                     const double* g = node.grad.data();
                     for (size_t bb = 0; bb < B; ++bb) {
                       const double* G = &g[bb * m * k];
                       if (ip->requires_grad) {
                         ip->ensure_grad();
                         double* dP = &ip->grad[bb * m * n];
                         const double* V = &iv->value[bb * n * k];
                         for (size_t i = 0; i < m; ++i)
                           for (size_t j = 0; j < n; ++j) {
                             double s = 0.0;
                             const double* rg = &G[i * k];
                             const double* rv = &V[j * k];
                             for (size_t t = 0; t < k; ++t) s += rg[t] * rv[t];
                             dP[i * n + j] += s;
                           }
                       }
                       if (iv->requires_grad) {
                         iv->ensure_grad();
                         double* dV = &iv->grad[bb * n * k];
                         const double* P = &ip->value[bb * m * n];
                         for (size_t i = 0; i < m; ++i)
                           for (size_t j = 0; j < n; ++j) {
                             double w = P[i * n + j];
                             if (w == 0.0) continue;
                             const double* rg = &G[i * k];
                             double* rv = &dV[j * k];
                             for (size_t t = 0; t < k; ++t) rv[t] += w * rg[t];
                           }
                       }
                     }
                   });
}

Tensor split_heads(const Tensor& x, size_t heads) {
  if (x.rank() != 3) fail(Err::ShapeMismatch, "split_heads: expected [B,T,D]");
  size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (D % heads != 0) fail(Err::ShapeMismatch, "split_heads: D not divisible by heads");
  size_t dk = D / heads;
  std::vector<double> out(x.size());
  const double* px = x.data();
  for (size_t b = 0; b < B; ++b)
    for (size_t h = 0; h < heads; ++h)
      for (size_t t = 0; t < T; ++t)
        std::memcpy(&out[((b * heads + h) * T + t) * dk],
                    &px[(b * T + t) * D + h * dk], dk * sizeof(double));
  TensorImpl* ix = x.impl();
  return make_node({B * heads, T, dk}, std::move(out), {x.ptr()},
                   [ix, B, T, D, heads, dk](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     for (size_t b = 0; b < B; ++b)
                       for (size_t h = 0; h < heads; ++h)
                         for (size_t t = 0; t < T; ++t)
                           for (size_t j = 0; j < dk; ++j)
                             ix->grad[(b * T + t) * D + h * dk + j] +=
                                 g[((b * heads + h) * T + t) * dk + j];
                   });
}

Tensor merge_heads(const Tensor& x, size_t heads) {
  if (x.rank() != 3) fail(Err::ShapeMismatch, "merge_heads: expected [B*h,T,dk]");
  size_t Bh = x.dim(0), T = x.dim(1), dk = x.dim(2);
  if (Bh % heads != 0) fail(Err::ShapeMismatch, "merge_heads: batch not divisible");
  size_t B = Bh / heads, D = dk * heads;
  std::vector<double> out(x.size());
  const double* px = x.data();
  for (size_t b = 0; b < B; ++b)
    for (size_t h = 0; h < heads; ++h)
      for (size_t t = 0; t < T; ++t)
        std::memcpy(&out[(b * T + t) * D + h * dk],
                    &px[((b * heads + h) * T + t) * dk], dk * sizeof(double));
  TensorImpl* ix = x.impl();
  return make_node({B, T, D}, std::move(out), {x.ptr()},
                   [ix, B, T, D, heads, dk](TensorImpl& node) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     const double* g = node.grad.data();
                     for (size_t b = 0; b < B; ++b)
                       for (size_t h = 0; h < heads; ++h)
                         for (size_t t = 0; t < T; ++t)
                           for (size_t j = 0; j < dk; ++j)
                             ix->grad[((b * heads + h) * T + t) * dk + j] +=
                                 g[(b * T + t) * D + h * dk + j];
                   });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids,
                        const std::vector<size_t>& id_shape) {
  if (table.rank() != 2) fail(Err::ShapeMismatch, "embedding_lookup: table must be [C,v]");
  size_t C = table.dim(0), v = table.dim(1);
  size_t rows = 1;
  for (size_t d : id_shape) rows *= d;
  if (rows != ids.size()) fail(Err::ShapeMismatch, "embedding_lookup: id shape mismatch");
  std::vector<double> out(rows * v);
  const double* pt = table.data();
  for (size_t r = 0; r < rows; ++r) {
    int32_t id = ids[r];
    if (id < 0 || static_cast<size_t>(id) >= C)
      fail(Err::IndexOutOfRange, "embedding_lookup: id out of range");
    std::memcpy(&out[r * v], &pt[static_cast<size_t>(id) * v], v * sizeof(double));
  }
  std::vector<size_t> shape = id_shape;
  shape.push_back(v);
  TensorImpl* it = table.impl();
  std::vector<int32_t> ids_copy = ids;
  return make_node(std::move(shape), std::move(out), {table.ptr()},
                   [it, ids_copy, v](TensorImpl& node) {
                     if (!it->requires_grad) return;
                     it->ensure_grad();
                     const double* g = node.grad.data();
                     for (size_t r = 0; r < ids_copy.size(); ++r) {
                       int32_t id = ids_copy[r];
                       if (id == 0) continue;  // PAD row stays zero
                       double* dst = &it->grad[static_cast<size_t>(id) * v];
                       const double* src = &g[r * v];
                       for (size_t j = 0; j < v; ++j) dst[j] += src[j];
                     }
                   });
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1) fail(Err::NotAScalar, "backward: loss must be scalar");
  TensorImpl* root = loss.impl();
  root->ensure_grad();
  root->grad[0] = 1.0;
  if (!root->backward_fn) return;

  // iterative post-order DFS
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* p = node->parents[idx++].get();
      if (p->backward_fn && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is post-order: parents before children; walk it in reverse
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    node->ensure_grad();
    node->backward_fn(*node);
  }
}

}  // namespace sizerec::nn
