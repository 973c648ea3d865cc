#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sizerec/common.hpp"

// Dense 64-bit float tensors with reverse-mode autodiff. The op set is the
// one the size models need; nothing speculative. Gradients are accumulated
// into per-tensor buffers during backward() in reverse topological order.
namespace sizerec::nn {

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
  std::vector<size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;

  size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<size_t> shape, double v);
  static Tensor from(std::vector<size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<size_t>& shape() const { return impl_->shape; }
  size_t size() const { return impl_->value.size(); }
  size_t dim(size_t i) const { return impl_->shape[i]; }
  size_t rank() const { return impl_->shape.size(); }

  double* data() { return impl_->value.data(); }
  const double* data() const { return impl_->value.data(); }
  std::vector<double>& values() { return impl_->value; }
  const std::vector<double>& values() const { return impl_->value; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  std::vector<double>& grad() { impl_->ensure_grad(); return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  void clear_grad() { impl_->grad.clear(); }

  double item() const {
    if (size() != 1) fail(Err::NotAScalar, "item() on non-scalar tensor");
    return impl_->value[0];
  }

  TensorImpl* impl() const { return impl_.get(); }
  const TensorImplPtr& ptr() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Grad-mode is thread local; inference paths wrap themselves in NoGradGuard
// so no tape is recorded.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---- elementwise / shape ----
Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor add_bias(const Tensor& x, const Tensor& bias);      // bias over last axis
Tensor mul(const Tensor& a, const Tensor& b);              // same shape
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor concat_last(const std::vector<Tensor>& xs);         // along last axis
Tensor reshape_copy(const Tensor& x, std::vector<size_t> shape);
Tensor slice_time(const Tensor& x, size_t t);              // [B,T,D] -> [B,D]
Tensor slice_last(const Tensor& x, size_t c0, size_t n);   // last-axis window
// rowwise select: take_a[r] ? a[r,:] : b[r,:]; copies rows, so padded steps
// stay bit-identical to the shorter computation.
Tensor select_rows(const std::vector<uint8_t>& take_a, const Tensor& a, const Tensor& b);

// Fused masked LSTM cell. gates: [B,4H] pre-activations in (input, forget,
// cell, output) order; returns [B,2H] holding h_next in [:,0:H) and c_next in
// [:,H:2H). Inactive rows copy h_prev/c_prev bit-exactly and route gradients
// past the gates; the backward pass recomputes the activations instead of
// storing them.
Tensor lstm_cell(const Tensor& gates, const Tensor& h_prev, const Tensor& c_prev,
                 const std::vector<uint8_t>& active);

// ---- reductions / losses ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-9);
// Softmax over the last axis. mask (optional) has one byte per element of x;
// zero bytes get probability exactly 0 and never contribute to the
// normalisation. A fully masked row throws AllMasked.
Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>* mask);
// Mean over the batch of -log(probs[b, labels[b]]).
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// ---- linear algebra ----
// x [..., k] @ w [k, n] -> [..., n]; leading axes of x are flattened to rows.
Tensor matmul(const Tensor& x, const Tensor& w);
// a [B,m,k] @ b[B,n,k]^T -> [B,m,n]  (attention scores)
Tensor bmm_nt(const Tensor& a, const Tensor& b);
// p [B,m,n] @ v [B,n,k] -> [B,m,k]; terms with p == 0 are skipped so masked
// attention weights contribute exactly nothing regardless of padding.
Tensor attn_mix(const Tensor& p, const Tensor& v);
// [B,T,D] -> [B*h, T, D/h] and back
Tensor split_heads(const Tensor& x, size_t heads);
Tensor merge_heads(const Tensor& x, size_t heads);

// table [C,v], ids row-major with arbitrary leading shape -> [ids..., v].
// Row 0 is the PAD row: it is never written by gradients.
Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids,
                        const std::vector<size_t>& id_shape);

// Reverse-mode accumulation from a scalar loss.
void backward(const Tensor& loss);

// Low-level GEMM used by matmul; exposed for the benchmark tooling.
namespace detail {
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);
void set_blas_threads(int n);
}  // namespace detail

}  // namespace sizerec::nn
