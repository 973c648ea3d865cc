#include "sizerec/layers.hpp"

#include <cmath>
#include <cstring>

namespace sizerec::nn {

void init_linear(Tensor& w, size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
}

void init_embedding(Tensor& w, Rng& rng) {
  for (double& v : w.values()) v = rng.normal(0.0, 1.0);
  size_t dim = w.dim(1);
  for (size_t j = 0; j < dim; ++j) w.values()[j] = 0.0;  // PAD row
}

Linear::Linear(size_t in, size_t out, Rng& rng) {
  w = Tensor::zeros({in, out}, true);
  b = Tensor::zeros({out}, true);
  init_linear(w, in, rng);
  init_linear(b, in, rng);
}

void Linear::collect(NamedParams& out, const std::string& prefix) {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

EmbeddingTable::EmbeddingTable(size_t cardinality, size_t dim, Rng& rng) {
  weight = Tensor::zeros({cardinality, dim}, true);
  init_embedding(weight, rng);
}

void EmbeddingTable::collect(NamedParams& out, const std::string& prefix) {
  out.emplace_back(prefix + ".weight", weight);
}

LayerNorm::LayerNorm(size_t dim) {
  gain = Tensor::full({dim}, 1.0);
  gain.set_requires_grad(true);
  bias = Tensor::zeros({dim}, true);
}

void LayerNorm::collect(NamedParams& out, const std::string& prefix) {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

Mlp::Mlp(size_t in, const std::vector<size_t>& hidden, Rng& rng) {
  size_t d = in;
  for (size_t h : hidden) {
    layers.emplace_back(d, h, rng);
    d = h;
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers) h = relu(l.forward(h));
  return h;
}

void Mlp::collect(NamedParams& out, const std::string& prefix) {
  for (size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(out, prefix + ".l" + std::to_string(i));
}

BiLstm::BiLstm(size_t input_dim_, size_t hidden_dim_, Rng& rng)
    : input_dim(input_dim_), hidden_dim(hidden_dim_) {
  auto make = [&](Tensor& w, size_t rows, size_t fan_in) {
    w = Tensor::zeros({rows, 4 * hidden_dim}, true);
    init_linear(w, fan_in, rng);
  };
  make(w_fwd, input_dim, input_dim);
  make(u_fwd, hidden_dim, hidden_dim);
  b_fwd = Tensor::zeros({4 * hidden_dim}, true);
  init_linear(b_fwd, hidden_dim, rng);
  make(w_bwd, input_dim, input_dim);
  make(u_bwd, hidden_dim, hidden_dim);
  b_bwd = Tensor::zeros({4 * hidden_dim}, true);
  init_linear(b_bwd, hidden_dim, rng);
}

namespace {

// One masked LSTM stream over the given step order.
Tensor lstm_stream(const Tensor& x, const std::vector<size_t>& lengths,
                   const Tensor& w, const Tensor& u, const Tensor& b,
                   size_t hidden, bool reverse) {
  size_t B = x.dim(0), T = x.dim(1);
  // all input projections in one GEMM: [B*T, 4H]
  Tensor xw = add_bias(matmul(x, w), b);  // [B,T,4H]
  Tensor h = Tensor::zeros({B, hidden});
  Tensor c = Tensor::zeros({B, hidden});
  for (size_t step = 0; step < T; ++step) {
    size_t t = reverse ? T - 1 - step : step;
    std::vector<uint8_t> active(B);
    for (size_t bidx = 0; bidx < B; ++bidx) active[bidx] = t < lengths[bidx];
    Tensor gates = add(slice_time(xw, t), matmul(h, u));  // [B,4H]
    Tensor hc = lstm_cell(gates, h, c, active);
    h = slice_last(hc, 0, hidden);
    c = slice_last(hc, hidden, hidden);
  }
  return h;
}

}  // namespace

Tensor BiLstm::forward(const Tensor& x, const std::vector<size_t>& lengths) const {
  if (x.rank() != 3) fail(Err::ShapeMismatch, "BiLstm: expected [B,T,D]");
  size_t B = x.dim(0), T = x.dim(1);
  if (T == 0) fail(Err::EmptySequence, "BiLstm: zero-length sequence");
  if (lengths.size() != B) fail(Err::ShapeMismatch, "BiLstm: lengths size");
  for (size_t l : lengths)
    if (l == 0 || l > T) fail(Err::EmptySequence, "BiLstm: invalid row length");
  Tensor hf = lstm_stream(x, lengths, w_fwd, u_fwd, b_fwd, hidden_dim, false);
  Tensor hb = lstm_stream(x, lengths, w_bwd, u_bwd, b_bwd, hidden_dim, true);
  return concat_last({hf, hb});
}

void BiLstm::collect(NamedParams& out, const std::string& prefix) {
  out.emplace_back(prefix + ".fwd.w", w_fwd);
  out.emplace_back(prefix + ".fwd.u", u_fwd);
  out.emplace_back(prefix + ".fwd.b", b_fwd);
  out.emplace_back(prefix + ".bwd.w", w_bwd);
  out.emplace_back(prefix + ".bwd.u", u_bwd);
  out.emplace_back(prefix + ".bwd.b", b_bwd);
}

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const std::vector<uint8_t>& key_mask, size_t heads,
                            const Linear& wq, const Linear& wk, const Linear& wv,
                            const Linear& wo) {
  if (query.rank() != 3 || key.rank() != 3 || value.rank() != 3)
    fail(Err::ShapeMismatch, "attention: expected rank-3 inputs");
  size_t B = query.dim(0), Tq = query.dim(1);
  size_t Tk = key.dim(1);
  if (key.dim(0) != B || value.dim(0) != B || value.dim(1) != Tk)
    fail(Err::ShapeMismatch, "attention: batch/key dims differ");
  if (key_mask.size() != B * Tk) fail(Err::ShapeMismatch, "attention: key mask size");
  for (size_t b = 0; b < B; ++b) {
    bool any = false;
    for (size_t t = 0; t < Tk; ++t) any |= key_mask[b * Tk + t] != 0;
    if (!any) fail(Err::AllKeysMasked, "attention: a row has no unmasked keys");
  }
  Tensor q = split_heads(wq.forward(query), heads);  // [B*h, Tq, dk]
  Tensor k = split_heads(wk.forward(key), heads);    // [B*h, Tk, dk]
  Tensor v = split_heads(wv.forward(value), heads);
  size_t dk = q.dim(2);
  Tensor scores = scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
  // expand key mask to [B*h, Tq, Tk]
  std::vector<uint8_t> mask(B * heads * Tq * Tk);
  for (size_t b = 0; b < B; ++b)
    for (size_t h = 0; h < heads; ++h)
      for (size_t i = 0; i < Tq; ++i)
        std::memcpy(&mask[((b * heads + h) * Tq + i) * Tk], &key_mask[b * Tk], Tk);
  Tensor weights = masked_softmax(scores, &mask);
  Tensor ctx = merge_heads(attn_mix(weights, v), heads);  // [B, Tq, D]
  return wo.forward(ctx);
}

TransformerBlock::TransformerBlock(size_t model_dim_, size_t heads_, size_t ffn_dim_, Rng& rng)
    : model_dim(model_dim_), heads(heads_), ffn_dim(ffn_dim_) {
  if (model_dim % heads != 0)
    fail(Err::InvalidConfig, "TransformerBlock: model_dim must divide by heads");
  wq = Linear(model_dim, model_dim, rng);
  wk = Linear(model_dim, model_dim, rng);
  wv = Linear(model_dim, model_dim, rng);
  wo = Linear(model_dim, model_dim, rng);
  ffn1 = Linear(model_dim, ffn_dim, rng);
  ffn2 = Linear(ffn_dim, model_dim, rng);
  ln1 = LayerNorm(model_dim);
  ln2 = LayerNorm(model_dim);
}

Tensor TransformerBlock::forward(const Tensor& query, const Tensor& kv,
                                 const std::vector<uint8_t>& key_mask) const {
  Tensor attn = multi_head_attention(query, kv, kv, key_mask, heads, wq, wk, wv, wo);
  Tensor x1 = ln1.forward(add(query, attn));
  Tensor ff = ffn2.forward(relu(ffn1.forward(x1)));
  return ln2.forward(add(x1, ff));
}

void TransformerBlock::collect(NamedParams& out, const std::string& prefix) {
  wq.collect(out, prefix + ".wq");
  wk.collect(out, prefix + ".wk");
  wv.collect(out, prefix + ".wv");
  wo.collect(out, prefix + ".wo");
  ffn1.collect(out, prefix + ".ffn1");
  ffn2.collect(out, prefix + ".ffn2");
  ln1.collect(out, prefix + ".ln1");
  ln2.collect(out, prefix + ".ln2");
}

Tensor day_positional_encoding(const std::vector<double>& day_offsets,
                               size_t batch, size_t steps, size_t dim) {
  if (day_offsets.size() != batch * steps)
    fail(Err::ShapeMismatch, "day_positional_encoding: offsets size");
  std::vector<double> out(batch * steps * dim);
  for (size_t r = 0; r < batch * steps; ++r) {
    double pos = day_offsets[r];
    for (size_t j = 0; j + 1 < dim; j += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(j) / dim);
      out[r * dim + j] = std::sin(pos * freq);
      out[r * dim + j + 1] = std::cos(pos * freq);
    }
    if (dim % 2) out[r * dim + dim - 1] = std::sin(pos * std::pow(10000.0, -1.0));
  }
  return Tensor::from({batch, steps, dim}, std::move(out));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void Adam::step() {
  bool any = false;
  for (const auto& p : params_)
    if (p.has_grad()) { any = true; break; }
  if (!any) fail(Err::NoGradients, "Adam::step: no parameter has gradients");
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    double* val = p.data();
    size_t n = p.size();
    // absent grad buffer means zero gradient this step
    static const std::vector<double> kEmpty;
    const std::vector<double>& g = p.has_grad() ? p.grad() : kEmpty;
    for (size_t j = 0; j < n; ++j) {
      double gj = g.empty() ? 0.0 : g[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gj;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      val[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                           cfg_.weight_decay * val[j]);
    }
    p.clear_grad();
  }
}

}  // namespace sizerec::nn
