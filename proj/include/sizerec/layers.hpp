#pragma once

#include <string>
#include <vector>

#include "sizerec/tensor.hpp"

namespace sizerec::nn {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
void init_linear(Tensor& w, size_t fan_in, Rng& rng);
// normal(0, 0.1), PAD row (index 0) zeroed
void init_embedding(Tensor& w, Rng& rng);

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Linear() = default;
  Linear(size_t in, size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const { return add_bias(matmul(x, w), b); }
  void collect(NamedParams& out, const std::string& prefix);
};

// Per-field embedding table. Row 0 is PAD (all zeros, never updated),
// row 1 is UNK.
struct EmbeddingTable {
  Tensor weight;  // [cardinality, dim]

  EmbeddingTable() = default;
  EmbeddingTable(size_t cardinality, size_t dim, Rng& rng);
  size_t cardinality() const { return weight.dim(0); }
  size_t dim() const { return weight.dim(1); }
  Tensor lookup(const std::vector<int32_t>& ids, const std::vector<size_t>& id_shape) const {
    return embedding_lookup(weight, ids, id_shape);
  }
  void collect(NamedParams& out, const std::string& prefix);
};

struct LayerNorm {
  Tensor gain, bias;

  LayerNorm() = default;
  explicit LayerNorm(size_t dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(NamedParams& out, const std::string& prefix);
};

// Stack of Linear+ReLU layers (ReLU after every layer).
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(size_t in, const std::vector<size_t>& hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix);
};

// Bi-directional LSTM; the history embedding is the concatenation of the
// forward stream's state after the last real step and the backward stream's
// state after consuming back to the first step. Padded steps carry state
// through unchanged (bitwise).
struct BiLstm {
  size_t input_dim = 0, hidden_dim = 0;
  // gate order within the 4H axis: input, forget, cell, output
  Tensor w_fwd, u_fwd, b_fwd;  // [D,4H], [H,4H], [4H]
  Tensor w_bwd, u_bwd, b_bwd;

  BiLstm() = default;
  BiLstm(size_t input_dim, size_t hidden_dim, Rng& rng);
  // x: [B,T,D]; lengths: per-row real step count (>=1). Returns [B, 2H].
  Tensor forward(const Tensor& x, const std::vector<size_t>& lengths) const;
  void collect(NamedParams& out, const std::string& prefix);
};

// Scaled dot-product multi-head attention. key_mask has one byte per (b, key)
// pair; masked keys get exactly zero attention weight.
Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const std::vector<uint8_t>& key_mask, size_t heads,
                            const Linear& wq, const Linear& wk, const Linear& wv,
                            const Linear& wo);

// Post-norm transformer block: attention -> residual -> LN -> FFN -> residual -> LN.
struct TransformerBlock {
  size_t model_dim = 0, heads = 0, ffn_dim = 0;
  Linear wq, wk, wv, wo, ffn1, ffn2;
  LayerNorm ln1, ln2;

  TransformerBlock() = default;
  TransformerBlock(size_t model_dim, size_t heads, size_t ffn_dim, Rng& rng);
  // query: [B,Tq,D], kv: [B,Tk,D], key_mask: B*Tk bytes
  Tensor forward(const Tensor& query, const Tensor& kv,
                 const std::vector<uint8_t>& key_mask) const;
  void collect(NamedParams& out, const std::string& prefix);
};

// Sinusoidal positional encoding over day offsets; returns a constant
// (gradient-free) [B,T,dim] tensor.
Tensor day_positional_encoding(const std::vector<double>& day_offsets,
                               size_t batch, size_t steps, size_t dim);

struct AdamConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam with decoupled weight decay. step() consumes and
// clears the gradients.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);
  void step();
  size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  size_t t_ = 0;
};

}  // namespace sizerec::nn
