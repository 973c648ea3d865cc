#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sizerec/catalog.hpp"
#include "sizerec/layers.hpp"
#include "sizerec/tensor.hpp"

namespace sizerec {

struct ModelHyper {
  int num_positions = 0;
  int t_max = kHistoryMax;
  bool use_return_reason = true;
  // SSP
  int embed_dim = 32;    // v; event embedding = 6*v
  int lstm_hidden = 64;  // H; history embedding = 2H
  int heads = 4;
  int ffn_mult = 4;
  int product_encoder_out = 128;
  int mix_hidden = 128;
  int attn_mlp_hidden = 128;
  // SFNet
  int sfnet_user_dim = 128;
  int sfnet_field_dim = 32;
  int sfnet_product_dim = 128;
  std::vector<int> sfnet_joint_hidden{256, 128, 64};

  int event_dim() const { return 6 * embed_dim; }
  json to_json() const;
  static ModelHyper from_json(const json& j);
};

// One encoded (history, product) query. Raw key fields ride along for PMCV.
struct Query {
  std::vector<int32_t> event_ids;  // len * 6
  std::vector<double> day_offsets; // len
  int len = 0;
  std::array<int32_t, 6> product6{};  // product in event-field layout (PAD elsewhere)
  int32_t user_id = kUnkId;
  std::array<int32_t, 4> product4{};  // product, brand, category, scale
  int scale_len = 0;
  int label = -1;  // -1 when unknown
  std::string raw_user, raw_brand, raw_category;
};

struct EncodeOptions {
  bool include_add2bag = true;
};

// Turns instances (or raw serving events) into Queries using a vocabulary.
class QueryEncoder {
 public:
  QueryEncoder(const Vocabulary* vocab, int t_max, bool include_add2bag,
               bool use_return_reason)
      : vocab_(vocab), t_max_(t_max), include_add2bag_(include_add2bag),
        use_return_reason_(use_return_reason) {}

  Query from_instance(const Dataset& ds, const Instance& ins) const;
  std::vector<Query> from_instances(const Dataset& ds,
                                    const std::vector<Instance>& ins) const;
  // serving path; events need not be sorted, reference_day anchors day offsets
  Query from_events(std::vector<Event> events, const Product& product, int scale_len,
                    int reference_day, const std::string& raw_user) const;

 private:
  const Vocabulary* vocab_;
  int t_max_;
  bool include_add2bag_;
  bool use_return_reason_;
};

// Padded batch of queries.
struct Batch {
  size_t B = 0, T = 0;
  std::vector<int32_t> event_ids;   // B*T*6
  std::vector<double> day_offsets;  // B*T
  std::vector<uint8_t> mask;        // B*T, 1 = real event
  std::vector<size_t> lengths;      // B
  std::vector<int32_t> product6;    // B*6
  std::vector<int32_t> user_ids;    // B
  std::vector<int32_t> product4;    // B*4
  std::vector<uint8_t> feasible;    // B*P
  std::vector<int> labels;          // B (-1 allowed)
};

Batch make_batch(const std::vector<Query>& queries, size_t begin, size_t end,
                 int num_positions, bool need_history);

// Cacheable history representation: the Bi-LSTM history embedding, or the
// transformed event history (plus key mask) for the attention model.
struct HistoryRep {
  std::string model_version;
  std::vector<size_t> shape;
  std::vector<double> data;
  std::vector<uint8_t> mask;
  std::vector<uint8_t> to_bytes() const;
  static HistoryRep from_bytes(const std::vector<uint8_t>& raw);
};

class Recommender {
 public:
  virtual ~Recommender() = default;
  virtual std::string type() const = 0;
  const ModelHyper& hyper() const { return hyper_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<Scale>& scales() const { return scales_; }
  const Scale* find_scale(const std::string& id) const;
  void set_catalog(const Dataset& ds);  // copies scales for serving
  void set_catalog(std::vector<Scale> scales);

  // Masked probability rows of length num_positions, one per query.
  virtual std::vector<std::vector<double>> predict_probs(const std::vector<Query>& qs) = 0;
  // Ranked feasible positions (ties broken toward the lower position).
  virtual std::vector<std::vector<int>> rank(const std::vector<Query>& qs);
  // Single-query path used by serving; identical maths to predict_probs on a
  // batch of one.
  virtual std::vector<double> predict_single(const Query& q);

  // History caching; only meaningful for the SSP models.
  virtual bool supports_history_cache() const { return false; }
  virtual HistoryRep encode_history(const Query& q);
  virtual std::vector<double> predict_with_history(const HistoryRep& rep, const Query& q);

  virtual nn::NamedParams parameters() { return {}; }
  virtual std::string version() const;

 protected:
  ModelHyper hyper_;
  Vocabulary vocab_;
  std::vector<Scale> scales_;
  std::map<std::string, int> scale_index_;
};

std::vector<int> rank_from_probs(const std::vector<double>& probs, int scale_len);

// ---------------------------------------------------------------------------
// PMCV: hierarchical most-common-position lookup
// ---------------------------------------------------------------------------

class PmcvModel : public Recommender {
 public:
  static constexpr size_t kNumTemplates = 6;
  // (position, count), ordered by count desc then position asc
  using RankedCounts = std::vector<std::pair<int, int64_t>>;

  PmcvModel() = default;
  PmcvModel(ModelHyper hyper, Vocabulary vocab) {
    hyper_ = std::move(hyper);
    vocab_ = std::move(vocab);
  }

  std::string type() const override { return "pmcv"; }
  void fit(const std::vector<Query>& train);
  std::vector<std::vector<double>> predict_probs(const std::vector<Query>& qs) override;
  std::vector<std::vector<int>> rank(const std::vector<Query>& qs) override;

  const std::array<std::map<std::string, RankedCounts>, kNumTemplates>& tables() const {
    return tables_;
  }
  const RankedCounts& global_ranking() const { return global_; }
  std::string version() const override;

  json tables_to_json() const;
  void tables_from_json(const json& j);

 private:
  // walks templates most->least specific; returns the first ranked list with a
  // feasible entry, or null when even the global table has none
  const RankedCounts* match(const Query& q) const;
  std::array<std::map<std::string, RankedCounts>, kNumTemplates> tables_;
  RankedCounts global_;
};

// ---------------------------------------------------------------------------
// Neural models
// ---------------------------------------------------------------------------

class NeuralRecommender : public Recommender {
 public:
  std::vector<std::vector<double>> predict_probs(const std::vector<Query>& qs) override;
  std::vector<double> predict_single(const Query& q) override;
  nn::NamedParams parameters() override { return params_; }
  std::string version() const override;
  // Tape-enabled batched forward used by training and batched inference.
  virtual nn::Tensor forward_probs(const Batch& batch) = 0;
  virtual bool needs_history() const { return true; }

 protected:
  void finalize_params(nn::NamedParams params) { params_ = std::move(params); }
  nn::NamedParams params_;
  static std::vector<std::vector<double>> rows_from(const nn::Tensor& probs);
};

class SfnetModel : public NeuralRecommender {
 public:
  SfnetModel(ModelHyper hyper, Vocabulary vocab, uint64_t init_seed);
  std::string type() const override { return "sfnet"; }
  bool needs_history() const override { return false; }
  nn::Tensor forward_probs(const Batch& batch) override;

 private:
  nn::EmbeddingTable user_table_;
  std::array<nn::EmbeddingTable, 4> product_tables_;  // product, brand, category, scale
  nn::Mlp product_combiner_;
  nn::Mlp joint_;
  nn::Linear out_;
};

// Shared helpers for the two SSP models.
class SspBase : public NeuralRecommender {
 public:
  bool supports_history_cache() const override { return true; }
  std::vector<double> predict_single(const Query& q) override;
  HistoryRep encode_history(const Query& q) override;
  std::vector<double> predict_with_history(const HistoryRep& rep, const Query& q) override;

 protected:
  // [B,T,6v] event embeddings (no positional encoding)
  nn::Tensor embed_events(const Batch& batch) const;
  // [B,6v] product embedding through the shared event-field tables
  nn::Tensor embed_product(const Batch& batch) const;
  // stage 1: cacheable representation; stage 2: probabilities
  virtual nn::Tensor history_stage(const Batch& batch) const = 0;
  virtual nn::Tensor head_stage(const nn::Tensor& history, const Batch& batch) const = 0;
  std::array<nn::EmbeddingTable, 6> field_tables_;  // type, brand, category, scale, size, reason
};

class SspLstmModel : public SspBase {
 public:
  SspLstmModel(ModelHyper hyper, Vocabulary vocab, uint64_t init_seed);
  std::string type() const override { return "ssp-lstm"; }
  nn::Tensor forward_probs(const Batch& batch) override;

  nn::Tensor history_stage(const Batch& batch) const override;  // [B, 2H]
  nn::Tensor head_stage(const nn::Tensor& history, const Batch& batch) const override;

 private:
  nn::BiLstm lstm_;
  nn::Mlp product_encoder_;
  nn::Mlp mix_encoder_;
  nn::Linear out_;
};

class SspAttentionModel : public SspBase {
 public:
  SspAttentionModel(ModelHyper hyper, Vocabulary vocab, uint64_t init_seed);
  std::string type() const override { return "ssp-attn"; }
  nn::Tensor forward_probs(const Batch& batch) override;

  nn::Tensor history_stage(const Batch& batch) const override;  // [B,T,D] transformed history
  nn::Tensor head_stage(const nn::Tensor& history, const Batch& batch) const override;

 private:
  nn::TransformerBlock self_block_;
  nn::TransformerBlock cross_block_;
  nn::Mlp out_mlp_;
  nn::Linear out_;
};

std::unique_ptr<Recommender> make_model(const std::string& type, ModelHyper hyper,
                                        Vocabulary vocab, uint64_t init_seed);

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

void save_bundle(Recommender& model, const std::string& path);
std::unique_ptr<Recommender> load_bundle(const std::string& path);

}  // namespace sizerec
