#include "sizerec/models.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace sizerec {

json ModelHyper::to_json() const {
  return json{{"num_positions", num_positions},
              {"t_max", t_max},
              {"use_return_reason", use_return_reason},
              {"embed_dim", embed_dim},
              {"lstm_hidden", lstm_hidden},
              {"heads", heads},
              {"ffn_mult", ffn_mult},
              {"product_encoder_out", product_encoder_out},
              {"mix_hidden", mix_hidden},
              {"attn_mlp_hidden", attn_mlp_hidden},
              {"sfnet_user_dim", sfnet_user_dim},
              {"sfnet_field_dim", sfnet_field_dim},
              {"sfnet_product_dim", sfnet_product_dim},
              {"sfnet_joint_hidden", sfnet_joint_hidden}};
}

ModelHyper ModelHyper::from_json(const json& j) {
  ModelHyper h;
  h.num_positions = j.at("num_positions").get<int>();
  h.t_max = j.value("t_max", kHistoryMax);
  h.use_return_reason = j.value("use_return_reason", true);
  h.embed_dim = j.value("embed_dim", 32);
  h.lstm_hidden = j.value("lstm_hidden", 64);
  h.heads = j.value("heads", 4);
  h.ffn_mult = j.value("ffn_mult", 4);
  h.product_encoder_out = j.value("product_encoder_out", 128);
  h.mix_hidden = j.value("mix_hidden", 128);
  h.attn_mlp_hidden = j.value("attn_mlp_hidden", 128);
  h.sfnet_user_dim = j.value("sfnet_user_dim", 128);
  h.sfnet_field_dim = j.value("sfnet_field_dim", 32);
  h.sfnet_product_dim = j.value("sfnet_product_dim", 128);
  h.sfnet_joint_hidden = j.value("sfnet_joint_hidden", std::vector<int>{256, 128, 64});
  return h;
}

// ---------------------------------------------------------------------------
// Query encoding
// ---------------------------------------------------------------------------

namespace {

void fill_product_fields(Query& q, const Vocabulary& vocab, const Product& product) {
  using F = Vocabulary::Field;
  int32_t brand = vocab.lookup(F::Brand, product.brand);
  int32_t category = vocab.lookup(F::Category, product.category);
  int32_t scale = vocab.lookup(F::Scale, product.scale);
  // event-field layout with PAD in the event-only slots
  q.product6 = {kPadId, brand, category, scale, kPadId, kPadId};
  q.product4 = {vocab.lookup(F::Product, product.id), brand, category, scale};
  q.raw_brand = product.brand;
  q.raw_category = product.category;
}

}  // namespace

Query QueryEncoder::from_instance(const Dataset& ds, const Instance& ins) const {
  Query q;
  std::vector<Event> hist = ds.history_before(ins, t_max_, include_add2bag_);
  q.len = static_cast<int>(hist.size());
  q.event_ids.reserve(hist.size() * 6);
  q.day_offsets.reserve(hist.size());
  for (const Event& ev : hist) {
    EncodedEvent enc = encode_event(ev, *vocab_, ins.ts);
    // "without return_reason" replaces the field by one constant token so the
    // tensor shapes stay fixed; NotReturned makes a return-free dataset encode
    // identically under both variants
    if (!use_return_reason_) enc.ids[5] = return_reason_id(ReturnReason::NotReturned);
    q.event_ids.insert(q.event_ids.end(), enc.ids.begin(), enc.ids.end());
    q.day_offsets.push_back(enc.day_offset);
  }
  const Product& product = ds.products.at(ins.product);
  fill_product_fields(q, *vocab_, product);
  q.user_id = vocab_->lookup(Vocabulary::Field::User, ds.streams.at(ins.user).user);
  q.raw_user = ds.streams.at(ins.user).user;
  q.scale_len = ds.scale_length(ins.product);
  q.label = ins.label;
  return q;
}

std::vector<Query> QueryEncoder::from_instances(const Dataset& ds,
                                                const std::vector<Instance>& ins) const {
  std::vector<Query> out;
  out.reserve(ins.size());
  for (const Instance& i : ins) out.push_back(from_instance(ds, i));
  return out;
}

Query QueryEncoder::from_events(std::vector<Event> events, const Product& product,
                                int scale_len, int reference_day,
                                const std::string& raw_user) const {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  if (!include_add2bag_) {
    events.erase(std::remove_if(events.begin(), events.end(),
                                [](const Event& e) { return e.type == EventType::Add2Bag; }),
                 events.end());
  }
  if (events.size() > static_cast<size_t>(t_max_))
    events.erase(events.begin(), events.end() - t_max_);
  Query q;
  q.len = static_cast<int>(events.size());
  for (const Event& ev : events) {
    EncodedEvent enc = encode_event(ev, *vocab_, reference_day);
    if (!use_return_reason_) enc.ids[5] = return_reason_id(ReturnReason::NotReturned);
    q.event_ids.insert(q.event_ids.end(), enc.ids.begin(), enc.ids.end());
    q.day_offsets.push_back(enc.day_offset);
  }
  fill_product_fields(q, *vocab_, product);
  q.user_id = vocab_->lookup(Vocabulary::Field::User, raw_user);
  q.raw_user = raw_user;
  q.scale_len = scale_len;
  return q;
}

Batch make_batch(const std::vector<Query>& queries, size_t begin, size_t end,
                 int num_positions, bool need_history) {
  if (begin >= end || end > queries.size())
    fail(Err::ShapeMismatch, "make_batch: bad range");
  Batch b;
  b.B = end - begin;
  size_t T = 0;
  for (size_t i = begin; i < end; ++i) {
    if (need_history && queries[i].len == 0)
      fail(Err::EmptyHistory, "make_batch: SSP query with empty history");
    T = std::max(T, static_cast<size_t>(queries[i].len));
  }
  if (need_history) T = std::max<size_t>(T, 1);
  b.T = T;
  b.event_ids.assign(b.B * T * 6, kPadId);
  b.day_offsets.assign(b.B * T, 0.0);
  b.mask.assign(b.B * T, 0);
  b.lengths.resize(b.B);
  b.product6.resize(b.B * 6);
  b.user_ids.resize(b.B);
  b.product4.resize(b.B * 4);
  b.feasible.assign(b.B * num_positions, 0);
  b.labels.resize(b.B);
  for (size_t i = begin; i < end; ++i) {
    size_t r = i - begin;
    const Query& q = queries[i];
    size_t len = static_cast<size_t>(q.len);
    b.lengths[r] = len;
    if (len) {
      std::memcpy(&b.event_ids[r * T * 6], q.event_ids.data(),
                  len * 6 * sizeof(int32_t));
      std::memcpy(&b.day_offsets[r * T], q.day_offsets.data(), len * sizeof(double));
      std::fill_n(&b.mask[r * T], len, uint8_t{1});
    }
    std::copy(q.product6.begin(), q.product6.end(), &b.product6[r * 6]);
    b.user_ids[r] = q.user_id;
    std::copy(q.product4.begin(), q.product4.end(), &b.product4[r * 4]);
    int sl = std::min(q.scale_len, num_positions);
    std::fill_n(&b.feasible[r * num_positions], sl, uint8_t{1});
    b.labels[r] = q.label;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Recommender base
// ---------------------------------------------------------------------------

const Scale* Recommender::find_scale(const std::string& id) const {
  auto it = scale_index_.find(id);
  return it == scale_index_.end() ? nullptr : &scales_[it->second];
}

void Recommender::set_catalog(const Dataset& ds) { set_catalog(ds.scales); }

void Recommender::set_catalog(std::vector<Scale> scales) {
  scales_ = std::move(scales);
  scale_index_.clear();
  for (size_t i = 0; i < scales_.size(); ++i)
    scale_index_[scales_[i].id] = static_cast<int>(i);
}

std::vector<int> rank_from_probs(const std::vector<double>& probs, int scale_len) {
  std::vector<int> idx(std::min<size_t>(scale_len, probs.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  return idx;
}

std::vector<std::vector<int>> Recommender::rank(const std::vector<Query>& qs) {
  std::vector<std::vector<double>> probs = predict_probs(qs);
  std::vector<std::vector<int>> out(qs.size());
  for (size_t i = 0; i < qs.size(); ++i)
    out[i] = rank_from_probs(probs[i], qs[i].scale_len);
  return out;
}

std::vector<double> Recommender::predict_single(const Query& q) {
  return predict_probs({q})[0];
}

HistoryRep Recommender::encode_history(const Query&) {
  fail(Err::BadRequest, type() + " does not cache history representations");
}

std::vector<double> Recommender::predict_with_history(const HistoryRep&, const Query&) {
  fail(Err::BadRequest, type() + " does not cache history representations");
}

std::string Recommender::version() const { return type() + "-v1"; }

// ---------------------------------------------------------------------------
// PMCV
// ---------------------------------------------------------------------------

namespace {

std::string pmcv_key(size_t tmpl, const std::string& user, const std::string& category,
                     const std::string& brand) {
  constexpr char sep = '\x1f';
  switch (tmpl) {
    case 0: return user + sep + category + sep + brand;
    case 1: return user + sep + brand;
    case 2: return user + sep + category;
    case 3: return user;
    case 4: return category + sep + brand;
    case 5: return brand;
  }
  return {};
}

PmcvModel::RankedCounts freeze_counts(const std::map<int, int64_t>& counts) {
  PmcvModel::RankedCounts out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

}  // namespace

void PmcvModel::fit(const std::vector<Query>& train) {
  if (train.empty()) fail(Err::EmptyTrainingSet, "pmcv_fit: no training instances");
  std::array<std::map<std::string, std::map<int, int64_t>>, kNumTemplates> staging;
  std::map<int, int64_t> global_counts;
  for (const Query& q : train) {
    for (size_t t = 0; t < kNumTemplates; ++t)
      ++staging[t][pmcv_key(t, q.raw_user, q.raw_category, q.raw_brand)][q.label];
    ++global_counts[q.label];
  }
  for (size_t t = 0; t < kNumTemplates; ++t) {
    tables_[t].clear();
    for (const auto& [key, counts] : staging[t]) tables_[t][key] = freeze_counts(counts);
  }
  global_ = freeze_counts(global_counts);
}

const PmcvModel::RankedCounts* PmcvModel::match(const Query& q) const {
  auto has_feasible = [&](const RankedCounts& rc) {
    for (const auto& [pos, cnt] : rc)
      if (pos < q.scale_len) return true;
    return false;
  };
  for (size_t t = 0; t < kNumTemplates; ++t) {
    auto it = tables_[t].find(pmcv_key(t, q.raw_user, q.raw_category, q.raw_brand));
    if (it != tables_[t].end() && has_feasible(it->second)) return &it->second;
  }
  return has_feasible(global_) ? &global_ : nullptr;
}

std::vector<std::vector<int>> PmcvModel::rank(const std::vector<Query>& qs) {
  std::vector<std::vector<int>> out;
  out.reserve(qs.size());
  for (const Query& q : qs) {
    std::vector<int> ranking;
    std::vector<uint8_t> used(q.scale_len, 0);
    auto push = [&](int pos) {
      if (pos < q.scale_len && !used[pos]) {
        used[pos] = 1;
        ranking.push_back(pos);
      }
    };
    const RankedCounts* matched = match(q);
    if (matched)
      for (const auto& [pos, cnt] : *matched) push(pos);
    for (const auto& [pos, cnt] : global_) push(pos);
    for (int pos = 0; pos < q.scale_len; ++pos) push(pos);
    out.push_back(std::move(ranking));
  }
  return out;
}

std::vector<std::vector<double>> PmcvModel::predict_probs(const std::vector<Query>& qs) {
  std::vector<std::vector<double>> out;
  out.reserve(qs.size());
  for (const Query& q : qs) {
    std::vector<double> probs(hyper_.num_positions, 0.0);
    const RankedCounts* matched = match(q);
    if (matched) {
      int64_t total = 0;
      for (const auto& [pos, cnt] : *matched)
        if (pos < q.scale_len) total += cnt;
      for (const auto& [pos, cnt] : *matched)
        if (pos < q.scale_len) probs[pos] = static_cast<double>(cnt) / total;
    } else {
      for (int pos = 0; pos < q.scale_len; ++pos) probs[pos] = 1.0 / q.scale_len;
    }
    out.push_back(std::move(probs));
  }
  return out;
}

json PmcvModel::tables_to_json() const {
  auto ranked_to_json = [](const RankedCounts& rc) {
    json arr = json::array();
    for (const auto& [pos, cnt] : rc) arr.push_back(json::array({pos, cnt}));
    return arr;
  };
  json tables = json::array();
  for (size_t t = 0; t < kNumTemplates; ++t) {
    json entries = json::array();
    for (const auto& [key, rc] : tables_[t])
      entries.push_back(json::array({key, ranked_to_json(rc)}));
    tables.push_back(std::move(entries));
  }
  return json{{"templates", std::move(tables)}, {"global", ranked_to_json(global_)}};
}

void PmcvModel::tables_from_json(const json& j) {
  auto ranked_from_json = [](const json& arr) {
    RankedCounts rc;
    for (const auto& e : arr) rc.emplace_back(e.at(0).get<int>(), e.at(1).get<int64_t>());
    return rc;
  };
  const json& tables = j.at("templates");
  for (size_t t = 0; t < kNumTemplates; ++t) {
    tables_[t].clear();
    for (const auto& e : tables.at(t))
      tables_[t][e.at(0).get<std::string>()] = ranked_from_json(e.at(1));
  }
  global_ = ranked_from_json(j.at("global"));
}

std::string PmcvModel::version() const {
  std::string dump = tables_to_json().dump();
  return type() + "-" + hex64(fnv1a(dump.data(), dump.size()));
}

// ---------------------------------------------------------------------------
// Neural base
// ---------------------------------------------------------------------------

std::vector<std::vector<double>> NeuralRecommender::rows_from(const nn::Tensor& probs) {
  size_t B = probs.dim(0), P = probs.dim(1);
  std::vector<std::vector<double>> out(B);
  for (size_t b = 0; b < B; ++b)
    out[b].assign(probs.data() + b * P, probs.data() + (b + 1) * P);
  return out;
}

std::vector<std::vector<double>> NeuralRecommender::predict_probs(
    const std::vector<Query>& qs) {
  nn::NoGradGuard guard;
  constexpr size_t kChunk = 256;
  std::vector<std::vector<double>> out;
  out.reserve(qs.size());
  for (size_t i = 0; i < qs.size(); i += kChunk) {
    size_t j = std::min(qs.size(), i + kChunk);
    Batch batch = make_batch(qs, i, j, hyper_.num_positions, needs_history());
    auto rows = rows_from(forward_probs(batch));
    for (auto& r : rows) out.push_back(std::move(r));
  }
  return out;
}

std::vector<double> NeuralRecommender::predict_single(const Query& q) {
  nn::NoGradGuard guard;
  Batch batch = make_batch({q}, 0, 1, hyper_.num_positions, needs_history());
  return rows_from(forward_probs(batch))[0];
}

std::string NeuralRecommender::version() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params_) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.data(), t.size() * sizeof(double), h);
  }
  return type() + "-" + hex64(h);
}

// ---------------------------------------------------------------------------
// HistoryRep serialization
// ---------------------------------------------------------------------------

namespace {
template <class T>
void put_raw(std::vector<uint8_t>& out, const T& v) {
  const uint8_t* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}
template <class T>
T get_raw(const std::vector<uint8_t>& in, size_t& off) {
  if (off + sizeof(T) > in.size()) fail(Err::BundleCorrupt, "history rep truncated");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}
}  // namespace

std::vector<uint8_t> HistoryRep::to_bytes() const {
  std::vector<uint8_t> out;
  put_raw<uint32_t>(out, 0x48524550u);  // "HREP"
  put_raw<uint32_t>(out, static_cast<uint32_t>(model_version.size()));
  out.insert(out.end(), model_version.begin(), model_version.end());
  put_raw<uint32_t>(out, static_cast<uint32_t>(shape.size()));
  for (size_t d : shape) put_raw<uint64_t>(out, d);
  put_raw<uint64_t>(out, data.size());
  for (double v : data) put_raw<double>(out, v);
  put_raw<uint64_t>(out, mask.size());
  out.insert(out.end(), mask.begin(), mask.end());
  return out;
}

HistoryRep HistoryRep::from_bytes(const std::vector<uint8_t>& raw) {
  size_t off = 0;
  if (get_raw<uint32_t>(raw, off) != 0x48524550u)
    fail(Err::BundleCorrupt, "history rep: bad magic");
  HistoryRep rep;
  uint32_t vlen = get_raw<uint32_t>(raw, off);
  if (off + vlen > raw.size()) fail(Err::BundleCorrupt, "history rep truncated");
  rep.model_version.assign(raw.begin() + off, raw.begin() + off + vlen);
  off += vlen;
  uint32_t ndim = get_raw<uint32_t>(raw, off);
  for (uint32_t i = 0; i < ndim; ++i) rep.shape.push_back(get_raw<uint64_t>(raw, off));
  uint64_t n = get_raw<uint64_t>(raw, off);
  rep.data.reserve(n);
  for (uint64_t i = 0; i < n; ++i) rep.data.push_back(get_raw<double>(raw, off));
  uint64_t mlen = get_raw<uint64_t>(raw, off);
  if (off + mlen > raw.size()) fail(Err::BundleCorrupt, "history rep truncated");
  rep.mask.assign(raw.begin() + off, raw.begin() + off + mlen);
  return rep;
}

// ---------------------------------------------------------------------------
// SFNet
// ---------------------------------------------------------------------------

SfnetModel::SfnetModel(ModelHyper hyper, Vocabulary vocab, uint64_t init_seed) {
  hyper_ = std::move(hyper);
  vocab_ = std::move(vocab);
  Rng rng(init_seed);
  using F = Vocabulary::Field;
  int fd = hyper_.sfnet_field_dim;
  user_table_ = nn::EmbeddingTable(vocab_.cardinality(F::User), hyper_.sfnet_user_dim, rng);
  product_tables_[0] = nn::EmbeddingTable(vocab_.cardinality(F::Product), fd, rng);
  product_tables_[1] = nn::EmbeddingTable(vocab_.cardinality(F::Brand), fd, rng);
  product_tables_[2] = nn::EmbeddingTable(vocab_.cardinality(F::Category), fd, rng);
  product_tables_[3] = nn::EmbeddingTable(vocab_.cardinality(F::Scale), fd, rng);
  product_combiner_ = nn::Mlp(4 * fd, {static_cast<size_t>(hyper_.sfnet_product_dim)}, rng);
  std::vector<size_t> joint(hyper_.sfnet_joint_hidden.begin(), hyper_.sfnet_joint_hidden.end());
  joint_ = nn::Mlp(hyper_.sfnet_user_dim + hyper_.sfnet_product_dim, joint, rng);
  out_ = nn::Linear(joint.back(), hyper_.num_positions, rng);

  nn::NamedParams ps;
  user_table_.collect(ps, "user");
  const char* names[] = {"product.product", "product.brand", "product.category",
                         "product.scale"};
  for (size_t i = 0; i < 4; ++i) product_tables_[i].collect(ps, names[i]);
  product_combiner_.collect(ps, "combiner");
  joint_.collect(ps, "joint");
  out_.collect(ps, "out");
  finalize_params(std::move(ps));
}

nn::Tensor SfnetModel::forward_probs(const Batch& batch) {
  size_t B = batch.B;
  nn::Tensor user = user_table_.lookup(batch.user_ids, {B});
  std::vector<nn::Tensor> fields;
  for (size_t f = 0; f < 4; ++f) {
    std::vector<int32_t> ids(B);
    for (size_t b = 0; b < B; ++b) ids[b] = batch.product4[b * 4 + f];
    fields.push_back(product_tables_[f].lookup(ids, {B}));
  }
  nn::Tensor product = product_combiner_.forward(nn::concat_last(fields));
  nn::Tensor joint = joint_.forward(nn::concat_last({user, product}));
  nn::Tensor logits = out_.forward(joint);
  return nn::masked_softmax(logits, &batch.feasible);
}

// ---------------------------------------------------------------------------
// SSP shared
// ---------------------------------------------------------------------------

nn::Tensor SspBase::embed_events(const Batch& batch) const {
  size_t rows = batch.B * batch.T;
  std::vector<nn::Tensor> fields;
  fields.reserve(6);
  for (size_t f = 0; f < 6; ++f) {
    std::vector<int32_t> ids(rows);
    for (size_t r = 0; r < rows; ++r) ids[r] = batch.event_ids[r * 6 + f];
    fields.push_back(field_tables_[f].lookup(ids, {batch.B, batch.T}));
  }
  return nn::concat_last(fields);
}

nn::Tensor SspBase::embed_product(const Batch& batch) const {
  std::vector<nn::Tensor> fields;
  fields.reserve(6);
  for (size_t f = 0; f < 6; ++f) {
    std::vector<int32_t> ids(batch.B);
    for (size_t b = 0; b < batch.B; ++b) ids[b] = batch.product6[b * 6 + f];
    fields.push_back(field_tables_[f].lookup(ids, {batch.B}));
  }
  return nn::concat_last(fields);
}

std::vector<double> SspBase::predict_single(const Query& q) {
  return predict_with_history(encode_history(q), q);
}

HistoryRep SspBase::encode_history(const Query& q) {
  if (q.len == 0) fail(Err::EmptyHistory, type() + ": history has no events");
  nn::NoGradGuard guard;
  Batch batch = make_batch({q}, 0, 1, hyper_.num_positions, true);
  nn::Tensor rep = history_stage(batch);
  HistoryRep out;
  out.model_version = version();
  // drop the leading batch axis of 1
  out.shape.assign(rep.shape().begin() + 1, rep.shape().end());
  out.data = rep.values();
  out.mask = batch.mask;
  return out;
}

std::vector<double> SspBase::predict_with_history(const HistoryRep& rep, const Query& q) {
  nn::NoGradGuard guard;
  // pseudo-batch of one carrying the product side; T mirrors the cached rep
  Batch batch;
  batch.B = 1;
  batch.T = rep.mask.size();
  batch.mask = rep.mask;
  batch.lengths = {rep.mask.empty() ? size_t{1} : batch.T};
  batch.product6.assign(q.product6.begin(), q.product6.end());
  batch.user_ids = {q.user_id};
  batch.product4.assign(q.product4.begin(), q.product4.end());
  batch.feasible.assign(hyper_.num_positions, 0);
  std::fill_n(batch.feasible.begin(), std::min(q.scale_len, hyper_.num_positions), uint8_t{1});
  batch.labels = {q.label};
  std::vector<size_t> shape;
  shape.push_back(1);
  shape.insert(shape.end(), rep.shape.begin(), rep.shape.end());
  nn::Tensor hist = nn::Tensor::from(shape, rep.data);
  nn::Tensor probs = head_stage(hist, batch);
  return std::vector<double>(probs.data(), probs.data() + probs.size());
}

// ---------------------------------------------------------------------------
// SSP-LSTM
// ---------------------------------------------------------------------------

SspLstmModel::SspLstmModel(ModelHyper hyper, Vocabulary vocab, uint64_t init_seed) {
  hyper_ = std::move(hyper);
  vocab_ = std::move(vocab);
  Rng rng(init_seed);
  using F = Vocabulary::Field;
  int v = hyper_.embed_dim;
  field_tables_[0] = nn::EmbeddingTable(kEventTypeCardinality, v, rng);
  field_tables_[1] = nn::EmbeddingTable(vocab_.cardinality(F::Brand), v, rng);
  field_tables_[2] = nn::EmbeddingTable(vocab_.cardinality(F::Category), v, rng);
  field_tables_[3] = nn::EmbeddingTable(vocab_.cardinality(F::Scale), v, rng);
  field_tables_[4] = nn::EmbeddingTable(2 + hyper_.num_positions, v, rng);
  field_tables_[5] = nn::EmbeddingTable(kReturnReasonCardinality, v, rng);
  lstm_ = nn::BiLstm(hyper_.event_dim(), hyper_.lstm_hidden, rng);
  product_encoder_ = nn::Mlp(hyper_.event_dim(),
                             {static_cast<size_t>(hyper_.product_encoder_out)}, rng);
  mix_encoder_ = nn::Mlp(2 * hyper_.lstm_hidden + hyper_.product_encoder_out,
                         {static_cast<size_t>(hyper_.mix_hidden)}, rng);
  out_ = nn::Linear(hyper_.mix_hidden, hyper_.num_positions, rng);

  nn::NamedParams ps;
  const char* names[] = {"field.type", "field.brand", "field.category",
                         "field.scale", "field.size", "field.reason"};
  for (size_t i = 0; i < 6; ++i) field_tables_[i].collect(ps, names[i]);
  lstm_.collect(ps, "lstm");
  product_encoder_.collect(ps, "product_encoder");
  mix_encoder_.collect(ps, "mix_encoder");
  out_.collect(ps, "out");
  finalize_params(std::move(ps));
}

nn::Tensor SspLstmModel::history_stage(const Batch& batch) const {
  return lstm_.forward(embed_events(batch), batch.lengths);
}

nn::Tensor SspLstmModel::head_stage(const nn::Tensor& history, const Batch& batch) const {
  nn::Tensor product = product_encoder_.forward(embed_product(batch));
  nn::Tensor mix = mix_encoder_.forward(nn::concat_last({history, product}));
  return nn::masked_softmax(out_.forward(mix), &batch.feasible);
}

nn::Tensor SspLstmModel::forward_probs(const Batch& batch) {
  return head_stage(history_stage(batch), batch);
}

// ---------------------------------------------------------------------------
// SSP-Attention
// ---------------------------------------------------------------------------

SspAttentionModel::SspAttentionModel(ModelHyper hyper, Vocabulary vocab, uint64_t init_seed) {
  hyper_ = std::move(hyper);
  vocab_ = std::move(vocab);
  Rng rng(init_seed);
  using F = Vocabulary::Field;
  int v = hyper_.embed_dim;
  field_tables_[0] = nn::EmbeddingTable(kEventTypeCardinality, v, rng);
  field_tables_[1] = nn::EmbeddingTable(vocab_.cardinality(F::Brand), v, rng);
  field_tables_[2] = nn::EmbeddingTable(vocab_.cardinality(F::Category), v, rng);
  field_tables_[3] = nn::EmbeddingTable(vocab_.cardinality(F::Scale), v, rng);
  field_tables_[4] = nn::EmbeddingTable(2 + hyper_.num_positions, v, rng);
  field_tables_[5] = nn::EmbeddingTable(kReturnReasonCardinality, v, rng);
  size_t dim = hyper_.event_dim();
  self_block_ = nn::TransformerBlock(dim, hyper_.heads, hyper_.ffn_mult * dim, rng);
  cross_block_ = nn::TransformerBlock(dim, hyper_.heads, hyper_.ffn_mult * dim, rng);
  out_mlp_ = nn::Mlp(dim, {static_cast<size_t>(hyper_.attn_mlp_hidden)}, rng);
  out_ = nn::Linear(hyper_.attn_mlp_hidden, hyper_.num_positions, rng);

  nn::NamedParams ps;
  const char* names[] = {"field.type", "field.brand", "field.category",
                         "field.scale", "field.size", "field.reason"};
  for (size_t i = 0; i < 6; ++i) field_tables_[i].collect(ps, names[i]);
  self_block_.collect(ps, "self_block");
  cross_block_.collect(ps, "cross_block");
  out_mlp_.collect(ps, "out_mlp");
  out_.collect(ps, "out");
  finalize_params(std::move(ps));
}

nn::Tensor SspAttentionModel::history_stage(const Batch& batch) const {
  nn::Tensor ev = embed_events(batch);
  nn::Tensor pe = nn::day_positional_encoding(batch.day_offsets, batch.B, batch.T,
                                              hyper_.event_dim());
  nn::Tensor x = nn::add(ev, pe);
  return self_block_.forward(x, x, batch.mask);  // "transformed event history"
}

nn::Tensor SspAttentionModel::head_stage(const nn::Tensor& history, const Batch& batch) const {
  // query is the product embedding alone: a sequence of length 1, no extra MLP
  nn::Tensor product = nn::reshape_copy(embed_product(batch),
                                        {batch.B, 1, static_cast<size_t>(hyper_.event_dim())});
  nn::Tensor crossed = cross_block_.forward(product, history, batch.mask);
  nn::Tensor flat = nn::reshape_copy(crossed, {batch.B, static_cast<size_t>(hyper_.event_dim())});
  nn::Tensor hidden = out_mlp_.forward(flat);
  return nn::masked_softmax(out_.forward(hidden), &batch.feasible);
}

nn::Tensor SspAttentionModel::forward_probs(const Batch& batch) {
  return head_stage(history_stage(batch), batch);
}

std::unique_ptr<Recommender> make_model(const std::string& type, ModelHyper hyper,
                                        Vocabulary vocab, uint64_t init_seed) {
  if (type == "pmcv") return std::make_unique<PmcvModel>(std::move(hyper), std::move(vocab));
  if (type == "sfnet") return std::make_unique<SfnetModel>(std::move(hyper), std::move(vocab), init_seed);
  if (type == "ssp-lstm") return std::make_unique<SspLstmModel>(std::move(hyper), std::move(vocab), init_seed);
  if (type == "ssp-attn") return std::make_unique<SspAttentionModel>(std::move(hyper), std::move(vocab), init_seed);
  fail(Err::InvalidConfig, "unknown model type: " + type);
}

}  // namespace sizerec
