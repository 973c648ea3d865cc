#include "sizerec/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sizerec {

TrainConfig TrainConfig::resolved() const {
  TrainConfig c = *this;
  bool is_ssp = c.model == "ssp-lstm" || c.model == "ssp-attn";
  if (c.batch_size == 0) c.batch_size = c.model == "sfnet" ? 8128 : 1024;
  if (c.epochs == 0) c.epochs = c.model == "sfnet" ? 35 : 25;
  if (c.weight_decay < 0) c.weight_decay = is_ssp ? 1e-4 : 1e-5;
  return c;
}

void TrainConfig::validate() const {
  if (model != "pmcv" && model != "sfnet" && model != "ssp-lstm" && model != "ssp-attn")
    fail(Err::InvalidConfig, "unknown model type: " + model);
  if (batch_size < 0 || epochs < 0 || patience < 1 || t_max < 1)
    fail(Err::InvalidConfig, "train config: negative or zero field");
  if (lr < 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    fail(Err::InvalidConfig, "train config: bad optimizer settings");
}

json TrainConfig::to_json() const {
  return json{{"model", model},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"lr", lr},
              {"weight_decay", weight_decay},
              {"beta1", beta1},
              {"beta2", beta2},
              {"patience", patience},
              {"seed", seed},
              {"t_max", t_max},
              {"include_add2bag", include_add2bag},
              {"use_return_reason", use_return_reason},
              {"hyper_overrides", hyper_overrides}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key) && !j.at(key).is_null())
      field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("model", c.model);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("lr", c.lr);
  get("weight_decay", c.weight_decay);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("patience", c.patience);
  get("seed", c.seed);
  get("t_max", c.t_max);
  get("include_add2bag", c.include_add2bag);
  get("use_return_reason", c.use_return_reason);
  if (j.contains("hyper_overrides")) c.hyper_overrides = j.at("hyper_overrides");
  return c;
}

json TrainReport::to_json(bool include_timing) const {
  json eps = json::array();
  for (const EpochStats& e : epochs) {
    json je{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_top1", e.val_top1}};
    if (include_timing) je["seconds"] = e.seconds;
    eps.push_back(std::move(je));
  }
  return json{{"model", model},
              {"epochs", std::move(eps)},
              {"best_epoch", best_epoch},
              {"best_val_top1", best_val_top1},
              {"stopped_early", stopped_early}};
}

std::vector<Instance> make_training_instances(const Dataset& ds) {
  std::vector<Instance> out;
  out.reserve(ds.instances.size());
  for (const Instance& ins : ds.instances)
    if (ins.label_reason == ReturnReason::NotReturned) out.push_back(ins);
  return out;
}

std::map<int, double> evaluate_topk(Recommender& model, const std::vector<Query>& queries,
                                    const std::vector<int>& ks) {
  if (queries.empty()) fail(Err::EmptyEvaluationSet, "evaluate_topk: no instances");
  std::vector<std::vector<int>> ranks = model.rank(queries);
  std::map<int, double> out;
  for (int k : ks) {
    int64_t hits = 0;
    for (size_t i = 0; i < queries.size(); ++i) {
      const auto& r = ranks[i];
      int kk = std::min<int>(k, static_cast<int>(r.size()));
      for (int j = 0; j < kk; ++j)
        if (r[j] == queries[i].label) { ++hits; break; }
    }
    out[k] = static_cast<double>(hits) / queries.size();
  }
  return out;
}

namespace {

ModelHyper hyper_for(const Dataset& ds, const TrainConfig& cfg) {
  ModelHyper h;
  h.num_positions = ds.num_positions;
  h.t_max = cfg.t_max;
  h.use_return_reason = cfg.use_return_reason;
  if (cfg.hyper_overrides.is_object()) {
    json merged = h.to_json();
    for (auto it = cfg.hyper_overrides.begin(); it != cfg.hyper_overrides.end(); ++it)
      merged[it.key()] = it.value();
    h = ModelHyper::from_json(merged);
    h.num_positions = ds.num_positions;  // never overridable
    h.t_max = cfg.t_max;
    h.use_return_reason = cfg.use_return_reason;
  }
  return h;
}

double val_top1(Recommender& model, const std::vector<Query>& val) {
  if (val.empty()) return 0.0;
  return evaluate_topk(model, val, {1}).at(1);
}

Batch gather_batch(const std::vector<Query>& queries, const std::vector<size_t>& order,
                   size_t begin, size_t end, int num_positions, bool need_history) {
  std::vector<Query> chunk;
  chunk.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) chunk.push_back(queries[order[i]]);
  return make_batch(chunk, 0, chunk.size(), num_positions, need_history);
}

}  // namespace

TrainResult train_model(const Dataset& ds, const SplitResult& split,
                        const TrainConfig& raw_cfg) {
  raw_cfg.validate();
  TrainConfig cfg = raw_cfg.resolved();
  if (split.train.empty()) fail(Err::EmptyTrainingSet, "train: empty train split");

  // no leakage: vocabulary comes from the train split only
  Vocabulary vocab = build_vocabulary(ds, split.train);
  ModelHyper hyper = hyper_for(ds, cfg);
  std::unique_ptr<Recommender> model = make_model(cfg.model, hyper, std::move(vocab), cfg.seed);
  model->set_catalog(ds);

  QueryEncoder encoder(&model->vocabulary(), cfg.t_max, cfg.include_add2bag,
                       cfg.use_return_reason);
  std::vector<Query> train_q = encoder.from_instances(ds, split.train);
  std::vector<Query> val_q = encoder.from_instances(ds, split.val);

  // Sequence models need at least one event; instances whose composed history
  // is empty (e.g. Add2Bag-only under an orders-only composition) are dropped.
  bool history_models = cfg.model == "ssp-lstm" || cfg.model == "ssp-attn";
  if (history_models) {
    auto drop_empty = [](std::vector<Query>& qs, const char* what) {
      size_t before = qs.size();
      qs.erase(std::remove_if(qs.begin(), qs.end(), [](const Query& q) { return q.len == 0; }),
               qs.end());
      if (qs.size() != before)
        logging::debug("dropped %zu %s instances with empty composed histories",
                       before - qs.size(), what);
    };
    drop_empty(train_q, "train");
    drop_empty(val_q, "val");
    if (train_q.empty()) fail(Err::EmptyTrainingSet, "train: no instances with history");
  }

  TrainReport report;
  report.model = cfg.model;

  if (cfg.model == "pmcv") {
    double t0 = now_ms();
    static_cast<PmcvModel*>(model.get())->fit(train_q);
    EpochStats e;
    e.epoch = 1;
    e.val_top1 = val_top1(*model, val_q);
    e.seconds = (now_ms() - t0) / 1e3;
    report.epochs.push_back(e);
    report.best_epoch = 1;
    report.best_val_top1 = e.val_top1;
    return {std::move(model), std::move(report)};
  }

  auto* nn_model = static_cast<NeuralRecommender*>(model.get());
  nn::NamedParams named = nn_model->parameters();
  std::vector<nn::Tensor> tensors;
  for (auto& [name, t] : named) tensors.push_back(t);
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  acfg.beta1 = cfg.beta1;
  acfg.beta2 = cfg.beta2;
  nn::Adam opt(tensors, acfg);

  Rng shuffle_rng(cfg.seed ^ 0x5eedf00dULL);
  std::vector<size_t> order(train_q.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<std::vector<double>> best_params;
  int epochs_since_best = 0;
  bool need_history = nn_model->needs_history();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double t0 = now_ms();
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t end = std::min(order.size(), start + cfg.batch_size);
      Batch batch = gather_batch(train_q, order, start, end, hyper.num_positions, need_history);
      nn::Tensor probs = nn_model->forward_probs(batch);
      nn::Tensor loss = nn::cross_entropy(probs, batch.labels);
      double lv = loss.item();
      if (!std::isfinite(lv)) fail(Err::DivergedLoss, "train: loss is not finite");
      loss_sum += lv * (end - start);
      seen += end - start;
      nn::backward(loss);
      opt.step();
    }
    EpochStats e;
    e.epoch = epoch;
    e.train_loss = loss_sum / std::max<size_t>(seen, 1);
    e.val_top1 = val_top1(*model, val_q);
    e.seconds = (now_ms() - t0) / 1e3;
    report.epochs.push_back(e);

    if (report.epochs.size() == 1 || e.val_top1 > report.best_val_top1) {
      report.best_val_top1 = e.val_top1;
      report.best_epoch = epoch;
      best_params.clear();
      for (const auto& t : tensors) best_params.push_back(t.values());
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) {
        report.stopped_early = true;
        break;
      }
    }
  }

  // restore the best-validation parameters, not the last
  if (!best_params.empty())
    for (size_t i = 0; i < tensors.size(); ++i) tensors[i].values() = best_params[i];
  return {std::move(model), std::move(report)};
}

}  // namespace sizerec
