#pragma once

#include <map>
#include <memory>

#include "sizerec/models.hpp"

namespace sizerec {

struct TrainConfig {
  std::string model = "ssp-lstm";  // pmcv | sfnet | ssp-lstm | ssp-attn
  int batch_size = 0;              // 0 -> model default (SFNet 8128, SSP 1024)
  int epochs = 0;                  // 0 -> model default (SFNet 35, SSP 25)
  double lr = 1e-3;
  double weight_decay = -1.0;      // <0 -> model default (SFNet 1e-5, SSP 1e-4)
  double beta1 = 0.9;
  double beta2 = 0.999;
  int patience = 5;
  uint64_t seed = 7;
  int t_max = kHistoryMax;
  bool include_add2bag = true;
  bool use_return_reason = true;
  json hyper_overrides;  // optional ModelHyper field overrides

  TrainConfig resolved() const;  // defaults filled in by model type
  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double seconds = 0.0;  // wall clock; excluded from determinism comparisons
};

struct TrainReport {
  std::string model;
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_val_top1 = 0.0;
  bool stopped_early = false;
  json to_json(bool include_timing = true) const;
};

struct TrainResult {
  std::unique_ptr<Recommender> model;
  TrainReport report;
};

// Labeled instances are the non-returned orders; returned orders and Add2Bag
// events remain visible inside other instances' histories.
std::vector<Instance> make_training_instances(const Dataset& ds);

TrainResult train_model(const Dataset& ds, const SplitResult& split,
                        const TrainConfig& cfg);

// accuracy@k over ranked feasible positions, ties broken toward lower
// positions inside rank()
std::map<int, double> evaluate_topk(Recommender& model, const std::vector<Query>& queries,
                                    const std::vector<int>& ks = {1, 2, 3});

}  // namespace sizerec
