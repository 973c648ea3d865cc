#pragma once

#include "sizerec/training.hpp"

namespace sizerec {

struct ScenarioCounts {
  std::string scenario;
  size_t instances = 0;
  size_t users = 0;
  double user_coverage = 0.0;  // users / users(General)
};

// Accuracy per model x scenario (Table-1 layout).
struct ScenarioReport {
  std::vector<std::string> models;
  std::vector<ScenarioCounts> scenarios;
  // acc[model][scenario] = {top1, top2, top3}
  std::vector<std::vector<std::array<double, 3>>> acc;
  std::string to_tsv() const;
};

ScenarioReport run_scenarios(const std::vector<Recommender*>& models, const Dataset& ds,
                             const SplitResult& split, EncodeOptions opts = {});

// Four-way Add2Bag ablation per SSP model: train composition x inference
// composition, evaluated on test users having both event types in the test
// range (Table-2 layout).
struct Add2BagReport {
  std::vector<std::string> models;
  // table[model][infer_with_a2b ? 0 : 1][trained_both ? 1 : 0] = {top1,top2,top3}
  std::vector<std::array<std::array<std::array<double, 3>, 2>, 2>> table;
  size_t eval_users = 0;
  size_t eval_instances = 0;
  double coverage_gain_measured = 0.0;  // add2bag-only users / users with orders
  double coverage_gain_census = 0.0;    // same ratio from the generator census
  std::string to_tsv() const;
};

Add2BagReport run_add2bag_ablation(const Dataset& ds, const TrainConfig& base);

// return_reason ablation on Order-only histories: the field as-is vs replaced
// by a constant token (Table-3 layout).
struct ReturnReasonReport {
  std::vector<std::string> models;
  // table[model][with_reason ? 0 : 1] = {top1, top2, top3}
  std::vector<std::array<std::array<double, 3>, 2>> table;
  size_t eval_instances = 0;
  std::string to_tsv() const;
};

ReturnReasonReport run_return_reason_ablation(const Dataset& ds, const TrainConfig& base);

}  // namespace sizerec
