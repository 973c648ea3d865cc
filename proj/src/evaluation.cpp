#include "sizerec/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace sizerec {

namespace {

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

size_t distinct_users(const std::vector<Instance>& instances) {
  std::set<int> users;
  for (const Instance& ins : instances) users.insert(ins.user);
  return users.size();
}

std::array<double, 3> topk_array(Recommender& model, const std::vector<Query>& queries) {
  if (queries.empty()) return {0.0, 0.0, 0.0};
  auto acc = evaluate_topk(model, queries, {1, 2, 3});
  return {acc.at(1), acc.at(2), acc.at(3)};
}

}  // namespace

ScenarioReport run_scenarios(const std::vector<Recommender*>& models, const Dataset& ds,
                             const SplitResult& split, EncodeOptions opts) {
  static const Scenario kAll[] = {Scenario::General, Scenario::MultipleGender,
                                  Scenario::VIP, Scenario::TrainingUsers};
  ScenarioReport report;
  size_t general_users = distinct_users(split.test);
  std::vector<std::vector<Instance>> filtered;
  for (Scenario sc : kAll) {
    std::vector<Instance> subset = filter_scenario(split.test, ds, sc, split.train);
    ScenarioCounts counts;
    counts.scenario = scenario_name(sc);
    counts.instances = subset.size();
    counts.users = distinct_users(subset);
    counts.user_coverage = general_users ? static_cast<double>(counts.users) / general_users : 0.0;
    report.scenarios.push_back(counts);
    filtered.push_back(std::move(subset));
  }
  for (Recommender* model : models) {
    report.models.push_back(model->type());
    QueryEncoder encoder(&model->vocabulary(), model->hyper().t_max, opts.include_add2bag,
                         model->hyper().use_return_reason);
    std::vector<std::array<double, 3>> row;
    for (const auto& subset : filtered)
      row.push_back(topk_array(*model, encoder.from_instances(ds, subset)));
    report.acc.push_back(std::move(row));
  }
  return report;
}

std::string ScenarioReport::to_tsv() const {
  std::string out = "model";
  for (const ScenarioCounts& sc : scenarios)
    for (const char* m : {"top1", "top2", "top3"})
      out += "\t" + sc.scenario + "_" + m;
  out += "\n";
  for (size_t i = 0; i < models.size(); ++i) {
    out += models[i];
    for (size_t s = 0; s < scenarios.size(); ++s)
      for (double v : acc[i][s]) out += "\t" + fmt3(v);
    out += "\n";
  }
  out += "# counts\nscenario\tinstances\tusers\tuser_coverage\n";
  for (const ScenarioCounts& sc : scenarios)
    out += sc.scenario + "\t" + std::to_string(sc.instances) + "\t" +
           std::to_string(sc.users) + "\t" + fmt3(sc.user_coverage) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Add2Bag ablation
// ---------------------------------------------------------------------------

namespace {

TrainResult train_variant(const Dataset& ds, const SplitResult& split,
                          const TrainConfig& base, const std::string& model,
                          bool include_add2bag, bool use_return_reason) {
  TrainConfig cfg = base;
  cfg.model = model;
  cfg.include_add2bag = include_add2bag;
  cfg.use_return_reason = use_return_reason;
  return train_model(ds, split, cfg);
}

// test instances whose composed history still has at least one event under
// the most restrictive composition used by the ablation (orders only)
std::vector<Instance> with_order_history(const Dataset& ds, const std::vector<Instance>& in,
                                         int t_max) {
  std::vector<Instance> out;
  for (const Instance& ins : in)
    if (!ds.history_before(ins, t_max, /*include_add2bag=*/false).empty())
      out.push_back(ins);
  return out;
}

}  // namespace

Add2BagReport run_add2bag_ablation(const Dataset& ds, const TrainConfig& base) {
  std::vector<Instance> labeled = make_training_instances(ds);
  SplitResult split = split_backtesting(labeled);
  if (split.test.empty()) fail(Err::InsufficientAblationUsers, "add2bag ablation: empty test");

  int test_lo = split.test.front().ts, test_hi = split.test.front().ts;
  for (const Instance& ins : split.test) {
    test_lo = std::min(test_lo, ins.ts);
    test_hi = std::max(test_hi, ins.ts);
  }
  // users with both event types within the test range
  std::set<int> both_users;
  for (size_t u = 0; u < ds.streams.size(); ++u) {
    bool has_order = false, has_a2b = false;
    for (const StreamEvent& ev : ds.streams[u].events) {
      if (ev.timestamp < test_lo || ev.timestamp > test_hi) continue;
      if (ev.type == EventType::Order) has_order = true;
      else has_a2b = true;
    }
    if (has_order && has_a2b) both_users.insert(static_cast<int>(u));
  }
  std::vector<Instance> subset;
  for (const Instance& ins : split.test)
    if (both_users.count(ins.user)) subset.push_back(ins);
  // keep the instance set identical across all four cells
  subset = with_order_history(ds, subset, base.t_max);
  if (distinct_users(subset) < 2)
    fail(Err::InsufficientAblationUsers, "add2bag ablation: fewer than 2 eligible users");

  Add2BagReport report;
  report.eval_users = distinct_users(subset);
  report.eval_instances = subset.size();
  if (ds.census.users_with_order > 0)
    report.coverage_gain_census = static_cast<double>(ds.census.users_add2bag_only) /
                                  static_cast<double>(ds.census.users_with_order);
  int64_t with_order = 0, a2b_only = 0;
  for (const UserStream& st : ds.streams) {
    bool has_order = false, has_a2b = false;
    for (const StreamEvent& ev : st.events)
      (ev.type == EventType::Order ? has_order : has_a2b) = true;
    with_order += has_order;
    a2b_only += (has_a2b && !has_order);
  }
  if (with_order > 0)
    report.coverage_gain_measured = static_cast<double>(a2b_only) / static_cast<double>(with_order);

  for (const std::string& model_type : {std::string("ssp-lstm"), std::string("ssp-attn")}) {
    TrainResult orders_only =
        train_variant(ds, split, base, model_type, /*include_add2bag=*/false, base.use_return_reason);
    TrainResult both =
        train_variant(ds, split, base, model_type, /*include_add2bag=*/true, base.use_return_reason);
    std::array<std::array<std::array<double, 3>, 2>, 2> cells{};
    for (int infer_a2b = 0; infer_a2b < 2; ++infer_a2b) {
      for (int trained_both = 0; trained_both < 2; ++trained_both) {
        Recommender& model = trained_both ? *both.model : *orders_only.model;
        QueryEncoder encoder(&model.vocabulary(), model.hyper().t_max,
                             /*include_add2bag=*/infer_a2b == 0,
                             model.hyper().use_return_reason);
        cells[infer_a2b][trained_both] = topk_array(model, encoder.from_instances(ds, subset));
      }
    }
    report.models.push_back(model_type);
    report.table.push_back(cells);
  }
  return report;
}

std::string Add2BagReport::to_tsv() const {
  std::string out =
      "model\tadd2bag_in_history\ttrained_orders_top1\ttrained_orders_top2\ttrained_orders_top3"
      "\ttrained_both_top1\ttrained_both_top2\ttrained_both_top3\n";
  for (size_t m = 0; m < models.size(); ++m) {
    for (int infer_a2b = 0; infer_a2b < 2; ++infer_a2b) {
      out += models[m];
      out += infer_a2b == 0 ? "\tyes" : "\tno";
      for (int trained_both = 0; trained_both < 2; ++trained_both)
        for (double v : table[m][infer_a2b][trained_both]) out += "\t" + fmt3(v);
      out += "\n";
    }
  }
  out += "# eval_users\t" + std::to_string(eval_users) + "\n";
  out += "# eval_instances\t" + std::to_string(eval_instances) + "\n";
  out += "# coverage_gain_measured\t" + fmt3(coverage_gain_measured) + "\n";
  out += "# coverage_gain_census\t" + fmt3(coverage_gain_census) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// return_reason ablation
// ---------------------------------------------------------------------------

ReturnReasonReport run_return_reason_ablation(const Dataset& ds, const TrainConfig& base) {
  std::vector<Instance> labeled = make_training_instances(ds);
  SplitResult split = split_backtesting(labeled);
  std::vector<Instance> subset = with_order_history(ds, split.test, base.t_max);
  if (subset.empty()) fail(Err::EmptyEvaluationSet, "return_reason ablation: empty test");

  ReturnReasonReport report;
  report.eval_instances = subset.size();
  for (const std::string& model_type : {std::string("ssp-lstm"), std::string("ssp-attn")}) {
    std::array<std::array<double, 3>, 2> cells{};
    for (int with_reason = 1; with_reason >= 0; --with_reason) {
      // order-only histories in both training and inference
      TrainResult trained = train_variant(ds, split, base, model_type,
                                          /*include_add2bag=*/false,
                                          /*use_return_reason=*/with_reason == 1);
      Recommender& model = *trained.model;
      QueryEncoder encoder(&model.vocabulary(), model.hyper().t_max,
                           /*include_add2bag=*/false, model.hyper().use_return_reason);
      cells[with_reason == 1 ? 0 : 1] = topk_array(model, encoder.from_instances(ds, subset));
    }
    report.models.push_back(model_type);
    report.table.push_back(cells);
  }
  return report;
}

std::string ReturnReasonReport::to_tsv() const {
  std::string out = "model\treturn_reason\ttop1\ttop2\ttop3\n";
  for (size_t m = 0; m < models.size(); ++m) {
    for (int variant = 0; variant < 2; ++variant) {
      out += models[m];
      out += variant == 0 ? "\tyes" : "\tno";
      for (double v : table[m][variant]) out += "\t" + fmt3(v);
      out += "\n";
    }
  }
  out += "# eval_instances\t" + std::to_string(eval_instances) + "\n";
  return out;
}

}  // namespace sizerec
