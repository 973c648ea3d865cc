#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "sizerec/evaluation.hpp"
#include "support.hpp"

using namespace sizerec;

namespace {

GeneratorConfig eval_config(uint64_t seed = 23) {
  GeneratorConfig cfg;
  cfg.n_users = 200;
  cfg.n_products = 80;
  cfg.n_brands = 10;
  cfg.n_scales = 4;
  cfg.events_per_user_range = {3, 9};
  cfg.add2bag_fraction = 0.3;
  cfg.return_rate = 0.3;
  cfg.noise_rate = 0.2;
  cfg.multi_gender_fraction = 0.3;
  cfg.seed = seed;
  return cfg;
}

TrainConfig tiny_ssp() {
  TrainConfig cfg;
  cfg.model = "ssp-lstm";
  cfg.batch_size = 128;
  cfg.epochs = 2;
  cfg.seed = 4;
  cfg.hyper_overrides =
      json{{"embed_dim", 8}, {"lstm_hidden", 6}, {"heads", 2}, {"product_encoder_out", 16},
           {"mix_hidden", 16}, {"attn_mlp_hidden", 16}};
  return cfg;
}

}  // namespace

TEST_CASE("run_scenarios: counts, monotone top-k, deterministic output") {
  Dataset ds = generate_synthetic_dataset(eval_config());
  SplitResult split = split_backtesting(make_training_instances(ds));

  Vocabulary vocab = build_vocabulary(ds, split.train);
  ModelHyper hyper;
  hyper.num_positions = ds.num_positions;
  PmcvModel pmcv(hyper, vocab);
  QueryEncoder enc(&vocab, kHistoryMax, true, true);
  pmcv.fit(enc.from_instances(ds, split.train));
  pmcv.set_catalog(ds);

  ScenarioReport report = run_scenarios({&pmcv}, ds, split);
  REQUIRE(report.scenarios.size() == 4);
  REQUIRE(report.models.size() == 1);
  CHECK(report.scenarios[0].scenario == "General");

  size_t general_users = report.scenarios[0].users;
  size_t general_instances = report.scenarios[0].instances;
  CHECK(general_instances == split.test.size());
  for (const ScenarioCounts& sc : report.scenarios) {
    CHECK(sc.instances <= general_instances);  // General bounds every filter
    CHECK(sc.users <= general_users);
  }
  for (const auto& row : report.acc)
    for (const auto& cell : row) {
      CHECK(cell[0] <= cell[1]);
      CHECK(cell[1] <= cell[2]);
      CHECK(cell[2] <= 1.0);
    }

  // TrainingUsers coverage equals the exact intersection ratio
  std::set<int> train_users, test_users, inter;
  for (const Instance& i : split.train) train_users.insert(i.user);
  for (const Instance& i : split.test) test_users.insert(i.user);
  for (int u : test_users)
    if (train_users.count(u)) inter.insert(u);
  const ScenarioCounts& tu = report.scenarios[3];
  CHECK(tu.scenario == "TrainingUsers");
  CHECK(tu.users == inter.size());
  CHECK(tu.user_coverage ==
        doctest::Approx(static_cast<double>(inter.size()) / test_users.size()).epsilon(1e-12));

  // deterministic bytes
  ScenarioReport again = run_scenarios({&pmcv}, ds, split);
  CHECK(report.to_tsv() == again.to_tsv());
  CHECK(report.to_tsv().find("General_top1") != std::string::npos);
}

TEST_CASE("composition: instances without Add2Bag encode identically either way") {
  Dataset ds = generate_synthetic_dataset(eval_config());
  Vocabulary vocab = build_vocabulary(ds, ds.instances);
  QueryEncoder with(&vocab, kHistoryMax, true, true);
  QueryEncoder without(&vocab, kHistoryMax, false, true);
  size_t checked = 0;
  for (const Instance& ins : ds.instances) {
    auto full = ds.history_before(ins, kHistoryMax, true);
    bool has_a2b = std::any_of(full.begin(), full.end(), [](const Event& e) {
      return e.type == EventType::Add2Bag;
    });
    if (has_a2b) continue;
    Query a = with.from_instance(ds, ins);
    Query b = without.from_instance(ds, ins);
    CHECK(a.event_ids == b.event_ids);
    CHECK(a.day_offsets == b.day_offsets);
    if (++checked == 25) break;
  }
  CHECK(checked == 25);
}

TEST_CASE("return_reason variant B is invariant to reason shuffling (bitwise)") {
  Dataset ds = generate_synthetic_dataset(eval_config());
  Vocabulary vocab = build_vocabulary(ds, ds.instances);
  ModelHyper hyper;
  hyper.num_positions = ds.num_positions;
  hyper.embed_dim = 8;
  hyper.lstm_hidden = 6;
  hyper.heads = 2;
  hyper.product_encoder_out = 16;
  hyper.mix_hidden = 16;
  hyper.attn_mlp_hidden = 16;
  hyper.use_return_reason = false;  // variant B: constant token
  SspLstmModel lstm(hyper, vocab, 9);
  lstm.set_catalog(ds);
  SspAttentionModel attn(hyper, vocab, 10);
  attn.set_catalog(ds);

  QueryEncoder enc(&vocab, kHistoryMax, /*include_add2bag=*/false, /*use_return_reason=*/false);
  size_t checked = 0;
  Rng rng(31);
  for (const Instance& ins : ds.instances) {
    std::vector<Event> hist = ds.history_before(ins, kHistoryMax, false);
    if (hist.size() < 2) continue;
    Query original = enc.from_instance(ds, ins);
    // shuffle the raw return reasons; the constant-token encoding must not see it
    std::vector<Event> shuffled = hist;
    for (Event& e : shuffled)
      e.reason = static_cast<ReturnReason>(rng.uniform_int(0, 3));
    const Product& product = ds.products[ins.product];
    Query mutated = enc.from_events(shuffled, product, ds.scale_length(ins.product), ins.ts,
                                    ds.streams[ins.user].user);
    CHECK(original.event_ids == mutated.event_ids);
    CHECK(testsupport::bitwise_equal(lstm.predict_single(original),
                                     lstm.predict_single(mutated)));
    CHECK(testsupport::bitwise_equal(attn.predict_single(original),
                                     attn.predict_single(mutated)));
    if (++checked == 10) break;
  }
  CHECK(checked == 10);
}

TEST_CASE("add2bag ablation: structure and exact census match") {
  GeneratorConfig gcfg = eval_config(29);
  gcfg.n_users = 160;
  gcfg.add2bag_fraction = 0.35;
  Dataset ds = generate_synthetic_dataset(gcfg);
  Add2BagReport report = run_add2bag_ablation(ds, tiny_ssp());

  REQUIRE(report.models.size() == 2);
  CHECK(report.models[0] == "ssp-lstm");
  CHECK(report.models[1] == "ssp-attn");
  CHECK(report.eval_users >= 2);
  CHECK(report.eval_instances >= report.eval_users);
  CHECK(report.coverage_gain_measured == report.coverage_gain_census);  // exact
  for (const auto& cells : report.table)
    for (const auto& infer_row : cells)
      for (const auto& acc : infer_row) {
        CHECK(acc[0] <= acc[1]);
        CHECK(acc[1] <= acc[2]);
      }
  std::string tsv = report.to_tsv();
  CHECK(tsv.find("trained_both_top1") != std::string::npos);
  CHECK(tsv.find("coverage_gain_census") != std::string::npos);
}

TEST_CASE("return_reason ablation: structure") {
  Dataset ds = generate_synthetic_dataset(eval_config(31));
  ReturnReasonReport report = run_return_reason_ablation(ds, tiny_ssp());
  REQUIRE(report.models.size() == 2);
  CHECK(report.eval_instances > 0);
  for (const auto& rows : report.table)
    for (const auto& acc : rows) {
      CHECK(acc[0] <= acc[1]);
      CHECK(acc[1] <= acc[2]);
    }
  std::string tsv = report.to_tsv();
  CHECK(tsv.find("return_reason") != std::string::npos);
}
