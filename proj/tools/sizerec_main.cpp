#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sizerec/evaluation.hpp"
#include "sizerec/latencybench.hpp"
#include "sizerec/serving.hpp"

using namespace sizerec;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Err::IOError, "cannot open: " + path);
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::exception& e) {
    fail(Err::IOError, "parse error in " + path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Err::IOError, "cannot open for write: " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

SplitResult labeled_split(const Dataset& ds) {
  return split_backtesting(make_training_instances(ds));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"size recommendation engine"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug|info|warn|error|off")
      ->envname("SIZEREC_LOG_LEVEL");
  bool seed_given = false;
  uint64_t seed_override = 0;
  app.add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { seed_given = true; });

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset");
  std::string gen_config, gen_out;
  gen->add_option("--config", gen_config, "generator config JSON file");
  gen->add_option("--out", gen_out, "output dataset path")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model and save its bundle");
  std::string train_model_type = "ssp-lstm", train_data, train_config, train_out, train_report;
  train->add_option("--model", train_model_type, "pmcv|sfnet|ssp-lstm|ssp-attn");
  train->add_option("--data", train_data, "dataset path")->required();
  train->add_option("--config", train_config, "train config JSON file");
  train->add_option("--out", train_out, "bundle output path")->required();
  train->add_option("--report", train_report, "train report JSON output path");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "scenario accuracy for trained bundles");
  std::vector<std::string> eval_bundles;
  std::string eval_data, eval_scenarios = "all", eval_out;
  eval->add_option("--bundle", eval_bundles, "bundle path (repeatable)")->required();
  eval->add_option("--data", eval_data, "dataset path")->required();
  eval->add_option("--scenarios", eval_scenarios, "scenario set (only 'all')");
  eval->add_option("--out", eval_out, "report TSV output path");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run an SSP ablation");
  std::string ablate_axis, ablate_data, ablate_config, ablate_out;
  ablate->add_option("--axis", ablate_axis, "add2bag|return-reason")->required();
  ablate->add_option("--data", ablate_data, "dataset path")->required();
  ablate->add_option("--config", ablate_config, "base train config JSON file");
  ablate->add_option("--out", ablate_out, "report TSV output path");

  // bench
  auto* bench = app.add_subcommand("bench", "CPU inference latency benchmark");
  std::vector<std::string> bench_bundles;
  std::vector<int> bench_batches{1, 8, 32, 128};
  std::vector<int> bench_hist{5, 10, 20, 30, 40};
  int bench_warmup = 5, bench_iters = 30, bench_threads = 1;
  uint64_t bench_seed = 99;
  std::string bench_out = ".";
  bench->add_option("--bundles", bench_bundles, "bundle paths")->required()->delimiter(',');
  bench->add_option("--batch-sizes", bench_batches, "batch sizes")->delimiter(',');
  bench->add_option("--history-lengths", bench_hist, "history lengths")->delimiter(',');
  bench->add_option("--warmup", bench_warmup, "warmup iterations");
  bench->add_option("--iterations", bench_iters, "measured iterations");
  bench->add_option("--threads", bench_threads, "BLAS threads during timing");
  bench->add_option("--bench-seed", bench_seed, "input synthesis seed");
  bench->add_option("--out", bench_out, "output directory")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "offline predictions for request records");
  std::string predict_bundle, predict_requests, predict_out;
  predict->add_option("--bundle", predict_bundle, "bundle path")->required();
  predict->add_option("--requests", predict_requests, "request JSONL path")->required();
  predict->add_option("--out", predict_out, "response JSONL output path");

  // serve
  auto* serve = app.add_subcommand("serve", "recommendation service");
  std::string serve_bundle, serve_bind = "127.0.0.1:8080";
  size_t serve_cache = 1024;
  serve->add_option("--bundle", serve_bundle, "bundle path")->required();
  serve->add_option("--bind", serve_bind, "host:port");
  serve->add_option("--cache-capacity", serve_cache, "history cache entries");

  CLI11_PARSE(app, argc, argv);
  if (!logging::set_level(log_level)) {
    std::cerr << "unknown log level: " << log_level << "\n";
    return 2;
  }

  try {
    if (*gen) {
      GeneratorConfig cfg;
      if (!gen_config.empty()) cfg = GeneratorConfig::from_json(read_json_file(gen_config));
      if (seed_given) cfg.seed = seed_override;
      Dataset ds = generate_synthetic_dataset(cfg);
      save_dataset(ds, gen_out);
      logging::info("wrote %zu instances (%zu users, %zu products) to %s",
                    ds.instances.size(), ds.streams.size(), ds.products.size(),
                    gen_out.c_str());
    } else if (*train) {
      TrainConfig cfg;
      if (!train_config.empty()) cfg = TrainConfig::from_json(read_json_file(train_config));
      if (train->count("--model")) cfg.model = train_model_type;
      if (seed_given) cfg.seed = seed_override;
      Dataset ds = load_dataset(train_data);
      SplitResult split = labeled_split(ds);
      TrainResult result = train_model(ds, split, cfg);
      save_bundle(*result.model, train_out);
      json report = result.report.to_json();
      if (!train_report.empty()) write_text_file(train_report, report.dump(2) + "\n");
      logging::info("trained %s: best val top1 %.4f (epoch %d)%s", cfg.model.c_str(),
                    result.report.best_val_top1, result.report.best_epoch,
                    result.report.stopped_early ? ", stopped early" : "");
    } else if (*eval) {
      if (eval_scenarios != "all") fail(Err::InvalidConfig, "only --scenarios all is supported");
      Dataset ds = load_dataset(eval_data);
      SplitResult split = labeled_split(ds);
      std::vector<std::unique_ptr<Recommender>> loaded;
      std::vector<Recommender*> models;
      for (const std::string& path : eval_bundles) {
        loaded.push_back(load_bundle(path));
        models.push_back(loaded.back().get());
      }
      ScenarioReport report = run_scenarios(models, ds, split);
      std::string tsv = report.to_tsv();
      std::cout << tsv;
      if (!eval_out.empty()) write_text_file(eval_out, tsv);
    } else if (*ablate) {
      Dataset ds = load_dataset(ablate_data);
      TrainConfig base;
      if (!ablate_config.empty()) base = TrainConfig::from_json(read_json_file(ablate_config));
      if (seed_given) base.seed = seed_override;
      std::string tsv;
      if (ablate_axis == "add2bag") {
        tsv = run_add2bag_ablation(ds, base).to_tsv();
      } else if (ablate_axis == "return-reason") {
        tsv = run_return_reason_ablation(ds, base).to_tsv();
      } else {
        fail(Err::InvalidConfig, "unknown ablation axis: " + ablate_axis);
      }
      std::cout << tsv;
      if (!ablate_out.empty()) write_text_file(ablate_out, tsv);
    } else if (*bench) {
      BenchConfig cfg;
      cfg.batch_sizes = bench_batches;
      cfg.history_lengths = bench_hist;
      cfg.warmup = bench_warmup;
      cfg.measured = bench_iters;
      cfg.seed = bench_seed;
      cfg.blas_threads = bench_threads;
      std::vector<BenchRow> rows;
      for (const std::string& path : bench_bundles) {
        std::unique_ptr<Recommender> model = load_bundle(path);
        logging::info("benchmarking %s", model->type().c_str());
        std::vector<BenchRow> r = bench_model(*model, cfg);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      std::string machine = machine_descriptor(cfg.blas_threads);
      emit_bench_report(rows, machine, bench_out);
      std::cout << bench_rows_tsv(rows, machine);
    } else if (*predict) {
      std::unique_ptr<Recommender> model = load_bundle(predict_bundle);
      std::ifstream f(predict_requests);
      if (!f) fail(Err::IOError, "cannot open: " + predict_requests);
      std::string line, out_text;
      size_t n = 0;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        RecommendationRequest req = RecommendationRequest::from_json(json::parse(line));
        RecommendationResponse resp = recommend(req, *model, nullptr);
        out_text += resp.to_json().dump() + "\n";
        ++n;
      }
      if (!predict_out.empty()) write_text_file(predict_out, out_text);
      else std::cout << out_text;
      logging::info("predicted %zu requests", n);
    } else if (*serve) {
      size_t colon = serve_bind.rfind(':');
      if (colon == std::string::npos) fail(Err::InvalidConfig, "--bind must be host:port");
      std::string host = serve_bind.substr(0, colon);
      int port = std::stoi(serve_bind.substr(colon + 1));
      std::unique_ptr<Recommender> model = load_bundle(serve_bundle);
      RecommendServer server(*model, serve_cache);
      server.listen(host, port);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
