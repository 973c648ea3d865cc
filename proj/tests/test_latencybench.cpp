#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "sizerec/latencybench.hpp"
#include "support.hpp"

using namespace sizerec;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("bench config validation") {
  BenchConfig ok;
  ok.validate();
  BenchConfig few = ok;
  few.measured = 29;
  CHECK_THROWS_AS(few.validate(), Error);
  BenchConfig cold = ok;
  cold.warmup = 4;
  CHECK_THROWS_AS(cold.validate(), Error);
  BenchConfig empty = ok;
  empty.batch_sizes.clear();
  CHECK_THROWS_AS(empty.validate(), Error);
}

TEST_CASE("bench_model produces sane per-cell statistics") {
  GeneratorConfig gcfg;
  gcfg.n_users = 60;
  gcfg.n_products = 30;
  gcfg.n_brands = 6;
  gcfg.n_scales = 3;
  gcfg.events_per_user_range = {2, 6};
  gcfg.seed = 3;
  Dataset ds = generate_synthetic_dataset(gcfg);
  Vocabulary vocab = build_vocabulary(ds, ds.instances);
  ModelHyper hyper;
  hyper.num_positions = ds.num_positions;
  hyper.embed_dim = 8;
  hyper.lstm_hidden = 6;
  hyper.heads = 2;
  hyper.product_encoder_out = 16;
  hyper.mix_hidden = 16;
  SspLstmModel model(hyper, vocab, 2);
  model.set_catalog(ds);

  BenchConfig cfg;
  cfg.batch_sizes = {1, 4};
  cfg.history_lengths = {2, 5};
  cfg.warmup = 5;
  cfg.measured = 30;
  std::vector<BenchRow> rows = bench_model(model, cfg);
  REQUIRE(rows.size() == 4);
  for (const BenchRow& r : rows) {
    CHECK(r.mean_ms > 0.0);
    CHECK(r.p50_ms <= r.p95_ms);
    CHECK(r.std_ms >= 0.0);
    CHECK(r.iterations == 30);
    CHECK(r.model == "ssp-lstm");
  }
}

TEST_CASE("emit_bench_report: cell counts and byte-stable re-emission") {
  // 3 models x 4 batches x 1 history -> 12 rows
  std::vector<BenchRow> rows;
  for (const char* m : {"sfnet", "ssp-lstm", "ssp-attn"})
    for (int batch : {1, 8, 32, 128})
      rows.push_back(BenchRow{m, batch, 20, 1.5, 1.4, 1.9, 0.1, 30});
  REQUIRE(rows.size() == 12);

  std::string dir = "/tmp/sizerec_bench_emit";
  std::system(("mkdir -p " + dir).c_str());
  std::string machine = "test machine x2, fp64, blas_threads=1";
  emit_bench_report(rows, machine, dir);
  std::string first = slurp(dir + "/bench.tsv");
  CHECK(first.find("mean_ms") != std::string::npos);

  emit_bench_report(rows, machine, dir);
  CHECK(slurp(dir + "/bench.tsv") == first);  // byte-identical re-emission

  // panel (a): rows at the history anchor only; panel (b): |hist| x |batch| per model
  std::string a = slurp(dir + "/latency_vs_batch.tsv");
  std::string b = slurp(dir + "/latency_vs_history.tsv");
  auto count_lines = [](const std::string& text) {
    size_t n = 0;
    for (char c : text) n += c == '\n';
    return n;
  };
  CHECK(count_lines(a) == 2 + 12);  // machine + header + 3 models * 4 batches
  CHECK(count_lines(b) == 2 + 12);  // 3 models * 4 batches * 1 history

  std::vector<BenchRow> multi;
  for (int batch : {1, 8})
    for (int hist : {5, 10, 20})
      multi.push_back(BenchRow{"ssp-lstm", batch, hist, 1.0, 1.0, 1.0, 0.0, 30});
  emit_bench_report(multi, machine, dir);
  CHECK(count_lines(slurp(dir + "/latency_vs_history.tsv")) == 2 + 6);  // |hist| x |batch|
  CHECK(count_lines(slurp(dir + "/latency_vs_batch.tsv")) == 2 + 2);    // anchor hist = 20

  CHECK_THROWS_AS(emit_bench_report({}, machine, dir), Error);
}

TEST_CASE("machine descriptor mentions thread count") {
  std::string d = machine_descriptor(2);
  CHECK(d.find("blas_threads=2") != std::string::npos);
  CHECK(d.find("fp64") != std::string::npos);
}
