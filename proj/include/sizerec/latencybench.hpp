#pragma once

#include "sizerec/models.hpp"

namespace sizerec {

struct BenchConfig {
  std::vector<int> batch_sizes{1, 8, 32, 128};
  std::vector<int> history_lengths{5, 10, 20, 30, 40};
  int warmup = 5;
  int measured = 30;
  uint64_t seed = 99;
  int blas_threads = 1;  // recorded in the machine descriptor
  void validate() const;
};

struct BenchRow {
  std::string model;
  int batch = 0;
  int history_len = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double std_ms = 0.0;
  int iterations = 0;
};

std::string machine_descriptor(int blas_threads);

// Wall-clock timing of forward passes only; inputs are pre-built outside the
// timed region, warmup iterations are discarded.
std::vector<BenchRow> bench_model(Recommender& model, const BenchConfig& cfg);

std::string bench_rows_tsv(const std::vector<BenchRow>& rows, const std::string& machine);
// Writes bench.tsv plus the two plot-ready series files:
// latency_vs_batch.tsv (history fixed at 20) and latency_vs_history.tsv.
void emit_bench_report(const std::vector<BenchRow>& rows, const std::string& machine,
                       const std::string& out_dir);

}  // namespace sizerec
