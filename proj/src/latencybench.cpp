#include "sizerec/latencybench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace sizerec {

void BenchConfig::validate() const {
  if (measured < 30) fail(Err::InvalidConfig, "bench: measured iterations must be >= 30");
  if (warmup < 5) fail(Err::InvalidConfig, "bench: warmup must be >= 5");
  if (batch_sizes.empty() || history_lengths.empty())
    fail(Err::InvalidConfig, "bench: empty sweep axes");
  for (int b : batch_sizes)
    if (b < 1) fail(Err::InvalidConfig, "bench: batch sizes must be >= 1");
  for (int h : history_lengths)
    if (h < 1) fail(Err::InvalidConfig, "bench: history lengths must be >= 1");
}

std::string machine_descriptor(int blas_threads) {
  std::string cpu = "unknown cpu";
  std::ifstream f("/proc/cpuinfo");
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind("model name", 0) == 0) {
      size_t colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(colon + 1);
        while (!cpu.empty() && cpu.front() == ' ') cpu.erase(cpu.begin());
      }
      break;
    }
  }
  std::ostringstream out;
  out << cpu << " x" << std::thread::hardware_concurrency()
      << ", fp64, blas_threads=" << blas_threads;
  return out.str();
}

namespace {

// random but vocabulary-consistent inputs for one (batch, history) cell
std::vector<Query> synth_queries(Recommender& model, int batch, int hist_len, Rng& rng) {
  const Vocabulary& vocab = model.vocabulary();
  const std::vector<Scale>& scales = model.scales();
  if (scales.empty()) fail(Err::ModelLoadError, "bench: bundle has no scales");
  using F = Vocabulary::Field;
  auto rand_id = [&](F f) {
    int card = vocab.cardinality(f);
    return card <= 2 ? kUnkId : static_cast<int32_t>(rng.uniform_int(2, card - 1));
  };
  std::vector<Query> out;
  out.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    Query q;
    const Scale& scale = scales[rng.uniform_int(0, static_cast<int64_t>(scales.size()) - 1)];
    q.scale_len = static_cast<int>(scale.sizes.size());
    q.len = hist_len;
    q.event_ids.reserve(hist_len * 6);
    for (int t = 0; t < hist_len; ++t) {
      q.event_ids.push_back(rng.bernoulli(0.3) ? 3 : 2);  // Add2Bag : Order
      q.event_ids.push_back(rand_id(F::Brand));
      q.event_ids.push_back(rand_id(F::Category));
      q.event_ids.push_back(rand_id(F::Scale));
      q.event_ids.push_back(size_position_id(static_cast<int>(rng.uniform_int(0, q.scale_len - 1))));
      q.event_ids.push_back(return_reason_id(static_cast<ReturnReason>(rng.uniform_int(0, 3))));
      q.day_offsets.push_back(static_cast<double>(rng.uniform_int(0, kDayOffsetClip)));
    }
    int32_t brand = rand_id(F::Brand), category = rand_id(F::Category), sc = rand_id(F::Scale);
    q.product6 = {kPadId, brand, category, sc, kPadId, kPadId};
    q.product4 = {rand_id(F::Product), brand, category, sc};
    q.user_id = rand_id(F::User);
    q.raw_user = "bench-user";
    q.raw_brand = "bench-brand";
    q.raw_category = "bench-category";
    out.push_back(std::move(q));
  }
  return out;
}

struct CellStats {
  double mean, p50, p95, stddev;
};

CellStats stats_from(std::vector<double> times) {
  std::sort(times.begin(), times.end());
  double sum = 0.0;
  for (double t : times) sum += t;
  double mean = sum / times.size();
  double var = 0.0;
  for (double t : times) var += (t - mean) * (t - mean);
  var /= times.size();
  auto pick = [&](double q) {
    size_t idx = static_cast<size_t>(q * (times.size() - 1));
    return times[idx];
  };
  return {mean, pick(0.5), pick(0.95), std::sqrt(var)};
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::vector<BenchRow> bench_model(Recommender& model, const BenchConfig& cfg) {
  cfg.validate();
  nn::detail::set_blas_threads(cfg.blas_threads);
  Rng rng(cfg.seed);
  std::vector<BenchRow> rows;
  auto* neural = dynamic_cast<NeuralRecommender*>(&model);
  for (int hist : cfg.history_lengths) {
    for (int batch : cfg.batch_sizes) {
      std::vector<Query> queries = synth_queries(model, batch, hist, rng);
      std::vector<double> times;
      times.reserve(cfg.measured);
      nn::NoGradGuard guard;
      if (neural) {
        // inputs are assembled outside the timed region
        Batch prepared = make_batch(queries, 0, queries.size(),
                                    model.hyper().num_positions, neural->needs_history());
        for (int it = 0; it < cfg.warmup + cfg.measured; ++it) {
          double t0 = now_ms();
          nn::Tensor probs = neural->forward_probs(prepared);
          double t1 = now_ms();
          (void)probs;
          if (it >= cfg.warmup) times.push_back(t1 - t0);
        }
      } else {
        for (int it = 0; it < cfg.warmup + cfg.measured; ++it) {
          double t0 = now_ms();
          auto probs = model.predict_probs(queries);
          double t1 = now_ms();
          (void)probs;
          if (it >= cfg.warmup) times.push_back(t1 - t0);
        }
      }
      CellStats s = stats_from(std::move(times));
      rows.push_back(BenchRow{model.type(), batch, hist, s.mean, s.p50, s.p95, s.stddev,
                              cfg.measured});
    }
  }
  nn::detail::set_blas_threads(1);
  return rows;
}

std::string bench_rows_tsv(const std::vector<BenchRow>& rows, const std::string& machine) {
  std::string out = "# machine\t" + machine + "\n";
  out += "model\tbatch\thistory_len\tmean_ms\tp50_ms\tp95_ms\tstd_ms\titerations\n";
  for (const BenchRow& r : rows) {
    out += r.model + "\t" + std::to_string(r.batch) + "\t" + std::to_string(r.history_len) +
           "\t" + fmt4(r.mean_ms) + "\t" + fmt4(r.p50_ms) + "\t" + fmt4(r.p95_ms) + "\t" +
           fmt4(r.std_ms) + "\t" + std::to_string(r.iterations) + "\n";
  }
  return out;
}

void emit_bench_report(const std::vector<BenchRow>& rows, const std::string& machine,
                       const std::string& out_dir) {
  if (rows.empty()) fail(Err::InvalidConfig, "emit_bench_report: no rows");
  auto write = [](const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(Err::IOError, "cannot open for write: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) fail(Err::IOError, "write failed: " + path);
  };
  write(out_dir + "/bench.tsv", bench_rows_tsv(rows, machine));

  // panel (a): latency vs batch size at history length 20 (or the closest
  // measured history length)
  int anchor = rows[0].history_len;
  for (const BenchRow& r : rows)
    if (std::abs(r.history_len - 20) < std::abs(anchor - 20)) anchor = r.history_len;
  std::string a = "# machine\t" + machine + "\nmodel\tbatch\tmean_ms\n";
  for (const BenchRow& r : rows)
    if (r.history_len == anchor)
      a += r.model + "\t" + std::to_string(r.batch) + "\t" + fmt4(r.mean_ms) + "\n";
  write(out_dir + "/latency_vs_batch.tsv", a);

  // panel (b): latency vs history length, one series per batch size
  std::string b = "# machine\t" + machine + "\nmodel\tbatch\thistory_len\tmean_ms\n";
  for (const BenchRow& r : rows)
    b += r.model + "\t" + std::to_string(r.batch) + "\t" + std::to_string(r.history_len) +
         "\t" + fmt4(r.mean_ms) + "\n";
  write(out_dir + "/latency_vs_history.tsv", b);
}

}  // namespace sizerec
