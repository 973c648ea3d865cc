#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sizerec/evaluation.hpp"
#include "sizerec/latencybench.hpp"
#include "sizerec/serving.hpp"

namespace py = pybind11;
using namespace sizerec;

namespace {

json parse(const std::string& text, const char* what) {
  try {
    return text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    throw py::value_error(std::string(what) + ": " + e.what());
  }
}

// Python-facing handle around a loaded model bundle.
class PyBundle {
 public:
  explicit PyBundle(const std::string& path) : model_(load_bundle(path)), cache_(1024) {}

  std::string type() const { return model_->type(); }
  std::string version() const { return model_->version(); }

  std::string predict(const std::string& request_json, bool use_cache) {
    RecommendationRequest req = RecommendationRequest::from_json(parse(request_json, "request"));
    RecommendationResponse resp = recommend(req, *model_, use_cache ? &cache_ : nullptr);
    return resp.to_json().dump();
  }

  Recommender& model() { return *model_; }

 private:
  std::unique_ptr<Recommender> model_;
  HistoryCache cache_;
};

}  // namespace

PYBIND11_MODULE(_sizerec, m) {
  m.doc() = "size recommendation engine: synthetic data, training, evaluation, serving";

  py::register_exception<Error>(m, "SizerecError");

  m.def(
      "generate_dataset",
      [](const std::string& config_json, const std::string& out_path) {
        GeneratorConfig cfg = GeneratorConfig::from_json(parse(config_json, "config"));
        Dataset ds = generate_synthetic_dataset(cfg);
        save_dataset(ds, out_path);
        json info{{"instances", ds.instances.size()},
                  {"users", ds.streams.size()},
                  {"products", ds.products.size()},
                  {"num_positions", ds.num_positions},
                  {"census", ds.census.to_json()}};
        return info.dump();
      },
      py::arg("config_json"), py::arg("out_path"),
      "Generate a synthetic dataset and write it to out_path; returns an info JSON string.");

  m.def(
      "dataset_info",
      [](const std::string& path) {
        Dataset ds = load_dataset(path);
        json info{{"instances", ds.instances.size()},
                  {"users", ds.streams.size()},
                  {"products", ds.products.size()},
                  {"scales", ds.scales.size()},
                  {"num_positions", ds.num_positions},
                  {"census", ds.census.to_json()}};
        return info.dump();
      },
      py::arg("path"));

  m.def(
      "train",
      [](const std::string& data_path, const std::string& config_json,
         const std::string& bundle_out) {
        TrainConfig cfg = TrainConfig::from_json(parse(config_json, "config"));
        Dataset ds = load_dataset(data_path);
        SplitResult split = split_backtesting(make_training_instances(ds));
        TrainResult result = train_model(ds, split, cfg);
        save_bundle(*result.model, bundle_out);
        return result.report.to_json().dump();
      },
      py::arg("data_path"), py::arg("config_json"), py::arg("bundle_out"),
      py::call_guard<py::gil_scoped_release>(),
      "Train a model on the dataset's back-testing split; returns the report JSON string.");

  m.def(
      "evaluate_scenarios",
      [](const std::vector<std::string>& bundle_paths, const std::string& data_path) {
        Dataset ds = load_dataset(data_path);
        SplitResult split = split_backtesting(make_training_instances(ds));
        std::vector<std::unique_ptr<Recommender>> loaded;
        std::vector<Recommender*> models;
        for (const auto& p : bundle_paths) {
          loaded.push_back(load_bundle(p));
          models.push_back(loaded.back().get());
        }
        return run_scenarios(models, ds, split).to_tsv();
      },
      py::arg("bundle_paths"), py::arg("data_path"),
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "run_ablation",
      [](const std::string& axis, const std::string& data_path,
         const std::string& config_json) {
        Dataset ds = load_dataset(data_path);
        TrainConfig base = TrainConfig::from_json(parse(config_json, "config"));
        if (axis == "add2bag") return run_add2bag_ablation(ds, base).to_tsv();
        if (axis == "return-reason") return run_return_reason_ablation(ds, base).to_tsv();
        throw py::value_error("axis must be 'add2bag' or 'return-reason'");
      },
      py::arg("axis"), py::arg("data_path"), py::arg("config_json") = std::string(),
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "bench",
      [](const std::vector<std::string>& bundle_paths, std::vector<int> batch_sizes,
         std::vector<int> history_lengths, int warmup, int iterations) {
        BenchConfig cfg;
        if (!batch_sizes.empty()) cfg.batch_sizes = std::move(batch_sizes);
        if (!history_lengths.empty()) cfg.history_lengths = std::move(history_lengths);
        cfg.warmup = warmup;
        cfg.measured = iterations;
        std::vector<BenchRow> rows;
        for (const auto& p : bundle_paths) {
          std::unique_ptr<Recommender> model = load_bundle(p);
          auto r = bench_model(*model, cfg);
          rows.insert(rows.end(), r.begin(), r.end());
        }
        return bench_rows_tsv(rows, machine_descriptor(cfg.blas_threads));
      },
      py::arg("bundle_paths"), py::arg("batch_sizes") = std::vector<int>{},
      py::arg("history_lengths") = std::vector<int>{}, py::arg("warmup") = 5,
      py::arg("iterations") = 30, py::call_guard<py::gil_scoped_release>());

  py::class_<PyBundle>(m, "Bundle")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def_property_readonly("type", &PyBundle::type)
      .def_property_readonly("version", &PyBundle::version)
      .def("predict", &PyBundle::predict, py::arg("request_json"), py::arg("use_cache") = true,
           "Rank sizes for a recommendation request; returns the response JSON string.");

  m.attr("__version__") = "1.0.0";
}
