#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

#include "tsdistill/config.hpp"
#include "tsdistill/evaluate.hpp"
#include "tsdistill/losses.hpp"
#include "tsdistill/synth.hpp"
#include "tsdistill/trainer.hpp"

namespace py = pybind11;
using namespace tsdistill;

namespace {

py::array_t<float> tensor_to_numpy(const Tensor& t) {
  std::vector<ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Tensor numpy_to_tensor(py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  Shape shape(a.ndim());
  for (ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

RunConfig config_from_json(const std::string& text) {
  return text.empty() ? RunConfig{} : RunConfig::from_json_text(text);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "self-distilled time-series representation engine";

  m.def(
      "generate_corpus",
      [](int64_t n_samples, int64_t length, uint64_t seed) {
        synth::Corpus corpus = synth::generate_corpus(seed, n_samples, length);
        py::array_t<float> out({corpus.n_samples, corpus.length});
        std::copy(corpus.data.begin(), corpus.data.end(), out.mutable_data());
        return out;
      },
      py::arg("n_samples"), py::arg("length"), py::arg("seed") = 42,
      "synthetic corpus as a float32 array of shape (n_samples, length)");

  m.def(
      "save_corpus",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> data,
         const std::string& path) {
        if (data.ndim() != 2) throw std::invalid_argument("expect (n, T) array");
        synth::Corpus corpus;
        corpus.n_samples = data.shape(0);
        corpus.length = data.shape(1);
        corpus.data.assign(data.data(), data.data() + data.size());
        synth::save_utsd(corpus, path);
      },
      py::arg("data"), py::arg("path"), "write a UTSD corpus file");

  m.def(
      "load_corpus",
      [](const std::string& path) {
        synth::Corpus corpus = synth::load_utsd(path);
        py::array_t<float> out({corpus.n_samples, corpus.length});
        std::copy(corpus.data.begin(), corpus.data.end(), out.mutable_data());
        return out;
      },
      py::arg("path"), "read a UTSD corpus file");

  m.def("default_config", [] { return RunConfig{}.to_json(); },
        "canonical JSON of the default run configuration");

  m.def(
      "config_hash",
      [](const std::string& config_json) {
        return config_from_json(config_json).hash_hex();
      },
      py::arg("config_json") = "", "provenance hash of a configuration");

  m.def(
      "sinkhorn_knopp",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> logits,
         double tau, int iterations) {
        return tensor_to_numpy(
            sinkhorn_knopp(numpy_to_tensor(logits), tau, iterations));
      },
      py::arg("logits"), py::arg("tau"), py::arg("iterations") = 3,
      "balanced soft assignments over prototypes; rows sum to 1");

  m.def(
      "pretrain",
      [](const std::string& corpus_path, const std::string& out_dir,
         const std::string& config_json) {
        RunConfig cfg = config_from_json(config_json);
        synth::Corpus corpus = synth::load_utsd(corpus_path);
        std::ofstream metrics(out_dir + "/metrics.csv");
        TrainResult result = pretrain(cfg, corpus, out_dir, "", &metrics);
        py::list rows;
        for (const MetricsRow& r : result.metrics) {
          py::dict d;
          d["step"] = r.step;
          d["lr"] = r.lr;
          d["total"] = r.total;
          d["dino"] = r.dino;
          d["ibot"] = r.ibot;
          d["koleo"] = r.koleo;
          d["target_entropy"] = r.target_entropy;
          rows.append(d);
        }
        return rows;
      },
      py::arg("corpus_path"), py::arg("out_dir"), py::arg("config_json") = "",
      "run pretraining; returns the logged metrics rows");

  m.def(
      "embed",
      [](const std::string& checkpoint_path,
         py::array_t<float, py::array::c_style | py::array::forcecast> series) {
        if (series.ndim() != 2 && series.ndim() != 3)
          throw std::invalid_argument("expect (n, T) or (n, C, T) array");
        Checkpoint ckpt = load_utck(checkpoint_path);
        RunConfig cfg = RunConfig::from_json_text(ckpt.config_json);
        ModelParams teacher = params_from_checkpoint(ckpt, "teacher.", cfg.model);
        LabeledDataset ds;
        ds.label_vocab = {"unlabeled"};
        const ssize_t n = series.shape(0);
        const ssize_t channels = series.ndim() == 3 ? series.shape(1) : 1;
        const ssize_t length = series.shape(series.ndim() - 1);
        for (ssize_t i = 0; i < n; ++i) {
          std::vector<std::vector<float>> sample;
          for (ssize_t c = 0; c < channels; ++c) {
            const float* base = series.data() + (i * channels + c) * length;
            sample.emplace_back(base, base + length);
          }
          ds.series.push_back(std::move(sample));
          ds.labels.push_back(0);
        }
        return tensor_to_numpy(embed(teacher, cfg.model, ds, cfg.eval.embed_len));
      },
      py::arg("checkpoint_path"), py::arg("series"),
      "frozen CLS features from the exported teacher");

  m.def(
      "linear_probe",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> train,
         std::vector<int> train_labels,
         py::array_t<float, py::array::c_style | py::array::forcecast> test,
         std::vector<int> test_labels, int n_classes, uint64_t seed,
         const std::string& config_json) {
        RunConfig cfg = config_from_json(config_json);
        ProbeResult result =
            linear_probe(numpy_to_tensor(train), train_labels,
                         numpy_to_tensor(test), test_labels, n_classes, seed,
                         cfg.eval);
        return result.accuracy;
      },
      py::arg("train_features"), py::arg("train_labels"), py::arg("test_features"),
      py::arg("test_labels"), py::arg("n_classes"), py::arg("seed") = 0,
      py::arg("config_json") = "",
      "linear probe accuracy on frozen features");

  m.def(
      "parse_ts",
      [](const std::string& path) {
        LabeledDataset ds = parse_ts_file(path);
        py::list series;
        for (const auto& sample : ds.series) {
          py::list channels;
          for (const auto& channel : sample) {
            py::array_t<float> arr(static_cast<ssize_t>(channel.size()));
            std::copy(channel.begin(), channel.end(), arr.mutable_data());
            channels.append(arr);
          }
          series.append(channels);
        }
        return py::make_tuple(series, ds.labels, ds.label_vocab);
      },
      py::arg("path"), "(series, labels, label_vocab) from a .ts file");

  m.attr("__version__") = "0.1.0";
}
