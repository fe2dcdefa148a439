#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tsdistill/config.hpp"
#include "tsdistill/evaluate.hpp"
#include "tsdistill/synth.hpp"
#include "tsdistill/trainer.hpp"

namespace fs = std::filesystem;
using namespace tsdistill;

namespace {

struct GlobalArgs {
  std::string config_path;
  int64_t seed = -1;  // overrides config when >= 0
  bool verbose = false;
};

RunConfig load_config(const GlobalArgs& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{}
                                        : RunConfig::from_json_file(g.config_path);
  if (g.seed >= 0) cfg.train.seed = static_cast<uint64_t>(g.seed);
  return cfg;
}

void write_features_csv(const std::string& path, Tensor features,
                        const LabeledDataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  const int64_t F = features.dim(1);
  out << "label";
  for (int64_t j = 0; j < F; ++j) out << ",f" << j;
  out << "\n";
  for (int64_t i = 0; i < features.dim(0); ++i) {
    out << ds.label_vocab[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])];
    for (int64_t j = 0; j < F; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.8g", features.data()[i * F + j]);
      out << buf;
    }
    out << "\n";
  }
}

struct FeatureFile {
  Tensor features;
  std::vector<int> labels;
  std::vector<std::string> vocab;
};

FeatureFile read_features_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty features file");
  std::vector<std::vector<float>> rows;
  FeatureFile file;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string label;
    std::getline(ss, label, ',');
    auto it = std::find(file.vocab.begin(), file.vocab.end(), label);
    if (it == file.vocab.end()) {
      file.vocab.push_back(label);
      it = file.vocab.end() - 1;
    }
    file.labels.push_back(static_cast<int>(it - file.vocab.begin()));
    std::vector<float> values;
    std::string tok;
    while (std::getline(ss, tok, ',')) values.push_back(std::stof(tok));
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw std::runtime_error("no feature rows in " + path);
  const int64_t F = static_cast<int64_t>(rows[0].size());
  file.features = Tensor::zeros({static_cast<int64_t>(rows.size()), F});
  for (size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int64_t>(rows[i].size()) != F)
      throw std::runtime_error("ragged feature rows in " + path);
    std::copy(rows[i].begin(), rows[i].end(),
              file.features.data() + static_cast<int64_t>(i) * F);
  }
  return file;
}

// shared label space across train/test feature files
void align_vocab(FeatureFile& train, FeatureFile& test) {
  for (const std::string& label : test.vocab)
    if (std::find(train.vocab.begin(), train.vocab.end(), label) ==
        train.vocab.end())
      train.vocab.push_back(label);
  for (size_t i = 0; i < test.labels.size(); ++i) {
    const std::string& label = test.vocab[static_cast<size_t>(test.labels[i])];
    test.labels[i] = static_cast<int>(
        std::find(train.vocab.begin(), train.vocab.end(), label) -
        train.vocab.begin());
  }
  test.vocab = train.vocab;
}

struct LoadedModel {
  RunConfig cfg;
  ModelParams teacher;
};

LoadedModel load_teacher(const std::string& checkpoint_path) {
  Checkpoint ckpt = load_utck(checkpoint_path);
  LoadedModel m{RunConfig::from_json_text(ckpt.config_json), ModelParams{}};
  m.teacher = params_from_checkpoint(ckpt, "teacher.", m.cfg.model);
  return m;
}

void append_results(const std::string& path, const std::vector<ResultRow>& rows) {
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path);
  if (fresh) out << results_csv_header() << "\n";
  for (const ResultRow& row : rows) out << to_csv_row(row) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-distilled time-series representation engine"};
  app.require_subcommand(1);
  GlobalArgs global;
  app.add_option("--config", global.config_path, "run configuration JSON");
  app.add_option("--seed", global.seed, "override the config seed");
  app.add_flag("--verbose", global.verbose, "chatty diagnostics on stderr");

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "write a synthetic UTSD corpus");
  std::string gen_out;
  int64_t gen_samples = 1000, gen_length = 512;
  gen->add_option("--out", gen_out, "output corpus path")->required();
  gen->add_option("--samples", gen_samples, "number of series");
  gen->add_option("--length", gen_length, "series length (multiple of 32)");

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "run self-distillation pretraining");
  std::string pre_corpus, pre_out, pre_resume;
  pre->add_option("--corpus", pre_corpus, "UTSD corpus path")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--resume", pre_resume, "checkpoint to resume from");

  // ---- embed ----
  auto* emb = app.add_subcommand("embed", "frozen CLS features for a .ts dataset");
  std::string emb_ckpt, emb_data, emb_out;
  emb->add_option("--checkpoint", emb_ckpt, "UTCK checkpoint")->required();
  emb->add_option("--data", emb_data, ".ts dataset")->required();
  emb->add_option("--out", emb_out, "output features CSV")->required();

  // ---- probe ----
  auto* prb = app.add_subcommand("probe", "linear probe on frozen features");
  std::string prb_ckpt, prb_train, prb_test, prb_ftrain, prb_ftest, prb_out;
  std::string prb_dataset = "dataset", prb_method = "tsdistill";
  int64_t prb_seeds = 3;
  prb->add_option("--checkpoint", prb_ckpt, "UTCK checkpoint");
  prb->add_option("--train", prb_train, "train split .ts");
  prb->add_option("--test", prb_test, "test split .ts");
  prb->add_option("--features-train", prb_ftrain, "precomputed features CSV");
  prb->add_option("--features-test", prb_ftest, "precomputed features CSV");
  prb->add_option("--out", prb_out, "results CSV (appended)")->required();
  prb->add_option("--dataset", prb_dataset, "dataset name for the results");
  prb->add_option("--method", prb_method, "method name for the results");
  prb->add_option("--seeds", prb_seeds, "number of probe seeds");

  // ---- finetune ----
  auto* ft = app.add_subcommand("finetune", "end-to-end fine-tuning");
  std::string ft_ckpt, ft_train, ft_test, ft_out;
  std::string ft_dataset = "dataset", ft_method = "tsdistill";
  int64_t ft_seeds = 3;
  ft->add_option("--checkpoint", ft_ckpt, "UTCK checkpoint")->required();
  ft->add_option("--train", ft_train, "train split .ts")->required();
  ft->add_option("--test", ft_test, "test split .ts")->required();
  ft->add_option("--out", ft_out, "results CSV (appended)")->required();
  ft->add_option("--dataset", ft_dataset, "dataset name for the results");
  ft->add_option("--method", ft_method, "method name for the results");
  ft->add_option("--seeds", ft_seeds, "number of fine-tuning seeds");

  // ---- report ----
  auto* rep = app.add_subcommand("report", "aggregate result CSVs");
  std::vector<std::string> rep_inputs;
  std::string rep_out, rep_plot;
  rep->add_option("--in", rep_inputs, "input results CSV files")->required();
  rep->add_option("--out", rep_out, "aggregate report JSON")->required();
  rep->add_option("--plot", rep_plot, "accuracy-bar plot-data JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      RunConfig cfg = load_config(global);
      if (gen_length % 32 != 0) {
        std::cerr << "error: --length must be a multiple of 32\n";
        return 1;
      }
      synth::Corpus corpus =
          synth::generate_corpus(cfg.train.seed, gen_samples, gen_length);
      synth::save_utsd(corpus, gen_out);
      double mean = 0.0, var = 0.0;
      for (float v : corpus.data) mean += v;
      mean /= static_cast<double>(corpus.data.size());
      for (float v : corpus.data) var += (v - mean) * (v - mean);
      var /= static_cast<double>(corpus.data.size());
      std::cerr << "wrote " << gen_out << ": n=" << corpus.n_samples
                << " T=" << corpus.length << " mean=" << mean
                << " std=" << std::sqrt(var) << "\n";
      return 0;
    }

    if (pre->parsed()) {
      RunConfig cfg = load_config(global);
      synth::Corpus corpus = synth::load_utsd(pre_corpus);
      fs::create_directories(pre_out);
      std::ofstream metrics(pre_out + "/metrics.csv",
                            pre_resume.empty() ? std::ios::trunc : std::ios::app);
      TrainResult result = pretrain(cfg, corpus, pre_out, pre_resume, &metrics);
      std::cerr << "pretraining finished: " << result.total_steps << " steps, "
                << result.skipped_steps << " skipped; final checkpoint "
                << pre_out << "/final.utck\n";
      return 0;
    }

    if (emb->parsed()) {
      LoadedModel model = load_teacher(emb_ckpt);
      LabeledDataset data = parse_ts_file(emb_data);
      Tensor features =
          embed(model.teacher, model.cfg.model, data, model.cfg.eval.embed_len);
      write_features_csv(emb_out, features, data);
      std::cerr << "wrote " << emb_out << ": " << features.dim(0) << " x "
                << features.dim(1) << " features\n";
      return 0;
    }

    if (prb->parsed()) {
      RunConfig cfg = load_config(global);
      FeatureFile train, test;
      if (!prb_ftrain.empty() && !prb_ftest.empty()) {
        train = read_features_csv(prb_ftrain);
        test = read_features_csv(prb_ftest);
        align_vocab(train, test);
      } else if (!prb_ckpt.empty() && !prb_train.empty() && !prb_test.empty()) {
        LoadedModel model = load_teacher(prb_ckpt);
        cfg = model.cfg;
        LabeledDataset train_ds = parse_ts_file(prb_train);
        LabeledDataset test_ds = parse_ts_file(prb_test);
        train.features = embed(model.teacher, cfg.model, train_ds,
                               cfg.eval.embed_len);
        test.features = embed(model.teacher, cfg.model, test_ds,
                              cfg.eval.embed_len);
        train.labels = train_ds.labels;
        test.labels = test_ds.labels;
        train.vocab = train_ds.label_vocab;
        test.vocab = test_ds.label_vocab;
      } else {
        std::cerr << "error: probe needs either --checkpoint/--train/--test or "
                     "--features-train/--features-test\n";
        return 1;
      }
      std::vector<ResultRow> rows;
      for (int64_t s = 0; s < prb_seeds; ++s) {
        ProbeResult pr = linear_probe(
            train.features, train.labels, test.features, test.labels,
            static_cast<int>(train.vocab.size()), static_cast<uint64_t>(s),
            cfg.eval);
        rows.push_back({prb_dataset, s, prb_method, "probe", pr.accuracy});
        if (global.verbose)
          std::cerr << prb_dataset << " seed " << s << " accuracy " << pr.accuracy
                    << "\n";
      }
      append_results(prb_out, rows);
      return 0;
    }

    if (ft->parsed()) {
      LoadedModel model = load_teacher(ft_ckpt);
      LabeledDataset train_ds = parse_ts_file(ft_train);
      LabeledDataset test_ds = parse_ts_file(ft_test);
      std::vector<ResultRow> rows;
      for (int64_t s = 0; s < ft_seeds; ++s) {
        FinetuneResult fr = finetune(model.teacher, model.cfg.model, train_ds,
                                     test_ds, static_cast<uint64_t>(s),
                                     model.cfg.eval);
        rows.push_back({ft_dataset, s, ft_method, "finetune", fr.accuracy});
        if (global.verbose)
          std::cerr << ft_dataset << " seed " << s << " lr " << fr.selected_lr
                    << " accuracy " << fr.accuracy << "\n";
      }
      append_results(ft_out, rows);
      return 0;
    }

    if (rep->parsed()) {
      std::vector<ResultRow> rows;
      for (const std::string& path : rep_inputs) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        for (ResultRow& row : parse_results_csv(buf.str()))
          rows.push_back(std::move(row));
      }
      AggregateReport report = aggregate(rows);
      std::ofstream out(rep_out);
      if (!out) throw std::runtime_error("cannot open " + rep_out);
      out << report_to_json(report) << "\n";
      if (!rep_plot.empty()) {
        std::ofstream plot(rep_plot);
        if (!plot) throw std::runtime_error("cannot open " + rep_plot);
        plot << accuracy_bar_plot_json(report) << "\n";
      }
      std::cerr << "wrote " << rep_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
