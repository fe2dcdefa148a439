#pragma once

#include <map>
#include <string>
#include <vector>

#include "tsdistill/config.hpp"
#include "tsdistill/dataset.hpp"
#include "tsdistill/model.hpp"

namespace tsdistill {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Frozen features: per channel tokenize -> encode -> CLS, channels
// concatenated. Series are resized to embed_len first. Eval mode, no masks.
Tensor embed(const ModelParams& model, const ModelConfig& mcfg,
             const LabeledDataset& dataset, int64_t embed_len);

struct ProbeResult {
  double accuracy = 0.0;               // per the selection rule
  double final_accuracy = 0.0;         // last epoch, for reference
  std::vector<double> train_loss;      // per epoch
  std::vector<double> test_accuracy;   // per epoch
};

// Single linear layer on frozen features, softmax cross-entropy, AdamW with
// a fixed learning rate. Selection follows cfg.best_epoch_on_test.
ProbeResult linear_probe(Tensor train_features, const std::vector<int>& train_labels,
                         Tensor test_features, const std::vector<int>& test_labels,
                         int n_classes, uint64_t seed, const EvalConfig& cfg);

struct FinetuneResult {
  double accuracy = 0.0;
  double selected_lr = 0.0;
};

// End-to-end tuning of backbone + linear head; the learning rate comes from
// a grid searched on a stratified validation split (ties -> smallest lr).
FinetuneResult finetune(const ModelParams& model, const ModelConfig& mcfg,
                        const LabeledDataset& train, const LabeledDataset& test,
                        uint64_t seed, const EvalConfig& cfg);

struct ResultRow {
  std::string dataset;
  int64_t seed = 0;
  std::string method;
  std::string regime;  // "probe" or "finetune"
  double accuracy = 0.0;
};

std::string results_csv_header();
std::string to_csv_row(const ResultRow& row);
std::vector<ResultRow> parse_results_csv(const std::string& text);

struct MethodSummary {
  double wins = 0.0;
  double avg_rank = 0.0;
  double avg_accuracy = 0.0;
};

struct AggregateReport {
  // regime -> method -> summary; plus per-dataset means and stds
  std::map<std::string, std::map<std::string, MethodSummary>> summary;
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> mean;
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> stddev;
};

// Wins count (possibly tied) bests; tied accuracies share the mean rank.
// Every method must cover every dataset within a regime.
AggregateReport aggregate(const std::vector<ResultRow>& rows);
std::string report_to_json(const AggregateReport& report);
std::string accuracy_bar_plot_json(const AggregateReport& report);

}  // namespace tsdistill
