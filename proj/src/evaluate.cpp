#include "tsdistill/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>
#include <sstream>

#include "tsdistill/encoder.hpp"
#include "tsdistill/heads.hpp"
#include "tsdistill/optimizer.hpp"
#include "tsdistill/threads.hpp"
#include "tsdistill/tokenizer.hpp"

namespace tsdistill {

using nlohmann::json;

namespace {

// resized copy of one channel as a [1, L] tensor
Tensor resized_channel(const std::vector<float>& channel, int64_t embed_len) {
  NoGradScope ng;
  Tensor in = Tensor::zeros({1, static_cast<int64_t>(channel.size())});
  std::copy(channel.begin(), channel.end(), in.data());
  return linear_resize(in, embed_len);
}

// dataset resized into [N, C, L]
Tensor resize_dataset(const LabeledDataset& ds, int64_t embed_len) {
  const int64_t N = static_cast<int64_t>(ds.size());
  const int64_t C = ds.channels();
  Tensor out = Tensor::zeros({N, C, embed_len});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t c = 0; c < C; ++c) {
      Tensor r = resized_channel(ds.series[static_cast<size_t>(i)][static_cast<size_t>(c)],
                                 embed_len);
      std::copy(r.data(), r.data() + embed_len,
                out.data() + (i * C + c) * embed_len);
    }
  return out;
}

double accuracy_of(Tensor logits, const std::vector<int>& labels) {
  const int64_t N = logits.dim(0), C = logits.dim(1);
  int64_t correct = 0;
  for (int64_t i = 0; i < N; ++i) {
    int best = 0;
    for (int64_t c = 1; c < C; ++c)
      if (logits.data()[i * C + c] > logits.data()[i * C + best])
        best = static_cast<int>(c);
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(N);
}

Tensor one_hot(const std::vector<int>& labels, const std::vector<int64_t>& rows,
               int n_classes) {
  Tensor t = Tensor::zeros({static_cast<int64_t>(rows.size()), n_classes});
  for (size_t i = 0; i < rows.size(); ++i)
    t.data()[static_cast<int64_t>(i) * n_classes +
             labels[static_cast<size_t>(rows[i])]] = 1.0f;
  return t;
}

Schedules constant_schedule(double lr, double wd, int64_t total) {
  ScheduleConfig cfg;
  cfg.base_lr = lr;
  cfg.min_lr = lr;
  cfg.warmup_epochs = 0.0;
  cfg.wd_start = wd;
  cfg.wd_end = wd;
  return Schedules(cfg, std::max<int64_t>(total, 1), 1);
}

Schedules cosine_schedule(double lr, double wd, int64_t total) {
  ScheduleConfig cfg;
  cfg.base_lr = lr;
  cfg.min_lr = 0.0;
  cfg.warmup_epochs = 0.0;
  cfg.wd_start = wd;
  cfg.wd_end = wd;
  return Schedules(cfg, std::max<int64_t>(total, 1), 1);
}

ParamSlot make_slot(const std::string& name, Tensor param, bool weight_decay) {
  ParamSlot slot;
  slot.name = name;
  slot.param = param;
  slot.weight_decay = weight_decay;
  slot.m.assign(static_cast<size_t>(param.size()), 0.0f);
  slot.v.assign(static_cast<size_t>(param.size()), 0.0f);
  return slot;
}

}  // namespace

Tensor embed(const ModelParams& model, const ModelConfig& mcfg,
             const LabeledDataset& dataset, int64_t embed_len) {
  if (dataset.size() == 0) throw InputError("embed: empty dataset");
  const int64_t N = static_cast<int64_t>(dataset.size());
  const int64_t C = dataset.channels();
  Tensor resized = resize_dataset(dataset, embed_len);
  Tensor features = Tensor::zeros({N, C * mcfg.dim});
  threads::parallel_for(N, [&](int64_t i) {
    NoGradScope ng;
    Rng never_used(0);
    for (int64_t c = 0; c < C; ++c) {
      Tensor x = Tensor::zeros({1, embed_len});
      std::memcpy(x.data(), resized.data() + (i * C + c) * embed_len,
                  static_cast<size_t>(embed_len) * sizeof(float));
      Tensor tokens = tokenize(x, model.tokenizer, mcfg);
      EncodeOutput out =
          encode(tokens, nullptr, model.encoder, mcfg, false, never_used);
      std::memcpy(features.data() + i * C * mcfg.dim + c * mcfg.dim,
                  out.cls.data(), static_cast<size_t>(mcfg.dim) * sizeof(float));
    }
  });
  return features;
}

ProbeResult linear_probe(Tensor train_features, const std::vector<int>& train_labels,
                         Tensor test_features, const std::vector<int>& test_labels,
                         int n_classes, uint64_t seed, const EvalConfig& cfg) {
  if (n_classes < 2) throw ProtocolError("linear_probe: need at least two classes");
  {
    std::set<int> present(train_labels.begin(), train_labels.end());
    if (present.size() < 2)
      throw ProtocolError("linear_probe: training split has a single class");
  }
  const int64_t N = train_features.dim(0);
  const int64_t F = train_features.dim(1);
  Rng rng(seed);
  Tensor w = Tensor::trunc_normal({F, n_classes}, rng, 0.02f).set_requires_grad(true);
  Tensor b = Tensor::zeros({n_classes}).set_requires_grad(true);

  const int64_t batch = std::min<int64_t>(cfg.probe_batch, N);
  const int64_t batches_per_epoch = (N + batch - 1) / batch;
  const int64_t total_steps = cfg.probe_epochs * batches_per_epoch;
  Schedules sched = constant_schedule(cfg.probe_lr, cfg.probe_wd, total_steps);
  OptimizerConfig ocfg;
  ocfg.clip_norm = 0.0;
  AdamW opt({make_slot("w", w, true), make_slot("b", b, false)}, ocfg);

  ProbeResult result;
  std::vector<int64_t> order(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) order[static_cast<size_t>(i)] = i;

  int64_t step = 0;
  double best = -1.0;
  for (int64_t epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
    Rng shuffle_rng = rng.split(static_cast<uint64_t>(epoch) + 1);
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (int64_t bi = 0; bi < batches_per_epoch; ++bi) {
      std::vector<int64_t> rows;
      for (int64_t i = bi * batch; i < std::min(N, (bi + 1) * batch); ++i)
        rows.push_back(order[static_cast<size_t>(i)]);
      Tensor x = index_select_rows(train_features, rows);
      Tensor target = one_hot(train_labels, rows, n_classes);
      Graph g;
      {
        GraphScope scope(g);
        Tensor logits = add_bcast(matmul(x, w), b);
        Tensor loss = scale(sum_all(mul(log_softmax_last(logits), target)),
                            -1.0 / static_cast<double>(rows.size()));
        epoch_loss += loss.item() * static_cast<double>(rows.size());
        g.backward(loss);
      }
      opt.step(sched, step++);
      opt.zero_grad();
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(N));

    NoGradScope ng;
    Tensor test_logits = add_bcast(matmul(test_features, w), b);
    const double acc = accuracy_of(test_logits, test_labels);
    result.test_accuracy.push_back(acc);
    best = std::max(best, acc);
  }
  result.final_accuracy = result.test_accuracy.back();
  result.accuracy = cfg.best_epoch_on_test ? best : result.final_accuracy;
  return result;
}

namespace {

// stratified index split: roughly val_fraction of each class moves to val
void stratified_split(const std::vector<int>& labels, double val_fraction,
                      uint64_t seed, std::vector<int64_t>* train_idx,
                      std::vector<int64_t>* val_idx) {
  std::map<int, std::vector<int64_t>> by_class;
  for (size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(static_cast<int64_t>(i));
  bool stratifiable = true;
  for (auto& [cls, idx] : by_class)
    if (idx.size() < 2) stratifiable = false;

  Rng rng(seed ^ 0x5157);
  if (!stratifiable) {
    // fallback: plain random split
    std::vector<int64_t> all(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) all[i] = static_cast<int64_t>(i);
    rng.shuffle(all);
    const size_t n_val = std::max<size_t>(1, static_cast<size_t>(
                                                 val_fraction * labels.size()));
    val_idx->assign(all.begin(), all.begin() + static_cast<int64_t>(n_val));
    train_idx->assign(all.begin() + static_cast<int64_t>(n_val), all.end());
    return;
  }
  for (auto& [cls, idx] : by_class) {
    rng.shuffle(idx);
    const size_t n_val =
        std::max<size_t>(1, static_cast<size_t>(val_fraction * idx.size()));
    for (size_t i = 0; i < idx.size(); ++i)
      (i < n_val ? val_idx : train_idx)->push_back(idx[i]);
  }
  std::sort(train_idx->begin(), train_idx->end());
  std::sort(val_idx->begin(), val_idx->end());
}

struct FinetuneRun {
  double accuracy = 0.0;
};

// one fine-tuning run at a fixed lr; returns accuracy on eval_features rows
FinetuneRun finetune_once(const ModelParams& init, const ModelConfig& mcfg,
                          Tensor train_inputs,  // [N, C, L]
                          const std::vector<int>& train_labels,
                          const std::vector<int64_t>& train_rows,
                          Tensor eval_inputs, const std::vector<int>& eval_labels,
                          const std::vector<int64_t>& eval_rows, int n_classes,
                          double lr, uint64_t seed, const EvalConfig& cfg) {
  const int64_t C = train_inputs.dim(1);
  const int64_t L = train_inputs.dim(2);
  ModelParams model = init.clone();
  model.set_requires_grad(true);
  Rng rng(seed ^ 0xf17e);
  Tensor head_w = Tensor::trunc_normal({C * mcfg.dim, n_classes}, rng, 0.02f)
                      .set_requires_grad(true);
  Tensor head_b = Tensor::zeros({n_classes}).set_requires_grad(true);

  std::vector<ParamSlot> slots;
  for (auto& [name, t] : model.named()) {
    Tensor tt = t;
    slots.push_back(make_slot(name, tt, tt.ndim() >= 2));
  }
  slots.push_back(make_slot("head.w", head_w, true));
  slots.push_back(make_slot("head.b", head_b, false));

  const int64_t N = static_cast<int64_t>(train_rows.size());
  const int64_t batch = std::min<int64_t>(cfg.probe_batch, N);
  const int64_t batches_per_epoch = (N + batch - 1) / batch;
  const int64_t total_steps = cfg.finetune_epochs * batches_per_epoch;
  Schedules sched = cosine_schedule(lr, cfg.finetune_wd, total_steps);
  OptimizerConfig ocfg;
  AdamW opt(std::move(slots), ocfg);

  auto forward = [&](Tensor inputs, const std::vector<int64_t>& rows, bool training,
                     Rng& drop_rng) {
    const int64_t n = static_cast<int64_t>(rows.size());
    std::vector<Tensor> channel_cls;
    for (int64_t c = 0; c < C; ++c) {
      Tensor x = Tensor::zeros({n, L});
      for (int64_t i = 0; i < n; ++i)
        std::memcpy(x.data() + i * L,
                    inputs.data() + (rows[static_cast<size_t>(i)] * C + c) * L,
                    static_cast<size_t>(L) * sizeof(float));
      Tensor tokens = tokenize(x, model.tokenizer, mcfg);
      EncodeOutput out =
          encode(tokens, nullptr, model.encoder, mcfg, training, drop_rng);
      channel_cls.push_back(out.cls);
    }
    Tensor feats = channel_cls.size() == 1 ? channel_cls[0]
                                           : concat_last(channel_cls);
    return add_bcast(matmul(feats, head_w), head_b);
  };

  std::vector<int64_t> order = train_rows;
  int64_t step = 0;
  double best = -1.0;
  double last = 0.0;
  for (int64_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    Rng shuffle_rng = rng.split(static_cast<uint64_t>(epoch) + 1);
    shuffle_rng.shuffle(order);
    for (int64_t bi = 0; bi < batches_per_epoch; ++bi) {
      std::vector<int64_t> rows(
          order.begin() + bi * batch,
          order.begin() + std::min<int64_t>(N, (bi + 1) * batch));
      if (rows.empty()) continue;
      Tensor target = one_hot(train_labels, rows, n_classes);
      Rng drop_rng = rng.split(0xd00d).split(static_cast<uint64_t>(step));
      Graph g;
      {
        GraphScope scope(g);
        Tensor logits = forward(train_inputs, rows, true, drop_rng);
        Tensor loss = scale(sum_all(mul(log_softmax_last(logits), target)),
                            -1.0 / static_cast<double>(rows.size()));
        g.backward(loss);
      }
      opt.step(sched, step++);
      opt.zero_grad();
    }
    NoGradScope ng;
    Rng unused(0);
    Tensor logits = forward(eval_inputs, eval_rows, false, unused);
    std::vector<int> wanted;
    for (int64_t r : eval_rows) wanted.push_back(eval_labels[static_cast<size_t>(r)]);
    last = accuracy_of(logits, wanted);
    best = std::max(best, last);
  }
  FinetuneRun run;
  run.accuracy = cfg.best_epoch_on_test ? best : last;
  return run;
}

}  // namespace

FinetuneResult finetune(const ModelParams& model, const ModelConfig& mcfg,
                        const LabeledDataset& train, const LabeledDataset& test,
                        uint64_t seed, const EvalConfig& cfg) {
  if (train.n_classes() < 2) throw ProtocolError("finetune: need >= 2 classes");
  Tensor train_inputs = resize_dataset(train, cfg.embed_len);
  Tensor test_inputs = resize_dataset(test, cfg.embed_len);

  std::vector<int64_t> fit_rows, val_rows;
  stratified_split(train.labels, cfg.finetune_val_fraction, seed, &fit_rows,
                   &val_rows);

  // grid search on the validation split; ties break to the smallest lr
  std::vector<double> grid = cfg.finetune_lr_grid;
  std::sort(grid.begin(), grid.end());
  double best_lr = grid.front();
  double best_val = -1.0;
  for (double lr : grid) {
    FinetuneRun run = finetune_once(model, mcfg, train_inputs, train.labels,
                                    fit_rows, train_inputs, train.labels,
                                    val_rows, train.n_classes(), lr, seed, cfg);
    if (run.accuracy > best_val) {
      best_val = run.accuracy;
      best_lr = lr;
    }
  }

  // final run on the full training split, evaluated on test
  std::vector<int64_t> all_rows(train.size());
  for (size_t i = 0; i < train.size(); ++i) all_rows[i] = static_cast<int64_t>(i);
  std::vector<int64_t> test_rows(test.size());
  for (size_t i = 0; i < test.size(); ++i) test_rows[i] = static_cast<int64_t>(i);
  FinetuneRun final_run =
      finetune_once(model, mcfg, train_inputs, train.labels, all_rows,
                    test_inputs, test.labels, test_rows, train.n_classes(),
                    best_lr, seed, cfg);
  FinetuneResult result;
  result.accuracy = final_run.accuracy;
  result.selected_lr = best_lr;
  return result;
}

std::string results_csv_header() { return "dataset,seed,method,regime,accuracy"; }

std::string to_csv_row(const ResultRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%lld,%s,%s,%.6f", row.dataset.c_str(),
                static_cast<long long>(row.seed), row.method.c_str(),
                row.regime.c_str(), row.accuracy);
  return buf;
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::vector<ResultRow> rows;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("dataset,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    if (fields.size() != 5)
      throw ParseError("results csv: expected 5 fields, got line '" + line + "'");
    ResultRow row;
    row.dataset = fields[0];
    row.seed = std::stoll(fields[1]);
    row.method = fields[2];
    row.regime = fields[3];
    row.accuracy = std::stod(fields[4]);
    rows.push_back(std::move(row));
  }
  return rows;
}

AggregateReport aggregate(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw ProtocolError("aggregate: no result rows");
  AggregateReport report;
  // regime -> dataset -> method -> accuracies over seeds
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>>
      cells;
  std::map<std::string, std::set<std::string>> methods_of;
  std::map<std::string, std::set<std::string>> datasets_of;
  for (const ResultRow& row : rows) {
    cells[row.regime][row.dataset][row.method].push_back(row.accuracy);
    methods_of[row.regime].insert(row.method);
    datasets_of[row.regime].insert(row.dataset);
  }

  for (auto& [regime, by_dataset] : cells) {
    const auto& methods = methods_of[regime];
    for (const std::string& dataset : datasets_of[regime])
      for (const std::string& method : methods)
        if (!by_dataset.count(dataset) || !by_dataset[dataset].count(method))
          throw ProtocolError("aggregate: missing cell " + regime + "/" + dataset +
                              "/" + method);

    std::map<std::string, MethodSummary> summary;
    for (const std::string& method : methods) summary[method] = {};
    const double n_datasets = static_cast<double>(datasets_of[regime].size());

    for (const std::string& dataset : datasets_of[regime]) {
      // per-method mean over seeds
      std::vector<std::pair<std::string, double>> means;
      for (const std::string& method : methods) {
        const auto& accs = by_dataset[dataset][method];
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        var /= static_cast<double>(accs.size());
        report.mean[regime][dataset][method] = mean;
        report.stddev[regime][dataset][method] = std::sqrt(var);
        means.emplace_back(method, mean);
      }
      // wins: every method tied at the maximum
      double best = -1.0;
      for (auto& [m, v] : means) best = std::max(best, v);
      for (auto& [m, v] : means)
        if (v == best) summary[m].wins += 1.0;
      // average ranks with ties sharing the mean rank
      std::sort(means.begin(), means.end(),
                [](const auto& a, const auto& b) { return a.second > b.second; });
      size_t i = 0;
      while (i < means.size()) {
        size_t j = i;
        while (j + 1 < means.size() && means[j + 1].second == means[i].second) ++j;
        const double shared_rank = (static_cast<double>(i + 1) +
                                    static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k)
          summary[means[k].first].avg_rank += shared_rank;
        i = j + 1;
      }
      for (auto& [m, v] : means) summary[m].avg_accuracy += v;
    }
    for (auto& [method, s] : summary) {
      s.avg_rank /= n_datasets;
      s.avg_accuracy /= n_datasets;
    }
    report.summary[regime] = summary;
  }
  return report;
}

std::string report_to_json(const AggregateReport& report) {
  json j;
  for (auto& [regime, methods] : report.summary) {
    json r;
    for (auto& [method, s] : methods)
      r[method] = {{"wins", s.wins},
                   {"avg_rank", s.avg_rank},
                   {"avg_accuracy", s.avg_accuracy}};
    j["summary"][regime] = r;
  }
  for (auto& [regime, by_dataset] : report.mean)
    for (auto& [dataset, by_method] : by_dataset)
      for (auto& [method, value] : by_method) {
        j["per_dataset"][regime][dataset][method]["mean"] = value;
        j["per_dataset"][regime][dataset][method]["std"] =
            report.stddev.at(regime).at(dataset).at(method);
      }
  return j.dump(2);
}

std::string accuracy_bar_plot_json(const AggregateReport& report) {
  json j;
  j["chart"] = "bar";
  j["title"] = "average accuracy by method";
  for (auto& [regime, methods] : report.summary) {
    json x = json::array(), y = json::array(), wins = json::array();
    for (auto& [method, s] : methods) {
      x.push_back(method);
      y.push_back(s.avg_accuracy);
      wins.push_back(s.wins);
    }
    j["regimes"][regime] = {{"x", x}, {"y", y}, {"wins", wins}};
  }
  return j.dump(2);
}

}  // namespace tsdistill
