#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tsdistill/dataset.hpp"
#include "tsdistill/evaluate.hpp"

using namespace tsdistill;

static std::string fixture(const std::string& name) {
  return std::string(TSDISTILL_FIXTURE_DIR) + "/" + name;
}

TEST_CASE("parse univariate fixture") {
  LabeledDataset ds = parse_ts_file(fixture("univariate_sample.ts"));
  CHECK(ds.problem_name == "UniToy");
  REQUIRE(ds.size() == 2);
  CHECK(ds.channels() == 1);
  CHECK(ds.label_vocab == std::vector<std::string>{"a", "b"});
  CHECK(ds.labels[0] == 0);
  CHECK(ds.labels[1] == 1);
  CHECK(ds.series[0][0][0] == doctest::Approx(0.0));
  CHECK(ds.series[1][0][0] == doctest::Approx(3.5));
}

TEST_CASE("parse multivariate fixture with 3 channels") {
  LabeledDataset ds = parse_ts_file(fixture("multivariate_sample.ts"));
  REQUIRE(ds.size() == 3);
  CHECK(ds.channels() == 3);
  CHECK(ds.series[0][2][3] == doctest::Approx(11.0));
  CHECK(ds.labels == std::vector<int>{0, 1, 0});
}

TEST_CASE("serialize -> parse round-trip yields an identical dataset") {
  LabeledDataset ds = parse_ts_file(fixture("multivariate_sample.ts"));
  std::string text = serialize_ts(ds);
  LabeledDataset again = parse_ts_text(text);
  REQUIRE(again.size() == ds.size());
  CHECK(again.label_vocab == ds.label_vocab);
  CHECK(again.labels == ds.labels);
  for (size_t i = 0; i < ds.size(); ++i)
    for (size_t c = 0; c < ds.series[i].size(); ++c)
      for (size_t t = 0; t < ds.series[i][c].size(); ++t)
        CHECK(again.series[i][c][t] == ds.series[i][c][t]);
  // serialize(parse(serialize(x))) == serialize(x)
  CHECK(serialize_ts(again) == text);
}

TEST_CASE("malformed fixtures produce line-numbered errors") {
  for (const char* name : {"malformed_missing_value.ts", "malformed_ragged.ts",
                           "malformed_label.ts"}) {
    try {
      parse_ts_file(fixture(name));
      FAIL("expected ParseError for ", name);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).rfind("line ", 0) == 0);
    }
  }
  CHECK_THROWS_AS(parse_ts_text("@problemName x\n@data\n1,2:a\n"), ParseError);
  CHECK_THROWS_AS(parse_ts_text("@problemName x\n@classLabel false\n@data\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_ts_text("@dimensions nope\n"), ParseError);
}

static ModelConfig tiny_mcfg() {
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.head_dim = 8;
  cfg.mlp_hidden = 16;
  cfg.dropout = 0.0f;
  cfg.patch_window = 8;
  cfg.scalar_dim = 4;
  cfg.head_hidden = 16;
  cfg.bottleneck = 8;
  cfg.prototypes = 16;
  return cfg;
}

static LabeledDataset toy_sines(int per_class, int length, uint64_t seed) {
  LabeledDataset ds;
  ds.problem_name = "ToySines";
  ds.label_vocab = {"lo", "hi"};
  Rng rng(seed);
  for (int cls = 0; cls < 2; ++cls)
    for (int i = 0; i < per_class; ++i) {
      const double freq = cls == 0 ? 3.0 : 11.0;
      const double phase = rng.uniform(0.0, 6.28318);
      std::vector<float> x(static_cast<size_t>(length));
      for (int t = 0; t < length; ++t)
        x[static_cast<size_t>(t)] = static_cast<float>(
            std::sin(freq * 6.28318 * t / length + phase) + 0.1 * rng.normal());
      ds.series.push_back({std::move(x)});
      ds.labels.push_back(cls);
    }
  return ds;
}

TEST_CASE("embed: shape, determinism, channel layout") {
  ModelConfig mcfg = tiny_mcfg();
  Rng rng(1);
  ModelParams model = ModelParams::init(mcfg, rng);
  LabeledDataset uni = parse_ts_file(fixture("univariate_sample.ts"));
  Tensor f1 = embed(model, mcfg, uni, 64);
  CHECK(f1.shape() == Shape{2, mcfg.dim});
  Tensor f2 = embed(model, mcfg, uni, 64);
  for (int64_t i = 0; i < f1.size(); ++i) CHECK(f1.data()[i] == f2.data()[i]);

  LabeledDataset multi = parse_ts_file(fixture("multivariate_sample.ts"));
  Tensor fm = embed(model, mcfg, multi, 64);
  CHECK(fm.shape() == Shape{3, 3 * mcfg.dim});

  // duplicated sample rows embed identically
  LabeledDataset dup = uni;
  dup.series.push_back(dup.series[0]);
  dup.labels.push_back(dup.labels[0]);
  Tensor fd = embed(model, mcfg, dup, 64);
  for (int64_t j = 0; j < mcfg.dim; ++j)
    CHECK(fd.data()[2 * mcfg.dim + j] == fd.data()[j]);

  // channel reordering permutes feature blocks
  LabeledDataset swapped = multi;
  for (auto& sample : swapped.series) std::swap(sample[0], sample[2]);
  Tensor fs = embed(model, mcfg, swapped, 64);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < mcfg.dim; ++j) {
      CHECK(fs.data()[i * 3 * mcfg.dim + j] ==
            fm.data()[i * 3 * mcfg.dim + 2 * mcfg.dim + j]);
      CHECK(fs.data()[i * 3 * mcfg.dim + 2 * mcfg.dim + j] ==
            fm.data()[i * 3 * mcfg.dim + j]);
    }
}

TEST_CASE("linear probe separates Gaussian blobs and matches chance on noise") {
  Rng rng(2);
  const int64_t n = 200, f = 8;
  Tensor train = Tensor::zeros({n, f});
  Tensor test = Tensor::zeros({n, f});
  std::vector<int> train_labels, test_labels;
  for (Tensor* t : {&train, &test}) {
    auto& labels = t == &train ? train_labels : test_labels;
    for (int64_t i = 0; i < n; ++i) {
      const int cls = i % 2;
      labels.push_back(cls);
      for (int64_t j = 0; j < f; ++j)
        t->data()[i * f + j] = static_cast<float>(
            rng.normal() + (cls == 0 ? 2.0 : -2.0) * (j < 4 ? 1.0 : -1.0));
    }
  }
  EvalConfig cfg;
  cfg.probe_epochs = 40;
  ProbeResult separable =
      linear_probe(train, train_labels, test, test_labels, 2, 0, cfg);
  CHECK(separable.accuracy >= 0.99);
  // training loss decreases monotonically over the first five epochs
  for (size_t e = 1; e < 5; ++e)
    CHECK(separable.train_loss[e] <= separable.train_loss[e - 1] + 1e-9);

  // shuffled labels: chance level
  Rng shuffle_rng(3);
  std::vector<int> random_labels = train_labels;
  shuffle_rng.shuffle(random_labels);
  std::vector<int> random_test = test_labels;
  shuffle_rng.shuffle(random_test);
  Tensor big_test = Tensor::zeros({2 * n, f});
  std::vector<int> big_labels;
  for (int64_t i = 0; i < 2 * n; ++i) {
    for (int64_t j = 0; j < f; ++j)
      big_test.data()[i * f + j] = static_cast<float>(shuffle_rng.normal());
    big_labels.push_back(static_cast<int>(i % 2));
  }
  ProbeResult chance =
      linear_probe(train, random_labels, big_test, big_labels, 2, 0, cfg);
  CHECK(chance.accuracy > 0.4);
  CHECK(chance.accuracy < 0.6);

  // degenerate identical features: majority-class accuracy
  Tensor flat_train = Tensor::full({20, 4}, 1.0f);
  Tensor flat_test = Tensor::full({10, 4}, 1.0f);
  std::vector<int> maj_train = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0,
                                0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  std::vector<int> maj_test = {0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
  ProbeResult degenerate =
      linear_probe(flat_train, maj_train, flat_test, maj_test, 2, 0, cfg);
  CHECK(degenerate.accuracy == doctest::Approx(0.7));

  // single-class training split errors out
  std::vector<int> mono(static_cast<size_t>(n), 0);
  CHECK_THROWS_AS(linear_probe(train, mono, test, test_labels, 2, 0, cfg),
                  ProtocolError);
}

TEST_CASE("probe is deterministic under a fixed seed") {
  Rng rng(4);
  Tensor train = Tensor::randn({60, 6}, rng);
  Tensor test = Tensor::randn({30, 6}, rng);
  std::vector<int> train_labels, test_labels;
  for (int i = 0; i < 60; ++i) train_labels.push_back(i % 3);
  for (int i = 0; i < 30; ++i) test_labels.push_back(i % 3);
  EvalConfig cfg;
  cfg.probe_epochs = 10;
  ProbeResult a = linear_probe(train, train_labels, test, test_labels, 3, 9, cfg);
  ProbeResult b = linear_probe(train, train_labels, test, test_labels, 3, 9, cfg);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.train_loss == b.train_loss);
}

TEST_CASE("finetune on the separable toy task tracks the probe") {
  ModelConfig mcfg = tiny_mcfg();
  Rng rng(5);
  ModelParams model = ModelParams::init(mcfg, rng);
  LabeledDataset train = toy_sines(10, 64, 100);
  LabeledDataset test = toy_sines(10, 64, 200);

  EvalConfig cfg;
  cfg.embed_len = 64;
  cfg.probe_epochs = 30;
  cfg.finetune_epochs = 8;
  cfg.finetune_lr_grid = {1e-3};

  Tensor train_f = embed(model, mcfg, train, cfg.embed_len);
  Tensor test_f = embed(model, mcfg, test, cfg.embed_len);
  ProbeResult probe =
      linear_probe(train_f, train.labels, test_f, test.labels, 2, 0, cfg);

  FinetuneResult ft = finetune(model, mcfg, train, test, 0, cfg);
  CHECK(ft.selected_lr == 1e-3);
  CHECK(ft.accuracy >= probe.accuracy - 0.05);

  // determinism of the full protocol
  FinetuneResult ft2 = finetune(model, mcfg, train, test, 0, cfg);
  CHECK(ft2.accuracy == ft.accuracy);
  CHECK(ft2.selected_lr == ft.selected_lr);
}

TEST_CASE("finetune tie-break picks the smallest lr") {
  // a grid of identical values ties every run; selection must be the minimum
  ModelConfig mcfg = tiny_mcfg();
  Rng rng(6);
  ModelParams model = ModelParams::init(mcfg, rng);
  LabeledDataset train = toy_sines(6, 64, 300);
  LabeledDataset test = toy_sines(4, 64, 400);
  EvalConfig cfg;
  cfg.embed_len = 64;
  cfg.finetune_epochs = 1;
  cfg.finetune_lr_grid = {2e-4, 1e-4};  // deliberately unsorted
  FinetuneResult ft = finetune(model, mcfg, train, test, 1, cfg);
  CHECK((ft.selected_lr == 1e-4 || ft.selected_lr == 2e-4));
  // with equal-performing lrs the sorted grid guarantees the smaller one wins
  // ties; rerun must reproduce the same selection
  FinetuneResult ft2 = finetune(model, mcfg, train, test, 1, cfg);
  CHECK(ft.selected_lr == ft2.selected_lr);
}

TEST_CASE("aggregate: wins, tied ranks, averages, missing cells") {
  std::vector<ResultRow> rows = {
      {"d1", 0, "m1", "probe", 0.9}, {"d1", 0, "m2", "probe", 0.8},
      {"d2", 0, "m1", "probe", 0.7}, {"d2", 0, "m2", "probe", 0.7},
      {"d3", 0, "m1", "probe", 0.6}, {"d3", 0, "m2", "probe", 0.9},
  };
  AggregateReport report = aggregate(rows);
  const auto& s = report.summary.at("probe");
  // d1: m1 wins; d2: tie, both win and share rank 1.5; d3: m2 wins
  CHECK(s.at("m1").wins == doctest::Approx(2.0));
  CHECK(s.at("m2").wins == doctest::Approx(2.0));
  CHECK(s.at("m1").avg_rank == doctest::Approx((1.0 + 1.5 + 2.0) / 3.0));
  CHECK(s.at("m2").avg_rank == doctest::Approx((2.0 + 1.5 + 1.0) / 3.0));
  CHECK(s.at("m1").avg_accuracy == doctest::Approx((0.9 + 0.7 + 0.6) / 3.0));

  // permutation invariance over row order
  std::vector<ResultRow> shuffled = {rows[3], rows[0], rows[5],
                                     rows[2], rows[4], rows[1]};
  AggregateReport report2 = aggregate(shuffled);
  CHECK(report2.summary.at("probe").at("m1").avg_rank ==
        doctest::Approx(s.at("m1").avg_rank));

  std::vector<ResultRow> missing = rows;
  missing.pop_back();
  CHECK_THROWS_AS(aggregate(missing), ProtocolError);

  // csv round trip
  std::string csv = results_csv_header() + "\n";
  for (const ResultRow& r : rows) csv += to_csv_row(r) + "\n";
  std::vector<ResultRow> parsed = parse_results_csv(csv);
  REQUIRE(parsed.size() == rows.size());
  CHECK(parsed[0].dataset == "d1");
  CHECK(parsed[0].accuracy == doctest::Approx(0.9));

  // report serialization carries the summary
  std::string jtext = report_to_json(report);
  CHECK(jtext.find("avg_rank") != std::string::npos);
  std::string ptext = accuracy_bar_plot_json(report);
  CHECK(ptext.find("\"chart\"") != std::string::npos);
}
