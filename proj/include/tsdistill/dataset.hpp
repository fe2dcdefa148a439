#pragma once

#include <string>
#include <vector>

#include "tsdistill/tensor.hpp"

namespace tsdistill {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Classification split in the .ts text format: header directives, then one
// line per sample with ':'-separated channels and a trailing class label.
struct LabeledDataset {
  std::string problem_name;
  std::vector<std::string> label_vocab;
  std::vector<std::vector<std::vector<float>>> series;  // [sample][channel][t]
  std::vector<int> labels;                              // indices into vocab

  size_t size() const { return series.size(); }
  int64_t channels() const {
    return series.empty() ? 0 : static_cast<int64_t>(series[0].size());
  }
  int n_classes() const { return static_cast<int>(label_vocab.size()); }
};

LabeledDataset parse_ts_text(const std::string& text);
LabeledDataset parse_ts_file(const std::string& path);
std::string serialize_ts(const LabeledDataset& dataset);

}  // namespace tsdistill
