#include "tsdistill/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace tsdistill {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void fail(int line, const std::string& message) {
  throw ParseError("line " + std::to_string(line) + ": " + message);
}

}  // namespace

LabeledDataset parse_ts_text(const std::string& text) {
  LabeledDataset ds;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  bool in_data = false;
  bool saw_class_label = false;
  int declared_dims = -1;  // -1 = unspecified

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;

    if (!in_data && line[0] == '@') {
      std::istringstream dir(line);
      std::string key;
      dir >> key;
      const std::string lkey = lower(key);
      if (lkey == "@problemname") {
        dir >> ds.problem_name;
        if (ds.problem_name.empty()) fail(line_no, "@problemName needs a value");
      } else if (lkey == "@univariate") {
        std::string v;
        dir >> v;
        const std::string lv = lower(v);
        if (lv == "true")
          declared_dims = 1;
        else if (lv != "false")
          fail(line_no, "@univariate must be true or false");
      } else if (lkey == "@dimensions") {
        int n = 0;
        if (!(dir >> n) || n < 1) fail(line_no, "@dimensions needs a positive integer");
        declared_dims = n;
      } else if (lkey == "@classlabel") {
        std::string v;
        dir >> v;
        const std::string lv = lower(v);
        if (lv == "false") fail(line_no, "@classLabel false: no labels to learn from");
        if (lv != "true") fail(line_no, "@classLabel must be true or false");
        std::string label;
        while (dir >> label) ds.label_vocab.push_back(label);
        if (ds.label_vocab.empty())
          fail(line_no, "@classLabel true requires a label vocabulary");
        saw_class_label = true;
      } else if (lkey == "@data") {
        if (!saw_class_label) fail(line_no, "@data before @classLabel");
        in_data = true;
      } else {
        // other well-formed directives (@timeStamps, @equalLength, ...) are
        // accepted and ignored
        if (lkey.size() < 2) fail(line_no, "malformed directive " + key);
      }
      continue;
    }

    if (!in_data) fail(line_no, "value line before @data");

    std::vector<std::string> fields = split(line, ':');
    if (fields.size() < 2)
      fail(line_no, "expected ':'-separated channels and a trailing label");
    const std::string label = trim(fields.back());
    fields.pop_back();
    auto vocab_it = std::find(ds.label_vocab.begin(), ds.label_vocab.end(), label);
    if (vocab_it == ds.label_vocab.end())
      fail(line_no, "unknown class label '" + label + "'");

    std::vector<std::vector<float>> channels;
    size_t expected_len = 0;
    for (const std::string& field : fields) {
      std::vector<float> values;
      for (const std::string& tok_raw : split(field, ',')) {
        const std::string tok = trim(tok_raw);
        if (tok.empty()) fail(line_no, "empty value");
        if (tok == "?") fail(line_no, "missing values ('?') are not supported");
        try {
          size_t used = 0;
          values.push_back(std::stof(tok, &used));
          if (used != tok.size()) fail(line_no, "bad numeric value '" + tok + "'");
        } catch (const ParseError&) {
          throw;
        } catch (...) {
          fail(line_no, "bad numeric value '" + tok + "'");
        }
      }
      if (channels.empty())
        expected_len = values.size();
      else if (values.size() != expected_len)
        fail(line_no, "ragged dimension lengths within one sample");
      channels.push_back(std::move(values));
    }
    if (declared_dims >= 0 && static_cast<int>(channels.size()) != declared_dims)
      fail(line_no, "expected " + std::to_string(declared_dims) + " dimensions, got " +
                        std::to_string(channels.size()));
    if (!ds.series.empty() && channels.size() != ds.series[0].size())
      fail(line_no, "channel count differs from earlier samples");

    ds.labels.push_back(static_cast<int>(vocab_it - ds.label_vocab.begin()));
    ds.series.push_back(std::move(channels));
  }
  if (!in_data) throw ParseError("line " + std::to_string(line_no) + ": missing @data");
  return ds;
}

LabeledDataset parse_ts_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_ts_text(buf.str());
}

std::string serialize_ts(const LabeledDataset& ds) {
  std::ostringstream out;
  out << "@problemName " << (ds.problem_name.empty() ? "unnamed" : ds.problem_name)
      << "\n";
  if (ds.channels() == 1)
    out << "@univariate true\n";
  else
    out << "@dimensions " << ds.channels() << "\n";
  out << "@classLabel true";
  for (const std::string& label : ds.label_vocab) out << " " << label;
  out << "\n@data\n";
  for (size_t i = 0; i < ds.series.size(); ++i) {
    for (size_t c = 0; c < ds.series[i].size(); ++c) {
      if (c) out << ":";
      const auto& channel = ds.series[i][c];
      for (size_t t = 0; t < channel.size(); ++t) {
        if (t) out << ",";
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.9g", channel[t]);
        out << buf;
      }
    }
    out << ":" << ds.label_vocab[static_cast<size_t>(ds.labels[i])] << "\n";
  }
  return out.str();
}

}  // namespace tsdistill
