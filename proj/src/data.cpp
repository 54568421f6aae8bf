#include "spp/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "spp/errors.hpp"

namespace spp {

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  const auto t = tokens(), m = width(), stride = t * m;
  Dataset out;
  out.classes = classes;
  out.split = split;
  out.inputs = Tensor(Shape{indices.size(), t, m});
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = indices[i];
    if (src >= size()) throw LookupError("dataset index " + std::to_string(src) + " out of range");
    std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(src * stride), stride,
                out.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
    out.labels.push_back(labels[src]);
  }
  return out;
}

void Dataset::validate() const {
  if (inputs.rank() != 3) throw ShapeError("dataset inputs must be N x t x m");
  if (inputs.dim(0) != labels.size()) throw ShapeError("dataset has mismatched input and label counts");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValidationError("sample " + std::to_string(i) + " label " + std::to_string(labels[i]) +
                            " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

Dataset gen_synthetic_classification(std::uint64_t seed, std::size_t samples, std::size_t tokens, std::size_t width,
                                     std::size_t classes, const SyntheticOptions& options) {
  if (tokens == 0 || width == 0 || classes == 0) throw ConfigError("tokens, width and classes must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> means(classes * tokens * width);
  for (auto& v : means) v = options.separation * normal(rng);

  Dataset ds;
  ds.classes = classes;
  ds.inputs = Tensor(Shape{samples, tokens, width});
  ds.labels.resize(samples);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  const auto stride = tokens * width;
  for (std::size_t s = 0; s < samples; ++s) {
    const int y = pick(rng);
    ds.labels[s] = y;
    for (std::size_t k = 0; k < stride; ++k) {
      ds.inputs[s * stride + k] = means[static_cast<std::size_t>(y) * stride + k] + options.noise * normal(rng);
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction <= 1.0)) throw ConfigError("val_fraction must lie in [0, 1]");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(ds.size()) + 0.5);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  auto tr = ds.subset(train);
  auto va = ds.subset(val);
  tr.split = "train";
  va.split = "val";
  return {std::move(tr), std::move(va)};
}

CsvSchema CsvSchema::parse(const std::string& spec) {
  CsvSchema s;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("schema entry '" + item + "' is not key=value");
    const auto key = item.substr(0, eq);
    const auto val = std::stoul(item.substr(eq + 1));
    if (key == "tokens") {
      s.tokens = val;
    } else if (key == "dim") {
      s.dim = val;
    } else if (key == "classes") {
      s.classes = val;
    } else {
      throw ConfigError("unknown schema key '" + key + "'");
    }
  }
  if (s.tokens == 0 || s.dim == 0 || s.classes == 0) throw ConfigError("schema needs positive tokens, dim, classes");
  return s;
}

std::vector<std::string> CsvSchema::header() const {
  std::vector<std::string> cols;
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t j = 0; j < dim; ++j) cols.push_back("x" + std::to_string(t) + "_" + std::to_string(j));
  }
  cols.emplace_back("label");
  return cols;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": missing header row");
  const auto header = split_csv_line(line);
  const auto expected = schema.header();
  for (std::size_t i = 0; i < std::max(header.size(), expected.size()); ++i) {
    if (i >= header.size()) throw ConfigError(path + ": header is missing column '" + expected[i] + "'");
    if (i >= expected.size()) throw ConfigError(path + ": unexpected column '" + header[i] + "'");
    if (header[i] != expected[i]) {
      throw ConfigError(path + ": column " + std::to_string(i) + " is '" + header[i] + "', expected '" + expected[i] + "'");
    }
  }
  const auto features = schema.tokens * schema.dim;
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != expected.size()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected.size()) +
                        " fields, found " + std::to_string(cells.size()));
    }
    for (std::size_t i = 0; i < features; ++i) {
      double v = 0.0;
      const auto& c = cells[i];
      auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || p != c.data() + c.size()) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": bad number '" + c + "' in column '" + expected[i] + "'");
      }
      values.push_back(v);
    }
    int y = 0;
    const auto& c = cells.back();
    auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), y);
    if (ec != std::errc() || p != c.data() + c.size()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": bad label '" + c + "'");
    }
    if (y < 0 || static_cast<std::size_t>(y) >= schema.classes) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": label " + std::to_string(y) + " outside [0, " +
                            std::to_string(schema.classes) + ")");
    }
    labels.push_back(y);
  }
  Dataset ds;
  ds.classes = schema.classes;
  ds.inputs = Tensor(Shape{labels.size(), schema.tokens, schema.dim}, std::move(values));
  ds.labels = std::move(labels);
  return ds;
}

void export_csv_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LookupError("cannot write dataset '" + path + "'");
  const CsvSchema schema{ds.tokens(), ds.width(), ds.classes};
  const auto header = schema.header();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  const auto stride = ds.tokens() * ds.width();
  for (std::size_t s = 0; s < ds.size(); ++s) {
    for (std::size_t k = 0; k < stride; ++k) out << fmt_double(ds.inputs[s * stride + k]) << ',';
    out << ds.labels[s] << '\n';
  }
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  const auto classes = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < classes; ++j) {
      if (logits.at(s, j) > logits.at(s, best)) best = j;
    }
    if (static_cast<int>(best) == labels[s]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace spp
