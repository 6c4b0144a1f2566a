#include "ssat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ssat/error.hpp"
#include "ssat/rng.hpp"

namespace ssat {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kLabeled: return "labeled";
    case Split::kUnlabeled: return "unlabeled";
    case Split::kTest: return "test";
  }
  return "?";
}

Dataset::Dataset(Tensor features, std::vector<int> labels,
                 std::size_t class_count, Split split)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      class_count_(class_count),
      split_(split) {
  if (!features_.all_finite()) {
    throw Error("Dataset: non-finite feature values");
  }
  if (!labels_.empty() && labels_.size() != features_.rows) {
    throw Error("Dataset: label count does not match row count");
  }
  for (int label : labels_) {
    if (label < 0 || static_cast<std::size_t>(label) >= class_count_) {
      throw Error("Dataset: label " + std::to_string(label) +
                  " outside [0, " + std::to_string(class_count_) + ")");
    }
  }
  if (split_ != Split::kUnlabeled && labels_.empty() && features_.rows > 0) {
    throw Error(std::string("Dataset: ") + split_name(split_) +
                " split requires labels");
  }
}

const std::vector<int>& Dataset::labels() const {
  if (split_ == Split::kUnlabeled) {
    throw Error("Dataset: labels of the unlabeled split are hidden; "
                "use ablation_labels() for ablation studies");
  }
  return labels_;
}

const std::vector<int>& Dataset::ablation_labels() const {
  if (labels_.empty()) {
    throw Error("Dataset: no ground-truth labels stored for this split");
  }
  return labels_;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices,
                        Split split) const {
  Tensor f(indices.size(), features_.cols);
  std::vector<int> l;
  if (!labels_.empty()) l.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= features_.rows) throw Error("Dataset::subset: index range");
    for (std::size_t c = 0; c < features_.cols; ++c) {
      f.at(i, c) = features_.at(src, c);
    }
    if (!labels_.empty()) l.push_back(labels_[src]);
  }
  return Dataset(std::move(f), std::move(l), class_count_, split);
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "gaussians") return SyntheticKind::kGaussians;
  if (name == "rings") return SyntheticKind::kRings;
  if (name == "moons") return SyntheticKind::kMoons;
  throw Error("unknown synthetic dataset kind '" + name +
              "' (expected gaussians, rings, or moons)");
}

const char* synthetic_kind_name(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kGaussians: return "gaussians";
    case SyntheticKind::kRings: return "rings";
    case SyntheticKind::kMoons: return "moons";
  }
  return "?";
}

void minmax_normalize(Tensor& features) {
  for (std::size_t c = 0; c < features.cols; ++c) {
    double lo = features.at(0, c), hi = features.at(0, c);
    for (std::size_t r = 1; r < features.rows; ++r) {
      lo = std::min(lo, features.at(r, c));
      hi = std::max(hi, features.at(r, c));
    }
    const double range = hi - lo;
    for (std::size_t r = 0; r < features.rows; ++r) {
      features.at(r, c) =
          range > 0.0 ? (features.at(r, c) - lo) / range : 0.5;
    }
  }
}

bool in_unit_box(const Tensor& features) {
  for (double v : features.data) {
    if (v < 0.0 || v > 1.0) return false;
  }
  return true;
}

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::size_t classes,
                      double overlap, std::uint64_t seed) {
  if (classes < 2) throw Error("gen_synthetic: need at least 2 classes");
  if (n < classes) throw Error("gen_synthetic: need n >= classes");
  if (overlap < 0.0) throw Error("gen_synthetic: overlap must be >= 0");
  Rng rng(seed);
  Tensor x(n, 2);
  std::vector<int> y(n);
  // Balanced classes: counts differ by at most one.
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % classes);
  }
  switch (kind) {
    case SyntheticKind::kGaussians: {
      const double sigma = 0.05 + 0.45 * overlap;
      for (std::size_t i = 0; i < n; ++i) {
        const double angle = 2.0 * kPi * y[i] / static_cast<double>(classes);
        x.at(i, 0) = std::cos(angle) + sigma * rng.normal();
        x.at(i, 1) = std::sin(angle) + sigma * rng.normal();
      }
      break;
    }
    case SyntheticKind::kRings: {
      const double noise = 0.02 + 0.2 * overlap;
      for (std::size_t i = 0; i < n; ++i) {
        const double radius = 1.0 + static_cast<double>(y[i]);
        const double angle = 2.0 * kPi * rng.uniform01();
        x.at(i, 0) = radius * std::cos(angle) + noise * rng.normal();
        x.at(i, 1) = radius * std::sin(angle) + noise * rng.normal();
      }
      break;
    }
    case SyntheticKind::kMoons: {
      // Interleaved crescents, rotated per class.
      const double noise = 0.03 + 0.25 * overlap;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = kPi * rng.uniform01();
        const double rot = kPi * y[i] / static_cast<double>(classes);
        const double cx = std::cos(t), cy = std::sin(t);
        const double ox = 0.5 * (y[i] % 2 == 0 ? -1.0 : 1.0);
        const double px = cx * std::cos(rot) - cy * std::sin(rot) + ox;
        const double py = cx * std::sin(rot) + cy * std::cos(rot) -
                          0.25 * (y[i] % 2 == 0 ? -1.0 : 1.0);
        x.at(i, 0) = px + noise * rng.normal();
        x.at(i, 1) = py + noise * rng.normal();
      }
      break;
    }
  }
  minmax_normalize(x);
  return Dataset(std::move(x), std::move(y), classes, Split::kLabeled);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_cell(const std::string& s, std::size_t line_no,
                  std::size_t col) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw Error("csv parse error at line " + std::to_string(line_no) +
                ", column " + std::to_string(col) + ": '" + s +
                "' is not numeric");
  }
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) {
    ++pos;
  }
  if (pos != s.size()) {
    throw Error("csv parse error at line " + std::to_string(line_no) +
                ", column " + std::to_string(col) + ": '" + s +
                "' is not numeric");
  }
  return v;
}

}  // namespace

Dataset load_csv(const std::string& path, bool has_label) {
  std::ifstream f(path);
  if (!f) throw Error("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) {
    throw Error("csv parse error at line 1: missing header row");
  }
  const std::vector<std::string> header = split_fields(line);
  std::size_t d = header.size();
  if (has_label) {
    if (header.empty() || header.back() != "label") {
      throw Error("csv parse error at line 1: expected trailing 'label' "
                  "column in header");
    }
    d -= 1;
  }
  if (d == 0) throw Error("csv parse error at line 1: no feature columns");
  for (std::size_t c = 0; c < d; ++c) {
    if (header[c] != "f" + std::to_string(c)) {
      throw Error("csv parse error at line 1: expected header column 'f" +
                  std::to_string(c) + "', got '" + header[c] + "'");
    }
  }

  std::vector<double> values;
  std::vector<double> raw_labels;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw Error("csv parse error at line " + std::to_string(line_no) +
                  ": expected " + std::to_string(header.size()) +
                  " cells, got " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < d; ++c) {
      values.push_back(parse_cell(fields[c], line_no, c));
    }
    if (has_label) {
      raw_labels.push_back(parse_cell(fields[d], line_no, d));
    }
    ++rows;
  }
  Tensor x;
  x.rows = rows;
  x.cols = d;
  x.data = std::move(values);

  std::vector<int> labels;
  std::size_t class_count = 0;
  if (has_label) {
    // Dense re-indexing in order of first appearance.
    std::vector<double> seen;
    labels.reserve(rows);
    for (double rl : raw_labels) {
      std::size_t idx = seen.size();
      for (std::size_t i = 0; i < seen.size(); ++i) {
        if (seen[i] == rl) {
          idx = i;
          break;
        }
      }
      if (idx == seen.size()) seen.push_back(rl);
      labels.push_back(static_cast<int>(idx));
    }
    class_count = seen.size();
  }
  return Dataset(std::move(x), std::move(labels), class_count,
                 has_label ? Split::kLabeled : Split::kUnlabeled);
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("save_csv: cannot open '" + path + "' for writing");
  f.precision(17);
  for (std::size_t c = 0; c < data.dim(); ++c) {
    if (c > 0) f << ',';
    f << 'f' << c;
  }
  const bool with_labels = data.has_labels() && data.split() != Split::kUnlabeled;
  if (with_labels) f << ",label";
  f << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t c = 0; c < data.dim(); ++c) {
      if (c > 0) f << ',';
      f << data.features().at(r, c);
    }
    if (with_labels) f << ',' << data.labels()[r];
    f << '\n';
  }
  if (!f) throw Error("save_csv: write failed for '" + path + "'");
}

SplitResult split_dataset(const Dataset& data, std::size_t n_labeled,
                          std::size_t n_test, std::uint64_t seed) {
  if (n_labeled + n_test > data.size()) {
    throw Error("split_dataset: n_labeled + n_test exceeds dataset size");
  }
  if (!data.has_labels()) {
    throw Error("split_dataset: source dataset must carry labels");
  }
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> li(order.begin(), order.begin() + n_labeled);
  std::vector<std::size_t> ti(order.begin() + n_labeled,
                              order.begin() + n_labeled + n_test);
  std::vector<std::size_t> ui(order.begin() + n_labeled + n_test, order.end());
  SplitResult out;
  out.labeled = data.subset(li, Split::kLabeled);
  out.test = data.subset(ti, Split::kTest);
  out.unlabeled = data.subset(ui, Split::kUnlabeled);
  return out;
}

}  // namespace ssat
