#include "ifval/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace ifval {

namespace {

std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_real(const std::string& s, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return pos == s.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

Dataset load_iris(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_iris: cannot open " + path);
  Dataset ds;
  ds.name = "iris";
  ds.n_features = 4;
  std::map<std::string, std::size_t> class_ids;  // first-occurrence order
  std::vector<std::string> order;
  std::string line;
  std::size_t lineno = 0;
  bool first_data_row = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_line(line, ',');
    if (first_data_row) {
      double tmp;
      if (!parse_real(trim(cells[0]), tmp)) {
        first_data_row = false;  // header row, skip
        continue;
      }
      first_data_row = false;
    }
    if (cells.size() != 5) {
      throw std::runtime_error("load_iris: line " + std::to_string(lineno) +
                               ": expected 5 columns, got " +
                               std::to_string(cells.size()));
    }
    LabeledInstance z;
    z.features.resize(4);
    for (std::size_t j = 0; j < 4; ++j) {
      if (!parse_real(trim(cells[j]), z.features[j])) {
        throw std::runtime_error("load_iris: line " + std::to_string(lineno) +
                                 ": malformed value '" + cells[j] + "'");
      }
    }
    const std::string label = trim(cells[4]);
    if (label.empty()) {
      throw std::runtime_error("load_iris: line " + std::to_string(lineno) +
                               ": empty label");
    }
    auto it = class_ids.find(label);
    if (it == class_ids.end()) {
      it = class_ids.emplace(label, order.size()).first;
      order.push_back(label);
    }
    z.label = it->second;
    ds.instances.push_back(std::move(z));
  }
  if (ds.instances.empty()) throw std::runtime_error("load_iris: no rows in " + path);
  ds.n_classes = order.size();
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  out.precision(17);
  for (std::size_t j = 0; j < ds.n_features; ++j) out << "f" << j << ",";
  out << "label\n";
  for (const auto& z : ds.instances) {
    for (double f : z.features) out << f << ",";
    out << z.label << "\n";
  }
}

Dataset load_csv(const std::string& path, const std::string& name) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  Dataset ds;
  ds.name = name;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_line(line, ',');
    double tmp;
    if (lineno == 1 && !parse_real(trim(cells[0]), tmp)) continue;  // header
    if (ds.n_features == 0) ds.n_features = cells.size() - 1;
    if (cells.size() != ds.n_features + 1) {
      throw std::runtime_error("load_csv: line " + std::to_string(lineno) +
                               ": wrong column count");
    }
    LabeledInstance z;
    z.features.resize(ds.n_features);
    for (std::size_t j = 0; j < ds.n_features; ++j) {
      if (!parse_real(trim(cells[j]), z.features[j])) {
        throw std::runtime_error("load_csv: line " + std::to_string(lineno) +
                                 ": malformed value");
      }
    }
    double lab;
    if (!parse_real(trim(cells.back()), lab) || lab < 0 ||
        lab != std::floor(lab)) {
      throw std::runtime_error("load_csv: line " + std::to_string(lineno) +
                               ": malformed label");
    }
    z.label = static_cast<std::size_t>(lab);
    max_label = std::max(max_label, z.label);
    ds.instances.push_back(std::move(z));
  }
  if (ds.instances.empty()) throw std::runtime_error("load_csv: no rows");
  ds.n_classes = max_label + 1;
  return ds;
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("load_idx: truncated file while reading " + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::optional<std::size_t> limit) {
  if (limit && *limit == 0) throw std::runtime_error("load_idx: empty limit");
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);

  if (read_be32(img, "image magic") != 0x00000803u) {
    throw std::runtime_error("load_idx: " + images_path + " is not IDX format");
  }
  if (read_be32(lab, "label magic") != 0x00000801u) {
    throw std::runtime_error("load_idx: " + labels_path + " is not IDX format");
  }
  const std::uint32_t n_img = read_be32(img, "image count");
  const std::uint32_t rows = read_be32(img, "rows");
  const std::uint32_t cols = read_be32(img, "cols");
  const std::uint32_t n_lab = read_be32(lab, "label count");
  if (n_img != n_lab) {
    throw std::runtime_error("load_idx: image count " + std::to_string(n_img) +
                             " != label count " + std::to_string(n_lab));
  }
  std::size_t n = n_img;
  if (limit) n = std::min<std::size_t>(n, *limit);

  Dataset ds;
  ds.name = "idx";
  ds.n_features = static_cast<std::size_t>(rows) * cols;
  ds.n_classes = 10;
  ds.instances.resize(n);
  std::vector<unsigned char> buf(ds.n_features);
  for (std::size_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
      throw std::runtime_error("load_idx: truncated image data");
    }
    unsigned char y;
    if (!lab.read(reinterpret_cast<char*>(&y), 1)) {
      throw std::runtime_error("load_idx: truncated label data");
    }
    if (y > 9) throw std::runtime_error("load_idx: label out of range");
    auto& z = ds.instances[i];
    z.features.resize(ds.n_features);
    for (std::size_t j = 0; j < ds.n_features; ++j) z.features[j] = buf[j] / 255.0;
    z.label = y;
  }
  return ds;
}

Dataset synth_blobs(std::size_t n, std::size_t d, std::size_t k, double spread,
                    RngStream& stream) {
  if (k < 2 || n < k || d < 1 || !(spread > 0)) {
    throw std::invalid_argument("synth_blobs: need n >= k >= 2, d >= 1, spread > 0");
  }
  Dataset ds;
  ds.name = "blobs";
  ds.n_features = d;
  ds.n_classes = k;
  ds.instances.resize(n);
  // Cluster c centered at c along a unit diagonal direction.
  const double step = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;  // balanced within +-1
    auto& z = ds.instances[i];
    z.label = c;
    z.features.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      z.features[j] = static_cast<double>(c) * step + spread * stream.normal();
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction,
                                  RngStream& stream) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split: test_fraction must be in (0,1)");
  }
  const std::size_t n = ds.size();
  std::vector<std::vector<std::size_t>> by_class(ds.n_classes);
  for (std::size_t i = 0; i < n; ++i) by_class[ds.instances[i].label].push_back(i);
  for (auto& idx : by_class) stream.shuffle(idx);

  const std::size_t total_test =
      static_cast<std::size_t>(std::llround(test_fraction * n));
  // Largest-remainder apportionment of test slots across classes, never
  // taking a class's last train instance while another class can give one.
  std::vector<std::size_t> test_c(ds.n_classes, 0);
  std::vector<double> rem(ds.n_classes, 0.0);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    const double exact = test_fraction * by_class[c].size();
    test_c[c] = static_cast<std::size_t>(std::floor(exact));
    rem[c] = exact - test_c[c];
    assigned += test_c[c];
  }
  std::vector<std::size_t> ord(ds.n_classes);
  std::iota(ord.begin(), ord.end(), 0);
  std::stable_sort(ord.begin(), ord.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t pass = 0; pass < 2 && assigned < total_test; ++pass) {
    for (std::size_t c : ord) {
      if (assigned >= total_test) break;
      if (test_c[c] >= by_class[c].size()) continue;
      const bool leaves_train = by_class[c].size() - test_c[c] - 1 >= 1;
      if (pass == 0 && !leaves_train) continue;
      ++test_c[c];
      ++assigned;
    }
  }
  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    if (!by_class[c].empty() && test_c[c] >= by_class[c].size() &&
        by_class[c].size() > 1) {
      throw std::runtime_error("split: fraction leaves class " + std::to_string(c) +
                               " empty in train");
    }
  }

  Dataset train, test;
  train.n_features = test.n_features = ds.n_features;
  train.n_classes = test.n_classes = ds.n_classes;
  train.name = ds.name + "/train";
  test.name = ds.name + "/test";
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    for (std::size_t i = 0; i < by_class[c].size(); ++i) {
      (i < test_c[c] ? test_idx : train_idx).push_back(by_class[c][i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  for (std::size_t i : train_idx) train.instances.push_back(ds.instances[i]);
  for (std::size_t i : test_idx) test.instances.push_back(ds.instances[i]);
  return {std::move(train), std::move(test)};
}

StandardizationStats standardize(Dataset& train, std::vector<Dataset*> others) {
  if (train.instances.empty()) throw std::invalid_argument("standardize: empty train");
  const std::size_t d = train.n_features;
  const double n = static_cast<double>(train.size());
  StandardizationStats st;
  st.mean.assign(d, 0.0);
  st.std.assign(d, 0.0);
  st.clamped.assign(d, false);
  for (const auto& z : train.instances) axpy(1.0 / n, z.features, st.mean);
  for (const auto& z : train.instances) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dx = z.features[j] - st.mean[j];
      st.std[j] += dx * dx / n;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    st.std[j] = std::sqrt(st.std[j]);
    if (st.std[j] <= 1e-12) {
      st.std[j] = 1.0;
      st.clamped[j] = true;
    }
  }
  auto apply = [&](Dataset& ds) {
    for (auto& z : ds.instances) {
      for (std::size_t j = 0; j < d; ++j) {
        z.features[j] = (z.features[j] - st.mean[j]) / st.std[j];
      }
    }
  };
  apply(train);
  for (Dataset* ds : others) apply(*ds);
  return st;
}

}  // namespace ifval
