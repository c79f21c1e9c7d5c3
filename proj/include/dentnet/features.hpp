#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/checkpoint.hpp"
#include "dentnet/tensor.hpp"

namespace dentnet {

// Precomputed feature vectors standing in for an external extractor.
// Binary layout: magic "FEAT", version u32, N u32, D u32, K u32, N rows of
// D little-endian f64, then N u16 labels. A CSV twin uses the header
// label,f0..f{D-1}. The extractor name travels in <path>.meta.json.
struct FeatureSet {
  Tensor features{{1, 1}};  // N x D
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::string extractor;

  std::size_t count() const { return features.dim(0); }
  std::size_t dim() const { return features.dim(1); }

  void validate() const {
    if (features.rank() != 2)
      throw std::invalid_argument("feature set: features must be NxD, got " +
                                  shape_str(features.shape()));
    if (count() == 0) throw std::invalid_argument("empty feature set");
    if (labels.size() != count())
      throw std::invalid_argument("feature set: " + std::to_string(count()) + " rows vs " +
                                  std::to_string(labels.size()) + " labels");
    if (class_count == 0) throw std::invalid_argument("feature set: class count must be positive");
    for (std::size_t i = 0; i < features.size(); ++i)
      if (!std::isfinite(features[i]))
        throw std::invalid_argument("feature set: non-finite entry at index " +
                                    std::to_string(i));
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || labels[i] >= static_cast<int>(class_count))
        throw std::invalid_argument("feature set: label " + std::to_string(labels[i]) +
                                    " at row " + std::to_string(i) + " outside [0," +
                                    std::to_string(class_count) + ")");
  }
};

namespace feat_detail {

inline void write_meta(const std::string& path, const FeatureSet& fs) {
  std::ofstream os(path + ".meta.json");
  if (!os) return;  // sidecar is best-effort
  os << "{\"extractor\":\"" << fs.extractor << "\",\"n\":" << fs.count()
     << ",\"d\":" << fs.dim() << ",\"k\":" << fs.class_count << "}\n";
}

inline std::string read_meta_extractor(const std::string& path) {
  std::ifstream is(path + ".meta.json");
  if (!is) return "";
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string key = "\"extractor\":\"";
  const std::size_t at = text.find(key);
  if (at == std::string::npos) return "";
  const std::size_t start = at + key.size();
  const std::size_t end = text.find('"', start);
  if (end == std::string::npos) return "";
  return text.substr(start, end - start);
}

}  // namespace feat_detail

inline void write_feature_file(const std::string& path, const FeatureSet& fs) {
  fs.validate();
  if (fs.class_count > 65536)
    throw std::invalid_argument("feature file: class count exceeds u16 labels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os.write("FEAT", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(fs.count()));
  detail::put_u32(os, static_cast<std::uint32_t>(fs.dim()));
  detail::put_u32(os, static_cast<std::uint32_t>(fs.class_count));
  for (std::size_t i = 0; i < fs.features.size(); ++i) detail::put_f64(os, fs.features[i]);
  for (int label : fs.labels) {
    const std::uint16_t v = static_cast<std::uint16_t>(label);
    unsigned char b[2] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!os) throw std::runtime_error(path + ": write failed");
  feat_detail::write_meta(path, fs);
}

inline void write_feature_csv(const std::string& path, const FeatureSet& fs) {
  fs.validate();
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << "label";
  for (std::size_t d = 0; d < fs.dim(); ++d) os << ",f" << d;
  os << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < fs.count(); ++i) {
    os << fs.labels[i];
    for (std::size_t d = 0; d < fs.dim(); ++d) os << "," << fs.features(i, d);
    os << "\n";
  }
  if (!os) throw std::runtime_error(path + ": write failed");
  feat_detail::write_meta(path, fs);
}

namespace feat_detail {

inline FeatureSet read_binary(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1)
    throw std::runtime_error(path + ": unsupported feature format version " +
                             std::to_string(version));
  const std::uint32_t n = detail::get_u32(is);
  const std::uint32_t d = detail::get_u32(is);
  const std::uint32_t k = detail::get_u32(is);
  if (n == 0) throw std::runtime_error(path + ": empty feature set");
  if (d == 0) throw std::runtime_error(path + ": zero feature dimension");
  FeatureSet fs;
  fs.class_count = k;
  fs.features = Tensor({n, d});
  for (std::size_t i = 0; i < fs.features.size(); ++i) fs.features[i] = detail::get_f64(is);
  fs.labels.resize(n);
  for (auto& label : fs.labels) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2))
      throw std::runtime_error(path + ": truncated label block");
    label = static_cast<int>(b[0] | (static_cast<unsigned>(b[1]) << 8));
  }
  return fs;
}

inline FeatureSet read_csv(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("label,f0", 0) != 0)
    throw std::runtime_error(path + ": bad magic, want FEAT binary or label,f0.. CSV header");
  std::size_t dims = 0;
  for (char ch : line)
    if (ch == ',') ++dims;
  FeatureSet fs;
  std::vector<double> values;
  int max_label = -1;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ++rows;
    std::istringstream ls(line);
    std::string cell;
    if (!std::getline(ls, cell, ',')) throw std::runtime_error(path + ": malformed row");
    const int label = std::stoi(cell);
    fs.labels.push_back(label);
    max_label = std::max(max_label, label);
    std::size_t got = 0;
    while (std::getline(ls, cell, ',')) {
      values.push_back(std::stod(cell));
      ++got;
    }
    if (got != dims)
      throw std::runtime_error(path + ": row " + std::to_string(rows) + " has " +
                               std::to_string(got) + " features, header promises " +
                               std::to_string(dims));
  }
  if (rows == 0) throw std::runtime_error(path + ": empty feature set");
  fs.features = Tensor({rows, dims}, std::move(values));
  fs.class_count = static_cast<std::size_t>(max_label) + 1;
  return fs;
}

}  // namespace feat_detail

// Sniffs the content: FEAT binary or the CSV twin.
inline FeatureSet read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open");
  char head[4] = {0, 0, 0, 0};
  is.read(head, 4);
  is.clear();
  is.seekg(0);
  FeatureSet fs = std::string(head, 4) == "FEAT" ? feat_detail::read_binary(is, path)
                                                 : feat_detail::read_csv(is, path);
  fs.extractor = feat_detail::read_meta_extractor(path);
  fs.validate();
  return fs;
}

}  // namespace dentnet
