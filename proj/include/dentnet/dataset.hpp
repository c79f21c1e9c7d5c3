#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/image_io.hpp"
#include "dentnet/prng.hpp"
#include "dentnet/tensor.hpp"

namespace dentnet {

// Corpus layout on disk: <root>/<class-name>/<id>.ppm plus manifest.tsv
// with columns id, class, split. Class order in the manifest fixes the
// integer labels.

struct ManifestEntry {
  std::string id;
  std::string class_name;
  std::string split;  // "train", "test" or "" before splitting
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  int label_of(const std::string& class_name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i)
      if (class_names[i] == class_name) return static_cast<int>(i);
    throw std::invalid_argument("manifest: unknown class '" + class_name + "'");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& e : entries) counts[static_cast<std::size_t>(label_of(e.class_name))]++;
    return counts;
  }
};

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << "id\tclass\tsplit\n";
  for (const auto& e : m.entries) os << e.id << "\t" << e.class_name << "\t" << e.split << "\n";
  if (!os) throw std::runtime_error(path + ": write failed");
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open");
  DatasetManifest m;
  std::string line;
  if (!std::getline(is, line) || line.rfind("id\tclass\tsplit", 0) != 0)
    throw std::runtime_error(path + ": missing manifest header");
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!std::getline(ls, e.id, '\t') || !std::getline(ls, e.class_name, '\t'))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed row");
    std::getline(ls, e.split, '\t');
    if (std::find(m.class_names.begin(), m.class_names.end(), e.class_name) ==
        m.class_names.end())
      m.class_names.push_back(e.class_name);
    m.entries.push_back(std::move(e));
  }
  return m;
}

// Per-class shuffle, floor(n * train_frac) to train, rest to test. The
// same seed always yields the same assignment.
inline void stratified_split(DatasetManifest& m, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("split: train fraction must be in (0,1), got " +
                                std::to_string(train_frac));
  Prng rng(seed);
  for (const auto& cls : m.class_names) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].class_name == cls) idx.push_back(i);
    if (idx.size() < 2)
      throw std::invalid_argument("split: class '" + cls + "' has " +
                                  std::to_string(idx.size()) + " images, need at least 2");
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.next_below(i)]);
    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * train_frac));
    for (std::size_t i = 0; i < idx.size(); ++i)
      m.entries[idx[i]].split = i < n_train ? "train" : "test";
  }
}

struct LabeledSet {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

// Loads every manifest entry of the given split ("" loads everything),
// in manifest order.
inline LabeledSet load_split(const std::string& root, const DatasetManifest& m,
                             const std::string& split, std::size_t channels = 3) {
  LabeledSet out;
  for (const auto& e : m.entries) {
    if (!split.empty() && e.split != split) continue;
    out.images.push_back(read_image(root + "/" + e.class_name + "/" + e.id + ".ppm", channels));
    out.labels.push_back(m.label_of(e.class_name));
    out.ids.push_back(e.id);
  }
  return out;
}

}  // namespace dentnet
