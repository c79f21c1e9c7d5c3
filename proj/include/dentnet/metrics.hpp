#pragma once

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dentnet {

// Confusion counts with rows = true class, columns = predicted class.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;  // k*k, row-major

  explicit ConfusionMatrix(std::size_t classes = 0) : k(classes), counts(classes * classes, 0) {}

  std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (std::size_t c : counts) n += c;
    return n;
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels,
                                 std::size_t k) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("confusion: " + std::to_string(preds.size()) +
                                " predictions vs " + std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= static_cast<int>(k))
      throw std::invalid_argument("confusion: label " + std::to_string(labels[i]) +
                                  " outside [0," + std::to_string(k) + ")");
    if (preds[i] < 0 || preds[i] >= static_cast<int>(k))
      throw std::invalid_argument("confusion: prediction " + std::to_string(preds[i]) +
                                  " outside [0," + std::to_string(k) + ")");
    ++cm.at(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(preds[i]));
  }
  return cm;
}

enum class Averaging { Macro, Micro };

struct MetricsOptions {
  Averaging averaging = Averaging::Macro;
  // Value a per-class precision/recall takes when its denominator is 0.
  double empty_denominator_value = 0.0;
};

// Percentages: accuracy = 100*trace/total; per-class precision c_ii over
// its column, recall c_ii over its row; macro = unweighted class mean.
struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

inline MetricsReport metrics(const ConfusionMatrix& cm, const MetricsOptions& opt = {}) {
  const std::size_t total = cm.total();
  if (cm.k == 0 || total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  std::size_t trace = 0;
  for (std::size_t c = 0; c < cm.k; ++c) trace += cm.at(c, c);
  MetricsReport r;
  r.accuracy = 100.0 * static_cast<double>(trace) / static_cast<double>(total);
  if (opt.averaging == Averaging::Micro) {
    r.precision = r.accuracy;
    r.recall = r.accuracy;
    return r;
  }
  double prec_sum = 0.0, rec_sum = 0.0;
  for (std::size_t c = 0; c < cm.k; ++c) {
    std::size_t col = 0, row = 0;
    for (std::size_t i = 0; i < cm.k; ++i) {
      col += cm.at(i, c);
      row += cm.at(c, i);
    }
    const double hit = static_cast<double>(cm.at(c, c));
    prec_sum += col == 0 ? opt.empty_denominator_value : hit / static_cast<double>(col);
    rec_sum += row == 0 ? opt.empty_denominator_value : hit / static_cast<double>(row);
  }
  r.precision = 100.0 * prec_sum / static_cast<double>(cm.k);
  r.recall = 100.0 * rec_sum / static_cast<double>(cm.k);
  return r;
}

inline std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Text table in the reporting layout: one metrics row plus the counts.
inline std::string metrics_table(const ConfusionMatrix& cm, const MetricsReport& r) {
  std::ostringstream os;
  os << "Acc\tPrec\tRecall\n"
     << format_percent(r.accuracy) << "\t" << format_percent(r.precision) << "\t"
     << format_percent(r.recall) << "\n\nconfusion (rows true, cols predicted):\n";
  for (std::size_t t = 0; t < cm.k; ++t) {
    for (std::size_t p = 0; p < cm.k; ++p) os << cm.at(t, p) << (p + 1 < cm.k ? "\t" : "\n");
  }
  return os.str();
}

inline std::string metrics_json(const ConfusionMatrix& cm, const MetricsReport& r) {
  std::ostringstream os;
  os << "{\"accuracy\":" << format_percent(r.accuracy)
     << ",\"precision\":" << format_percent(r.precision)
     << ",\"recall\":" << format_percent(r.recall) << ",\"confusion\":[";
  for (std::size_t t = 0; t < cm.k; ++t) {
    os << (t ? ",[" : "[");
    for (std::size_t p = 0; p < cm.k; ++p) os << (p ? "," : "") << cm.at(t, p);
    os << "]";
  }
  os << "]}";
  return os.str();
}

}  // namespace dentnet
