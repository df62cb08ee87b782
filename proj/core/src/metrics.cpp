#include "pyrpoint/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "pyrpoint/errors.hpp"

namespace pyrpoint {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw DimensionError("cannot merge confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

json ConfusionMatrix::to_json() const {
  json rows = json::array();
  for (std::size_t t = 0; t < classes_; ++t) {
    std::vector<std::uint64_t> row(counts_.begin() + static_cast<std::ptrdiff_t>(t * classes_),
                                   counts_.begin() + static_cast<std::ptrdiff_t>((t + 1) * classes_));
    rows.push_back(row);
  }
  return rows;
}

ConfusionMatrix ConfusionMatrix::from_json(const json& doc) {
  const auto rows = doc.get<std::vector<std::vector<std::uint64_t>>>();
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw DimensionError("confusion matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.at(t, p) = rows[t][p];
  }
  return cm;
}

ConfusionMatrix accumulate_confusion(std::span<const int> predicted, std::span<const int> truth,
                                     std::size_t class_count, std::optional<int> ignore_index) {
  if (predicted.size() != truth.size()) {
    throw DimensionError("accumulate_confusion: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix cm(class_count);
  const auto in_range = [&](int l) { return l >= 0 && static_cast<std::size_t>(l) < class_count; };
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (ignore_index && truth[i] == *ignore_index) continue;
    if (!in_range(truth[i])) throw LabelError("true label " + std::to_string(truth[i]) + " at point " + std::to_string(i));
    if (!in_range(predicted[i])) {
      throw LabelError("predicted label " + std::to_string(predicted[i]) + " at point " + std::to_string(i));
    }
    ++cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

double mean_iou(std::span<const std::optional<double>> iou) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : iou)
    if (v) sum += *v, ++n;
  return n ? sum / static_cast<double>(n) : 0.0;
}

Metrics metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw DegenerateInputError("metrics: confusion matrix is empty");
  const std::size_t c = cm.class_count();
  Metrics m;
  std::uint64_t trace = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const std::uint64_t tp = cm.at(k, k);
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) row += cm.at(k, j), col += cm.at(j, k);
    const std::uint64_t denom = row + col - tp;  // TP + FN + FP
    m.iou.push_back(denom ? std::optional<double>(static_cast<double>(tp) / static_cast<double>(denom)) : std::nullopt);
    trace += tp;
  }
  m.mean_iou = mean_iou(m.iou);
  m.overall_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return m;
}

json Metrics::to_json() const {
  json per_class = json::array();
  for (const auto& v : iou) per_class.push_back(v ? json(*v) : json(nullptr));
  return {{"iou", per_class}, {"miou", mean_iou}, {"oa", overall_accuracy}};
}

std::string format_report(const Metrics& m, const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  char buf[128];
  std::size_t width = 5;
  for (const auto& n : class_names) width = std::max(width, n.size());
  for (std::size_t k = 0; k < m.iou.size(); ++k) {
    const std::string name = k < class_names.size() ? class_names[k] : "class" + std::to_string(k);
    if (m.iou[k]) std::snprintf(buf, sizeof buf, "  %-*s  IoU %6.2f\n", static_cast<int>(width), name.c_str(), 100.0 * *m.iou[k]);
    else std::snprintf(buf, sizeof buf, "  %-*s  IoU    n/a\n", static_cast<int>(width), name.c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "mIoU %.2f  OA %.2f  points %llu\n", 100.0 * m.mean_iou, 100.0 * m.overall_accuracy,
                static_cast<unsigned long long>(cm.total()));
  os << buf << "confusion (rows = truth, columns = prediction)\n";
  for (std::size_t t = 0; t < cm.class_count(); ++t) {
    for (std::size_t p = 0; p < cm.class_count(); ++p) {
      std::snprintf(buf, sizeof buf, " %10llu", static_cast<unsigned long long>(cm.at(t, p)));
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pyrpoint
