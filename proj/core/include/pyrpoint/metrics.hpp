#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pyrpoint/config.hpp"

namespace pyrpoint {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t class_count = 0) : classes_(class_count), counts_(class_count * class_count, 0) {}

  std::size_t class_count() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);

  json to_json() const;
  static ConfusionMatrix from_json(const json& doc);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Tallies (truth, prediction) pairs; points whose truth is the ignore index
/// are skipped. Throws LabelError on any other label outside [0, C).
ConfusionMatrix accumulate_confusion(std::span<const int> predicted, std::span<const int> truth,
                                     std::size_t class_count, std::optional<int> ignore_index = std::nullopt);

struct Metrics {
  /// IoU per class in [0, 1]; nullopt where TP + FP + FN = 0.
  std::vector<std::optional<double>> iou;
  double mean_iou = 0.0;  // over defined classes
  double overall_accuracy = 0.0;

  json to_json() const;
};

/// Throws DegenerateInputError on an empty matrix.
Metrics metrics(const ConfusionMatrix& cm);

/// Mean over the defined entries.
double mean_iou(std::span<const std::optional<double>> iou);

/// Aligned text: per-class IoU (percent), mIoU, OA, then the matrix.
std::string format_report(const Metrics& m, const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

}  // namespace pyrpoint
