#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semmap/image.hpp"

namespace semmap {

/// Rows are ground truth, columns are predictions. Pixels with void truth
/// or an unlabeled prediction only go to the ignore tally.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int label_count = 0);

  int label_count() const { return static_cast<int>(counts_.rows()); }
  std::uint64_t count(int truth, int prediction) const { return counts_(truth, prediction); }
  std::uint64_t ignored() const { return ignored_; }
  std::uint64_t total() const { return counts_.sum(); }
  const Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic>& counts() const { return counts_; }

  /// Adds one pixel pair. Labels at or above label_count() (other than the
  /// unlabeled sentinel) throw ShapeError.
  void add(std::uint8_t truth, std::uint8_t prediction);
  /// Throws ShapeError unless both images have the same size.
  void accumulate(const LabelImage& truth, const LabelImage& prediction);
  /// Adds another matrix's counts; label counts must agree.
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic> counts_;
  std::uint64_t ignored_ = 0;
};

struct ClassMetrics {
  bool present = false;  // at least one truth pixel
  std::uint64_t truth_pixels = 0;
  double acc_recall = 0.0;     // TP / (TP + FN)
  double acc_precision = 0.0;  // TP / (TP + FP), 0 when never predicted
  double iou = 0.0;            // TP / (TP + FP + FN)
};

struct MetricsSummary {
  std::vector<ClassMetrics> classes;
  double mean_acc_recall = 0.0;
  double mean_acc_precision = 0.0;
  double mean_iou = 0.0;
  double fw_iou = 0.0;
  double global_acc = 0.0;
  std::uint64_t counted = 0;
  std::uint64_t ignored = 0;
};

/// Means run over classes present in the truth. Throws EmptyEvalError when
/// nothing was counted.
MetricsSummary summarize(const ConfusionMatrix& cm);

/// Human-readable table; `names` may be shorter than the label count.
std::string format_table(const MetricsSummary& summary, const std::vector<std::string>& names);
/// One row per class plus a summary row, comma-separated.
std::string format_csv(const MetricsSummary& summary, const std::vector<std::string>& names);

}  // namespace semmap
