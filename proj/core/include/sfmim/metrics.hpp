#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sfmim {

// Confusion counts plus the derived summary metrics. Rows index the true
// class, columns the predicted class; classes are 1..K externally and
// 0..K-1 inside the matrix. All arithmetic is in 64-bit.
struct MetricsReport {
  std::vector<std::vector<int64_t>> confusion;  // K x K
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class_recall;

  std::string to_json() const;  // fixed 6-decimal formatting
};

std::vector<std::vector<int64_t>> confusion_matrix(const std::vector<int32_t>& true_labels,
                                                   const std::vector<int32_t>& predicted_labels,
                                                   int32_t num_classes);

double overall_accuracy(const std::vector<std::vector<int64_t>>& confusion);
double average_accuracy(const std::vector<std::vector<int64_t>>& confusion);
double cohen_kappa(const std::vector<std::vector<int64_t>>& confusion);
std::vector<double> per_class_recall(const std::vector<std::vector<int64_t>>& confusion);

MetricsReport compute_metrics(const std::vector<int32_t>& true_labels,
                              const std::vector<int32_t>& predicted_labels,
                              int32_t num_classes);
MetricsReport compute_metrics(const std::vector<std::vector<int64_t>>& confusion);

}  // namespace sfmim
