#include "sfmim/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "sfmim/error.hpp"

namespace sfmim {

namespace {

int64_t total_count(const std::vector<std::vector<int64_t>>& m) {
  int64_t total = 0;
  for (const auto& row : m)
    for (int64_t c : row) total += c;
  return total;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::vector<std::vector<int64_t>> confusion_matrix(const std::vector<int32_t>& true_labels,
                                                   const std::vector<int32_t>& predicted_labels,
                                                   int32_t num_classes) {
  if (true_labels.size() != predicted_labels.size())
    throw ContractError("confusion_matrix: label list lengths differ (" +
                        std::to_string(true_labels.size()) + " vs " +
                        std::to_string(predicted_labels.size()) + ")");
  const size_t k = static_cast<size_t>(num_classes);
  std::vector<std::vector<int64_t>> m(k, std::vector<int64_t>(k, 0));
  for (size_t i = 0; i < true_labels.size(); ++i) {
    const int32_t t = true_labels[i];
    const int32_t p = predicted_labels[i];
    if (t < 1 || t > num_classes)
      throw ContractError("confusion_matrix: true label " + std::to_string(t) +
                          " out of range at index " + std::to_string(i));
    if (p < 1 || p > num_classes)
      throw ContractError("confusion_matrix: predicted label " + std::to_string(p) +
                          " out of range at index " + std::to_string(i));
    ++m[static_cast<size_t>(t - 1)][static_cast<size_t>(p - 1)];
  }
  return m;
}

double overall_accuracy(const std::vector<std::vector<int64_t>>& confusion) {
  const int64_t total = total_count(confusion);
  if (total == 0) throw DataError("overall_accuracy: empty confusion matrix");
  int64_t trace = 0;
  for (size_t i = 0; i < confusion.size(); ++i) trace += confusion[i][i];
  return static_cast<double>(trace) / static_cast<double>(total);
}

std::vector<double> per_class_recall(const std::vector<std::vector<int64_t>>& confusion) {
  std::vector<double> recalls(confusion.size(), 0.0);
  for (size_t i = 0; i < confusion.size(); ++i) {
    int64_t row_sum = 0;
    for (int64_t c : confusion[i]) row_sum += c;
    if (row_sum == 0)
      throw DataError("average_accuracy: class " + std::to_string(i + 1) +
                      " has no samples; recall is undefined");
    recalls[i] = static_cast<double>(confusion[i][i]) / static_cast<double>(row_sum);
  }
  return recalls;
}

double average_accuracy(const std::vector<std::vector<int64_t>>& confusion) {
  const auto recalls = per_class_recall(confusion);
  double sum = 0.0;
  for (double r : recalls) sum += r;
  return sum / static_cast<double>(recalls.size());
}

double cohen_kappa(const std::vector<std::vector<int64_t>>& confusion) {
  const int64_t total = total_count(confusion);
  if (total == 0) throw DataError("cohen_kappa: empty confusion matrix");
  const size_t k = confusion.size();
  double po = 0.0, pe = 0.0;
  for (size_t i = 0; i < k; ++i) {
    int64_t row_sum = 0, col_sum = 0;
    for (size_t j = 0; j < k; ++j) {
      row_sum += confusion[i][j];
      col_sum += confusion[j][i];
    }
    po += static_cast<double>(confusion[i][i]);
    pe += static_cast<double>(row_sum) * static_cast<double>(col_sum);
  }
  po /= static_cast<double>(total);
  pe /= static_cast<double>(total) * static_cast<double>(total);
  if (pe == 1.0)
    throw DataError("cohen_kappa: degenerate distribution (chance agreement is 1)");
  return (po - pe) / (1.0 - pe);
}

MetricsReport compute_metrics(const std::vector<std::vector<int64_t>>& confusion) {
  MetricsReport r;
  r.confusion = confusion;
  r.oa = overall_accuracy(confusion);
  r.per_class_recall = per_class_recall(confusion);
  r.aa = average_accuracy(confusion);
  r.kappa = cohen_kappa(confusion);
  return r;
}

MetricsReport compute_metrics(const std::vector<int32_t>& true_labels,
                              const std::vector<int32_t>& predicted_labels,
                              int32_t num_classes) {
  return compute_metrics(confusion_matrix(true_labels, predicted_labels, num_classes));
}

std::string MetricsReport::to_json() const {
  std::ostringstream os;
  os << "{\"oa\": " << fixed6(oa) << ", \"aa\": " << fixed6(aa)
     << ", \"kappa\": " << fixed6(kappa) << ", \"per_class_recall\": [";
  for (size_t i = 0; i < per_class_recall.size(); ++i) {
    if (i) os << ", ";
    os << fixed6(per_class_recall[i]);
  }
  os << "], \"confusion\": [";
  for (size_t i = 0; i < confusion.size(); ++i) {
    if (i) os << ", ";
    os << "[";
    for (size_t j = 0; j < confusion[i].size(); ++j) {
      if (j) os << ", ";
      os << confusion[i][j];
    }
    os << "]";
  }
  os << "]}";
  return os.str();
}

}  // namespace sfmim
