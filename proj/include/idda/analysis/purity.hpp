#pragma once

#include <limits>
#include <vector>

#include "idda/tensor.hpp"

namespace idda {

/// Per-class centroids of labeled features.
template <typename T>
std::vector<std::vector<double>> class_centroids(const Tensor<T>& features, const std::vector<std::size_t>& labels,
                                                 std::size_t num_classes) {
  if (features.rows() != labels.size()) throw Error("class_centroids: label count mismatch");
  const std::size_t d = features.row_size();
  std::vector<std::vector<double>> c(num_classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw Error("class_centroids: label out of range");
    ++count[labels[i]];
    for (std::size_t j = 0; j < d; ++j) c[labels[i]][j] += static_cast<double>(features[i * d + j]);
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (count[k] == 0) throw Error("mode_purity: class " + std::to_string(k) + " has no source samples");
    for (double& v : c[k]) v /= static_cast<double>(count[k]);
  }
  return c;
}

/// Fraction of target samples whose nearest source class centroid (Euclidean,
/// ties to the lowest class) matches their hidden label.
template <typename T>
double mode_purity(const Tensor<T>& target_features, const std::vector<std::size_t>& target_labels,
                   const Tensor<T>& source_features, const std::vector<std::size_t>& source_labels) {
  if (target_features.row_size() != source_features.row_size()) throw ShapeError("mode_purity: feature width mismatch");
  if (target_features.rows() != target_labels.size()) throw Error("mode_purity: target label count mismatch");
  if (target_labels.empty()) throw Error("mode_purity: no target samples");
  std::size_t classes = 0;
  for (std::size_t y : source_labels) classes = std::max(classes, y + 1);
  for (std::size_t y : target_labels) classes = std::max(classes, y + 1);
  const auto centroids = class_centroids(source_features, source_labels, classes);
  const std::size_t d = target_features.row_size();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < target_labels.size(); ++i) {
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes; ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(target_features[i * d + j]) - centroids[k][j];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    hit += best == target_labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(target_labels.size());
}

}  // namespace idda
