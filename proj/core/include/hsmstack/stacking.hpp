#pragma once

// Stacked generalization: the two base models' softmax rows are concatenated
// into a 2M-dimensional feature and classified by exact k-nearest neighbors,
// whose output distribution is the fraction of neighbors per class.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsmstack/hsm.hpp"

namespace hsmstack {

inline constexpr std::size_t kStackedDim = 2 * kNumClasses;
inline constexpr std::size_t kDefaultNeighbors = 50;

struct StackedFeature {
  std::string image_id;
  std::array<double, kStackedDim> x{};  // [0, M): CXE row, [M, 2M): KLD row
};

/// Rows follow `cxe` order; the KLD row is matched by image id.
[[nodiscard]] std::vector<StackedFeature> concat_features(const std::vector<Prediction>& cxe,
                                                          const std::vector<Prediction>& kld);

class KnnModel {
 public:
  KnnModel(std::vector<StackedFeature> references, std::vector<ClassId> labels, std::size_t k);

  [[nodiscard]] std::size_t k() const { return k_; }
  [[nodiscard]] std::size_t size() const { return refs_.size(); }
  [[nodiscard]] const std::vector<StackedFeature>& references() const { return refs_; }
  [[nodiscard]] const std::vector<ClassId>& labels() const { return labels_; }
  /// Reference row index for an image id, if present.
  [[nodiscard]] std::optional<std::size_t> find(std::string_view image_id) const;

 private:
  std::vector<StackedFeature> refs_;
  std::vector<ClassId> labels_;
  std::size_t k_;
};

/// Stores the references verbatim. Throws DataError when k is 0 or exceeds N.
[[nodiscard]] KnnModel knn_fit(std::vector<StackedFeature> features, std::vector<ClassId> labels, std::size_t k);

/// Neighbor-fraction distribution for one query. Distance ties go to the earlier
/// reference. `exclude_id` drops a self-match by image id.
[[nodiscard]] ProbVector knn_predict_dist(const KnnModel& model, const StackedFeature& x,
                                          std::optional<std::string_view> exclude_id = std::nullopt);

/// KNN predictions for every feature; self-matches by id are excluded when
/// `exclude_self` is set.
[[nodiscard]] std::vector<Prediction> knn_predict_all(const KnnModel& model, const std::vector<StackedFeature>& features,
                                                      bool exclude_self = true);

/// `image_id,x0,...,x47`
void store_features(const std::filesystem::path& path, const std::vector<StackedFeature>& features,
                    std::string_view header_comment = {});
[[nodiscard]] std::vector<StackedFeature> load_features(const std::filesystem::path& path);

}  // namespace hsmstack
