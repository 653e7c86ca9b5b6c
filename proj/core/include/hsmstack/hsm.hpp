#pragma once

// Human Softmax: per-image vote counts scaled into a distribution over the
// 24 classes, plus the consensus (majority) label.

#include <array>
#include <filesystem>
#include <string_view>
#include <vector>

#include "hsmstack/dataset.hpp"

namespace hsmstack {

using ProbVector = std::array<double, kNumClasses>;

/// Throws DataError unless every entry is in [0,1] and the sum is 1 within `tol`.
void check_prob_vector(const ProbVector& p, double tol = 1e-9);

struct HsmRecord {
  std::string image_id;
  CountVector counts{};
  ProbVector hsm{};
  std::uint32_t n_annotations = 0;
  ClassId consensus;
  bool tie = false;
};

struct Consensus {
  ClassId label;
  bool tie = false;
};

/// x_i / sum_j x_j. Throws DataError("no annotations") for an all-zero vector.
[[nodiscard]] ProbVector normalize_counts(const CountVector& counts);

/// Argmax of the counts; ties go to the lowest class index and set `tie`.
[[nodiscard]] Consensus consensus_label(const CountVector& counts);

/// One record per distinct image id, ordered by image id.
[[nodiscard]] std::vector<HsmRecord> build_hsm_dataset(const std::vector<AnnotationRecord>& records);

[[nodiscard]] ProbVector delta_distribution(ClassId c);

/// `image_id,n_annotations,consensus_name,tie,h0,...,h23`
void store_hsm(const std::filesystem::path& path, const std::vector<HsmRecord>& records,
               std::string_view header_comment = {});
/// Counts are reconstructed as round(h_i * n_annotations).
[[nodiscard]] std::vector<HsmRecord> load_hsm(const std::filesystem::path& path);

}  // namespace hsmstack
