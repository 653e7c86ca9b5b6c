#pragma once

// Information-theoretic scalars (natural log throughout) and the dataset-level
// entropy analyses: histograms split by correctness, fraction correct per
// entropy bin, and entropy against annotation count.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsmstack/hsm.hpp"

namespace hsmstack {

/// Clamp applied to model probabilities before taking logarithms.
inline constexpr double kLogClamp = 1e-12;

/// ln(24), the upper bound of the Shannon entropy over the class set.
[[nodiscard]] double max_entropy();

/// -sum p ln p with 0 ln 0 = 0.
[[nodiscard]] double shannon_entropy(const ProbVector& p);
/// H_q(p) = -sum q_i ln max(p_i, eps).
[[nodiscard]] double cross_entropy(const ProbVector& q, const ProbVector& p);
/// sum q_i ln(q_i / max(p_i, eps)), i.e. cross_entropy(q,p) - shannon_entropy(q).
[[nodiscard]] double kl_divergence(const ProbVector& q, const ProbVector& p);

enum class LossKind { kCxe, kKld };

/// Sum of per-image cross entropy or KL divergence, left to right.
[[nodiscard]] double dataset_loss(std::span<const ProbVector> targets, std::span<const ProbVector> preds,
                                  LossKind kind);

enum class Population { kCorrect, kIncorrect, kAll };
[[nodiscard]] std::string_view population_name(Population p);

struct EntropyProfile {
  std::string image_id;
  std::string model_tag;  // "CXE", "KLD", "KNN" or "HSM"
  double entropy = 0.0;
  bool correct = false;
  std::uint32_t n_annotations = 0;
  ClassId consensus;

  friend bool operator==(const EntropyProfile&, const EntropyProfile&) = default;
};

struct Histogram {
  std::vector<double> edges;  // bins + 1 monotone edges spanning [0, ln 24]
  std::vector<std::size_t> counts;
  Population population = Population::kAll;
};

inline constexpr std::size_t kDefaultEntropyBins = 40;

/// Bin index for an entropy value on `bins` uniform bins over [0, ln 24].
/// Values outside the range clamp to the first/last bin.
[[nodiscard]] std::size_t entropy_bin(double entropy, std::size_t bins);

/// One histogram (kAll) or two (kCorrect, kIncorrect) when split.
[[nodiscard]] std::vector<Histogram> entropy_histogram(std::span<const EntropyProfile> profiles, std::size_t bins,
                                                       bool split_by_correct);

struct FractionBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::optional<double> fraction;  // empty for empty bins
};

[[nodiscard]] std::vector<FractionBin> fraction_correct_vs_entropy(std::span<const EntropyProfile> profiles,
                                                                   std::size_t bins);

struct AnnotationEntropyPoint {
  std::uint32_t n_annotations = 0;
  double entropy = 0.0;
  bool correct = false;

  friend bool operator==(const AnnotationEntropyPoint&, const AnnotationEntropyPoint&) = default;
  friend auto operator<=>(const AnnotationEntropyPoint&, const AnnotationEntropyPoint&) = default;
};

[[nodiscard]] std::vector<AnnotationEntropyPoint> entropy_vs_annotations(std::span<const EntropyProfile> profiles);

/// Profiles of a model's predictions against the consensus in `hsm`
/// (matched by image id, output in `preds` order).
[[nodiscard]] std::vector<EntropyProfile> build_profiles(const std::vector<HsmRecord>& hsm,
                                                         const std::vector<Prediction>& preds);
/// HSM entropy profiles (correct is always true; population kAll only).
[[nodiscard]] std::vector<EntropyProfile> hsm_profiles(const std::vector<HsmRecord>& hsm);

struct EntropySeparation {
  double mean_correct = 0.0;
  double mean_incorrect = 0.0;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
};
[[nodiscard]] EntropySeparation entropy_separation(std::span<const EntropyProfile> profiles);

/// Plot-data writers (csv): histogram rows `bin_lo,bin_hi,count`.
[[nodiscard]] std::string histogram_csv(const Histogram& h);
[[nodiscard]] std::string fraction_csv(std::span<const FractionBin> bins);
[[nodiscard]] std::string annotation_scatter_csv(std::span<const AnnotationEntropyPoint> points);

}  // namespace hsmstack
