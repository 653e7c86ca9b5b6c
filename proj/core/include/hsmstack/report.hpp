#pragma once

// Accuracy bookkeeping against consensus labels: confusion matrices,
// per-class precision/recall, the two-model agreement table and the
// per-character results table.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hsmstack/hsm.hpp"

namespace hsmstack {

struct ConfusionMatrix {
  // counts[consensus][predicted]
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  [[nodiscard]] std::uint64_t total() const;
  [[nodiscard]] std::uint64_t trace() const;
  [[nodiscard]] std::uint64_t row_sum(std::size_t consensus) const;
  [[nodiscard]] std::uint64_t col_sum(std::size_t predicted) const;
};

/// Predictions matched to consensus by image id; every prediction must have a
/// consensus record and vice versa.
[[nodiscard]] ConfusionMatrix confusion(const std::vector<Prediction>& preds, const std::vector<HsmRecord>& consensus);

struct Rate {
  double value = 0.0;
  bool defined = true;  // false for 0/0, reported as 0.0
};

struct PrecisionRecall {
  std::array<Rate, kNumClasses> precision{};
  std::array<Rate, kNumClasses> recall{};
  double accuracy = 0.0;
  /// Support-weighted means over classes present in the consensus.
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
};

/// Throws DataError for a matrix with no counts.
[[nodiscard]] PrecisionRecall precision_recall(const ConfusionMatrix& cm);

struct AgreementTable {
  std::uint64_t both_correct = 0;
  std::uint64_t a_correct_b_incorrect = 0;
  std::uint64_t a_incorrect_b_correct = 0;
  std::uint64_t both_incorrect = 0;

  [[nodiscard]] std::uint64_t total() const {
    return both_correct + a_correct_b_incorrect + a_incorrect_b_correct + both_incorrect;
  }
};

[[nodiscard]] AgreementTable agreement(const std::vector<Prediction>& preds_a, const std::vector<Prediction>& preds_b,
                                       const std::vector<HsmRecord>& consensus);

struct AccuracyPair {
  double a = 0.0;
  double b = 0.0;
};

/// Throws DataError when the table is empty.
[[nodiscard]] AccuracyPair accuracy_from_agreement(const AgreementTable& t);

/// Four labeled integers, one per line.
[[nodiscard]] std::string agreement_text(const AgreementTable& t, std::string_view name_a, std::string_view name_b);

struct ModelConfusion {
  std::string model_tag;
  ConfusionMatrix matrix;
};

struct CharacterRow {
  std::string character;  // class name or "total"
  std::uint64_t samples = 0;
  std::vector<Rate> precision;  // one per model
  std::vector<Rate> recall;
};

/// One row per character plus a trailing "total" row (support-weighted).
[[nodiscard]] std::vector<CharacterRow> per_character_table(const std::vector<ModelConfusion>& models);

/// Header `character,samples,<tag>_pre,<tag>_rec,...`
[[nodiscard]] std::string per_character_csv(const std::vector<CharacterRow>& rows,
                                            const std::vector<ModelConfusion>& models);

[[nodiscard]] std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace hsmstack
