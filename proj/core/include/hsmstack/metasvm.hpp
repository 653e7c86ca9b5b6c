#pragma once

// Per-character linear SVM that predicts, from the entropy of a model's
// output distribution alone, whether that model agrees with consensus.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsmstack/entropy.hpp"

namespace hsmstack {

struct EntropySample {
  double entropy = 0.0;
  bool correct = false;

  friend bool operator==(const EntropySample&, const EntropySample&) = default;
};

struct SvmConfig {
  double lambda = 1e-4;
  std::size_t epochs = 200;
  double train_ratio = 0.8;
};

struct SvmModel {
  double weight = 0.0;
  double bias = 0.0;
  double mean = 0.0;
  double scale = 1.0;
  bool degenerate = false;  // all training features identical

  /// True when the model predicts the base model is correct.
  [[nodiscard]] bool predict(double entropy) const;
  [[nodiscard]] double decision(double entropy) const;
  /// Entropy at which the decision flips (nullopt when weight == 0).
  [[nodiscard]] std::optional<double> threshold() const;
};

/// Keeps the minority class whole and draws the same number from the majority
/// without replacement. Throws DataError when a class is empty.
[[nodiscard]] std::vector<EntropySample> balance_samples(std::span<const EntropySample> samples, std::uint64_t seed);

/// Stratified split with |train| = round(ratio * N); requires N >= 5.
[[nodiscard]] std::pair<std::vector<EntropySample>, std::vector<EntropySample>> split_train_test(
    std::span<const EntropySample> samples, double ratio, std::uint64_t seed);

/// Hinge loss + lambda/2 |w|^2 by stochastic subgradient descent
/// (step 1/(lambda t)) on the standardized feature.
[[nodiscard]] SvmModel svm_train(std::span<const EntropySample> train, double lambda, std::size_t epochs,
                                 std::uint64_t seed);

struct ClassStat {
  double value = 0.0;
  bool defined = true;  // false for 0/0, reported as 0.0
};

struct SvmEvaluation {
  ClassStat precision_correct;
  ClassStat recall_correct;
  ClassStat precision_incorrect;
  ClassStat recall_incorrect;
  std::size_t true_pos = 0;   // predicted correct, was correct
  std::size_t false_pos = 0;  // predicted correct, was incorrect
  std::size_t true_neg = 0;
  std::size_t false_neg = 0;  // predicted incorrect, was correct
  [[nodiscard]] double accuracy() const;
};

[[nodiscard]] SvmEvaluation svm_evaluate(const SvmModel& model, std::span<const EntropySample> test);

struct SvmRow {
  std::string character;
  std::string model_tag;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  SvmEvaluation eval;
};

struct SvmSkip {
  std::string character;
  std::string reason;
};

struct SvmTable {
  std::vector<SvmRow> rows;
  std::vector<SvmSkip> skipped;
};

/// One SVM per consensus character present in `profiles`.
[[nodiscard]] SvmTable run_per_character(std::span<const EntropyProfile> profiles, std::string_view model_tag,
                                         const SvmConfig& config, std::uint64_t seed);

/// `character,model_tag,n_train,n_test,prec_cor,rec_cor,prec_inc,rec_inc,fp,fn`
[[nodiscard]] std::string svm_table_csv(const SvmTable& table, bool with_header = true);

}  // namespace hsmstack
