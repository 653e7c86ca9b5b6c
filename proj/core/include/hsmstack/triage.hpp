#pragma once

// Human review of suspicious labels: pick out images whose crowd labels look
// unreliable, keep an append-only log of reviewer decisions and export the
// cleaned label set.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hsmstack/hsm.hpp"

namespace hsmstack {

struct TriageThresholds {
  double min_entropy = 1.0;        // nats
  std::uint32_t min_annotations = 10;
  double model_confidence = 0.3;   // max KNN entropy for a disagreement flag
};

struct ModelView {
  ClassId prediction;
  double entropy = 0.0;
  ProbVector probs{};
};

struct FlaggedItem {
  std::string image_id;
  double hsm_entropy = 0.0;
  std::uint32_t n_annotations = 0;
  ClassId consensus;
  ModelView cxe;
  ModelView kld;
  ModelView knn;
  bool high_entropy = false;
  bool model_disagreement = false;
};

/// Items meeting either rule, by HSM entropy descending (ties by image id).
/// Every HSM record needs a prediction from all three models and vice versa.
[[nodiscard]] std::vector<FlaggedItem> flag_items(const std::vector<HsmRecord>& hsm,
                                                  const std::vector<Prediction>& cxe,
                                                  const std::vector<Prediction>& kld,
                                                  const std::vector<Prediction>& knn,
                                                  const TriageThresholds& thresholds);

enum class Action { kKeep, kRelabel, kRemove };
[[nodiscard]] std::string_view action_name(Action a);
/// Throws DecisionError for anything else.
[[nodiscard]] Action action_from_name(std::string_view name);

struct DecisionRecord {
  std::string image_id;
  Action action = Action::kKeep;
  std::optional<ClassId> new_label;
  std::string timestamp;
  std::string reviewer;

  friend bool operator==(const DecisionRecord&, const DecisionRecord&) = default;
};

class DecisionError : public std::runtime_error {
 public:
  enum class Kind { kInvalid, kUnknownImage };
  DecisionError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Throws DecisionError(kInvalid) for relabel without a label or a label on a
/// keep/remove decision.
void validate(const DecisionRecord& d);

/// One JSON object per line.
[[nodiscard]] std::string decision_to_json_line(const DecisionRecord& d);
[[nodiscard]] DecisionRecord decision_from_json(std::string_view text);

struct DecisionAck {
  bool appended = false;  // false when identical to the current decision
  std::size_t log_size = 0;
};

/// Append-only decision log; the latest entry per image is the live decision.
/// With a path, every accepted decision is appended to that file and
/// existing entries are replayed on construction.
class DecisionStore {
 public:
  DecisionStore(std::set<std::string> allowed_ids, std::optional<std::filesystem::path> log_path = std::nullopt);

  /// A record matching the live decision in action, label and reviewer is
  /// acknowledged without being appended again.
  DecisionAck record(const DecisionRecord& d);

  [[nodiscard]] const std::vector<DecisionRecord>& history() const { return history_; }
  [[nodiscard]] const std::map<std::string, DecisionRecord>& current() const { return current_; }
  [[nodiscard]] bool allows(const std::string& image_id) const { return allowed_.contains(image_id); }

  /// Live decisions obtained by applying `log` in order to an empty state.
  [[nodiscard]] static std::map<std::string, DecisionRecord> replay(const std::vector<DecisionRecord>& log);
  [[nodiscard]] static std::vector<DecisionRecord> read_log(const std::filesystem::path& path);

 private:
  std::set<std::string> allowed_;
  std::optional<std::filesystem::path> path_;
  std::vector<DecisionRecord> history_;
  std::map<std::string, DecisionRecord> current_;
};

/// `image_id,label_name,source` with source "consensus" or "human-triage";
/// removed images are omitted. Rows follow `hsm` order.
[[nodiscard]] std::string export_clean(const std::vector<HsmRecord>& hsm,
                                       const std::map<std::string, DecisionRecord>& decisions);

}  // namespace hsmstack
