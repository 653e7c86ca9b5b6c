#include "hsmstack/triage.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "hsmstack/entropy.hpp"

namespace hsmstack {

namespace {

using PredIndex = std::unordered_map<std::string_view, const Prediction*>;

PredIndex index_predictions(const std::vector<Prediction>& preds, const std::vector<HsmRecord>& hsm,
                            std::string_view what) {
  if (preds.size() != hsm.size()) {
    throw DataError("flag_items: " + std::string(what) + " has " + std::to_string(preds.size()) +
                    " predictions for " + std::to_string(hsm.size()) + " images");
  }
  PredIndex idx;
  idx.reserve(preds.size());
  for (const auto& p : preds) idx.emplace(p.image_id, &p);
  return idx;
}

ModelView view_of(const PredIndex& idx, const std::string& id, std::string_view what) {
  const auto it = idx.find(id);
  if (it == idx.end()) throw DataError("flag_items: no " + std::string(what) + " prediction for " + id);
  return {argmax_class(it->second->probs), shannon_entropy(it->second->probs), it->second->probs};
}

}  // namespace

std::vector<FlaggedItem> flag_items(const std::vector<HsmRecord>& hsm, const std::vector<Prediction>& cxe,
                                    const std::vector<Prediction>& kld, const std::vector<Prediction>& knn,
                                    const TriageThresholds& thresholds) {
  const auto cxe_idx = index_predictions(cxe, hsm, "CXE");
  const auto kld_idx = index_predictions(kld, hsm, "KLD");
  const auto knn_idx = index_predictions(knn, hsm, "KNN");
  std::vector<FlaggedItem> out;
  for (const auto& r : hsm) {
    FlaggedItem item;
    item.image_id = r.image_id;
    item.hsm_entropy = shannon_entropy(r.hsm);
    item.n_annotations = r.n_annotations;
    item.consensus = r.consensus;
    item.cxe = view_of(cxe_idx, r.image_id, "CXE");
    item.kld = view_of(kld_idx, r.image_id, "KLD");
    item.knn = view_of(knn_idx, r.image_id, "KNN");
    item.high_entropy = item.hsm_entropy >= thresholds.min_entropy && r.n_annotations >= thresholds.min_annotations;
    item.model_disagreement = item.knn.prediction != r.consensus && item.knn.entropy <= thresholds.model_confidence;
    if (item.high_entropy || item.model_disagreement) out.push_back(std::move(item));
  }
  std::stable_sort(out.begin(), out.end(), [](const FlaggedItem& a, const FlaggedItem& b) {
    if (a.hsm_entropy != b.hsm_entropy) return a.hsm_entropy > b.hsm_entropy;
    return a.image_id < b.image_id;
  });
  return out;
}

std::string_view action_name(Action a) {
  switch (a) {
    case Action::kKeep:
      return "keep";
    case Action::kRelabel:
      return "relabel";
    case Action::kRemove:
      return "remove";
  }
  return "keep";
}

Action action_from_name(std::string_view name) {
  if (name == "keep") return Action::kKeep;
  if (name == "relabel") return Action::kRelabel;
  if (name == "remove") return Action::kRemove;
  throw DecisionError(DecisionError::Kind::kInvalid, "unknown action '" + std::string(name) + "'");
}

void validate(const DecisionRecord& d) {
  if (d.image_id.empty()) throw DecisionError(DecisionError::Kind::kInvalid, "decision without image_id");
  if (d.action == Action::kRelabel && !d.new_label) {
    throw DecisionError(DecisionError::Kind::kInvalid, "relabel of " + d.image_id + " needs new_label");
  }
  if (d.action != Action::kRelabel && d.new_label) {
    throw DecisionError(DecisionError::Kind::kInvalid,
                        std::string(action_name(d.action)) + " of " + d.image_id + " must not carry new_label");
  }
}

std::string decision_to_json_line(const DecisionRecord& d) {
  nlohmann::ordered_json j;
  j["image_id"] = d.image_id;
  j["action"] = action_name(d.action);
  j["new_label"] = d.new_label ? nlohmann::ordered_json(class_name(*d.new_label)) : nlohmann::ordered_json(nullptr);
  j["reviewer"] = d.reviewer;
  j["timestamp"] = d.timestamp;
  return j.dump() + '\n';
}

DecisionRecord decision_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DecisionError(DecisionError::Kind::kInvalid, std::string("malformed decision: ") + e.what());
  }
  if (!j.is_object()) throw DecisionError(DecisionError::Kind::kInvalid, "decision must be a JSON object");
  auto text_field = [&](const char* key, bool required) -> std::string {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
      if (required) throw DecisionError(DecisionError::Kind::kInvalid, std::string("missing field ") + key);
      return {};
    }
    if (!it->is_string()) throw DecisionError(DecisionError::Kind::kInvalid, std::string(key) + " must be a string");
    return it->get<std::string>();
  };
  DecisionRecord d;
  d.image_id = text_field("image_id", true);
  d.action = action_from_name(text_field("action", true));
  const std::string label = text_field("new_label", false);
  if (!label.empty()) {
    try {
      d.new_label = class_from_name(label);
    } catch (const DataError& e) {
      throw DecisionError(DecisionError::Kind::kInvalid, e.what());
    }
  }
  d.reviewer = text_field("reviewer", false);
  d.timestamp = text_field("timestamp", false);
  validate(d);
  return d;
}

DecisionStore::DecisionStore(std::set<std::string> allowed_ids, std::optional<std::filesystem::path> log_path)
    : allowed_(std::move(allowed_ids)), path_(std::move(log_path)) {
  if (path_ && std::filesystem::exists(*path_)) {
    history_ = read_log(*path_);
    current_ = replay(history_);
  }
}

DecisionAck DecisionStore::record(const DecisionRecord& d) {
  validate(d);
  if (!allowed_.contains(d.image_id)) {
    throw DecisionError(DecisionError::Kind::kUnknownImage, "image " + d.image_id + " is not in the flag set");
  }
  const auto it = current_.find(d.image_id);
  if (it != current_.end() && it->second.action == d.action && it->second.new_label == d.new_label &&
      it->second.reviewer == d.reviewer) {
    return {false, history_.size()};
  }
  if (path_) {
    if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
    std::ofstream out(*path_, std::ios::app | std::ios::binary);
    if (!out) throw DataError("cannot append to decision log " + path_->string());
    out << decision_to_json_line(d);
    out.flush();
    if (!out) throw DataError("write failed on decision log " + path_->string());
  }
  history_.push_back(d);
  current_[d.image_id] = d;
  return {true, history_.size()};
}

std::map<std::string, DecisionRecord> DecisionStore::replay(const std::vector<DecisionRecord>& log) {
  std::map<std::string, DecisionRecord> state;
  for (const auto& d : log) state[d.image_id] = d;
  return state;
}

std::vector<DecisionRecord> DecisionStore::read_log(const std::filesystem::path& path) {
  std::vector<DecisionRecord> out;
  std::size_t line_no = 0;
  const std::string text = read_text_file(path);
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(decision_from_json(line));
    } catch (const DecisionError& e) {
      throw DataError("decision log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string export_clean(const std::vector<HsmRecord>& hsm, const std::map<std::string, DecisionRecord>& decisions) {
  std::string out = "image_id,label_name,source\n";
  for (const auto& r : hsm) {
    const auto it = decisions.find(r.image_id);
    if (it == decisions.end() || it->second.action == Action::kKeep) {
      out += r.image_id + ',' + class_name(r.consensus) + ",consensus\n";
    } else if (it->second.action == Action::kRelabel) {
      out += r.image_id + ',' + class_name(*it->second.new_label) + ",human-triage\n";
    }
  }
  return out;
}

}  // namespace hsmstack
