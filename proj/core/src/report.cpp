#include "hsmstack/report.hpp"

#include <unordered_map>

namespace hsmstack {

namespace {

std::unordered_map<std::string_view, const HsmRecord*> index_by_id(const std::vector<HsmRecord>& records) {
  std::unordered_map<std::string_view, const HsmRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.emplace(r.image_id, &r);
  return out;
}

Rate make_rate(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {0.0, false};
  return {static_cast<double>(num) / static_cast<double>(den), true};
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto v : row) t += v;
  }
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) t += counts[i][i];
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t consensus) const {
  std::uint64_t t = 0;
  for (auto v : counts[consensus]) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t += row[predicted];
  return t;
}

ConfusionMatrix confusion(const std::vector<Prediction>& preds, const std::vector<HsmRecord>& consensus) {
  if (preds.size() != consensus.size()) {
    throw DataError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                    std::to_string(consensus.size()) + " consensus records");
  }
  const auto by_id = index_by_id(consensus);
  ConfusionMatrix cm;
  for (const auto& p : preds) {
    const auto it = by_id.find(p.image_id);
    if (it == by_id.end()) throw DataError("confusion: no consensus for " + p.image_id);
    ++cm.counts[it->second->consensus.index()][argmax_class(p.probs).index()];
  }
  return cm;
}

PrecisionRecall precision_recall(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw DataError("precision_recall: empty confusion matrix");
  PrecisionRecall pr;
  double wp = 0.0;
  double wr = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto tp = cm.counts[c][c];
    const auto support = cm.row_sum(c);
    pr.precision[c] = make_rate(tp, cm.col_sum(c));
    pr.recall[c] = make_rate(tp, support);
    wp += pr.precision[c].value * static_cast<double>(support);
    wr += pr.recall[c].value * static_cast<double>(support);
  }
  pr.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  pr.weighted_precision = wp / static_cast<double>(total);
  pr.weighted_recall = wr / static_cast<double>(total);
  return pr;
}

AgreementTable agreement(const std::vector<Prediction>& preds_a, const std::vector<Prediction>& preds_b,
                         const std::vector<HsmRecord>& consensus) {
  if (preds_a.size() != consensus.size() || preds_b.size() != consensus.size()) {
    throw DataError("agreement: prediction sets and consensus differ in size");
  }
  const auto by_id = index_by_id(consensus);
  std::unordered_map<std::string_view, const Prediction*> b_by_id;
  for (const auto& p : preds_b) b_by_id.emplace(p.image_id, &p);
  AgreementTable t;
  for (const auto& pa : preds_a) {
    const auto c = by_id.find(pa.image_id);
    const auto pb = b_by_id.find(pa.image_id);
    if (c == by_id.end() || pb == b_by_id.end()) throw DataError("agreement: id mismatch at " + pa.image_id);
    const bool a_ok = argmax_class(pa.probs) == c->second->consensus;
    const bool b_ok = argmax_class(pb->second->probs) == c->second->consensus;
    if (a_ok && b_ok) ++t.both_correct;
    if (a_ok && !b_ok) ++t.a_correct_b_incorrect;
    if (!a_ok && b_ok) ++t.a_incorrect_b_correct;
    if (!a_ok && !b_ok) ++t.both_incorrect;
  }
  return t;
}

AccuracyPair accuracy_from_agreement(const AgreementTable& t) {
  const auto n = t.total();
  if (n == 0) throw DataError("accuracy_from_agreement: empty table");
  const double dn = static_cast<double>(n);
  return {static_cast<double>(t.both_correct + t.a_correct_b_incorrect) / dn,
          static_cast<double>(t.both_correct + t.a_incorrect_b_correct) / dn};
}

std::string agreement_text(const AgreementTable& t, std::string_view name_a, std::string_view name_b) {
  const std::string a(name_a);
  const std::string b(name_b);
  return a + "_cor_" + b + "_cor " + std::to_string(t.both_correct) + '\n' + a + "_cor_" + b + "_inc " +
         std::to_string(t.a_correct_b_incorrect) + '\n' + a + "_inc_" + b + "_cor " +
         std::to_string(t.a_incorrect_b_correct) + '\n' + a + "_inc_" + b + "_inc " +
         std::to_string(t.both_incorrect) + '\n';
}

std::vector<CharacterRow> per_character_table(const std::vector<ModelConfusion>& models) {
  std::vector<PrecisionRecall> stats;
  for (const auto& m : models) stats.push_back(precision_recall(m.matrix));
  std::vector<CharacterRow> rows;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    CharacterRow row;
    row.character = class_name(c);
    row.samples = models.empty() ? 0 : models.front().matrix.row_sum(c);
    for (const auto& s : stats) {
      row.precision.push_back(s.precision[c]);
      row.recall.push_back(s.recall[c]);
    }
    rows.push_back(std::move(row));
  }
  CharacterRow total;
  total.character = "total";
  total.samples = models.empty() ? 0 : models.front().matrix.total();
  for (const auto& s : stats) {
    total.precision.push_back({s.weighted_precision, true});
    total.recall.push_back({s.weighted_recall, true});
  }
  rows.push_back(std::move(total));
  return rows;
}

std::string per_character_csv(const std::vector<CharacterRow>& rows, const std::vector<ModelConfusion>& models) {
  std::string out = "character,samples";
  for (const auto& m : models) out += ',' + m.model_tag + "_pre," + m.model_tag + "_rec";
  out += '\n';
  for (const auto& r : rows) {
    out += r.character + ',' + std::to_string(r.samples);
    for (std::size_t i = 0; i < r.precision.size(); ++i) {
      out += ',' + format_prob(r.precision[i].value) + ',' + format_prob(r.recall[i].value);
    }
    out += '\n';
  }
  return out;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "consensus";
  for (const auto& name : class_names()) out += ',' + name;
  out += '\n';
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    out += class_name(i);
    for (auto v : cm.counts[i]) out += ',' + std::to_string(v);
    out += '\n';
  }
  return out;
}

}  // namespace hsmstack
