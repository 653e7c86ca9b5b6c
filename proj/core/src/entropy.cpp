#include "hsmstack/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace hsmstack {

double max_entropy() { return std::log(static_cast<double>(kNumClasses)); }

double shannon_entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double cross_entropy(const ProbVector& q, const ProbVector& p) {
  double h = 0.0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (q[i] != 0.0) h -= q[i] * std::log(std::max(p[i], kLogClamp));
  }
  return h;
}

double kl_divergence(const ProbVector& q, const ProbVector& p) {
  double d = 0.0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (q[i] > 0.0) d += q[i] * (std::log(q[i]) - std::log(std::max(p[i], kLogClamp)));
  }
  return d;
}

double dataset_loss(std::span<const ProbVector> targets, std::span<const ProbVector> preds, LossKind kind) {
  if (targets.size() != preds.size()) {
    throw DataError("dataset_loss: " + std::to_string(targets.size()) + " targets vs " +
                    std::to_string(preds.size()) + " predictions");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    total += kind == LossKind::kCxe ? cross_entropy(targets[j], preds[j]) : kl_divergence(targets[j], preds[j]);
  }
  return total;
}

std::string_view population_name(Population p) {
  switch (p) {
    case Population::kCorrect: return "correct";
    case Population::kIncorrect: return "incorrect";
    case Population::kAll: return "all";
  }
  return "?";
}

std::size_t entropy_bin(double entropy, std::size_t bins) {
  if (bins == 0) throw DataError("histogram needs at least one bin");
  const double width = max_entropy() / static_cast<double>(bins);
  if (!(entropy > 0.0)) return 0;
  const auto idx = static_cast<std::size_t>(entropy / width);
  return std::min(idx, bins - 1);
}

namespace {

Histogram empty_histogram(std::size_t bins, Population pop) {
  Histogram h;
  h.population = pop;
  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges[i] = max_entropy() * static_cast<double>(i) / static_cast<double>(bins);
  }
  return h;
}

}  // namespace

std::vector<Histogram> entropy_histogram(std::span<const EntropyProfile> profiles, std::size_t bins,
                                         bool split_by_correct) {
  if (bins == 0) throw DataError("histogram needs at least one bin");
  if (!split_by_correct) {
    auto h = empty_histogram(bins, Population::kAll);
    for (const auto& p : profiles) ++h.counts[entropy_bin(p.entropy, bins)];
    return {h};
  }
  auto good = empty_histogram(bins, Population::kCorrect);
  auto bad = empty_histogram(bins, Population::kIncorrect);
  for (const auto& p : profiles) ++(p.correct ? good : bad).counts[entropy_bin(p.entropy, bins)];
  return {good, bad};
}

std::vector<FractionBin> fraction_correct_vs_entropy(std::span<const EntropyProfile> profiles, std::size_t bins) {
  if (bins == 0) throw DataError("histogram needs at least one bin");
  std::vector<FractionBin> out(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].lo = max_entropy() * static_cast<double>(i) / static_cast<double>(bins);
    out[i].hi = max_entropy() * static_cast<double>(i + 1) / static_cast<double>(bins);
  }
  for (const auto& p : profiles) {
    auto& b = out[entropy_bin(p.entropy, bins)];
    ++b.total;
    if (p.correct) ++b.correct;
  }
  for (auto& b : out) {
    if (b.total > 0) b.fraction = static_cast<double>(b.correct) / static_cast<double>(b.total);
  }
  return out;
}

std::vector<AnnotationEntropyPoint> entropy_vs_annotations(std::span<const EntropyProfile> profiles) {
  std::vector<AnnotationEntropyPoint> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) out.push_back({p.n_annotations, p.entropy, p.correct});
  return out;
}

std::vector<EntropyProfile> build_profiles(const std::vector<HsmRecord>& hsm, const std::vector<Prediction>& preds) {
  std::unordered_map<std::string_view, const HsmRecord*> by_id;
  by_id.reserve(hsm.size());
  for (const auto& r : hsm) by_id.emplace(r.image_id, &r);
  std::vector<EntropyProfile> out;
  out.reserve(preds.size());
  for (const auto& p : preds) {
    const auto it = by_id.find(p.image_id);
    if (it == by_id.end()) throw DataError("prediction for unknown image " + p.image_id);
    const HsmRecord& r = *it->second;
    EntropyProfile prof;
    prof.image_id = p.image_id;
    prof.model_tag = std::string(model_tag_name(p.model));
    prof.entropy = shannon_entropy(p.probs);
    prof.correct = argmax_class(p.probs) == r.consensus;
    prof.n_annotations = r.n_annotations;
    prof.consensus = r.consensus;
    out.push_back(std::move(prof));
  }
  return out;
}

std::vector<EntropyProfile> hsm_profiles(const std::vector<HsmRecord>& hsm) {
  std::vector<EntropyProfile> out;
  out.reserve(hsm.size());
  for (const auto& r : hsm) {
    out.push_back({r.image_id, "HSM", shannon_entropy(r.hsm), true, r.n_annotations, r.consensus});
  }
  return out;
}

EntropySeparation entropy_separation(std::span<const EntropyProfile> profiles) {
  EntropySeparation s;
  double sum_good = 0.0;
  double sum_bad = 0.0;
  for (const auto& p : profiles) {
    if (p.correct) {
      sum_good += p.entropy;
      ++s.n_correct;
    } else {
      sum_bad += p.entropy;
      ++s.n_incorrect;
    }
  }
  if (s.n_correct > 0) s.mean_correct = sum_good / static_cast<double>(s.n_correct);
  if (s.n_incorrect > 0) s.mean_incorrect = sum_bad / static_cast<double>(s.n_incorrect);
  return s;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out += format_prob(h.edges[i]) + ',' + format_prob(h.edges[i + 1]) + ',' + std::to_string(h.counts[i]) + '\n';
  }
  return out;
}

std::string fraction_csv(std::span<const FractionBin> bins) {
  std::string out = "bin_lo,bin_hi,total,correct,fraction,defined\n";
  for (const auto& b : bins) {
    out += format_prob(b.lo) + ',' + format_prob(b.hi) + ',' + std::to_string(b.total) + ',' +
           std::to_string(b.correct) + ',' + (b.fraction ? format_prob(*b.fraction) : std::string("0")) + ',' +
           (b.fraction ? "1" : "0") + '\n';
  }
  return out;
}

std::string annotation_scatter_csv(std::span<const AnnotationEntropyPoint> points) {
  std::string out = "n_annotations,entropy,correct\n";
  for (const auto& p : points) {
    out += std::to_string(p.n_annotations) + ',' + format_prob(p.entropy) + ',' + (p.correct ? "1" : "0") + '\n';
  }
  return out;
}

}  // namespace hsmstack
