#include "hsmstack/stacking.hpp"

#include <algorithm>
#include <unordered_map>

namespace hsmstack {

std::vector<StackedFeature> concat_features(const std::vector<Prediction>& cxe, const std::vector<Prediction>& kld) {
  std::unordered_map<std::string_view, const Prediction*> kld_by_id;
  kld_by_id.reserve(kld.size());
  for (const auto& p : kld) kld_by_id.emplace(p.image_id, &p);
  std::vector<StackedFeature> out;
  out.reserve(cxe.size());
  for (const auto& c : cxe) {
    const auto it = kld_by_id.find(c.image_id);
    if (it == kld_by_id.end()) throw DataError("concat_features: no KLD prediction for " + c.image_id);
    StackedFeature f;
    f.image_id = c.image_id;
    std::copy(c.probs.begin(), c.probs.end(), f.x.begin());
    std::copy(it->second->probs.begin(), it->second->probs.end(), f.x.begin() + kNumClasses);
    out.push_back(std::move(f));
  }
  if (kld.size() != cxe.size()) {
    std::unordered_map<std::string_view, bool> cxe_ids;
    for (const auto& c : cxe) cxe_ids.emplace(c.image_id, true);
    for (const auto& k : kld) {
      if (!cxe_ids.contains(k.image_id)) throw DataError("concat_features: no CXE prediction for " + k.image_id);
    }
    throw DataError("concat_features: duplicate image ids");
  }
  return out;
}

KnnModel::KnnModel(std::vector<StackedFeature> references, std::vector<ClassId> labels, std::size_t k)
    : refs_(std::move(references)), labels_(std::move(labels)), k_(k) {
  if (refs_.size() != labels_.size()) throw DataError("knn: features and labels are not aligned");
  if (refs_.empty()) throw DataError("knn: empty reference set");
  if (k_ == 0) throw DataError("knn: k must be >= 1");
  if (k_ > refs_.size()) {
    throw DataError("knn: k = " + std::to_string(k_) + " exceeds the " + std::to_string(refs_.size()) +
                    " reference samples");
  }
}

std::optional<std::size_t> KnnModel::find(std::string_view image_id) const {
  for (std::size_t i = 0; i < refs_.size(); ++i) {
    if (refs_[i].image_id == image_id) return i;
  }
  return std::nullopt;
}

KnnModel knn_fit(std::vector<StackedFeature> features, std::vector<ClassId> labels, std::size_t k) {
  return KnnModel(std::move(features), std::move(labels), k);
}

namespace {

struct Candidate {
  double dist2;
  std::size_t index;
  friend bool operator<(const Candidate& a, const Candidate& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

ProbVector vote(const KnnModel& model, const StackedFeature& query, std::string_view exclude_id, bool exclude,
                std::vector<Candidate>& scratch) {
  const auto& refs = model.references();
  scratch.clear();
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (exclude && refs[r].image_id == exclude_id) continue;
    double d2 = 0.0;
    for (std::size_t i = 0; i < kStackedDim; ++i) {
      const double diff = refs[r].x[i] - query.x[i];
      d2 += diff * diff;
    }
    scratch.push_back({d2, r});
  }
  const std::size_t k = model.k();
  if (scratch.size() < k) {
    throw DataError("knn: only " + std::to_string(scratch.size()) + " eligible references for k = " +
                    std::to_string(k));
  }
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1), scratch.end());
  std::array<std::size_t, kNumClasses> votes{};
  for (std::size_t j = 0; j < k; ++j) ++votes[model.labels()[scratch[j].index].index()];
  ProbVector out{};
  for (std::size_t c = 0; c < kNumClasses; ++c) out[c] = static_cast<double>(votes[c]) / static_cast<double>(k);
  return out;
}

}  // namespace

ProbVector knn_predict_dist(const KnnModel& model, const StackedFeature& x, std::optional<std::string_view> exclude_id) {
  std::vector<Candidate> scratch;
  scratch.reserve(model.size());
  return vote(model, x, exclude_id.value_or(std::string_view{}), exclude_id.has_value(), scratch);
}

std::vector<Prediction> knn_predict_all(const KnnModel& model, const std::vector<StackedFeature>& features,
                                        bool exclude_self) {
  std::vector<Candidate> scratch;
  scratch.reserve(model.size());
  std::vector<Prediction> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    out.push_back({f.image_id, ModelTag::kKnn, vote(model, f, f.image_id, exclude_self, scratch)});
  }
  return out;
}

void store_features(const std::filesystem::path& path, const std::vector<StackedFeature>& features,
                    std::string_view header_comment) {
  std::string text = comment_block(header_comment);
  for (const auto& f : features) {
    text += f.image_id;
    for (double v : f.x) {
      text += ',';
      text += format_prob(v);
    }
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<StackedFeature> load_features(const std::filesystem::path& path) {
  std::vector<StackedFeature> out;
  std::size_t line_no = 0;
  const std::string text = read_text_file(path);
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line, ',');
    const std::string where = "features line " + std::to_string(line_no);
    if (fields.size() != 1 + kStackedDim) throw DataError(where + ": expected 49 fields");
    StackedFeature f;
    f.image_id = std::string(fields[0]);
    for (std::size_t i = 0; i < kStackedDim; ++i) f.x[i] = parse_double(fields[1 + i], where);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace hsmstack
