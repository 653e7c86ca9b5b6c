#include "hsmstack/hsm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hsmstack {

void check_prob_vector(const ProbVector& p, double tol) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("probability entry outside [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) throw DataError("probability vector does not sum to 1");
}

ProbVector normalize_counts(const CountVector& counts) {
  const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (total == 0) throw DataError("no annotations");
  ProbVector out{};
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    out[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return out;
}

Consensus consensus_label(const CountVector& counts) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumClasses; ++i) {
    if (counts[i] > counts[best]) best = i;
  }
  if (counts[best] == 0) throw DataError("no annotations");
  const auto n_max = std::count(counts.begin(), counts.end(), counts[best]);
  return {ClassId(best), n_max > 1};
}

std::vector<HsmRecord> build_hsm_dataset(const std::vector<AnnotationRecord>& records) {
  std::vector<HsmRecord> out;
  for (const auto& [id, counts] : count_annotations(records)) {
    HsmRecord rec;
    rec.image_id = id;
    rec.counts = counts;
    rec.hsm = normalize_counts(counts);
    rec.n_annotations = std::accumulate(counts.begin(), counts.end(), std::uint32_t{0});
    const auto c = consensus_label(counts);
    rec.consensus = c.label;
    rec.tie = c.tie;
    out.push_back(std::move(rec));
  }
  return out;
}

ProbVector delta_distribution(ClassId c) {
  ProbVector p{};
  p[c.index()] = 1.0;
  return p;
}

void store_hsm(const std::filesystem::path& path, const std::vector<HsmRecord>& records,
               std::string_view header_comment) {
  std::string text = comment_block(header_comment);
  for (const auto& r : records) {
    text += r.image_id;
    text += ',';
    text += std::to_string(r.n_annotations);
    text += ',';
    text += class_name(r.consensus);
    text += r.tie ? ",1" : ",0";
    for (double v : r.hsm) {
      text += ',';
      text += format_prob(v);
    }
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<HsmRecord> load_hsm(const std::filesystem::path& path) {
  std::vector<HsmRecord> out;
  const std::string text = read_text_file(path);
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line, ',');
    const std::string where = "hsm line " + std::to_string(line_no);
    if (fields.size() != 4 + kNumClasses) throw DataError(where + ": expected 28 fields");
    HsmRecord rec;
    rec.image_id = std::string(fields[0]);
    const auto n = parse_int(fields[1], where);
    if (n < 1) throw DataError(where + ": n_annotations must be >= 1");
    rec.n_annotations = static_cast<std::uint32_t>(n);
    rec.consensus = class_from_name(fields[2]);
    rec.tie = parse_int(fields[3], where) != 0;
    std::uint32_t total = 0;
    for (std::size_t i = 0; i < kNumClasses; ++i) {
      rec.hsm[i] = parse_double(fields[4 + i], where);
      rec.counts[i] = static_cast<std::uint32_t>(std::lround(rec.hsm[i] * static_cast<double>(n)));
      total += rec.counts[i];
    }
    check_prob_vector(rec.hsm, 1e-6);
    if (total != rec.n_annotations) throw DataError(where + ": distribution inconsistent with n_annotations");
    // Recompute from the integer counts so the in-memory vector is exact.
    rec.hsm = normalize_counts(rec.counts);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace hsmstack
