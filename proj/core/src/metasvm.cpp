#include "hsmstack/metasvm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hsmstack/rng.hpp"

namespace hsmstack {

namespace {

ClassStat ratio(std::size_t num, std::size_t den) {
  if (den == 0) return {0.0, false};
  return {static_cast<double>(num) / static_cast<double>(den), true};
}

std::string stat_csv(const ClassStat& s) { return format_prob(s.value); }

}  // namespace

double SvmModel::decision(double entropy) const { return weight * ((entropy - mean) / scale) + bias; }

bool SvmModel::predict(double entropy) const { return decision(entropy) >= 0.0; }

std::optional<double> SvmModel::threshold() const {
  if (weight == 0.0) return std::nullopt;
  return mean - bias * scale / weight;
}

double SvmEvaluation::accuracy() const {
  const std::size_t total = true_pos + false_pos + true_neg + false_neg;
  return total == 0 ? 0.0 : static_cast<double>(true_pos + true_neg) / static_cast<double>(total);
}

std::vector<EntropySample> balance_samples(std::span<const EntropySample> samples, std::uint64_t seed) {
  std::vector<std::size_t> good;
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].correct ? good : bad).push_back(i);
  if (good.empty() || bad.empty()) throw DataError("balance_samples: both classes must be present");
  auto& majority = good.size() >= bad.size() ? good : bad;
  const std::size_t keep = std::min(good.size(), bad.size());
  std::mt19937_64 rng(seed);
  std::shuffle(majority.begin(), majority.end(), rng);
  majority.resize(keep);
  std::vector<char> selected(samples.size(), 0);
  for (auto i : good) selected[i] = 1;
  for (auto i : bad) selected[i] = 1;
  std::vector<EntropySample> out;
  out.reserve(2 * keep);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (selected[i]) out.push_back(samples[i]);
  }
  return out;
}

std::pair<std::vector<EntropySample>, std::vector<EntropySample>> split_train_test(
    std::span<const EntropySample> samples, double ratio_train, std::uint64_t seed) {
  if (samples.size() < 5) throw DataError("split_train_test: need at least 5 samples");
  if (!(ratio_train > 0.0 && ratio_train < 1.0)) throw DataError("split_train_test: ratio must be in (0, 1)");
  const auto n = samples.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratio_train * static_cast<double>(n)));

  std::array<std::vector<std::size_t>, 2> groups;
  for (std::size_t i = 0; i < n; ++i) groups[samples[i].correct ? 1 : 0].push_back(i);

  // Largest-remainder allocation of the training quota across the two classes.
  std::array<std::size_t, 2> quota{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (int g = 0; g < 2; ++g) {
    const double ideal = ratio_train * static_cast<double>(groups[g].size());
    quota[g] = static_cast<std::size_t>(std::floor(ideal));
    remainder[g] = ideal - static_cast<double>(quota[g]);
    assigned += quota[g];
  }
  while (assigned < n_train) {
    const int g = remainder[1] > remainder[0] ? 1 : 0;
    if (quota[g] < groups[g].size()) {
      ++quota[g];
      remainder[g] = -1.0;
    } else {
      ++quota[1 - g];
      remainder[1 - g] = -1.0;
    }
    ++assigned;
  }

  std::mt19937_64 rng(seed);
  std::vector<char> in_train(n, 0);
  for (int g = 0; g < 2; ++g) {
    auto idx = groups[g];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < quota[g]; ++j) in_train[idx[j]] = 1;
  }
  std::pair<std::vector<EntropySample>, std::vector<EntropySample>> out;
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? out.first : out.second).push_back(samples[i]);
  return out;
}

SvmModel svm_train(std::span<const EntropySample> train, double lambda, std::size_t epochs, std::uint64_t seed) {
  if (train.empty()) throw DataError("svm_train: empty training set");
  if (!(lambda > 0.0)) throw DataError("svm_train: lambda must be > 0");
  SvmModel model;
  double sum = 0.0;
  for (const auto& s : train) sum += s.entropy;
  model.mean = sum / static_cast<double>(train.size());
  double sq = 0.0;
  for (const auto& s : train) sq += (s.entropy - model.mean) * (s.entropy - model.mean);
  const double sd = std::sqrt(sq / static_cast<double>(train.size()));
  if (!(sd > 0.0)) {
    model.scale = 1.0;
    model.degenerate = true;
    return model;
  }
  model.scale = sd;

  // Pegasos on the augmented vector (w, b); the constant feature is
  // regularized along with w, which keeps the step schedule well-posed.
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  const double radius = 1.0 / std::sqrt(lambda);
  const std::size_t total_steps = epochs * train.size();
  const std::size_t average_from = total_steps / 2;
  double w = 0.0;
  double b = 0.0;
  double w_avg = 0.0;
  double b_avg = 0.0;
  std::size_t n_avg = 0;
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const double z = (train[i].entropy - model.mean) / model.scale;
      const double y = train[i].correct ? 1.0 : -1.0;
      const bool violated = y * (w * z + b) < 1.0;
      w *= 1.0 - eta * lambda;
      b *= 1.0 - eta * lambda;
      if (violated) {
        w += eta * y * z;
        b += eta * y;
      }
      const double norm = std::sqrt(w * w + b * b);
      if (norm > radius) {
        w *= radius / norm;
        b *= radius / norm;
      }
      if (t > average_from) {
        w_avg += w;
        b_avg += b;
        ++n_avg;
      }
    }
  }
  model.weight = n_avg > 0 ? w_avg / static_cast<double>(n_avg) : w;
  model.bias = n_avg > 0 ? b_avg / static_cast<double>(n_avg) : b;
  return model;
}

SvmEvaluation svm_evaluate(const SvmModel& model, std::span<const EntropySample> test) {
  if (test.empty()) throw DataError("svm_evaluate: empty test set");
  SvmEvaluation e;
  for (const auto& s : test) {
    const bool predicted = model.predict(s.entropy);
    if (predicted && s.correct) ++e.true_pos;
    if (predicted && !s.correct) ++e.false_pos;
    if (!predicted && !s.correct) ++e.true_neg;
    if (!predicted && s.correct) ++e.false_neg;
  }
  e.precision_correct = ratio(e.true_pos, e.true_pos + e.false_pos);
  e.recall_correct = ratio(e.true_pos, e.true_pos + e.false_neg);
  e.precision_incorrect = ratio(e.true_neg, e.true_neg + e.false_neg);
  e.recall_incorrect = ratio(e.true_neg, e.true_neg + e.false_pos);
  return e;
}

SvmTable run_per_character(std::span<const EntropyProfile> profiles, std::string_view model_tag,
                           const SvmConfig& config, std::uint64_t seed) {
  std::array<std::vector<EntropySample>, kNumClasses> by_class;
  for (const auto& p : profiles) by_class[p.consensus.index()].push_back({p.entropy, p.correct});
  SvmTable table;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& samples = by_class[c];
    if (samples.empty()) continue;
    const std::string& name = class_name(c);
    const auto n_good = static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const EntropySample& s) { return s.correct; }));
    if (n_good == samples.size()) {
      table.skipped.push_back({name, "no negative class"});
      continue;
    }
    if (n_good == 0) {
      table.skipped.push_back({name, "no positive class"});
      continue;
    }
    const std::uint64_t char_seed = derive_seed(seed, std::string(model_tag) + "." + name);
    const auto balanced = balance_samples(samples, derive_seed(char_seed, "balance"));
    if (balanced.size() < 5) {
      table.skipped.push_back({name, "too few samples"});
      continue;
    }
    const auto [train, test] = split_train_test(balanced, config.train_ratio, derive_seed(char_seed, "split"));
    const SvmModel model = svm_train(train, config.lambda, config.epochs, derive_seed(char_seed, "train"));
    table.rows.push_back({name, std::string(model_tag), train.size(), test.size(), svm_evaluate(model, test)});
  }
  return table;
}

std::string svm_table_csv(const SvmTable& table, bool with_header) {
  std::string out;
  if (with_header) out = "character,model_tag,n_train,n_test,prec_cor,rec_cor,prec_inc,rec_inc,fp,fn\n";
  for (const auto& r : table.rows) {
    out += r.character + ',' + r.model_tag + ',' + std::to_string(r.n_train) + ',' + std::to_string(r.n_test) + ',' +
           stat_csv(r.eval.precision_correct) + ',' + stat_csv(r.eval.recall_correct) + ',' +
           stat_csv(r.eval.precision_incorrect) + ',' + stat_csv(r.eval.recall_incorrect) + ',' +
           std::to_string(r.eval.false_pos) + ',' + std::to_string(r.eval.false_neg) + '\n';
  }
  return out;
}

}  // namespace hsmstack
