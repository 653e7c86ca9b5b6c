#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hsmstack/entropy.hpp"
#include "hsmstack/synth.hpp"

using namespace hsmstack;

namespace {

std::vector<AnnotatorProfile> pool_with(double error, KernelKind kernel, std::size_t n = 5) {
  std::vector<AnnotatorProfile> out;
  for (std::size_t a = 0; a < n; ++a) {
    AnnotatorProfile p;
    p.annotator_id = "a" + std::to_string(a);
    p.error_rate = error;
    p.kernel = make_kernel(kernel);
    p.chasing.fill(1.0);
    out.push_back(p);
  }
  return out;
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("im" + std::to_string(1000 + i));
  return out;
}

std::vector<ClassId> random_truths(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ClassId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ClassId(rng() % kNumClasses));
  return out;
}

std::map<std::string, ClassId> truth_map(const std::vector<std::string>& id, const std::vector<ClassId>& t) {
  std::map<std::string, ClassId> m;
  for (std::size_t i = 0; i < id.size(); ++i) m[id[i]] = t[i];
  return m;
}

}  // namespace

TEST(CorpusCounts, TotalAndProportions) {
  const auto& c = corpus_letter_counts();
  EXPECT_EQ(std::accumulate(c.begin(), c.end(), 0u), 399421u);
  EXPECT_EQ(c[0], 42546u);
  EXPECT_EQ(c[17], 62u);
  const auto p = default_class_proportions();
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(p[0], 42546.0 / 399421.0, 1e-15);
}

TEST(Kernel, RowsStochastic) {
  for (auto kind : {KernelKind::kConfusable, KernelKind::kUniform}) {
    const auto k = make_kernel(kind);
    for (std::size_t i = 0; i < kNumClasses; ++i) {
      EXPECT_NEAR(std::accumulate(k[i].begin(), k[i].end(), 0.0), 1.0, 1e-12);
      for (double v : k[i]) EXPECT_GE(v, 0.0);
    }
  }
  const auto k = make_kernel(KernelKind::kConfusable);
  EXPECT_EQ(k[2][2], 0.0);
  // Gamma's heaviest confusion is a designated look-alike
  const auto gamma = k[class_from_name("Gamma").index()];
  EXPECT_GT(gamma[class_from_name("Psi").index()], gamma[class_from_name("Beta").index()]);
}

TEST(AnnotatorPool, RangesAndDeterminism) {
  AnnotatorPoolConfig cfg;
  const auto a = make_annotator_pool(cfg, 3);
  const auto b = make_annotator_pool(cfg, 3);
  ASSERT_EQ(a.size(), 50u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_GE(a[i].error_rate, 0.05);
    EXPECT_LE(a[i].error_rate, 0.4);
    EXPECT_EQ(a[i].error_rate, b[i].error_rate);
    EXPECT_EQ(a[i].chasing, b[i].chasing);
    for (double w : a[i].chasing) EXPECT_GT(w, 0.0);
  }
  EXPECT_EQ(a[7].annotator_id, "ann07");
}

TEST(GenerateImages, DeterministicAndPrefixStable) {
  SynthConfig cfg;
  cfg.n_images = 60;
  cfg.degradation = 0.0;
  const auto a = generate_images(cfg);
  const auto b = generate_images(cfg);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.truths, b.truths);
  for (double d : a.damage) EXPECT_EQ(d, 0.0);
  cfg.n_images = 90;
  cfg.degradation = 0.6;
  const auto c = generate_images(cfg);
  cfg.n_images = 30;
  const auto d = generate_images(cfg);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(c.images[i], d.images[i]);
    EXPECT_GE(c.damage[i], 0.0);
    EXPECT_LE(c.damage[i], 1.0);
  }
  EXPECT_EQ(c.images[0].pixels.size(), 28u * 28u);
  EXPECT_EQ(c.images[0].image_id, "img000000");
}

TEST(GenerateImages, DeltaProportions) {
  SynthConfig cfg;
  cfg.n_images = 200;
  cfg.proportions = delta_distribution(ClassId(0));
  for (auto t : generate_images(cfg).truths) EXPECT_EQ(t, ClassId(0));
}

TEST(GenerateImages, CorpusProportionsWithinMultinomialBounds) {
  SynthConfig cfg;
  cfg.n_images = 5000;
  std::array<std::size_t, kNumClasses> counts{};
  for (auto t : generate_images(cfg).truths) ++counts[t.index()];
  const auto p = default_class_proportions();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double mean = 5000 * p[c];
    const double sd = std::sqrt(5000 * p[c] * (1 - p[c]));
    // 24 simultaneous checks: 4 sd keeps the familywise false-alarm rate near 1e-3
    EXPECT_LE(std::abs(static_cast<double>(counts[c]) - mean), std::max(4 * sd, 1.0)) << class_name(c);
  }
  EXPECT_NEAR(5000 * p[0], 532.6, 0.1);
}

TEST(GenerateImages, DamageGrowsWithDegradation) {
  double light = 0.0, heavy = 0.0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    light += render_glyph(ClassId(s % 24), 28, 28, 0.1, s).damage;
    heavy += render_glyph(ClassId(s % 24), 28, 28, 0.9, s).damage;
  }
  EXPECT_LT(light, heavy);
  for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_GE(glyph_stroke_count(ClassId(c)), 1u);
}

TEST(GenerateImages, ClassesRenderDifferently) {
  // clean renders of distinct classes never coincide
  std::vector<GlyphImage> clean;
  for (std::size_t c = 0; c < kNumClasses; ++c) clean.push_back(render_glyph(ClassId(c), 28, 28, 0.0, 1).image);
  for (std::size_t a = 0; a < kNumClasses; ++a) {
    for (std::size_t b = a + 1; b < kNumClasses; ++b) EXPECT_NE(clean[a].pixels, clean[b].pixels) << a << "," << b;
  }
}

TEST(Validate, RejectsBadSynthConfigs) {
  SynthConfig c;
  c.height = 0;
  EXPECT_THROW(validate(c), DataError);
  c = SynthConfig{};
  c.degradation = 1.5;
  EXPECT_THROW(validate(c), DataError);
  c = SynthConfig{};
  c.proportions[0] += 0.1;
  EXPECT_THROW(validate(c), DataError);
  c = SynthConfig{};
  c.mean_annotations = 0.0;
  EXPECT_THROW(validate(c), DataError);
  EXPECT_NO_THROW(validate(SynthConfig{}));
}

TEST(SimulateAnnotations, ErrorFreeGivesDeltaHsm) {
  const auto id = ids(300);
  const auto t = random_truths(300, 1);
  std::vector<double> damage(300, 0.9);
  const auto recs = simulate_annotations(id, t, pool_with(0.0, KernelKind::kConfusable), 6.0, 3, {damage, 5.0});
  const auto hsm = build_hsm_dataset(recs);
  ASSERT_EQ(hsm.size(), 300u);
  for (const auto& r : hsm) {
    EXPECT_EQ(shannon_entropy(r.hsm), 0.0);
    EXPECT_GE(r.n_annotations, 1u);
  }
  EXPECT_EQ(truth_diagnostics(truth_map(id, t), hsm).agreement(), 1.0);
}

TEST(SimulateAnnotations, AlwaysWrongUniformApproachesUniform) {
  const auto id = ids(20);
  const auto t = random_truths(20, 2);
  const auto recs = simulate_annotations(id, t, pool_with(1.0, KernelKind::kUniform), 2000.0, 4);
  double worst = 0.0;
  for (const auto& r : build_hsm_dataset(recs)) {
    for (double v : r.hsm) worst = std::max(worst, std::abs(v - 1.0 / 24.0));
    EXPECT_GT(shannon_entropy(r.hsm), max_entropy() - 0.02);
  }
  EXPECT_LT(worst, 0.02);
}

TEST(SimulateAnnotations, ChanceAgreementWhenAlwaysWrong) {
  const auto id = ids(4000);
  const auto t = random_truths(4000, 3);
  // mean 1e-9: every image gets exactly the floor of one vote
  const auto recs = simulate_annotations(id, t, pool_with(1.0, KernelKind::kUniform), 1e-9, 5);
  EXPECT_EQ(recs.size(), 4000u);
  const double agree = truth_diagnostics(truth_map(id, t), build_hsm_dataset(recs)).agreement();
  const double sd = std::sqrt((1.0 / 24) * (23.0 / 24) / 4000);
  EXPECT_NEAR(agree, 1.0 / 24, 3 * sd);
}

TEST(SimulateAnnotations, ErrorFractionWithinBinomialBound) {
  const auto id = ids(1000);
  const auto t = random_truths(1000, 4);
  const auto recs = simulate_annotations(id, t, pool_with(0.3, KernelKind::kConfusable), 10.0, 6);
  std::map<std::string, ClassId> truth = truth_map(id, t);
  std::size_t wrong = 0;
  for (const auto& r : recs) wrong += r.label != truth.at(r.image_id);
  const double n = static_cast<double>(recs.size());
  EXPECT_NEAR(wrong / n, 0.3, 3 * std::sqrt(0.21 / n));
  EXPECT_NEAR(n / 1000.0, 10.0, 0.5);
}

TEST(SimulateAnnotations, DamageRaisesErrorRate) {
  const auto id = ids(1000);
  const auto t = random_truths(1000, 4);
  const auto pool = pool_with(0.1, KernelKind::kConfusable);
  auto count_wrong = [&](const std::vector<AnnotationRecord>& recs) {
    auto truth = truth_map(id, t);
    std::size_t wrong = 0;
    for (const auto& r : recs) wrong += r.label != truth.at(r.image_id);
    return static_cast<double>(wrong) / recs.size();
  };
  const double base = count_wrong(simulate_annotations(id, t, pool, 10.0, 6));
  const double hurt = count_wrong(simulate_annotations(id, t, pool, 10.0, 6, {std::vector<double>(1000, 0.5), 2.0}));
  EXPECT_NEAR(base, 0.1, 0.015);
  EXPECT_NEAR(hurt, 0.2, 0.015);
}

TEST(TruthDiagnostics, MatchesIndependentMajorityVoteSimulation) {
  const std::size_t n = 1000;
  const auto id = ids(n);
  const auto t = random_truths(n, 5);
  const auto pool = pool_with(0.3, KernelKind::kConfusable);
  const double got = truth_diagnostics(truth_map(id, t), build_hsm_dataset(simulate_annotations(id, t, pool, 10.0, 7)))
                         .agreement();
  // independent simulation of the same vote process with its own generator
  std::mt19937_64 rng(12345);
  std::poisson_distribution<int> votes(10.0);
  std::bernoulli_distribution err(0.3);
  const auto kernel = make_kernel(KernelKind::kConfusable);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<int, kNumClasses> tally{};
    const int v = std::max(1, votes(rng));
    for (int j = 0; j < v; ++j) {
      std::size_t lab = t[i].index();
      if (err(rng)) {
        std::discrete_distribution<std::size_t> pick(kernel[lab].begin(), kernel[lab].end());
        lab = pick(rng);
      }
      ++tally[lab];
    }
    const std::size_t winner = static_cast<std::size_t>(std::max_element(tally.begin(), tally.end()) - tally.begin());
    agree += winner == t[i].index();
  }
  const double want = static_cast<double>(agree) / n;
  const double sd = std::sqrt(2 * want * (1 - want) / n);
  EXPECT_NEAR(got, want, std::max(4 * sd, 0.01));
  EXPECT_GT(got, 0.85);
  EXPECT_LT(got, 1.0);
}

TEST(TruthDiagnostics, CsvAndMismatch) {
  const auto id = ids(3);
  const std::vector<ClassId> t{ClassId(0), ClassId(1), ClassId(1)};
  const auto hsm = build_hsm_dataset(simulate_annotations(id, t, pool_with(0.0, KernelKind::kUniform), 3.0, 1));
  const auto d = truth_diagnostics(truth_map(id, t), hsm);
  const auto csv = truth_diagnostics_csv(d);
  EXPECT_NE(csv.find("Beta,Beta,2"), std::string::npos) << csv;
  EXPECT_NE(csv.find("agreement,3/3,1"), std::string::npos) << csv;
  auto wrong = truth_map(id, t);
  wrong.erase(wrong.begin());
  wrong["zzz"] = ClassId(0);
  EXPECT_THROW((void)truth_diagnostics(wrong, hsm), DataError);
}

TEST(PoissonDraw, MeanAndDeterminism) {
  std::mt19937_64 a(1), b(1);
  double s = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const auto x = poisson_draw(8.0, a);
    EXPECT_EQ(x, poisson_draw(8.0, b));
    s += x;
  }
  EXPECT_NEAR(s / 20000, 8.0, 4 * std::sqrt(8.0 / 20000));
}

TEST(PoissonDraw, LargeMeanMoments) {
  std::mt19937_64 rng(2);
  double s = 0.0, s2 = 0.0;
  constexpr int kDraws = 4000;
  for (int i = 0; i < kDraws; ++i) {
    const double x = poisson_draw(2000.0, rng);
    s += x;
    s2 += x * x;
  }
  const double mean = s / kDraws;
  EXPECT_NEAR(mean, 2000.0, 4 * std::sqrt(2000.0 / kDraws));
  EXPECT_NEAR(s2 / kDraws - mean * mean, 2000.0, 200.0);
}
