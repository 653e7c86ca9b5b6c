#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "hsmstack/entropy.hpp"
#include "hsmstack/hsm.hpp"
#include "tempdir.hpp"

using namespace hsmstack;

namespace {

CountVector counts_with(std::initializer_list<std::pair<std::size_t, std::uint32_t>> cells) {
  CountVector x{};
  for (auto [i, v] : cells) x[i] = v;
  return x;
}

}  // namespace

TEST(NormalizeCounts, DeltaUniformAndSplit) {
  const auto d = normalize_counts(counts_with({{0, 2}}));
  EXPECT_EQ(d[0], 1.0);
  for (std::size_t i = 1; i < kNumClasses; ++i) EXPECT_EQ(d[i], 0.0);

  CountVector ones{};
  ones.fill(1);
  for (double v : normalize_counts(ones)) EXPECT_DOUBLE_EQ(v, 1.0 / 24.0);

  const auto gp = normalize_counts(counts_with({{2, 10}, {22, 7}}));
  EXPECT_DOUBLE_EQ(gp[2], 10.0 / 17.0);
  EXPECT_DOUBLE_EQ(gp[22], 7.0 / 17.0);
}

TEST(NormalizeCounts, ZeroCountsRejected) {
  try {
    (void)normalize_counts(CountVector{});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "no annotations");
  }
  EXPECT_THROW((void)consensus_label(CountVector{}), DataError);
}

TEST(ConsensusLabel, GammaPsiSplitPicksGamma) {
  const auto c = consensus_label(counts_with({{2, 10}, {22, 7}}));
  EXPECT_EQ(class_name(c.label), "Gamma");
  EXPECT_FALSE(c.tie);
}

TEST(ConsensusLabel, TieGoesToLowestIndex) {
  const auto c = consensus_label(counts_with({{0, 3}, {1, 3}}));
  EXPECT_EQ(c.label, ClassId(0));
  EXPECT_TRUE(c.tie);
  const auto o = consensus_label(counts_with({{23, 1}}));
  EXPECT_EQ(o.label, ClassId(23));
  EXPECT_FALSE(o.tie);
}

TEST(ConsensusLabel, ScaleInvariantAndStableUnderSupportingVote) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 500; ++t) {
    CountVector x{};
    for (auto& v : x) v = static_cast<std::uint32_t>(rng() % 4);
    x[rng() % kNumClasses] += 1;
    const auto base = consensus_label(x);
    for (std::uint32_t s : {2u, 3u, 7u}) {
      CountVector y = x;
      for (auto& v : y) v *= s;
      EXPECT_EQ(consensus_label(y).label, base.label);
    }
    CountVector z = x;
    ++z[base.label.index()];
    EXPECT_EQ(consensus_label(z).label, base.label);
    EXPECT_FALSE(consensus_label(z).tie);
    const double h = shannon_entropy(normalize_counts(x));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, max_entropy() + 1e-12);
  }
}

TEST(BuildHsmDataset, OneRecordPerImage) {
  const auto recs = build_hsm_dataset({{"img1", "", ClassId(0)}, {"img1", "", ClassId(0)}, {"img1", "", ClassId(2)}});
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].n_annotations, 3u);
  EXPECT_EQ(recs[0].consensus, ClassId(0));
  EXPECT_DOUBLE_EQ(recs[0].hsm[2], 1.0 / 3.0);
  EXPECT_TRUE(build_hsm_dataset({}).empty());
}

TEST(BuildHsmDataset, BruteForceRecheck) {
  std::mt19937_64 rng(17);
  std::vector<AnnotationRecord> recs;
  for (int i = 0; i < 1000; ++i) {
    const int votes = 1 + static_cast<int>(rng() % 12);
    for (int v = 0; v < votes; ++v) recs.push_back({"im" + std::to_string(i), "", ClassId(rng() % 5)});
  }
  std::shuffle(recs.begin(), recs.end(), rng);
  const auto ds = build_hsm_dataset(recs);
  ASSERT_EQ(ds.size(), 1000u);
  for (const auto& r : ds) {
    double s = 0.0;
    std::uint32_t n = 0;
    std::size_t best = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      s += r.hsm[c];
      n += r.counts[c];
      if (r.counts[c] > r.counts[best]) best = c;
      EXPECT_DOUBLE_EQ(r.hsm[c], static_cast<double>(r.counts[c]) / r.n_annotations);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(n, r.n_annotations);
    EXPECT_EQ(r.consensus.index(), best);
  }
  EXPECT_TRUE(std::is_sorted(ds.begin(), ds.end(),
                             [](const HsmRecord& a, const HsmRecord& b) { return a.image_id < b.image_id; }));
}

TEST(HsmFile, RoundTripRecoversCounts) {
  TempDir dir("hsm");
  const auto ds = build_hsm_dataset({{"a", "", ClassId(2)}, {"a", "", ClassId(2)}, {"a", "", ClassId(22)},
                                     {"b", "", ClassId(0)}, {"b", "", ClassId(1)}});
  store_hsm(dir / "h.csv", ds, "x");
  const auto back = load_hsm(dir / "h.csv");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].image_id, ds[i].image_id);
    EXPECT_EQ(back[i].counts, ds[i].counts);
    EXPECT_EQ(back[i].consensus, ds[i].consensus);
    EXPECT_EQ(back[i].tie, ds[i].tie);
  }
  EXPECT_TRUE(back[1].tie);
  EXPECT_NE(read_text_file(dir / "h.csv").find("a,3,Gamma,0,"), std::string::npos);
}
