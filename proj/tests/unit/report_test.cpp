#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "hsmstack/report.hpp"

using namespace hsmstack;

namespace {

HsmRecord rec(const std::string& id, std::size_t consensus) {
  HsmRecord r;
  r.image_id = id;
  r.consensus = ClassId(consensus);
  r.counts[consensus] = 1;
  r.hsm = delta_distribution(r.consensus);
  r.n_annotations = 1;
  return r;
}

Prediction pred(const std::string& id, std::size_t c, ModelTag tag = ModelTag::kCxe) {
  return {id, tag, delta_distribution(ClassId(c))};
}

}  // namespace

TEST(Confusion, DiagonalWhenAllCorrect) {
  std::vector<HsmRecord> h;
  std::vector<Prediction> p;
  for (std::size_t i = 0; i < 30; ++i) {
    h.push_back(rec("i" + std::to_string(i), i % 24));
    p.push_back(pred("i" + std::to_string(i), i % 24));
  }
  const auto cm = confusion(p, h);
  EXPECT_EQ(cm.trace(), 30u);
  EXPECT_EQ(cm.total(), 30u);
  const auto pr = precision_recall(cm);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    EXPECT_EQ(pr.precision[c].value, 1.0);
    EXPECT_EQ(pr.recall[c].value, 1.0);
  }
  EXPECT_EQ(pr.accuracy, 1.0);
}

TEST(Confusion, SingleMiss) {
  const auto cm = confusion({pred("a", 2)}, {rec("a", 0)});
  EXPECT_EQ(cm.counts[0][2], 1u);
  EXPECT_EQ(cm.total(), 1u);
  EXPECT_THROW((void)confusion({pred("b", 2)}, {rec("a", 0)}), DataError);
  EXPECT_THROW((void)confusion({}, {rec("a", 0)}), DataError);
}

TEST(Confusion, MarginalsMatchRecount) {
  std::mt19937_64 rng(5);
  std::vector<HsmRecord> h;
  std::vector<Prediction> p;
  std::array<std::uint64_t, kNumClasses> rows{}, cols{};
  std::uint64_t diag = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t a = rng() % kNumClasses;
    const std::size_t b = rng() % 3 == 0 ? a : rng() % kNumClasses;
    h.push_back(rec("r" + std::to_string(i), a));
    p.push_back(pred("r" + std::to_string(i), b));
    ++rows[a];
    ++cols[b];
    diag += a == b;
  }
  std::shuffle(p.begin(), p.end(), rng);
  const auto cm = confusion(p, h);
  EXPECT_EQ(cm.total(), 1000u);
  EXPECT_EQ(cm.trace(), diag);
  std::uint64_t off = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    EXPECT_EQ(cm.row_sum(i), rows[i]);
    EXPECT_EQ(cm.col_sum(i), cols[i]);
    for (std::size_t j = 0; j < kNumClasses; ++j) off += i == j ? 0 : cm.counts[i][j];
  }
  EXPECT_EQ(cm.trace() + off, 1000u);
  // evaluation order does not matter
  std::shuffle(h.begin(), h.end(), rng);
  const auto again = precision_recall(confusion(p, h));
  const auto first = precision_recall(cm);
  for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_EQ(again.precision[c].value, first.precision[c].value);
}

TEST(PrecisionRecall, HandTwoClassMatrix) {
  ConfusionMatrix cm;
  cm.counts[0][0] = 8;
  cm.counts[0][1] = 2;
  cm.counts[1][0] = 1;
  cm.counts[1][1] = 9;
  const auto pr = precision_recall(cm);
  EXPECT_NEAR(pr.precision[0].value, 8.0 / 9.0, 1e-15);
  EXPECT_NEAR(pr.recall[0].value, 0.8, 1e-15);
  EXPECT_NEAR(pr.precision[1].value, 9.0 / 11.0, 1e-15);
  EXPECT_NEAR(pr.accuracy, 17.0 / 20.0, 1e-15);
  // absent classes are 0/0
  EXPECT_FALSE(pr.precision[5].defined);
  EXPECT_FALSE(pr.recall[5].defined);
  EXPECT_EQ(pr.recall[5].value, 0.0);
  EXPECT_NEAR(pr.weighted_recall, 0.5 * 0.8 + 0.5 * 0.9, 1e-15);
  EXPECT_THROW((void)precision_recall(ConfusionMatrix{}), DataError);
}

TEST(Agreement, Cells) {
  std::vector<HsmRecord> h{rec("a", 0), rec("b", 1)};
  const auto all = agreement({pred("a", 0), pred("b", 1)}, {pred("a", 0, ModelTag::kKld), pred("b", 1, ModelTag::kKld)}, h);
  EXPECT_EQ(all.both_correct, 2u);
  EXPECT_EQ(all.total(), 2u);
  const auto one = agreement({pred("a", 0)}, {pred("a", 3)}, {rec("a", 0)});
  EXPECT_EQ(one.a_correct_b_incorrect, 1u);
  EXPECT_EQ(one.total(), 1u);
  EXPECT_THROW((void)agreement({pred("a", 0)}, {pred("z", 0)}, {rec("a", 0)}), DataError);
}

TEST(Agreement, ConsistentWithConfusionAccuracy) {
  std::mt19937_64 rng(8);
  std::vector<HsmRecord> h;
  std::vector<Prediction> a, b;
  for (int i = 0; i < 777; ++i) {
    const std::string id = "x" + std::to_string(i);
    const std::size_t c = rng() % kNumClasses;
    h.push_back(rec(id, c));
    a.push_back(pred(id, rng() % 4 == 0 ? rng() % kNumClasses : c));
    b.push_back(pred(id, rng() % 5 == 0 ? rng() % kNumClasses : c, ModelTag::kKld));
  }
  const auto t = agreement(a, b, h);
  EXPECT_EQ(t.total(), 777u);
  const auto acc = accuracy_from_agreement(t);
  EXPECT_NEAR(acc.a, precision_recall(confusion(a, h)).accuracy, 1e-15);
  EXPECT_NEAR(acc.b, precision_recall(confusion(b, h)).accuracy, 1e-15);
}

TEST(AccuracyFromAgreement, PublishedTable) {
  const AgreementTable t{353549, 16407, 18594, 10871};
  EXPECT_EQ(t.total(), 399421u);
  const auto acc = accuracy_from_agreement(t);
  EXPECT_NEAR(acc.a, 0.926, 0.0005);
  EXPECT_NEAR(acc.b, 0.932, 0.0005);
  EXPECT_NEAR(acc.a, 0.9262, 0.00005);
  EXPECT_NEAR(acc.b, 0.9317, 0.00005);
}

TEST(AccuracyFromAgreement, Extremes) {
  const auto hi = accuracy_from_agreement({5, 0, 0, 0});
  EXPECT_EQ(hi.a, 1.0);
  EXPECT_EQ(hi.b, 1.0);
  const auto lo = accuracy_from_agreement({0, 0, 0, 5});
  EXPECT_EQ(lo.a, 0.0);
  EXPECT_EQ(lo.b, 0.0);
  EXPECT_THROW((void)accuracy_from_agreement({}), DataError);
  EXPECT_EQ(agreement_text({1, 2, 3, 4}, "cxe", "kld"),
            "cxe_cor_kld_cor 1\ncxe_cor_kld_inc 2\ncxe_inc_kld_cor 3\ncxe_inc_kld_inc 4\n");
}

TEST(PerCharacter, DiagonalRowsAndTotal) {
  ConfusionMatrix cm;
  for (std::size_t c = 0; c < kNumClasses; ++c) cm.counts[c][c] = c + 1;
  const std::vector<ModelConfusion> models{{"CXE", cm}};
  const auto rows = per_character_table(models);
  ASSERT_EQ(rows.size(), 25u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.precision[0].value, 1.0) << r.character;
    EXPECT_EQ(r.recall[0].value, 1.0) << r.character;
  }
  EXPECT_EQ(rows[17].character, "Sigma");
  EXPECT_EQ(rows[17].samples, 18u);
  EXPECT_EQ(rows.back().character, "total");
  EXPECT_EQ(rows.back().samples, 300u);
}

TEST(PerCharacter, CsvLayoutFollowsModels) {
  ConfusionMatrix a, b;
  a.counts[0][0] = 3;
  a.counts[0][1] = 1;
  b.counts[0][0] = 4;
  const std::vector<ModelConfusion> models{{"CXE", a}, {"KLD", b}, {"KNN", b}};
  const auto csv = per_character_csv(per_character_table(models), models);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "character,samples,CXE_pre,CXE_rec,KLD_pre,KLD_rec,KNN_pre,KNN_rec");
  EXPECT_NE(csv.find("\nAlpha,4,1,0.75,1,1,1,1\n"), std::string::npos) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 26);
}
