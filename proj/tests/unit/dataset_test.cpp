#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "hsmstack/dataset.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace hsmstack;

TEST(ClassNames, FixedAlphabetOrder) {
  EXPECT_EQ(class_name(0), "Alpha");
  EXPECT_EQ(class_name(17), "Sigma");
  EXPECT_EQ(class_name(23), "Omega");
  EXPECT_EQ(class_name(11), "Mu");
  EXPECT_EQ(class_name(12), "Nu");
  EXPECT_THROW((void)class_name(24), DataError);
}

TEST(ClassNames, NameIndexRoundTrip) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    EXPECT_EQ(class_from_name(class_name(i)).index(), i);
  }
  try {
    (void)class_from_name("Digamma");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("Digamma"), std::string::npos);
  }
}

TEST(Annotations, ParsesRecordsInOrder) {
  const auto recs = parse_annotations("img1,,Alpha\nimg1,u7,Alpha\n# note\n\nimg1,,Gamma\n");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].image_id, "img1");
  EXPECT_EQ(recs[1].annotator_id, "u7");
  EXPECT_EQ(recs[2].label, ClassId(2));
}

TEST(Annotations, EmptyInputGivesNothing) { EXPECT_TRUE(parse_annotations("").empty()); }

TEST(Annotations, UnknownClassNamesTokenAndLine) {
  try {
    (void)parse_annotations("img1,,Alpha\nimg2,,Digamma\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Digamma"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  }
}

TEST(Annotations, MalformedLineReportsLineNumber) {
  try {
    (void)parse_annotations("img1,,Alpha\nimg1,Alpha\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW((void)parse_annotations(",,Alpha\n"), DataError);
}

TEST(Annotations, FileRoundTrip) {
  TempDir dir("ann");
  std::vector<AnnotationRecord> recs{{"a", "", ClassId(0)}, {"b", "x", ClassId(23)}};
  store_annotations(dir / "a.csv", recs, "made by test");
  EXPECT_EQ(load_annotations(dir / "a.csv"), recs);
}

TEST(CountAnnotations, TalliesPerImage) {
  const auto counts = count_annotations({{"img1", "", ClassId(0)}, {"img1", "", ClassId(0)}, {"img1", "", ClassId(2)}});
  ASSERT_EQ(counts.size(), 1u);
  const auto& x = counts.at("img1");
  EXPECT_EQ(x[0], 2u);
  EXPECT_EQ(x[2], 1u);
  EXPECT_EQ(std::accumulate(x.begin(), x.end(), 0u), 3u);
}

TEST(CountAnnotations, OneVotePerClassIsAllOnes) {
  std::vector<AnnotationRecord> recs;
  for (std::size_t c = 0; c < kNumClasses; ++c) recs.push_back({"img", "", ClassId(c)});
  const auto x = count_annotations(recs).at("img");
  for (auto v : x) EXPECT_EQ(v, 1u);
}

TEST(CountAnnotations, MatchesIndependentTallyAndIgnoresOrder) {
  std::mt19937_64 rng(11);
  std::vector<AnnotationRecord> recs;
  std::map<std::string, std::size_t> per_image;
  std::map<std::pair<std::string, std::size_t>, std::uint32_t> cells;
  for (int i = 0; i < 10000; ++i) {
    const std::string id = "img" + std::to_string(rng() % 700);
    const std::size_t c = rng() % kNumClasses;
    recs.push_back({id, "", ClassId(c)});
    ++per_image[id];
    ++cells[{id, c}];
  }
  const auto counts = count_annotations(recs);
  ASSERT_EQ(counts.size(), per_image.size());
  for (const auto& [id, x] : counts) {
    EXPECT_EQ(std::accumulate(x.begin(), x.end(), std::size_t{0}), per_image.at(id));
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const auto it = cells.find({id, c});
      EXPECT_EQ(x[c], it == cells.end() ? 0u : it->second);
    }
  }
  std::shuffle(recs.begin(), recs.end(), rng);
  EXPECT_EQ(count_annotations(recs), counts);
}

TEST(ImageContainer, EmptyContainerIsValid) {
  TempDir dir("img");
  store_images(dir / "e.gly", {});
  EXPECT_TRUE(load_images(dir / "e.gly").empty());
  EXPECT_EQ(encode_images({}).size(), 16u);
}

TEST(ImageContainer, ByteIdenticalRoundTrip) {
  TempDir dir("img");
  std::mt19937_64 rng(5);
  std::vector<GlyphImage> imgs;
  for (int i = 0; i < 5; ++i) {
    GlyphImage g{"g" + std::to_string(i), 28, 28, std::vector<std::uint8_t>(28 * 28)};
    for (auto& p : g.pixels) p = static_cast<std::uint8_t>(rng());
    imgs.push_back(g);
  }
  store_images(dir / "r.gly", imgs);
  const auto back = load_images(dir / "r.gly");
  EXPECT_EQ(back, imgs);
  std::ifstream f1(dir / "r.gly", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(f1)), {});
  store_images(dir / "s.gly", back);
  std::ifstream f2(dir / "s.gly", std::ios::binary);
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(oracle::fingerprint(bytes), oracle::fingerprint(bytes2));
  EXPECT_EQ(bytes.size(), 16u + 5u * 28u * 28u);
  EXPECT_EQ(bytes.substr(0, 4), "GLY1");
  // big-endian count
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 5);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 0);
}

TEST(ImageContainer, RejectsWrongMagicAndTruncation) {
  GlyphImage g{"g", 8, 8, std::vector<std::uint8_t>(64, 3)};
  auto bytes = encode_images({g});
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW((void)decode_images(bad, {"g"}), DataError);
  bytes.pop_back();
  EXPECT_THROW((void)decode_images(bytes, {"g"}), DataError);
}

TEST(ImageContainer, RejectsMixedDimensions) {
  GlyphImage a{"a", 8, 8, std::vector<std::uint8_t>(64)};
  GlyphImage b{"b", 9, 8, std::vector<std::uint8_t>(72)};
  EXPECT_THROW((void)encode_images({a, b}), DataError);
}

TEST(Predictions, RoundTripWithNineDigits) {
  TempDir dir("pred");
  Prediction p{"img", ModelTag::kKld, {}};
  p.probs.fill(1.0 / 24.0);
  store_predictions(dir / "p.csv", {p}, "hdr");
  const auto back = load_predictions(dir / "p.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].model, ModelTag::kKld);
  EXPECT_NEAR(back[0].probs[3], 1.0 / 24.0, 1e-9);
  EXPECT_EQ(format_prob(1.0 / 3.0), "0.333333333");
  const std::string text = read_text_file(dir / "p.csv");
  EXPECT_EQ(text.rfind("# hdr\n", 0), 0u);
  EXPECT_NE(text.find("img,KLD,0.0416666667,"), std::string::npos);
}

TEST(Predictions, RejectsUnnormalizedRows) {
  TempDir dir("pred");
  std::string row = "img,CXE";
  for (std::size_t i = 0; i < kNumClasses; ++i) row += ",0.5";
  write_text_file(dir / "bad.csv", row + "\n");
  EXPECT_THROW((void)load_predictions(dir / "bad.csv"), DataError);
}

TEST(ArgmaxClass, LowestIndexWinsTies) {
  std::array<double, kNumClasses> p{};
  p[4] = 0.5;
  p[9] = 0.5;
  EXPECT_EQ(argmax_class(p), ClassId(4));
}
