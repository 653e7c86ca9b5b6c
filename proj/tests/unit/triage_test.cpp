#include <gtest/gtest.h>

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <thread>

#include "hsmstack/entropy.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"
#include "triage_fixture.hpp"

using namespace hsmstack;
using nlohmann::json;

namespace {

std::vector<FlaggedItem> flag_default(const TriageInputs& in, TriageThresholds t = {}) {
  return flag_items(in.hsm, in.cxe, in.kld, in.knn, t);
}

DecisionRecord decide(const std::string& id, Action a, std::optional<std::size_t> label = std::nullopt,
                      const std::string& reviewer = "r1") {
  DecisionRecord d;
  d.image_id = id;
  d.action = a;
  if (label) d.new_label = ClassId(*label);
  d.reviewer = reviewer;
  d.timestamp = "2024-01-01T00:00:00Z";
  return d;
}

std::set<std::string> all_ids(const TriageInputs& in) {
  std::set<std::string> s;
  for (const auto& r : in.hsm) s.insert(r.image_id);
  return s;
}

}  // namespace

TEST(FlagItems, FixtureYieldsExactlySevenInEntropyOrder) {
  const auto in = fixture::inputs();
  const auto flagged = flag_default(in);
  // expected order from an independent entropy computation
  std::vector<std::pair<long double, std::string>> want;
  for (const auto& r : in.hsm) {
    if (std::find(fixture::qualifying().begin(), fixture::qualifying().end(), r.image_id) !=
        fixture::qualifying().end()) {
      want.emplace_back(-oracle::entropy(r.hsm), r.image_id);
    }
  }
  std::sort(want.begin(), want.end());
  ASSERT_EQ(flagged.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(flagged[i].image_id, want[i].second) << i;
  EXPECT_EQ(flagged.front().image_id, "img15");
  EXPECT_EQ(flagged.back().image_id, "img01");
  for (const auto& f : flagged) {
    const bool hi = f.image_id == "img03" || f.image_id == "img07" || f.image_id == "img11" || f.image_id == "img15";
    EXPECT_EQ(f.high_entropy, hi) << f.image_id;
    EXPECT_EQ(f.model_disagreement, !hi) << f.image_id;
    EXPECT_GE(f.hsm_entropy, 0.0);
    EXPECT_LE(f.hsm_entropy, max_entropy());
  }
}

TEST(FlagItems, PermissiveAndImpossibleThresholds) {
  const auto in = fixture::inputs();
  const auto all = flag_default(in, {0.0, 0, max_entropy()});
  // first rule admits everything at these bounds
  EXPECT_EQ(all.size(), in.hsm.size());
  std::size_t disagreeing = 0;
  for (const auto& f : all) disagreeing += f.knn.prediction != f.consensus;
  EXPECT_EQ(disagreeing, 4u);

  const auto none = flag_default(in, {max_entropy() + 1e-9, 0, 0.3});
  for (const auto& f : none) EXPECT_FALSE(f.high_entropy);
  EXPECT_EQ(none.size(), 3u);
}

TEST(FlagItems, Deterministic) {
  const auto in = fixture::inputs();
  const auto a = flag_default(in);
  const auto b = flag_default(in);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image_id, b[i].image_id);
}

TEST(FlagItems, IdMismatchRejected) {
  auto in = fixture::inputs();
  in.knn.pop_back();
  EXPECT_THROW((void)flag_default(in), DataError);
  in = fixture::inputs();
  in.cxe[0].image_id = "nope";
  EXPECT_THROW((void)flag_default(in), DataError);
}

TEST(Decisions, ValidationRules) {
  EXPECT_THROW(validate(decide("img03", Action::kRelabel)), DecisionError);
  EXPECT_THROW(validate(decide("img03", Action::kKeep, 2)), DecisionError);
  EXPECT_NO_THROW(validate(decide("img03", Action::kRelabel, 2)));
  EXPECT_EQ(action_from_name("remove"), Action::kRemove);
  EXPECT_THROW((void)action_from_name("delete"), DecisionError);
}

TEST(Decisions, JsonRoundTrip) {
  const auto d = decide("img07", Action::kRelabel, 22, "ana");
  const std::string line = decision_to_json_line(d);
  EXPECT_EQ(line,
            R"({"image_id":"img07","action":"relabel","new_label":"Psi","reviewer":"ana","timestamp":"2024-01-01T00:00:00Z"})"
            "\n");
  EXPECT_EQ(decision_from_json(line), d);
  EXPECT_THROW((void)decision_from_json("{\"image_id\":\"a\"}"), DecisionError);
  EXPECT_THROW((void)decision_from_json("not json"), DecisionError);
  EXPECT_THROW((void)decision_from_json(R"({"image_id":"a","action":"relabel","new_label":"Digamma"})"),
               DecisionError);
}

TEST(DecisionStore, UnknownImageAndIdempotence) {
  DecisionStore store({"img03", "img07"});
  try {
    store.record(decide("img99", Action::kKeep));
    FAIL();
  } catch (const DecisionError& e) {
    EXPECT_EQ(e.kind(), DecisionError::Kind::kUnknownImage);
  }
  EXPECT_TRUE(store.record(decide("img03", Action::kKeep)).appended);
  auto again = decide("img03", Action::kKeep);
  again.timestamp = "2024-02-02T00:00:00Z";
  const auto ack = store.record(again);
  EXPECT_FALSE(ack.appended);
  EXPECT_EQ(ack.log_size, 1u);
  EXPECT_TRUE(store.record(decide("img03", Action::kKeep, std::nullopt, "r2")).appended);
}

TEST(DecisionStore, LastDecisionWinsAndLogReplays) {
  TempDir dir("dec");
  const auto in = fixture::inputs();
  const auto log = dir / "decisions.jsonl";
  {
    DecisionStore store(all_ids(in), log);
    store.record(decide("img03", Action::kRelabel, 0));
    store.record(decide("img03", Action::kRelabel, 2));
    store.record(decide("img07", Action::kRemove));
    EXPECT_EQ(store.current().at("img03").new_label, ClassId(2));
    EXPECT_EQ(store.history().size(), 3u);
  }
  const auto history = DecisionStore::read_log(log);
  ASSERT_EQ(history.size(), 3u);
  DecisionStore reopened(all_ids(in), log);
  EXPECT_EQ(reopened.current(), DecisionStore::replay(history));
  const std::string csv = export_clean(in.hsm, reopened.current());
  EXPECT_NE(csv.find("img03,Gamma,human-triage\n"), std::string::npos);
  EXPECT_EQ(csv.find("img07,"), std::string::npos);
  // appends only
  reopened.record(decide("img07", Action::kKeep));
  const std::string text = read_text_file(log);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_NE(export_clean(in.hsm, reopened.current()).find("img07,Gamma,consensus"), std::string::npos);
}

TEST(ExportClean, NoDecisionsAllConsensus) {
  const auto in = fixture::inputs();
  const std::string csv = export_clean(in.hsm, {});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "image_id,label_name,source");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
  EXPECT_EQ(csv.find("human-triage"), std::string::npos);
}

TEST(ExportClean, EverythingRemoved) {
  const auto in = fixture::inputs();
  std::map<std::string, DecisionRecord> d;
  for (const auto& r : in.hsm) d[r.image_id] = decide(r.image_id, Action::kRemove);
  EXPECT_EQ(export_clean(in.hsm, d), "image_id,label_name,source\n");
}

TEST(ExportClean, MixedFixtureMatchesExpectedFile) {
  const auto in = fixture::inputs();
  DecisionStore store(all_ids(in));
  const std::vector<DecisionRecord> log{
      decide("img01", Action::kRelabel, 5), decide("img03", Action::kKeep),      decide("img05", Action::kRemove),
      decide("img07", Action::kRelabel, 22), decide("img09", Action::kRelabel, 4), decide("img11", Action::kRemove),
      decide("img15", Action::kKeep),       decide("img07", Action::kRelabel, 2), decide("img05", Action::kKeep),
      decide("img02", Action::kRemove)};
  for (const auto& d : log) store.record(d);
  // expected file built by hand from the final state of each image
  std::map<std::string, std::string> expect_line;
  for (const auto& r : in.hsm) expect_line[r.image_id] = r.image_id + "," + class_name(r.consensus) + ",consensus";
  expect_line["img01"] = "img01,Zeta,human-triage";
  expect_line["img07"] = "img07,Gamma,human-triage";
  expect_line["img09"] = "img09,Epsilon,human-triage";
  expect_line.erase("img11");
  expect_line.erase("img02");
  std::string want = "image_id,label_name,source\n";
  for (const auto& r : in.hsm) {
    if (expect_line.count(r.image_id)) want += expect_line[r.image_id] + "\n";
  }
  EXPECT_EQ(export_clean(in.hsm, store.current()), want);
}

class TriageServiceTest : public ::testing::Test {
 protected:
  TempDir dir{"svc"};
  TriageService service{fixture::inputs(), TriageThresholds{}, dir / "decisions.jsonl"};
};

TEST_F(TriageServiceTest, FlaggedListing) {
  const auto r = service.flagged({});
  EXPECT_EQ(r.status, 200);
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["count"], 7);
  EXPECT_EQ(j["items"][0]["image_id"], "img15");
  EXPECT_EQ(j["items"][0]["reasons"][0], "high-entropy");
  EXPECT_EQ(j["items"][0]["n_annotations"], 10);
  EXPECT_TRUE(j["items"][0]["decision"].is_null());
  EXPECT_EQ(j["items"][6]["models"]["KNN"]["prediction"], "Zeta");
  EXPECT_EQ(json::parse(service.flagged({{"reason", "model-disagreement"}}).body)["count"], 3);
  EXPECT_EQ(json::parse(service.flagged({{"min_entropy", "1.2"}}).body)["count"], 6);
  EXPECT_EQ(json::parse(service.flagged({{"min_annotations", "9"}}).body)["count"], 8);
  EXPECT_EQ(service.flagged({{"min_entropy", "abc"}}).status, 422);
  EXPECT_EQ(service.flagged({{"reason", "boredom"}}).status, 422);
}

TEST_F(TriageServiceTest, ImageEndpoint) {
  const auto r = service.image("img07");
  ASSERT_EQ(r.status, 200);
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["hsm"].size(), 24u);
  EXPECT_DOUBLE_EQ(j["hsm"][2].get<double>(), 0.25);
  EXPECT_NEAR(j["hsm_entropy"].get<double>(), std::log(4.0), 1e-12);
  EXPECT_EQ(j["pixels"].size(), 64u);
  EXPECT_EQ(j["pixels"][0], 70);
  EXPECT_EQ(j["models"]["KLD"]["probs"][22], 0.25);
  EXPECT_EQ(service.image("missing").status, 404);
}

TEST_F(TriageServiceTest, DecisionEndpoint) {
  const auto ok = service.decision(R"({"image_id":"img07","action":"remove","reviewer":"ana"})");
  EXPECT_EQ(ok.status, 200);
  const auto listed = json::parse(service.flagged({}).body);
  const auto it = std::find_if(listed["items"].begin(), listed["items"].end(),
                               [](const json& x) { return x["image_id"] == "img07"; });
  ASSERT_NE(it, listed["items"].end());
  EXPECT_EQ((*it)["decision"]["action"], "remove");
  EXPECT_FALSE((*it)["decision"]["timestamp"].get<std::string>().empty());
  EXPECT_EQ(service.decision(R"({"image_id":"img07","action":"relabel","reviewer":"ana"})").status, 422);
  EXPECT_EQ(service.decision(R"({"image_id":"img08","action":"keep"})").status, 404);
  EXPECT_EQ(service.decision("{").status, 422);
  EXPECT_EQ(service.export_labels().body.find("img07,"), std::string::npos);
}

TEST(TriageHttp, RoundTripOverSocket) {
  TempDir dir("http");
  const auto log = dir / "decisions.jsonl";
  TriageService service(fixture::inputs(), TriageThresholds{}, log);
  write_text_file(dir / "index.html", "<html>triage</html>");
  TriageHttpServer server(service, {"127.0.0.1", 0, dir.path()});
  const int port = server.bind();
  ASSERT_GT(port, 0);
  std::thread worker([&] { server.run(); });

  httplib::Client client("127.0.0.1", port);
  auto flagged = client.Get("/api/flagged");
  ASSERT_TRUE(flagged);
  EXPECT_EQ(flagged->status, 200);
  EXPECT_EQ(json::parse(flagged->body)["count"], 7);

  auto filtered = client.Get("/api/flagged?reason=high-entropy&min_annotations=10");
  ASSERT_TRUE(filtered);
  EXPECT_EQ(json::parse(filtered->body)["count"], 4);

  auto img = client.Get("/api/image/img03");
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(client.Get("/api/image/none")->status, 404);

  auto post = [&](const std::string& body) {
    return client.Post("/api/decision", body, "application/json");
  };
  EXPECT_EQ(post(R"({"image_id":"img05","action":"remove","reviewer":"r"})")->status, 200);
  EXPECT_EQ(post(R"({"image_id":"img09","action":"relabel","new_label":"Alpha","reviewer":"r"})")->status, 200);
  EXPECT_EQ(post(R"({"image_id":"img09","action":"relabel","reviewer":"r"})")->status, 422);
  EXPECT_EQ(post(R"({"image_id":"img00","action":"keep","reviewer":"r"})")->status, 404);

  auto exported = client.Get("/api/export");
  ASSERT_TRUE(exported);
  EXPECT_EQ(exported->status, 200);
  EXPECT_EQ(exported->get_header_value("Content-Type"), "text/csv");
  EXPECT_EQ(exported->body.find("img05,"), std::string::npos);
  EXPECT_NE(exported->body.find("img09,Alpha,human-triage\n"), std::string::npos);

  auto page = client.Get("/index.html");
  ASSERT_TRUE(page);
  EXPECT_EQ(page->body, "<html>triage</html>");

  server.stop();
  worker.join();

  // replaying the log from scratch reproduces the served export
  const auto in = fixture::inputs();
  EXPECT_EQ(export_clean(in.hsm, DecisionStore::replay(DecisionStore::read_log(log))), exported->body);
}
