#include <gtest/gtest.h>

#include <httplib.h>

#include <set>
#include <thread>

#include "cotbench/annotation.hpp"
#include "cotbench/image.hpp"
#include "fixtures.hpp"

using namespace cotbench;
using namespace cotbench::testing;

namespace {

// MCQ answers for a sample: gold where the bit is set, a wrong option otherwise.
std::vector<int> answers_for(const EvaluationSample& s, const std::vector<bool>& bits) {
  std::vector<int> out;
  for (std::size_t t = 0; t <= s.chain.length(); ++t) {
    const CandidateSet& c = t == 0 ? s.high_level_candidates : s.chain.steps[t - 1].candidates;
    out.push_back(bits.at(t) ? c.gold_index : (c.gold_index + 1) % 6);
  }
  return out;
}

std::vector<int> gold_answers(const EvaluationSample& s) {
  return answers_for(s, std::vector<bool>(s.chain.length() + 1, true));
}

AnnotationVerdict verdict(const std::string& annotator, const EvaluationSample& s, Validity v = Validity::valid()) {
  return {annotator, s.sample_id, std::move(v), std::nullopt, gold_answers(s)};
}

// Leases and submits until the annotator's queue is empty.
std::vector<std::string> drain(CampaignStore& store, const std::string& cid, const std::string& annotator,
                               const std::function<AnnotationVerdict(const LeasedTask&)>& make) {
  std::vector<std::string> seen;
  while (auto t = store.lease_task(cid, annotator)) {
    seen.push_back(t->sample.sample_id);
    store.submit_verdict(t->task_id, make(*t));
  }
  return seen;
}

}  // namespace

TEST(Campaign, TaskCountAndOneTaskPerAnnotatorPerSample) {
  CampaignStore store;
  const Dataset d = make_dataset(4, 2);
  const auto cid = store.create_campaign(d, {"ann1", "ann2", "ann3"}, 3);
  EXPECT_EQ(store.tasks(cid).size(), 12u);
  for (const char* a : {"ann1", "ann2", "ann3"}) {
    auto seen = drain(store, cid, a, [&](const LeasedTask& t) { return verdict(a, t.sample); });
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(seen, (std::vector<std::string>{"s000", "s001", "s002", "s003"})) << a;
  }
  const auto p = store.progress(cid);
  EXPECT_EQ(p.submitted, 12u);
  EXPECT_EQ(p.open, 0u);
}

TEST(Campaign, CreationPreconditions) {
  CampaignStore store;
  EXPECT_THROW(store.create_campaign(make_dataset(2, 1), {"a", "b", "c"}, 4), PreconditionError);
  EXPECT_THROW(store.create_campaign(make_dataset(2, 1), {"a", "a"}, 1), PreconditionError);
  EXPECT_THROW(store.create_campaign(Dataset{}, {"a"}, 1), PreconditionError);
  EXPECT_THROW(store.create_campaign(make_dataset(2, 1), {"a"}, 0), PreconditionError);
}

TEST(Campaign, FullScaleTaskCount) {
  CampaignStore store;
  const auto cid = store.create_campaign(make_dataset(1622, 1), {"a", "b", "c"}, 3);
  EXPECT_EQ(store.tasks(cid).size(), 4866u);
}

TEST(Lease, FreshExhaustedAndExpiry) {
  auto clock = std::make_shared<FakeClock>();
  CampaignStore store(clock);
  const auto cid = store.create_campaign(make_dataset(2, 1), {"a", "b"}, 1);
  const auto t1 = store.lease_task(cid, "a", 60);
  ASSERT_TRUE(t1);
  EXPECT_EQ(t1->annotator_id, "a");
  const auto t2 = store.lease_task(cid, "b", 60);
  ASSERT_TRUE(t2);
  EXPECT_NE(t1->task_id, t2->task_id);
  EXPECT_FALSE(store.lease_task(cid, "a", 60));
  EXPECT_EQ(store.progress(cid).leased, 2u);

  clock->advance(std::chrono::seconds(61));
  EXPECT_EQ(store.progress(cid).open, 2u);
  const auto again = store.lease_task(cid, "b", 60);
  ASSERT_TRUE(again);
  EXPECT_EQ(again->task_id, t1->task_id);
}

TEST(Lease, UnknownCampaignAndAnnotator) {
  CampaignStore store;
  const auto cid = store.create_campaign(make_dataset(1, 1), {"a"}, 1);
  EXPECT_THROW(store.lease_task("c99", "a"), UnknownCampaign);
  EXPECT_THROW(store.lease_task(cid, "mallory"), UnknownAnnotator);
  EXPECT_THROW(store.lease_task(cid, "a", 0), PreconditionError);
}

TEST(Submit, AcceptsAndCloses) {
  CampaignStore store;
  const auto cid = store.create_campaign(make_dataset(1, 2), {"a"}, 1);
  const auto t = store.lease_task(cid, "a");
  store.submit_verdict(t->task_id, verdict("a", t->sample));
  EXPECT_EQ(store.progress(cid).submitted, 1u);
  EXPECT_TRUE(store.tasks(cid)[0].verdict);
  EXPECT_THROW(store.submit_verdict(t->task_id, verdict("a", t->sample)), DuplicateSubmission);
  EXPECT_THROW(store.submit_verdict("c1-t99", verdict("a", t->sample)), UnknownTask);
}

TEST(Submit, ExpiredLeaseReleasedToOtherAnnotator) {
  auto clock = std::make_shared<FakeClock>();
  CampaignStore store(clock);
  const auto cid = store.create_campaign(make_dataset(1, 1), {"a", "b"}, 1);
  const auto ta = store.lease_task(cid, "a", 30);
  clock->advance(std::chrono::seconds(31));
  const auto tb = store.lease_task(cid, "b", 30);
  ASSERT_TRUE(tb);
  EXPECT_EQ(ta->task_id, tb->task_id);
  EXPECT_THROW(store.submit_verdict(ta->task_id, verdict("a", ta->sample)), NoActiveLease);
  store.submit_verdict(tb->task_id, verdict("b", tb->sample));
  EXPECT_EQ(store.tasks(cid)[0].verdict->annotator_id, "b");
}

TEST(Submit, ExpiredLeaseWithoutRelease) {
  auto clock = std::make_shared<FakeClock>();
  CampaignStore store(clock);
  const auto cid = store.create_campaign(make_dataset(1, 1), {"a"}, 1);
  const auto t = store.lease_task(cid, "a", 10);
  clock->advance(std::chrono::seconds(10));
  EXPECT_THROW(store.submit_verdict(t->task_id, verdict("a", t->sample)), NoActiveLease);
}

TEST(Submit, ValidationErrors) {
  CampaignStore store;
  const auto cid = store.create_campaign(make_dataset(2, 2), {"a"}, 1);
  const auto t = store.lease_task(cid, "a");
  auto v = verdict("a", t->sample);
  v.mcq_answers.pop_back();
  EXPECT_THROW(store.submit_verdict(t->task_id, v), InvalidVerdict);
  v = verdict("a", t->sample);
  v.mcq_answers[0] = 6;
  EXPECT_THROW(store.submit_verdict(t->task_id, v), InvalidVerdict);
  v = verdict("a", t->sample);
  v.sample_id = "s001";
  EXPECT_THROW(store.submit_verdict(t->task_id, v), InvalidVerdict);
  v = verdict("a", t->sample, Validity::failure(""));
  EXPECT_THROW(store.submit_verdict(t->task_id, v), InvalidVerdict);
  EXPECT_EQ(store.progress(cid).submitted, 0u);
}

TEST(Submit, ConcurrentAnnotatorsCompleteEveryTaskOnce) {
  CampaignStore store;
  const Dataset d = make_dataset(60, 2);
  std::vector<std::string> annotators;
  for (int i = 0; i < 6; ++i) annotators.push_back("ann" + std::to_string(i));
  const auto cid = store.create_campaign(d, annotators, 3);
  std::atomic<int> submitted{0};
  {
    std::vector<std::jthread> workers;
    for (const auto& a : annotators)
      workers.emplace_back([&, a] {
        while (auto t = store.lease_task(cid, a)) {
          store.submit_verdict(t->task_id, verdict(a, t->sample));
          ++submitted;
        }
      });
  }
  EXPECT_EQ(submitted.load(), 180);
  const auto tasks = store.tasks(cid);
  std::map<std::string, std::set<std::string>> annotators_per_sample;
  for (const auto& t : tasks) {
    ASSERT_TRUE(t.verdict);
    EXPECT_TRUE(annotators_per_sample[t.sample_id].insert(t.verdict->annotator_id).second);
  }
  for (const auto& [_, who] : annotators_per_sample) EXPECT_EQ(who.size(), 3u);
}

// ---------------------------------------------------------------------------

TEST(Aggregate, OneFlagExcludesWithReason) {
  CampaignStore store;
  const Dataset d = make_dataset(3, 1);
  const auto cid = store.create_campaign(d, {"a", "b", "c"}, 3);
  for (const char* a : {"a", "b", "c"})
    drain(store, cid, a, [&](const LeasedTask& t) {
      const bool flag = std::string(a) == "b" && t.sample.sample_id == "s001";
      return verdict(a, t.sample, flag ? Validity::failure("FM3") : Validity::valid());
    });
  const auto s = store.aggregate(cid);
  EXPECT_EQ(s.kept, (std::vector<std::string>{"s000", "s002"}));
  ASSERT_EQ(s.excluded.size(), 1u);
  EXPECT_EQ(s.excluded[0].sample_id, "s001");
  EXPECT_EQ(s.excluded[0].reasons, std::vector<std::string>{"b: FM3"});
}

TEST(Aggregate, AllValidKeepsAll) {
  CampaignStore store;
  const auto cid = store.create_campaign(make_dataset(4, 1), {"a", "b"}, 2);
  for (const char* a : {"a", "b"}) drain(store, cid, a, [&](const LeasedTask& t) { return verdict(a, t.sample); });
  const auto s = store.aggregate(cid);
  EXPECT_EQ(s.kept.size(), 4u);
  EXPECT_TRUE(s.excluded.empty());
  EXPECT_EQ(s.human_average->r_o, 100.0);
}

TEST(Aggregate, IncompleteCampaignListsMissing) {
  CampaignStore store;
  const auto cid = store.create_campaign(make_dataset(2, 1), {"a"}, 1);
  try {
    store.aggregate(cid);
    FAIL();
  } catch (const IncompleteCampaign& e) {
    EXPECT_EQ(e.missing(), (std::vector<std::string>{"c1-t1", "c1-t2"}));
  }
}

TEST(Aggregate, TruthTableHumanMetrics) {
  const Dataset d = truth_table_dataset();
  const auto bits = truth_table_bits();
  std::vector<AnnotationVerdict> verdicts;
  // Each annotator sees every correctness pattern once, on a different sample.
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 4; ++i)
      verdicts.push_back({"ann" + std::to_string(j), d.samples[i].sample_id, Validity::valid(), std::nullopt,
                          answers_for(d.samples[i], bits[(i + j) % 4])});
  const auto s = summarize_verdicts("fixture", d, verdicts, {});
  ASSERT_EQ(s.per_annotator.size(), 3u);
  const auto& h = *s.human_average;
  EXPECT_DOUBLE_EQ(h.r_h, 50.0);
  EXPECT_DOUBLE_EQ(h.r_cot, 50.0);
  EXPECT_DOUBLE_EQ(h.r_o, 25.0);
  EXPECT_DOUBLE_EQ(*h.c_f, 50.0);
  EXPECT_DOUBLE_EQ(*h.c_b, 50.0);
}

TEST(Aggregate, UnevenAnnotatorsAveragedPerAnnotator) {
  const Dataset d = truth_table_dataset();
  std::vector<AnnotationVerdict> verdicts = {
      {"x", "S1", Validity::valid(), std::nullopt, gold_answers(d.samples[0])},
      {"y", "S1", Validity::valid(), std::nullopt, answers_for(d.samples[0], {false, false, false})},
      {"y", "S2", Validity::valid(), std::nullopt, gold_answers(d.samples[1])},
  };
  const auto s = summarize_verdicts("c", d, verdicts, {});
  EXPECT_DOUBLE_EQ(s.per_annotator.at("x").values.r_h, 100.0);
  EXPECT_DOUBLE_EQ(s.per_annotator.at("y").values.r_h, 50.0);
  EXPECT_DOUBLE_EQ(s.human_average->r_h, 75.0);
}

TEST(Rebalance, CeilingRuleAndSingletons) {
  std::vector<std::string> kept;
  std::vector<AnnotationVerdict> verdicts;
  for (int i = 0; i < 11; ++i) {
    const std::string id = "s" + std::to_string(i);
    kept.push_back(id);
    AnnotationVerdict v{"a", id, Validity::valid(), i < 10 ? std::optional<std::string>("cake") : "solo", {}};
    verdicts.push_back(v);
  }
  kept.push_back("unlabelled");
  RebalanceOptions o;
  o.fractions = {{"cake", 0.3}};
  o.default_fraction = 0.5;
  const auto r = rebalance_groups(kept, verdicts, o);
  EXPECT_EQ(r.sizes_before.at("cake"), 10u);
  EXPECT_EQ(r.sizes_after.at("cake"), 3u);
  EXPECT_EQ(r.sizes_after.at("solo"), 1u);
  EXPECT_EQ(r.retained.size(), 3u + 1u + 1u);
  EXPECT_NE(std::find(r.retained.begin(), r.retained.end(), "unlabelled"), r.retained.end());
}

TEST(Rebalance, IndependentDeterministicGroups) {
  std::vector<std::string> kept;
  std::vector<AnnotationVerdict> verdicts;
  for (int i = 0; i < 20; ++i) {
    const std::string id = "s" + std::to_string(i);
    kept.push_back(id);
    verdicts.push_back({"a", id, Validity::valid(), std::string(i % 2 ? "odd" : "even"), {}});
  }
  RebalanceOptions o;
  o.default_fraction = 0.4;
  o.seed = 17;
  const auto r1 = rebalance_groups(kept, verdicts, o);
  const auto r2 = rebalance_groups(kept, verdicts, o);
  EXPECT_EQ(r1.retained, r2.retained);
  EXPECT_EQ(r1.sizes_after.at("odd"), 4u);
  EXPECT_EQ(r1.sizes_after.at("even"), 4u);

  // The odd group's draw does not depend on whether the even group exists.
  std::vector<std::string> odd_only;
  std::vector<AnnotationVerdict> odd_verdicts;
  for (int i = 1; i < 20; i += 2) {
    odd_only.push_back("s" + std::to_string(i));
    odd_verdicts.push_back(verdicts[static_cast<std::size_t>(i)]);
  }
  const auto r3 = rebalance_groups(odd_only, odd_verdicts, o);
  std::vector<std::string> odd_from_r1;
  for (const auto& id : r1.retained)
    if (std::stoi(id.substr(1)) % 2) odd_from_r1.push_back(id);
  EXPECT_EQ(r3.retained, odd_from_r1);

  o.seed = 18;
  bool differs = false;
  for (std::uint64_t seed = 18; seed < 30 && !differs; ++seed) {
    o.seed = seed;
    differs = rebalance_groups(kept, verdicts, o).retained != r1.retained;
  }
  EXPECT_TRUE(differs);
}

TEST(Rebalance, MajorityLabelTiesToSmallest) {
  std::vector<AnnotationVerdict> verdicts = {
      {"a", "s", Validity::valid(), std::string("zeta"), {}},
      {"b", "s", Validity::valid(), std::string("alpha"), {}},
  };
  RebalanceOptions o;
  o.fractions = {{"alpha", 0.0}};
  EXPECT_TRUE(rebalance_groups({"s"}, verdicts, o).retained.empty());
}

TEST(Journal, ReplayRestoresCampaignAndVerdicts) {
  TempDir dir;
  const auto journal = dir / "journal.jsonl";
  std::string cid, first_task;
  {
    CampaignStore store(std::make_shared<SystemClock>(), journal);
    cid = store.create_campaign(make_dataset(3, 1), {"a"}, 1);
    const auto t = store.lease_task(cid, "a");
    first_task = t->task_id;
    store.submit_verdict(t->task_id, verdict("a", t->sample, Validity::other("blurry image")));
  }
  CampaignStore restored(std::make_shared<SystemClock>(), journal);
  EXPECT_EQ(restored.campaign_ids(), std::vector<std::string>{cid});
  EXPECT_EQ(restored.progress(cid).submitted, 1u);
  EXPECT_THROW(restored.submit_verdict(first_task, verdict("a", make_sample("s000", 1))), DuplicateSubmission);
  EXPECT_EQ(restored.create_campaign(make_dataset(1, 1), {"a"}, 1), "c2");
  drain(restored, cid, "a", [&](const LeasedTask& t) { return verdict("a", t.sample); });
  const auto s = restored.aggregate(cid);
  ASSERT_EQ(s.excluded.size(), 1u);
  EXPECT_EQ(s.excluded[0].reasons[0], "a: other: blurry image");
}

TEST(VerdictJson, RoundTrip) {
  AnnotationVerdict v{"a", "s", Validity::failure("FM4"), std::string("g1"), {1, 2, 3}};
  EXPECT_EQ(Json(v).get<AnnotationVerdict>(), v);
  v.validity = Validity::other("text");
  v.duplicate_group.reset();
  EXPECT_EQ(Json(v).get<AnnotationVerdict>(), v);
  EXPECT_THROW((Json{{"kind", "weird"}}.get<Validity>()), InvalidVerdict);
}

// ---------------------------------------------------------------------------
// HTTP API

namespace {

struct LiveServer {
  CampaignStore store;
  TempDir dir;
  std::unique_ptr<AnnotationServer> server;
  std::thread thread;
  int port = 0;

  explicit LiveServer(std::shared_ptr<Clock> clock = std::make_shared<SystemClock>()) : store(std::move(clock)) {
    server = std::make_unique<AnnotationServer>(store, ServerOptions{dir.path(), {{255, 0, 0}, 1}});
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->serve(); });
    server->wait_until_ready();
  }
  ~LiveServer() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

Json create_body(const Dataset& d, std::vector<std::string> annotators, int k) {
  Json samples = Json::array();
  for (const auto& s : d.samples) samples.push_back(s);
  return {{"dataset", samples}, {"annotators", annotators}, {"redundancy", k}};
}

}  // namespace

TEST(Http, FullCampaignFlow) {
  LiveServer live;
  auto cli = live.client();
  const Dataset d = make_dataset(2, 2);
  auto res = cli.Post("/campaigns", create_body(d, {"a", "b"}, 2).dump(), "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 201);
  const Json created = Json::parse(res->body);
  const std::string cid = created["campaign_id"];
  EXPECT_EQ(created["task_count"], 4);

  for (const char* a : {"a", "b"}) {
    for (;;) {
      auto next = cli.Get("/campaigns/" + cid + "/tasks/next?annotator=" + a);
      ASSERT_TRUE(next);
      if (next->status == 204) break;
      ASSERT_EQ(next->status, 200);
      const Json task = Json::parse(next->body);
      const auto sample = task["sample"].get<EvaluationSample>();
      EXPECT_EQ(task["image_url"], "/campaigns/" + cid + "/images/" + sample.sample_id + ".png");
      EXPECT_EQ(task["lease"]["annotator_id"], a);
      const Json body = verdict(a, sample);
      auto sub = cli.Post("/tasks/" + task["task_id"].get<std::string>() + "/verdict", body.dump(), "application/json");
      ASSERT_TRUE(sub);
      EXPECT_EQ(sub->status, 200) << sub->body;
    }
  }
  auto prog = cli.Get("/campaigns/" + cid + "/progress");
  ASSERT_TRUE(prog);
  const Json p = Json::parse(prog->body);
  EXPECT_EQ(p["submitted"], 4);
  EXPECT_EQ(p["complete"], true);

  auto agg = cli.Post("/campaigns/" + cid + "/aggregate", "", "application/json");
  ASSERT_TRUE(agg);
  ASSERT_EQ(agg->status, 200);
  const Json summary = Json::parse(agg->body);
  EXPECT_EQ(summary["kept"].size(), 2u);
  EXPECT_EQ(summary["human_average"]["R_o"], 100.0);
}

TEST(Http, ErrorStatuses) {
  auto clock = std::make_shared<FakeClock>();
  LiveServer live(clock);
  auto cli = live.client();
  const Dataset d = make_dataset(1, 1);
  const std::string cid =
      Json::parse(cli.Post("/campaigns", create_body(d, {"a", "b"}, 1).dump(), "application/json")->body)["campaign_id"];

  EXPECT_EQ(cli.Get("/campaigns/nope/tasks/next?annotator=a")->status, 404);
  EXPECT_EQ(cli.Get("/campaigns/" + cid + "/tasks/next")->status, 400);
  EXPECT_EQ(cli.Get("/campaigns/" + cid + "/tasks/next?annotator=zed")->status, 404);
  EXPECT_EQ(cli.Get("/campaigns/" + cid + "/tasks/next?annotator=a&lease_seconds=abc")->status, 400);
  EXPECT_EQ(cli.Post("/campaigns", "{broken", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/campaigns", create_body(d, {"a"}, 3).dump(), "application/json")->status, 422);

  auto leased = cli.Get("/campaigns/" + cid + "/tasks/next?annotator=a&lease_seconds=5");
  const Json task = Json::parse(leased->body);
  const std::string tid = task["task_id"];
  auto v = verdict("a", d.samples[0]);
  v.mcq_answers.pop_back();
  auto bad = cli.Post("/tasks/" + tid + "/verdict", Json(v).dump(), "application/json");
  EXPECT_EQ(bad->status, 422);
  EXPECT_EQ(Json::parse(bad->body)["error"], "invalid_verdict");

  EXPECT_EQ(cli.Post("/campaigns/" + cid + "/aggregate", "", "application/json")->status, 409);

  clock->advance(std::chrono::seconds(6));
  auto expired = cli.Post("/tasks/" + tid + "/verdict", Json(verdict("a", d.samples[0])).dump(), "application/json");
  EXPECT_EQ(expired->status, 409);
  EXPECT_EQ(Json::parse(expired->body)["error"], "no_active_lease");
  EXPECT_EQ(cli.Post("/tasks/zzz/verdict", Json(verdict("a", d.samples[0])).dump(), "application/json")->status, 404);

  // Re-lease after expiry, then submit twice.
  const Json again = Json::parse(cli.Get("/campaigns/" + cid + "/tasks/next?annotator=a")->body);
  EXPECT_EQ(again["task_id"], tid);
  EXPECT_EQ(cli.Post("/tasks/" + tid + "/verdict", Json(verdict("a", d.samples[0])).dump(), "application/json")->status,
            200);
  EXPECT_EQ(cli.Post("/tasks/" + tid + "/verdict", Json(verdict("a", d.samples[0])).dump(), "application/json")->status,
            409);
}

TEST(Http, ServesBurnedInImage) {
  LiveServer live;
  auto s = make_sample("img", 1);
  s.image = {"pic.ppm", 10, 10};
  s.region = {2, 2, 5, 4};
  const auto ppm = encode_ppm(Raster(10, 10));
  write_text(live.dir / "pic.ppm", std::string(ppm.begin(), ppm.end()));
  Dataset d;
  d.samples.push_back(s);
  d.samples.push_back(make_sample("noimg", 1));
  auto cli = live.client();
  const std::string cid =
      Json::parse(cli.Post("/campaigns", create_body(d, {"a"}, 1).dump(), "application/json")->body)["campaign_id"];
  auto res = cli.Get("/campaigns/" + cid + "/images/img.png");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  const std::vector<std::uint8_t> bytes(res->body.begin(), res->body.end());
  EXPECT_EQ(decode_image(bytes), reference_burn_in_raster());
  EXPECT_EQ(cli.Get("/campaigns/" + cid + "/images/noimg.png")->status, 404);
  EXPECT_EQ(cli.Get("/campaigns/" + cid + "/images/ghost.png")->status, 404);
}
