#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"
#include "cotbench/dataset_io.hpp"
#include "cotbench/digest.hpp"
#include "cotbench/prediction.hpp"
#include "fixtures.hpp"

using namespace cotbench;
using namespace cotbench::testing;

namespace {

struct Harness {
  TempDir dir;
  std::ostringstream out, err;
  std::shared_ptr<std::atomic<int>> calls = std::make_shared<std::atomic<int>>(0);
  Handler handler;
  std::string last_url;
  cli::Environment env;

  explicit Harness(Handler h = pipeline_llm) : handler(std::move(h)) {
    env.make_transport = [this](const std::string& url, const std::string&) -> std::unique_ptr<Transport> {
      last_url = url;
      return std::make_unique<ScriptedTransport>([this](const Json& r) { return handler(r); }, calls);
    };
    env.clock = std::make_shared<FakeClock>();
    env.out = &out;
    env.err = &err;
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  int run(std::vector<std::string> args) {
    out.str("");
    err.str("");
    args.insert(args.begin(), {"--manifest", path("manifest.jsonl")});
    return cli::run(args, env);
  }
};

void write_dataset(const Dataset& d, const std::string& path) { save_dataset(d, path); }

void write_seeds(const std::string& path) {
  std::string s;
  for (const auto& seed : pipeline_seeds()) s += Json(seed).dump() + "\n";
  write_text(path, s);
}

// pipeline_llm for generation and filtering, gold letters for evaluation.
Handler full_pipeline_handler(const std::string& dataset_path) {
  auto oracle = std::make_shared<std::optional<Handler>>();
  auto mu = std::make_shared<std::mutex>();
  return [=](const Json& req) {
    if (request_text(req).find("Answer with the letter") == std::string::npos) return pipeline_llm(req);
    std::lock_guard lock(*mu);
    if (!*oracle) *oracle = oracle_endpoint(load_dataset(dataset_path));
    return (**oracle)(req);
  };
}

}  // namespace

TEST(Cli, MetricsOnOraclePredictions) {
  Harness h;
  const Dataset d = make_dataset(5, 2);
  write_dataset(d, h.path("d.jsonl"));
  save_predictions(oracle_predictions(d), h.path("p.jsonl"));
  ASSERT_EQ(h.run({"metrics", "--dataset", h.path("d.jsonl"), "--predictions", h.path("p.jsonl"), "--output",
                   h.path("r.json")}),
            0)
      << h.err.str();
  EXPECT_NE(h.out.str().find("identities hold"), std::string::npos);
  const Json r = Json::parse(read_file(h.path("r.json")));
  for (const char* k : {"R_o", "R_h", "R_cot", "C_b", "C_f"}) EXPECT_EQ(r["report"][k], 100.0) << k;
  EXPECT_EQ(r["identities_hold"], true);
}

TEST(Cli, ConfigErrorsExitTwo) {
  Harness h;
  write_dataset(make_dataset(2, 1), h.path("d.jsonl"));
  EXPECT_EQ(h.run({"filter", "--input", h.path("d.jsonl"), "--output", h.path("o.jsonl"), "--modes", "",
                   "--endpoint", "fake://x"}),
            2);
  EXPECT_NE(h.err.str().find("no failure modes"), std::string::npos);
  EXPECT_EQ(h.run({"filter", "--input", h.path("d.jsonl"), "--output", h.path("o.jsonl"), "--modes", "FM9",
                   "--endpoint", "fake://x"}),
            2);
  EXPECT_EQ(h.run({"filter", "--input", h.path("d.jsonl"), "--output", h.path("o.jsonl")}), 2);
  EXPECT_NE(h.err.str().find("COTBENCH_LLM_URL"), std::string::npos);
  EXPECT_EQ(h.run({"metrics", "--dataset", h.path("missing.jsonl"), "--predictions", h.path("p.jsonl")}), 2);
  EXPECT_EQ(h.run({"metrics", "--bogus"}), 2);
  EXPECT_EQ(h.run({}), 2);
  EXPECT_EQ(*h.calls, 0);
}

TEST(Cli, DataErrorsExitOne) {
  Harness h;
  write_text(h.path("d.jsonl"), "{not json\n");
  write_text(h.path("p.jsonl"), "");
  EXPECT_EQ(h.run({"metrics", "--dataset", h.path("d.jsonl"), "--predictions", h.path("p.jsonl")}), 1);
  EXPECT_NE(h.err.str().find("line 1"), std::string::npos);
}

TEST(Cli, EndpointFromEnvironment) {
  Harness h;
  h.env.vars["COTBENCH_LLM_URL"] = "fake://from-env";
  write_dataset(make_dataset(2, 1), h.path("d.jsonl"));
  EXPECT_EQ(h.run({"filter", "--input", h.path("d.jsonl"), "--output", h.path("o.jsonl"), "--modes", "FM1"}), 0)
      << h.err.str();
  EXPECT_EQ(h.last_url, "fake://from-env");
  EXPECT_EQ(h.run({"filter", "--input", h.path("d.jsonl"), "--output", h.path("o.jsonl"), "--modes", "FM1",
                   "--endpoint", "fake://flag"}),
            0);
  EXPECT_EQ(h.last_url, "fake://flag");
}

TEST(Cli, FullPipelineReproducibleFromCache) {
  auto run_pipeline = [](Harness& h, const std::string& cache) {
    write_seeds(h.path("seeds.jsonl"));
    const std::vector<std::string> gw{"--endpoint", "fake://x", "--concurrency", "2", "--cache-dir", cache, "--cache-mode", "rw",
                                      "--rng-seed", "11"};
    auto with = [&](std::vector<std::string> a) {
      a.insert(a.begin(), gw.begin(), gw.end());
      return a;
    };
    EXPECT_EQ(h.run(with({"generate", "--seeds", h.path("seeds.jsonl"), "--output", h.path("gen.jsonl")})), 0)
        << h.err.str();
    EXPECT_EQ(h.run(with({"filter", "--input", h.path("gen.jsonl"), "--output", h.path("kept.jsonl")})), 0)
        << h.err.str();
    EXPECT_NE(h.out.str().find("kept 8 samples"), std::string::npos) << h.out.str();
    EXPECT_EQ(h.run(with({"evaluate", "--dataset", h.path("kept.jsonl"), "--output", h.path("pred.jsonl"), "--model", "vlm",
                          "--no-images"})),
              0)
        << h.err.str();
    EXPECT_EQ(h.run({"metrics", "--dataset", h.path("kept.jsonl"), "--predictions", h.path("pred.jsonl"), "--output",
                     h.path("report.json")}),
              0)
        << h.err.str();
  };

  TempDir cache;
  Harness first;
  first.handler = full_pipeline_handler(first.path("kept.jsonl"));
  run_pipeline(first, cache.path().string());
  EXPECT_GT(first.calls->load(), 0);

  Harness second;
  second.handler = [](const Json&) { return HttpReply{500, "{}"}; };
  run_pipeline(second, cache.path().string());
  EXPECT_EQ(second.calls->load(), 0);

  for (const char* f : {"gen.jsonl", "kept.jsonl", "kept.jsonl.report.json", "pred.jsonl", "report.json"})
    EXPECT_EQ(read_file(first.path(f)), read_file(second.path(f))) << f;
  const Json report = Json::parse(read_file(first.path("report.json")));
  EXPECT_EQ(report["report"]["R_o"], 100.0);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  Harness h;
  const Dataset d = make_dataset(3, 1);
  write_dataset(d, h.path("d.jsonl"));
  save_predictions(oracle_predictions(d), h.path("p.jsonl"));
  write_text(h.path("run.ini"), "[metrics]\ndataset=\"" + h.path("d.jsonl") + "\"\npredictions=\"" +
                                    h.path("p.jsonl") + "\"\nlabel=\"from-config\"\n");
  ASSERT_EQ(h.run({"--config", h.path("run.ini"), "metrics"}), 0) << h.err.str();
  EXPECT_NE(h.out.str().find("from-config"), std::string::npos);
  ASSERT_EQ(h.run({"--config", h.path("run.ini"), "metrics", "--label", "from-flag"}), 0);
  EXPECT_NE(h.out.str().find("from-flag"), std::string::npos);
  EXPECT_EQ(h.out.str().find("from-config"), std::string::npos);

  write_text(h.path("bad.ini"), "[metrics]\nno-such-key=1\n");
  EXPECT_EQ(h.run({"--config", h.path("bad.ini"), "metrics"}), 2);
}

TEST(Cli, ManifestRecordsAndReplays) {
  Harness h;
  const Dataset d = make_dataset(3, 1);
  write_dataset(d, h.path("d.jsonl"));
  save_predictions(oracle_predictions(d), h.path("p.jsonl"));
  ASSERT_EQ(h.run({"--rng-seed", "9", "metrics", "--dataset", h.path("d.jsonl"), "--predictions", h.path("p.jsonl"),
                   "--output", h.path("r.json")}),
            0);
  std::vector<Json> entries;
  for_each_jsonl(h.path("manifest.jsonl"), [&](std::size_t, const Json& j) { entries.push_back(j); });
  ASSERT_EQ(entries.size(), 1u);
  const Json& e = entries[0];
  EXPECT_EQ(e["subcommand"], "metrics");
  EXPECT_EQ(e["rng_seed"], 9);
  EXPECT_EQ(e["exit_status"], 0);
  EXPECT_EQ(e["inputs"][h.path("d.jsonl")], sha256_hex(read_file(h.path("d.jsonl"))));
  EXPECT_EQ(e["outputs"][h.path("r.json")], sha256_hex(read_file(h.path("r.json"))));

  const std::string before = read_file(h.path("r.json"));
  std::filesystem::remove(h.path("r.json"));
  ASSERT_EQ(h.run({"replay", "--from", h.path("manifest.jsonl")}), 0) << h.err.str();
  EXPECT_EQ(read_file(h.path("r.json")), before);
}

TEST(Cli, TemplatesExportAndStats) {
  Harness h;
  ASSERT_EQ(h.run({"templates", "export", "--output", h.path("tpl")}), 0) << h.err.str();
  EXPECT_TRUE(std::filesystem::exists(h.dir / "tpl" / "eval_plain.txt"));
  write_dataset(make_dataset(4, 2), h.path("d.jsonl"));
  ASSERT_EQ(h.run({"stats", "--dataset", h.path("d.jsonl"), "--output", h.path("s.json")}), 0) << h.err.str();
  const Json s = Json::parse(read_file(h.path("s.json")));
  EXPECT_EQ(s["sample_count"], 4);
}
