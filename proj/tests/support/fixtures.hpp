#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cotbench/gateway.hpp"
#include "cotbench/genstage.hpp"
#include "cotbench/image.hpp"
#include "cotbench/metrics.hpp"
#include "cotbench/model.hpp"

namespace cotbench::testing {

using Handler = std::function<HttpReply(const Json& request)>;

// Transport that answers from a function of the decoded request body.
class ScriptedTransport final : public Transport {
 public:
  ScriptedTransport(Handler handler, std::shared_ptr<std::atomic<int>> calls)
      : handler_(std::move(handler)), calls_(std::move(calls)) {}
  HttpReply post_chat(const std::string& body) override;

 private:
  Handler handler_;
  std::shared_ptr<std::atomic<int>> calls_;
};

// Text of all messages in a wire request, joined by newlines.
std::string request_text(const Json& request);
bool request_has_image(const Json& request);

// A 200 reply in chat-completions shape; scores become top_logprobs.
HttpReply reply_ok(const std::string& text, const std::optional<std::map<std::string, double>>& scores = std::nullopt);

struct ScriptedGateway {
  std::shared_ptr<std::atomic<int>> calls = std::make_shared<std::atomic<int>>(0);
  std::unique_ptr<Gateway> gateway;

  int upstream_calls() const { return calls->load(); }
};

ScriptedGateway make_gateway(Handler handler, GatewayPolicy policy = {},
                             std::optional<std::filesystem::path> cache_dir = std::nullopt);

class FakeClock final : public Clock {
 public:
  time_point now() override;
  void sleep_for(std::chrono::nanoseconds d) override;
  void advance(std::chrono::nanoseconds d);
  std::chrono::nanoseconds slept() const;

 private:
  mutable std::mutex mu_;
  time_point now_{};
  std::chrono::nanoseconds slept_{0};
};

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& p, const std::string& contents);

// A schema-valid sample with `steps` chain steps. Options read
// "<id> high option k" / "<id> step s option k"; gold indices rotate.
EvaluationSample make_sample(const std::string& id, std::size_t steps);
Dataset make_dataset(std::size_t n, std::size_t steps);

// Predictions answering every target of `sample`: gold where the bit is set,
// the next option otherwise. bits[0] is the high-level question.
std::vector<PredictionRecord> predictions_for(const EvaluationSample& sample, const std::vector<bool>& bits,
                                              const std::string& model = "fixture");
std::vector<PredictionRecord> oracle_predictions(const Dataset& dataset);

// Four samples, two steps each:
//   S1 h=1 steps 11, S2 h=1 steps 10, S3 h=0 steps 11, S4 h=0 steps 00.
CorrectnessMatrix truth_table_matrix();
Dataset truth_table_dataset();
std::vector<std::vector<bool>> truth_table_bits();

// Twenty seeds. Seeds 0..11 carry a planted defect, two per failure mode
// FM1..FM6 in order; seeds 12..19 are clean.
std::vector<SeedRecord> pipeline_seeds();
// Planted failure mode of a seed id ("" for clean seeds).
std::string planted_mode(const std::string& sample_id);
// Deterministic stand-in LLM for generation and filter judging.
HttpReply pipeline_llm(const Json& request);

// Answers every MCQ prompt of `dataset` with its gold letter, as text and as
// first-token scores.
Handler oracle_endpoint(const Dataset& dataset);

// Chain proposer and pairwise judge. Proposals read "Chain <seed> about
// <image>"; the judge prefers the chain with the larger std::hash, a strict
// total order, so every sample ranks.
HttpReply preference_llm(const Json& request);
// The two chains shown in a judge prompt.
std::pair<std::string, std::string> judged_chains(const std::string& prompt);

// The hand-computed 10x10 burn-in reference: white image, region (2,2,5,4),
// stroke 1, red.
Raster reference_burn_in_raster();

}  // namespace cotbench::testing
