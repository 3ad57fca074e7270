#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/gateway.hpp"
#include "cotbench/image.hpp"
#include "cotbench/metrics.hpp"
#include "cotbench/model.hpp"

namespace cotbench {

class UnknownAnnotator : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};
class UnknownCampaign : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};
class UnknownTask : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};
class NoActiveLease : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};
class DuplicateSubmission : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};
class InvalidVerdict : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};
class IncompleteCampaign : public PreconditionError {
 public:
  IncompleteCampaign(std::vector<std::string> missing);
  const std::vector<std::string>& missing() const { return missing_; }

 private:
  std::vector<std::string> missing_;
};

struct Validity {
  enum class Kind { Valid, Failure, Other };
  Kind kind = Kind::Valid;
  std::string detail;  // failure mode id, or free text for Other

  static Validity valid() { return {}; }
  static Validity failure(std::string mode_id) { return {Kind::Failure, std::move(mode_id)}; }
  static Validity other(std::string text) { return {Kind::Other, std::move(text)}; }
  bool is_valid() const { return kind == Kind::Valid; }
  std::string reason() const;
  bool operator==(const Validity&) const = default;
};

struct AnnotationVerdict {
  std::string annotator_id;
  std::string sample_id;
  Validity validity;
  std::optional<std::string> duplicate_group;
  std::vector<int> mcq_answers;  // high-level first, then each step

  bool operator==(const AnnotationVerdict&) const = default;
};

void to_json(Json& j, const Validity& v);
void from_json(const Json& j, Validity& v);
void to_json(Json& j, const AnnotationVerdict& v);
void from_json(const Json& j, AnnotationVerdict& v);

struct Lease {
  std::string annotator_id;
  Clock::time_point expiry;
};

struct AnnotationTask {
  std::string task_id;
  std::string campaign_id;
  std::string sample_id;
  std::optional<Lease> lease;
  std::optional<AnnotationVerdict> verdict;
};

// What an annotator receives on lease.
struct LeasedTask {
  std::string task_id;
  std::string campaign_id;
  EvaluationSample sample;
  std::string annotator_id;
  double expires_in_seconds = 0.0;
};

Json leased_task_json(const LeasedTask& t);

struct CampaignProgress {
  std::size_t tasks = 0;
  std::size_t submitted = 0;
  std::size_t leased = 0;  // actively leased, not yet submitted
  std::size_t open = 0;
};

struct RebalanceOptions {
  std::map<std::string, double> fractions;  // per group label
  std::optional<double> default_fraction;   // groups not listed; none = keep all
  std::uint64_t seed = 0;
};

struct RebalanceResult {
  std::vector<std::string> retained;  // input order preserved
  std::map<std::string, std::size_t> sizes_before;
  std::map<std::string, std::size_t> sizes_after;
};

// Each labelled group keeps ceil(fraction * size) members drawn uniformly with
// a per-group seed. A sample's label is the most common label among its
// verdicts (ties: lexicographically smallest). Unlabelled samples stay.
RebalanceResult rebalance_groups(const std::vector<std::string>& kept, const std::vector<AnnotationVerdict>& verdicts,
                                 const RebalanceOptions& options);

struct ExclusionRecord {
  std::string sample_id;
  std::vector<std::string> reasons;  // "<annotator>: <reason>"
};

struct CampaignSummary {
  std::string campaign_id;
  std::vector<std::string> kept;  // after rebalancing
  std::vector<ExclusionRecord> excluded;
  std::vector<std::string> dropped_by_rebalance;
  // Human MCQ performance over each annotator's answered samples, per annotator
  // and averaged.
  std::map<std::string, MetricsReport> per_annotator;
  std::optional<ReportValues> human_average;
  std::map<std::string, std::size_t> group_sizes_before;
  std::map<std::string, std::size_t> group_sizes_after;
};

Json summary_to_json(const CampaignSummary& s);

// Pure: derives the summary from a dataset and its full verdict set.
CampaignSummary summarize_verdicts(const std::string& campaign_id, const Dataset& dataset,
                                   const std::vector<AnnotationVerdict>& verdicts, const RebalanceOptions& rebalance);

inline constexpr double kDefaultLeaseSeconds = 1800.0;

// Thread-safe campaign state. Every public call is atomic under one mutex.
// With a journal path, campaign creation and verdicts are appended as JSONL
// and replayed on construction; leases are not persisted.
class CampaignStore {
 public:
  explicit CampaignStore(std::shared_ptr<Clock> clock = std::make_shared<SystemClock>(),
                         std::optional<std::filesystem::path> journal = std::nullopt);

  std::string create_campaign(Dataset dataset, std::vector<std::string> annotators, std::size_t redundancy);

  std::optional<LeasedTask> lease_task(const std::string& campaign_id, const std::string& annotator_id,
                                       double lease_seconds = kDefaultLeaseSeconds);

  void submit_verdict(const std::string& task_id, const AnnotationVerdict& verdict);

  CampaignProgress progress(const std::string& campaign_id) const;
  CampaignSummary aggregate(const std::string& campaign_id, const RebalanceOptions& rebalance = {}) const;

  EvaluationSample sample(const std::string& campaign_id, const std::string& sample_id) const;
  std::vector<AnnotationTask> tasks(const std::string& campaign_id) const;
  std::vector<std::string> campaign_ids() const;

 private:
  struct Campaign {
    std::string id;
    Dataset dataset;
    std::map<std::string, std::size_t> sample_index;
    std::vector<std::string> annotators;
    std::size_t redundancy = 0;
    std::vector<AnnotationTask> tasks;
  };

  Campaign& campaign_locked(const std::string& id);
  const Campaign& campaign_locked(const std::string& id) const;
  std::string create_locked(const std::string& id, Dataset dataset, std::vector<std::string> annotators,
                            std::size_t redundancy);
  void record_verdict_locked(Campaign& c, std::size_t task_index, const AnnotationVerdict& v);
  void append_journal(const Json& event);
  void replay_journal();

  mutable std::mutex mu_;
  std::shared_ptr<Clock> clock_;
  std::optional<std::filesystem::path> journal_;
  std::map<std::string, Campaign> campaigns_;
  std::map<std::string, std::pair<std::string, std::size_t>> task_index_;  // task id -> (campaign, index)
  std::size_t next_campaign_ = 1;
};

struct ServerOptions {
  std::filesystem::path image_root;
  BurnInStyle burn_in;
};

// HTTP front end:
//   POST /campaigns                                   create
//   GET  /campaigns/{id}/tasks/next?annotator=&lease_seconds=
//   POST /tasks/{id}/verdict
//   GET  /campaigns/{id}/progress
//   POST /campaigns/{id}/aggregate
//   GET  /campaigns/{id}/images/{sample_id}.png       region burned in
class AnnotationServer {
 public:
  AnnotationServer(CampaignStore& store, ServerOptions options = {});
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds to host on the given port (0 = ephemeral) and returns the port.
  int bind(const std::string& host, int port = 0);
  // Blocks serving until stop().
  void serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cotbench
