#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/gateway.hpp"
#include "cotbench/model.hpp"
#include "cotbench/prompt.hpp"

namespace cotbench {

class VerdictUnparseable : public DataError {
 public:
  using DataError::DataError;
};

// Too many unparseable verdicts in a round; nothing was written.
class FilterAborted : public DataError {
 public:
  using DataError::DataError;
};

struct FailureMode {
  std::string mode_id;
  std::string description;
  PromptTemplate prompt;
};

struct FilterVerdict {
  std::string sample_id;
  std::string mode_id;
  bool flagged = false;
  bool unparseable = false;  // judge never produced a Yes/No; counted as flagged
  std::string rationale;
  std::string judge_model;
};

void to_json(Json& j, const FilterVerdict& v);
void from_json(const Json& j, FilterVerdict& v);

// The six registered modes FM1..FM6, in campaign order.
std::vector<FailureMode> builtin_failure_modes(const TemplateLibrary& templates = TemplateLibrary::builtin());

// Loads <mode_id>.json ({"mode_id","description","template","order"}) plus the
// referenced template text from a registry directory, sorted by "order".
std::vector<FailureMode> load_mode_registry(const std::filesystem::path& dir);
void export_mode_registry(const std::vector<FailureMode>& modes, const std::filesystem::path& dir);

// Yes/No grammar: a verdict-only reply ("Yes ...", "no.") or rationale
// followed by a final line holding the verdict ("Verdict: Yes").
std::optional<bool> parse_yes_no(std::string_view reply);

// Bindings for filter templates: clue, inference, chain, candidates,
// high_level_candidates.
Bindings sample_bindings(const EvaluationSample& sample);

struct FilterOptions {
  std::string judge_model = "gpt-4";
  double temperature = kJudgeTemperature;
  int max_tokens = 256;
  int parse_retries = 3;
  std::size_t concurrency = 4;
  double max_unparseable_fraction = 0.05;
};

FilterVerdict classify_failure(const EvaluationSample& sample, const FailureMode& mode, Gateway& gateway,
                               const FilterOptions& opts);

struct RoundResult {
  Dataset kept;
  Dataset removed;
  std::vector<FilterVerdict> verdicts;  // input order
  std::size_t unparseable = 0;
};

RoundResult run_filter_round(const Dataset& dataset, const FailureMode& mode, Gateway& gateway,
                             const FilterOptions& opts);

struct RoundReport {
  std::size_t round = 0;  // 1-based
  std::string mode_id;
  std::size_t input_count = 0;
  std::size_t removed_count = 0;
  std::size_t kept_count = 0;
  std::size_t unparseable = 0;
  bool resumed = false;  // loaded from a checkpoint rather than recomputed
};

struct CampaignResult {
  Dataset final_dataset;
  std::vector<RoundReport> rounds;
};

Json campaign_report_json(const CampaignResult& result);

// Applies modes in order, each on the previous round's kept set. With a
// checkpoint directory, every completed round is persisted (kept set, verdict
// log, report) and reused on the next invocation.
CampaignResult run_filter_campaign(const Dataset& dataset, const std::vector<FailureMode>& modes, Gateway& gateway,
                                   const FilterOptions& opts,
                                   const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

}  // namespace cotbench
