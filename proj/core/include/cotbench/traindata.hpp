#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/filterstage.hpp"
#include "cotbench/gateway.hpp"
#include "cotbench/model.hpp"
#include "cotbench/prompt.hpp"

namespace cotbench {

class ProposalFailure : public DataError {
 public:
  using DataError::DataError;
};
class ExcludedSample : public DataError {
 public:
  using DataError::DataError;
};

// ---------------------------------------------------------------------------
// SFT refinement

struct SftSource {
  std::string id;
  std::string image;
  std::string prompt;       // the user turn, without image markers
  std::string source_text;  // the verbose assistant answer
};

struct SftRecord {
  std::string id;
  std::string image;
  std::string prompt;
  std::string source_text;
  std::string refined_chain;
};

// {"image","prompt","target"}
Json sft_output_json(const SftRecord& r);

// LLaVA-style conversation JSON (array of {"id","image","conversations":[...]},
// one source per human/gpt turn pair) or JSONL of {"image","text"[,"prompt","id"]}.
std::vector<SftSource> load_sft_sources(const std::filesystem::path& path);

struct RefineOptions {
  std::string model_id = "gpt-4";
  double temperature = kJudgeTemperature;
  int max_tokens = 512;
  std::size_t concurrency = 4;
};

// Asks the LLM for a concise chain. A reply longer (in tokens) than the source
// gets one retry with the strict template; if that is still too long or
// empty the record is dropped (nullopt).
std::optional<SftRecord> refine_reasoning_sample(const SftSource& source, Gateway& gateway, const TemplateLibrary& lib,
                                                 const RefineOptions& options);

struct SftBatchResult {
  std::vector<SftRecord> records;  // input order
  std::vector<std::string> dropped_ids;
};

SftBatchResult run_sft_prep(const std::vector<SftSource>& sources, Gateway& gateway, const TemplateLibrary& lib,
                            const RefineOptions& options);

// ---------------------------------------------------------------------------
// RLAIF preferences

struct CaptionPair {
  std::string image;
  std::string caption;
};

// One pair per line: "uri<TAB>caption", or a JSON object with
// "image" (or "uri") and "caption". Blank lines yield nullopt.
std::optional<CaptionPair> parse_pair_line(std::string_view line);

using ImageFetcher = std::function<std::optional<ImageAttachment>(const std::string& image)>;

struct ProposalOptions {
  std::string model_id = "cotblip";
  std::size_t k = 3;
  double temperature = 0.9;
  int max_tokens = 512;
  int retries = 3;
  std::uint64_t rng_seed = 0;
};

// k distinct chains (compared after normalisation). Each draw carries its own
// seed; after the first k draws up to `retries` more are made to replace
// duplicates. Throws ProposalFailure("degenerate proposals") when short.
std::vector<std::string> propose_chains(const CaptionPair& pair, Gateway& gateway, const TemplateLibrary& lib,
                                        const ProposalOptions& options,
                                        const std::optional<ImageAttachment>& image = std::nullopt);

enum class Winner { First, Second };

struct PairVerdict {
  int first_id = 0;   // chain shown first
  int second_id = 0;  // chain shown second
  Winner winner = Winner::First;
  std::string rationale;  // raw judge reply

  int winner_id() const { return winner == Winner::First ? first_id : second_id; }
  bool operator==(const PairVerdict&) const = default;
};

// "First" / "Second", case-insensitive, optionally followed by punctuation or
// an explanation.
std::optional<Winner> parse_judge_reply(std::string_view reply);

struct JudgeOptions {
  std::string judge_model = "gpt-4";
  double temperature = kJudgeTemperature;
  int max_tokens = 16;
  int retries = 3;
};

PairVerdict judge_pair(const std::string& caption, const std::vector<std::string>& chains, int first_id, int second_id,
                       Gateway& gateway, const TemplateLibrary& lib, const JudgeOptions& options);

inline constexpr std::string_view kOrderFlipConflict = "order-flip conflict";
inline constexpr std::string_view kCycle = "cycle";

struct RankOutcome {
  bool ranked = false;
  std::array<int, 3> order{};  // best first, when ranked
  std::string reason;          // when excluded

  bool operator==(const RankOutcome&) const = default;
};

// Needs the six verdicts of the three pairs in both presentation orders. A
// pair counts only if both orders agree; the three pair outcomes must then be
// transitive.
RankOutcome rank_three(const std::vector<PairVerdict>& verdicts);

struct PreferenceSample {
  std::string image;
  std::string caption;
  std::vector<std::string> chains;
  std::vector<PairVerdict> verdicts;
  RankOutcome outcome;
};

Json preference_json(const PreferenceSample& s);

inline constexpr std::string_view kGoodToken = "<Good>";
inline constexpr std::string_view kBadToken = "<Bad>";

struct ConditionalRLRecord {
  std::string image;
  std::string control_token;
  std::string chain;

  bool operator==(const ConditionalRLRecord&) const = default;
};

Json conditional_rl_json(const ConditionalRLRecord& r);

// Best chain tagged <Good>, the other two <Bad>, in rank order.
std::vector<ConditionalRLRecord> emit_conditional_rl(const PreferenceSample& sample);

// Proposes three chains and judges every ordered pair.
PreferenceSample build_preference_sample(const CaptionPair& pair, Gateway& gateway, const TemplateLibrary& lib,
                                         const ProposalOptions& proposal, const JudgeOptions& judge,
                                         const std::optional<ImageAttachment>& image = std::nullopt);

struct RlaifOptions {
  ProposalOptions proposal;
  JudgeOptions judge;
  std::size_t concurrency = 4;
  std::size_t batch_size = 64;  // lines processed between checkpoints
  ImageFetcher fetch_image;     // optional
};

struct RlaifStats {
  std::size_t lines = 0;  // non-blank input lines processed
  std::size_t ranked = 0;
  std::size_t order_flip = 0;
  std::size_t cycle = 0;
  std::size_t skipped = 0;  // proposal or judge failures
  std::size_t good = 0;
  std::size_t bad = 0;
};

// Streams a pair file into <out_dir>/preferences.jsonl, conditional_rl.jsonl
// and skipped.jsonl. progress.json records the input line count and output
// sizes after each batch; a rerun resumes from it. Stats are cumulative
// across resumed runs.
RlaifStats run_rlaif(const std::filesystem::path& pairs, const std::filesystem::path& out_dir, Gateway& gateway,
                     const TemplateLibrary& lib, const RlaifOptions& options);

}  // namespace cotbench
