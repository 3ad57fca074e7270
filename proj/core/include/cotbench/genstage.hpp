#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/gateway.hpp"
#include "cotbench/model.hpp"
#include "cotbench/prompt.hpp"

namespace cotbench {

class GenerationUnparseable : public DataError {
 public:
  using DataError::DataError;
};

class DistractorCollision : public DataError {
 public:
  using DataError::DataError;
};

// Coarse seed annotation: a clue about an image region plus the gold inference.
struct SeedRecord {
  std::string sample_id;
  ImageRef image;
  Region region;
  std::string visual_clue;
  std::string high_level_inference;
};

void from_json(const Json& j, SeedRecord& s);
void to_json(Json& j, const SeedRecord& s);
std::vector<SeedRecord> load_seeds(const std::filesystem::path& path);

struct DraftStep {
  std::string question;
  std::string answer;
  bool operator==(const DraftStep&) const = default;
};
using DraftChain = std::vector<DraftStep>;

inline constexpr std::size_t kMaxChainSteps = 6;
inline constexpr std::size_t kDistractorCount = 5;

struct GenerationOptions {
  std::string model_id = "gpt-4";
  double temperature = kGenerationTemperature;
  int max_tokens = 1024;
  int parse_retries = 3;
  std::size_t concurrency = 4;
  std::uint64_t rng_seed = 0;
  std::string high_level_question = "Which of the following is the most likely inference about the region?";
};

// Parses "Q<k>: ... A<k>: ..." pairs with k = 1, 2, ... in order. Returns
// nullopt when no well-formed chain of 1..6 pairs is present.
std::optional<DraftChain> parse_chain_reply(std::string_view reply);

// Splits a one-per-line reply into option strings, dropping list markers.
std::vector<std::string> parse_option_lines(std::string_view reply);

DraftChain generate_chain(const SeedRecord& seed, Gateway& gateway, const TemplateLibrary& templates,
                          const GenerationOptions& opts);

// Distractors for the high-level inference (question == nullopt) or for one
// subquestion's answer. Accumulates unique candidates over up to
// 1 + parse_retries calls.
std::vector<std::string> generate_distractors(std::string_view gold, const SeedRecord& context,
                                              std::optional<std::string_view> question, Gateway& gateway,
                                              const TemplateLibrary& templates, const GenerationOptions& opts,
                                              std::size_t n = kDistractorCount);

// Seeded shuffle of gold + distractors. Pure in its arguments.
CandidateSet assemble_candidates(const std::string& gold, const std::vector<std::string>& distractors,
                                 std::uint64_t rng_seed);

EvaluationSample generate_sample(const SeedRecord& seed, Gateway& gateway, const TemplateLibrary& templates,
                                 const GenerationOptions& opts);

struct SeedFailure {
  std::string sample_id;
  std::string reason;
};

struct GenerationRun {
  Dataset dataset;  // input order
  std::vector<SeedFailure> failures;
};

// Processes seeds concurrently. Seeds whose replies stay unparseable are
// reported in `failures`; gateway errors propagate.
GenerationRun run_generation(const std::vector<SeedRecord>& seeds, Gateway& gateway,
                             const TemplateLibrary& templates, const GenerationOptions& opts);

}  // namespace cotbench
