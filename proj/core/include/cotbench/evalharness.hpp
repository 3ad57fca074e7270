#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/gateway.hpp"
#include "cotbench/image.hpp"
#include "cotbench/model.hpp"
#include "cotbench/prediction.hpp"
#include "cotbench/prompt.hpp"

namespace cotbench {

class NoLetterFound : public DataError {
 public:
  using DataError::DataError;
};
class MissingScores : public DataError {
 public:
  using DataError::DataError;
};
class EvaluationAborted : public DataError {
 public:
  using DataError::DataError;
};

enum class RationaleMode { Off, Endpoint, Precomputed };
enum class LetterMode { TokenScores, ParseLetter };

RationaleMode parse_rationale_mode(std::string_view s);
std::string_view rationale_mode_name(RationaleMode m);
LetterMode parse_letter_mode(std::string_view s);
std::string_view letter_mode_name(LetterMode m);

struct EvalConfig {
  std::string model_id;
  // Exactly one of these is the prediction source.
  std::optional<std::string> endpoint;
  std::optional<std::filesystem::path> prediction_file;

  RationaleMode rationale_mode = RationaleMode::Off;
  std::string rationale_model_id;                          // endpoint mode; defaults to model_id
  std::optional<std::filesystem::path> rationale_file;     // precomputed mode: {"sample_id","rationale"} lines
  std::map<std::string, std::string> rationales;           // precomputed, by sample_id

  BurnInStyle burn_in;
  LetterMode letter_mode = LetterMode::TokenScores;
  std::uint64_t rng_seed = 0;

  bool attach_images = true;
  std::filesystem::path image_root;  // relative image URIs resolve against this
  std::size_t concurrency = 4;
  int max_tokens = 16;
  double max_skip_fraction = 0.05;
};

// Throws ConfigError when the config is inconsistent.
void validate_config(const EvalConfig& config);

// Reads {"sample_id","rationale"} JSONL.
std::map<std::string, std::string> load_rationales(const std::filesystem::path& path);

// "A. <opt1>\n...\nF. <opt6>" in stored order.
std::string format_options(const CandidateSet& candidates);

// One user message: the rendered MCQ prompt plus the (burned-in) image if any.
// With a rationale the eval_rationale template is used, which places the
// rationale ahead of the question.
std::vector<ChatMessage> build_mcq_prompt(const TemplateLibrary& lib, const std::string& question,
                                          const CandidateSet& candidates,
                                          const std::optional<std::string>& rationale = std::nullopt,
                                          std::optional<ImageAttachment> image = std::nullopt);

struct AnswerSelection {
  std::array<double, kOptionCount> option_scores{};
  int chosen_index = 0;
};

// First A-F letter that stands alone in the reply (not part of a longer word).
std::optional<int> parse_letter(std::string_view reply);

AnswerSelection select_answer(const ChatResponse& response, LetterMode mode);

// Raw image bytes for a sample. Default: local file (optionally file://) under
// image_root, or http(s) fetch.
using ImageLoader = std::function<std::vector<std::uint8_t>(const ImageRef&)>;
ImageLoader default_image_loader(std::filesystem::path image_root);

struct SkippedSample {
  std::string sample_id;
  std::string reason;
};

struct EvalResult {
  std::vector<PredictionRecord> predictions;  // sorted by (sample_id, target)
  std::vector<SkippedSample> skipped;
};

// Queries the model once per target: the high-level question and every chain
// step, each independently. Samples whose targets fail are skipped; throws
// EvaluationAborted when the skipped fraction exceeds config.max_skip_fraction.
EvalResult evaluate_dataset(const Dataset& dataset, const EvalConfig& config, Gateway& gateway,
                            const TemplateLibrary& lib = TemplateLibrary::builtin(),
                            ImageLoader loader = nullptr);

// Offline source: loads the prediction file and keeps only records for the
// dataset's samples, sorted. Coverage is checked later by score_predictions.
EvalResult load_offline_predictions(const Dataset& dataset, const EvalConfig& config);

}  // namespace cotbench
