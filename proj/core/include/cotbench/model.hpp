#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cotbench {

using Json = nlohmann::json;

inline constexpr std::size_t kOptionCount = 6;
inline constexpr std::array<char, kOptionCount> kOptionLetters = {'A', 'B', 'C', 'D', 'E', 'F'};

struct ImageRef {
  std::string uri;
  int width_px = 0;
  int height_px = 0;

  bool operator==(const ImageRef&) const = default;
};

struct Region {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const Region&) const = default;
};

// Six options with the gold answer stored by index. Options are persisted in
// their presentation order; letters A-F are assigned positionally.
struct CandidateSet {
  std::vector<std::string> options;
  int gold_index = 0;

  const std::string& gold() const { return options.at(static_cast<std::size_t>(gold_index)); }
  bool operator==(const CandidateSet&) const = default;
};

struct Subquestion {
  std::string text;
  CandidateSet candidates;

  bool operator==(const Subquestion&) const = default;
};

// Ordered recognition-to-cognition steps.
struct ReasoningChain {
  std::vector<Subquestion> steps;

  std::size_t length() const { return steps.size(); }
  bool operator==(const ReasoningChain&) const = default;
};

struct Provenance {
  std::string generator_model;
  std::string stage;
  std::vector<std::string> filter_flags;
  std::string verification;
  std::optional<std::uint64_t> rng_seed;
  Json extra = Json::object();  // unknown keys, preserved verbatim

  bool operator==(const Provenance&) const = default;
};

struct EvaluationSample {
  std::string sample_id;
  ImageRef image;
  Region region;
  std::string visual_clue;
  std::string high_level_question;
  CandidateSet high_level_candidates;
  ReasoningChain chain;
  Provenance provenance;
  Json extra = Json::object();  // unknown top-level fields from imported data

  bool operator==(const EvaluationSample&) const = default;
};

struct Dataset {
  std::vector<EvaluationSample> samples;

  std::size_t size() const { return samples.size(); }
  bool operator==(const Dataset&) const = default;
};

// One broken invariant: the dotted path of the offending field and the rule.
struct Violation {
  std::string field;
  std::string rule;

  std::string str() const { return field + ": " + rule; }
  bool operator==(const Violation&) const = default;
};

std::vector<Violation> validate_candidates(const CandidateSet& c, std::string_view path);
std::vector<Violation> validate_sample(const EvaluationSample& sample);

enum class QuestionType { What, Where, Why, How, Which, Who, When, YesNo, Others };
inline constexpr std::size_t kQuestionTypeCount = 9;

std::string_view question_type_name(QuestionType t);

// Classifies by the lowercased first token; auxiliary-verb openers are YesNo.
QuestionType classify_question_type(std::string_view text);

void to_json(Json& j, const ImageRef& v);
void from_json(const Json& j, ImageRef& v);
void to_json(Json& j, const Region& v);
void from_json(const Json& j, Region& v);
void to_json(Json& j, const Provenance& v);
void from_json(const Json& j, Provenance& v);
void to_json(Json& j, const EvaluationSample& v);
void from_json(const Json& j, EvaluationSample& v);

}  // namespace cotbench
