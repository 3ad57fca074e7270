#pragma once

#include <array>
#include <cstddef>

#include "cotbench/model.hpp"

namespace cotbench {

struct DatasetStats {
  std::size_t sample_count = 0;
  double mean_chain_length = 0.0;
  // Mean whitespace-token lengths.
  double mean_inference_tokens = 0.0;   // high-level candidate inferences (all six options)
  double mean_subquestion_tokens = 0.0; // chain step questions
  double mean_answer_tokens = 0.0;      // chain step candidate answers (all six options)
  // Fractions in [0, 1] indexed by QuestionType; computed over chain step questions.
  std::array<double, kQuestionTypeCount> question_types{};

  double fraction(QuestionType t) const { return question_types[static_cast<std::size_t>(t)]; }
};

// Requires a non-empty dataset.
DatasetStats compute_stats(const Dataset& dataset);

Json stats_to_json(const DatasetStats& stats);

}  // namespace cotbench
