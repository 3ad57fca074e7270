#include "cotbench/stats.hpp"

#include "cotbench/error.hpp"
#include "cotbench/text.hpp"

namespace cotbench {

namespace {
struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  double value() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
};
}  // namespace

DatasetStats compute_stats(const Dataset& dataset) {
  if (dataset.samples.empty()) throw PreconditionError("compute_stats: empty dataset");
  DatasetStats st;
  st.sample_count = dataset.samples.size();

  Mean chain, inference, subq, answer;
  std::array<std::size_t, kQuestionTypeCount> counts{};
  std::size_t questions = 0;
  for (const auto& s : dataset.samples) {
    chain.add(static_cast<double>(s.chain.length()));
    for (const auto& o : s.high_level_candidates.options) inference.add(static_cast<double>(text::token_count(o)));
    for (const auto& step : s.chain.steps) {
      subq.add(static_cast<double>(text::token_count(step.text)));
      for (const auto& o : step.candidates.options) answer.add(static_cast<double>(text::token_count(o)));
      ++counts[static_cast<std::size_t>(classify_question_type(step.text))];
      ++questions;
    }
  }
  st.mean_chain_length = chain.value();
  st.mean_inference_tokens = inference.value();
  st.mean_subquestion_tokens = subq.value();
  st.mean_answer_tokens = answer.value();
  if (questions == 0) {
    st.question_types[static_cast<std::size_t>(QuestionType::Others)] = 1.0;
  } else {
    for (std::size_t i = 0; i < kQuestionTypeCount; ++i)
      st.question_types[i] = static_cast<double>(counts[i]) / static_cast<double>(questions);
  }
  return st;
}

Json stats_to_json(const DatasetStats& st) {
  Json hist = Json::object();
  for (std::size_t i = 0; i < kQuestionTypeCount; ++i)
    hist[std::string(question_type_name(static_cast<QuestionType>(i)))] = st.question_types[i];
  return Json{{"sample_count", st.sample_count},
              {"mean_chain_length", st.mean_chain_length},
              {"mean_inference_tokens", st.mean_inference_tokens},
              {"mean_subquestion_tokens", st.mean_subquestion_tokens},
              {"mean_answer_tokens", st.mean_answer_tokens},
              {"question_types", std::move(hist)}};
}

}  // namespace cotbench
