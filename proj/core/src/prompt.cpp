#include "cotbench/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "cotbench/dataset_io.hpp"

namespace cotbench {

namespace fs = std::filesystem;

namespace {

bool ident_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }

// Calls on_text(literal) and on_placeholder(name) in body order.
template <typename Text, typename Placeholder>
void scan(std::string_view body, Text&& on_text, Placeholder&& on_placeholder) {
  std::size_t i = 0;
  std::size_t lit = 0;
  while (i < body.size()) {
    if (body[i] == '{' && i + 1 < body.size() && ident_start(body[i + 1])) {
      std::size_t j = i + 1;
      while (j < body.size() && ident_char(body[j])) ++j;
      if (j < body.size() && body[j] == '}') {
        on_text(body.substr(lit, i - lit));
        on_placeholder(body.substr(i + 1, j - i - 1));
        i = j + 1;
        lit = i;
        continue;
      }
    }
    ++i;
  }
  on_text(body.substr(lit));
}

}  // namespace

std::set<std::string> placeholders_in(std::string_view body) {
  std::set<std::string> out;
  scan(body, [](std::string_view) {}, [&](std::string_view name) { out.emplace(name); });
  return out;
}

PromptTemplate::PromptTemplate(std::string id, std::string body)
    : id_(std::move(id)), body_(std::move(body)), required_(placeholders_in(body_)) {}

PromptTemplate::PromptTemplate(std::string id, std::string body, std::set<std::string> required)
    : id_(std::move(id)), body_(std::move(body)), required_(std::move(required)) {
  const auto present = placeholders_in(body_);
  for (const auto& r : required_)
    if (!present.contains(r)) throw PreconditionError("template '" + id_ + "' lacks required placeholder {" + r + "}");
}

std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings) {
  for (const auto& r : tmpl.required())
    if (bindings.find(r) == bindings.end()) throw MissingBinding(r);
  std::string out;
  out.reserve(tmpl.body().size() * 2);
  scan(
      tmpl.body(), [&](std::string_view t) { out += t; },
      [&](std::string_view name) {
        auto it = bindings.find(name);
        if (it == bindings.end()) throw MissingBinding(std::string(name));
        out += it->second;
      });
  return out;
}

// ---------------------------------------------------------------------------
// Built-in templates

namespace {

constexpr std::string_view kChainGenerationBody = R"(You are building a multiple-choice benchmark for visual reasoning.
You will receive a human-written visual clue describing a highlighted region of an image, and a high-level inference that a careful observer draws from that region.

Write a reasoning chain of 1 to 6 subquestions. Each subquestion comes with its single correct answer. Answered in order, the subquestions must lead to the high-level inference.

Follow these principles:
1. Consistency: chained together, the subquestions and answers must support the given high-level inference and must not contradict it.
2. Progression: start with recognition (what is visibly present in the region) and move step by step toward cognition (what it implies).
3. Visual grounding: every subquestion must be answerable by looking at the image; do not rely on facts that cannot be seen.
4. Non-trivial: avoid questions whose answer is given away by the wording of the question itself.
5. Self-contained wording: each subquestion must make sense on its own, without referring to "the previous question".

Keep each answer short (a few words).

Example
Visual clue: a cake with two lit candles in front of a little girl
High-level inference: The girl is turning two years old today.
Q1: What is on the cake? A1: Two lit candles
Q2: What does each candle on a birthday cake usually represent? A2: One year of age
Q3: How old is the girl turning today? A3: Two years old

Now write the chain. Use exactly the format "Q<k>: <question> A<k>: <answer>", one pair per line, numbered from 1.

Visual clue: {clue}
High-level inference: {inference}
)";

constexpr std::string_view kChainFormatReminderBody =
    "\nFormat reminder: reply only with lines of the form \"Q1: <question> A1: <answer>\", numbered from 1 "
    "without gaps, at most 6 pairs. (attempt {attempt})\n";

constexpr std::string_view kDistractorsInferenceBody = R"(Here is a visual clue describing a region of an image, and the correct high-level inference about it.

Visual clue: {clue}
Correct inference: {inference}

Write {count} alternative inferences. Each one must stay relevant to the described image and be similar in length and style to the correct inference, but must be factually wrong for this image. Do not paraphrase the correct inference.
Reply with one inference per line and nothing else.
)";

constexpr std::string_view kDistractorsAnswerBody = R"(Here is a visual clue describing a region of an image, a question about the image, and its correct answer.

Visual clue: {clue}
Question: {question}
Correct answer: {answer}

Write {count} alternative answers. Each one must stay relevant to the image and the question, but must be factually wrong. Do not write synonyms of the correct answer.
Reply with one answer per line and nothing else.
)";

constexpr std::string_view kFilterPreamble = R"(You are checking one item of a visual reasoning benchmark.

Visual clue (human annotated): {clue}
High-level inference (human annotated): {inference}
High-level candidate inferences:
{high_level_candidates}
Reasoning chain (subquestion, correct answer):
{chain}
Candidate answers for each subquestion:
{candidates}

)";

constexpr std::string_view kFilterSuffix =
    "\nThink briefly, then finish with a final line that starts with \"Yes\" if the item has this "
    "problem or \"No\" if it does not.\n";

std::string filter_body(std::string_view question) {
  return std::string(kFilterPreamble) + "Question: " + std::string(question) + std::string(kFilterSuffix);
}

constexpr std::string_view kEvalPlainBody = R"(Focus on the region marked by the bounding box in the image.
Question: {question}
Options:
{options}
Answer with the letter of the correct option.
Answer:)";

constexpr std::string_view kEvalRationaleBody = R"(Focus on the region marked by the bounding box in the image.
Rationale: {rationale}
Question: {question}
Options:
{options}
Answer with the letter of the correct option.
Answer:)";

constexpr std::string_view kRationaleGenerationBody =
    "Look at the image and reason step by step about the highlighted region: first describe the relevant "
    "visual details, then state the most likely high-level inference they support.";

constexpr std::string_view kRefineBody = R"(Below is a verbose, conversational answer about an image.
Rewrite it as a concise step-by-step reasoning chain: first the visual details that matter, then the inference they support. Keep only statements supported by the original text. Be logical, consistent and succinct; the result must be shorter than the original.
Reply with the reasoning chain only.

Original:
{source}
)";

constexpr std::string_view kRefineStrictBody = R"(Rewrite the text below as a step-by-step reasoning chain in at most half as many words as the original. Keep only the visual details and the final inference. Reply with the reasoning chain only.

Original:
{source}
)";

constexpr std::string_view kJudgePairBody = R"(You will compare two reasoning chains that a model wrote about the same image. You cannot see the image; use its caption as the reference for what is in it.

Caption: {caption}

First chain:
{first}

Second chain:
{second}

Judge which chain is better on these criteria:
- Sophistication: it reaches an interesting high-level inference rather than restating trivial visual facts.
- Consistency: each step follows logically, with no unsupported assertions or gaps.
- Groundedness: the visual details it mentions agree with the caption and are not hallucinated.

Reply with exactly one word: "First" or "Second".
)";

}  // namespace

TemplateLibrary TemplateLibrary::builtin() {
  TemplateLibrary lib;
  using namespace template_ids;
  lib.set(PromptTemplate(std::string(kChainGeneration), std::string(kChainGenerationBody)));
  lib.set(PromptTemplate(std::string(template_ids::kChainFormatReminder), std::string(kChainFormatReminderBody)));
  lib.set(PromptTemplate(std::string(kDistractorsInference), std::string(kDistractorsInferenceBody)));
  lib.set(PromptTemplate(std::string(kDistractorsAnswer), std::string(kDistractorsAnswerBody)));
  lib.set(PromptTemplate(std::string(kEvalPlain), std::string(kEvalPlainBody)));
  lib.set(PromptTemplate(std::string(kEvalRationale), std::string(kEvalRationaleBody)));
  lib.set(PromptTemplate(std::string(kRationaleGeneration), std::string(kRationaleGenerationBody)));
  lib.set(PromptTemplate(std::string(kRefineReasoning), std::string(kRefineBody)));
  lib.set(PromptTemplate(std::string(kRefineReasoningStrict), std::string(kRefineStrictBody)));
  lib.set(PromptTemplate(std::string(kJudgePair), std::string(kJudgePairBody)));

  lib.set(PromptTemplate("filter_fm1", filter_body("Do the subquestions fail to form a consistent chain that, answered in order, "
                                                   "derives the high-level inference?")));
  lib.set(PromptTemplate("filter_fm2", filter_body("Does any of the other candidate inferences have the same meaning as the "
                                                   "human-annotated high-level inference?")));
  lib.set(PromptTemplate("filter_fm3", filter_body("Is any of the stated correct answers to the subquestions wrong or "
                                                   "hallucinated, i.e. not supported by the visual clue?")));
  lib.set(PromptTemplate("filter_fm4", filter_body("Is any of the wrong candidate answers for a subquestion actually also a "
                                                   "correct answer?")));
  lib.set(PromptTemplate("filter_fm5", filter_body("Can the questions be answered correctly without looking at the image, "
                                                   "from the wording alone?")));
  lib.set(PromptTemplate("filter_fm6", filter_body("Does any subquestion contain words that refer to things not present in "
                                                   "the image?")));
  return lib;
}

void TemplateLibrary::set(PromptTemplate t) {
  auto id = t.id();
  templates_.insert_or_assign(std::move(id), std::move(t));
}

const PromptTemplate& TemplateLibrary::get(std::string_view id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw ConfigError("unknown template '" + std::string(id) + "'");
  return it->second;
}

std::vector<std::string> TemplateLibrary::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : templates_) out.push_back(id);
  return out;
}

void TemplateLibrary::overlay_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("template directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) set(PromptTemplate(f.stem().string(), read_file(f)));
}

void TemplateLibrary::export_directory(const fs::path& dir) const {
  fs::create_directories(dir);
  for (const auto& [id, t] : templates_) write_file_atomic(dir / (id + ".txt"), t.body());
}

}  // namespace cotbench
