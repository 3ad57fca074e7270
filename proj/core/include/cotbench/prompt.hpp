#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cotbench/error.hpp"

namespace cotbench {

class MissingBinding : public PreconditionError {
 public:
  explicit MissingBinding(std::string name)
      : PreconditionError("missing binding for placeholder {" + name + "}"), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

// Plain text with {name} placeholders, where name matches [a-z_][a-z0-9_]*.
// Braces around anything else are literal text.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  // Required placeholders default to every placeholder in the body. An
  // explicit list must be a subset of the body's placeholders.
  PromptTemplate(std::string id, std::string body);
  PromptTemplate(std::string id, std::string body, std::set<std::string> required);

  const std::string& id() const { return id_; }
  const std::string& body() const { return body_; }
  const std::set<std::string>& required() const { return required_; }

 private:
  std::string id_;
  std::string body_;
  std::set<std::string> required_;
};

std::set<std::string> placeholders_in(std::string_view body);

// Substitutes every placeholder. Throws MissingBinding for the first
// placeholder (in body order) that has no binding. Extra bindings are ignored.
std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);

// Built-in templates keyed by id, overridable from a directory of <id>.txt files.
class TemplateLibrary {
 public:
  static TemplateLibrary builtin();

  // Replaces templates with any <id>.txt found in dir. Unknown ids are added.
  void overlay_directory(const std::filesystem::path& dir);
  void export_directory(const std::filesystem::path& dir) const;

  const PromptTemplate& get(std::string_view id) const;
  void set(PromptTemplate t);
  bool contains(std::string_view id) const { return templates_.find(id) != templates_.end(); }
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, PromptTemplate, std::less<>> templates_;
};

namespace template_ids {
inline constexpr std::string_view kChainGeneration = "chain_generation";
inline constexpr std::string_view kChainFormatReminder = "chain_format_reminder";
inline constexpr std::string_view kDistractorsInference = "distractors_inference";
inline constexpr std::string_view kDistractorsAnswer = "distractors_answer";
inline constexpr std::string_view kEvalPlain = "eval_plain";
inline constexpr std::string_view kEvalRationale = "eval_rationale";
inline constexpr std::string_view kRationaleGeneration = "rationale_generation";
inline constexpr std::string_view kRefineReasoning = "refine_reasoning";
inline constexpr std::string_view kRefineReasoningStrict = "refine_reasoning_strict";
inline constexpr std::string_view kJudgePair = "judge_pair";
}  // namespace template_ids

}  // namespace cotbench
