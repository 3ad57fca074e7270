#include "cotbench/model.hpp"

#include <algorithm>
#include <set>

#include "cotbench/text.hpp"

namespace cotbench {

std::vector<Violation> validate_candidates(const CandidateSet& c, std::string_view path) {
  std::vector<Violation> out;
  const std::string field(path);
  if (c.options.size() != kOptionCount) out.push_back({field, "candidates.count != 6"});
  std::set<std::string> seen;
  bool dup = false;
  for (std::size_t i = 0; i < c.options.size(); ++i) {
    if (text::trim(c.options[i]).empty())
      out.push_back({field + ".options[" + std::to_string(i) + "]", "option empty"});
    if (!seen.insert(text::normalize_for_compare(c.options[i])).second) dup = true;
  }
  if (dup) out.push_back({field, "options not distinct"});
  if (c.gold_index < 0 || static_cast<std::size_t>(c.gold_index) >= kOptionCount ||
      static_cast<std::size_t>(c.gold_index) >= c.options.size())
    out.push_back({field + ".gold_index", "gold_index out of range"});
  return out;
}

std::vector<Violation> validate_sample(const EvaluationSample& s) {
  std::vector<Violation> out;
  auto append = [&out](std::vector<Violation> more) {
    out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  };

  if (s.sample_id.empty()) out.push_back({"sample_id", "sample_id empty"});
  if (s.image.uri.empty()) out.push_back({"image.uri", "uri empty"});
  if (s.image.width_px <= 0) out.push_back({"image.width_px", "width_px <= 0"});
  if (s.image.height_px <= 0) out.push_back({"image.height_px", "height_px <= 0"});

  const Region& r = s.region;
  if (r.x < 0 || r.y < 0) out.push_back({"region", "negative offset"});
  if (r.w <= 0 || r.h <= 0) out.push_back({"region", "empty extent"});
  // 64-bit sums so huge extents cannot wrap.
  if (static_cast<std::int64_t>(r.x) + r.w > s.image.width_px ||
      static_cast<std::int64_t>(r.y) + r.h > s.image.height_px)
    out.push_back({"region", "region out of bounds"});

  if (text::trim(s.high_level_question).empty())
    out.push_back({"high_level.question", "question empty"});
  append(validate_candidates(s.high_level_candidates, "high_level"));

  if (s.chain.steps.empty()) out.push_back({"chain", "chain empty"});
  for (std::size_t i = 0; i < s.chain.steps.size(); ++i) {
    const std::string path = "chain[" + std::to_string(i) + "]";
    if (text::trim(s.chain.steps[i].text).empty()) out.push_back({path + ".question", "question empty"});
    append(validate_candidates(s.chain.steps[i].candidates, path));
  }
  return out;
}

std::string_view question_type_name(QuestionType t) {
  switch (t) {
    case QuestionType::What: return "What";
    case QuestionType::Where: return "Where";
    case QuestionType::Why: return "Why";
    case QuestionType::How: return "How";
    case QuestionType::Which: return "Which";
    case QuestionType::Who: return "Who";
    case QuestionType::When: return "When";
    case QuestionType::YesNo: return "YesNo";
    case QuestionType::Others: return "Others";
  }
  return "Others";
}

QuestionType classify_question_type(std::string_view question) {
  const std::string w = text::first_word(question);
  if (w == "what") return QuestionType::What;
  if (w == "where") return QuestionType::Where;
  if (w == "why") return QuestionType::Why;
  if (w == "how") return QuestionType::How;
  if (w == "which") return QuestionType::Which;
  if (w == "who" || w == "whom" || w == "whose") return QuestionType::Who;
  if (w == "when") return QuestionType::When;
  static const std::set<std::string, std::less<>> kAux = {
      "is", "are", "was", "were", "do", "does", "did", "can", "could",
      "will", "would", "has", "have", "should"};
  if (kAux.contains(w)) return QuestionType::YesNo;
  return QuestionType::Others;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(Json& j, const ImageRef& v) {
  j = Json{{"uri", v.uri}, {"width_px", v.width_px}, {"height_px", v.height_px}};
}

void from_json(const Json& j, ImageRef& v) {
  j.at("uri").get_to(v.uri);
  j.at("width_px").get_to(v.width_px);
  j.at("height_px").get_to(v.height_px);
}

void to_json(Json& j, const Region& v) {
  j = Json{{"x", v.x}, {"y", v.y}, {"w", v.w}, {"h", v.h}};
}

void from_json(const Json& j, Region& v) {
  j.at("x").get_to(v.x);
  j.at("y").get_to(v.y);
  j.at("w").get_to(v.w);
  j.at("h").get_to(v.h);
}

namespace {

Json candidates_json(const std::string& question, const CandidateSet& c) {
  return Json{{"question", question}, {"options", c.options}, {"gold_index", c.gold_index}};
}

void read_candidates(const Json& j, std::string& question, CandidateSet& c) {
  j.at("question").get_to(question);
  j.at("options").get_to(c.options);
  j.at("gold_index").get_to(c.gold_index);
}

}  // namespace

void to_json(Json& j, const Provenance& v) {
  j = v.extra.is_object() ? v.extra : Json::object();
  if (!v.generator_model.empty()) j["generator_model"] = v.generator_model;
  if (!v.stage.empty()) j["stage"] = v.stage;
  if (!v.filter_flags.empty()) j["filter_flags"] = v.filter_flags;
  if (!v.verification.empty()) j["verification"] = v.verification;
  if (v.rng_seed) j["rng_seed"] = *v.rng_seed;
}

void from_json(const Json& j, Provenance& v) {
  v = Provenance{};
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "generator_model") it->get_to(v.generator_model);
    else if (k == "stage") it->get_to(v.stage);
    else if (k == "filter_flags") it->get_to(v.filter_flags);
    else if (k == "verification") it->get_to(v.verification);
    else if (k == "rng_seed") v.rng_seed = it->get<std::uint64_t>();
    else v.extra[k] = *it;
  }
}

void to_json(Json& j, const EvaluationSample& v) {
  Json chain = Json::array();
  for (const auto& step : v.chain.steps) chain.push_back(candidates_json(step.text, step.candidates));
  j = Json{{"sample_id", v.sample_id},
           {"image", v.image},
           {"region", v.region},
           {"visual_clue", v.visual_clue},
           {"high_level", candidates_json(v.high_level_question, v.high_level_candidates)},
           {"chain", std::move(chain)},
           {"provenance", v.provenance}};
  if (v.extra.is_object() && !v.extra.empty()) j["extra"] = v.extra;
}

void from_json(const Json& j, EvaluationSample& v) {
  v = EvaluationSample{};
  j.at("sample_id").get_to(v.sample_id);
  j.at("image").get_to(v.image);
  j.at("region").get_to(v.region);
  j.at("visual_clue").get_to(v.visual_clue);
  read_candidates(j.at("high_level"), v.high_level_question, v.high_level_candidates);
  for (const auto& step : j.at("chain")) {
    Subquestion q;
    read_candidates(step, q.text, q.candidates);
    v.chain.steps.push_back(std::move(q));
  }
  if (auto it = j.find("provenance"); it != j.end()) it->get_to(v.provenance);
  static const std::set<std::string, std::less<>> kKnown = {
      "sample_id", "image", "region", "visual_clue", "high_level", "chain", "provenance", "extra"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "extra" && it->is_object()) {
      for (auto e = it->begin(); e != it->end(); ++e) v.extra[e.key()] = *e;
    } else if (!kKnown.contains(it.key())) {
      v.extra[it.key()] = *it;
    }
  }
}

}  // namespace cotbench
