#include "cotbench/filterstage.hpp"

#include <algorithm>
#include <sstream>

#include "cotbench/dataset_io.hpp"
#include "cotbench/digest.hpp"
#include "cotbench/parallel.hpp"
#include "cotbench/text.hpp"

namespace cotbench {

namespace fs = std::filesystem;

void to_json(Json& j, const FilterVerdict& v) {
  j = Json{{"sample_id", v.sample_id}, {"mode_id", v.mode_id},         {"flagged", v.flagged},
           {"unparseable", v.unparseable}, {"rationale", v.rationale}, {"judge_model", v.judge_model}};
}

void from_json(const Json& j, FilterVerdict& v) {
  j.at("sample_id").get_to(v.sample_id);
  j.at("mode_id").get_to(v.mode_id);
  j.at("flagged").get_to(v.flagged);
  v.unparseable = j.value("unparseable", false);
  v.rationale = j.value("rationale", "");
  v.judge_model = j.value("judge_model", "");
}

std::vector<FailureMode> builtin_failure_modes(const TemplateLibrary& templates) {
  static const std::pair<const char*, const char*> kModes[] = {
      {"FM1", "Reasoning chain lacks consistent subquestions that derive the high-level inference."},
      {"FM2", "A candidate inference has the same meaning as the ground-truth inference."},
      {"FM3", "A ground-truth subquestion answer is wrong (hallucinated)."},
      {"FM4", "A distractor answer for a subquestion is also correct."},
      {"FM5", "The questions can be solved without the visual input."},
      {"FM6", "A subquestion contains words unrelated to the visual input."},
  };
  std::vector<FailureMode> out;
  for (const auto& [id, desc] : kModes)
    out.push_back({id, desc, templates.get("filter_" + text::to_lower(id))});
  return out;
}

std::vector<FailureMode> load_mode_registry(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("mode registry " + dir.string() + " does not exist");
  std::vector<std::pair<int, FailureMode>> found;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    Json meta;
    try {
      meta = Json::parse(read_file(f));
    } catch (const Json::exception& e) {
      throw ConfigError("bad mode metadata " + f.string() + ": " + e.what());
    }
    const std::string id = meta.value("mode_id", f.stem().string());
    const fs::path tmpl = dir / meta.value("template", id + ".txt");
    if (!fs::exists(tmpl)) throw ConfigError("mode " + id + ": template " + tmpl.string() + " not found");
    found.push_back({meta.value("order", 1000), {id, meta.value("description", ""), PromptTemplate(id, read_file(tmpl))}});
  }
  std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<FailureMode> out;
  for (std::size_t i = 0; i < found.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k)
      if (out[k].mode_id == found[i].second.mode_id) throw ConfigError("duplicate mode_id " + out[k].mode_id);
    out.push_back(std::move(found[i].second));
  }
  return out;
}

void export_mode_registry(const std::vector<FailureMode>& modes, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const auto& m = modes[i];
    write_file_atomic(dir / (m.mode_id + ".txt"), m.prompt.body());
    const Json meta = {{"mode_id", m.mode_id},
                       {"description", m.description},
                       {"template", m.mode_id + ".txt"},
                       {"order", static_cast<int>(i + 1)}};
    write_file_atomic(dir / (m.mode_id + ".json"), meta.dump(2) + "\n");
  }
}

std::optional<bool> parse_yes_no(std::string_view reply) {
  auto word_verdict = [](std::string_view line) -> std::optional<bool> {
    const std::string w = text::first_word(line);
    if (w == "yes") return true;
    if (w == "no") return false;
    return std::nullopt;
  };
  const std::string_view trimmed = text::trim(reply);
  if (auto v = word_verdict(trimmed)) return v;

  // Rationale first: the verdict sits on the last non-empty line, possibly
  // behind a label such as "Verdict:" or "Answer:".
  auto lines = text::split_lines(trimmed);
  while (!lines.empty() && text::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) return std::nullopt;
  std::string_view last = text::trim(lines.back());
  if (auto v = word_verdict(last)) return v;
  const auto colon = last.find(':');
  if (colon != std::string_view::npos) {
    const std::string label = text::to_lower(text::trim(last.substr(0, colon)));
    if (label == "verdict" || label == "answer" || label == "final answer" || label == "final verdict")
      return word_verdict(last.substr(colon + 1));
  }
  return std::nullopt;
}

namespace {

std::string option_lines(const CandidateSet& c, std::string_view indent) {
  std::string out;
  for (std::size_t i = 0; i < c.options.size(); ++i) {
    out += indent;
    out += i < kOptionLetters.size() ? kOptionLetters[i] : '?';
    out += ". " + c.options[i];
    if (static_cast<int>(i) == c.gold_index) out += " (correct)";
    out += '\n';
  }
  return out;
}

}  // namespace

Bindings sample_bindings(const EvaluationSample& s) {
  std::string chain, candidates;
  for (std::size_t k = 0; k < s.chain.steps.size(); ++k) {
    const auto& step = s.chain.steps[k];
    const std::string n = std::to_string(k + 1);
    const bool has_gold = step.candidates.gold_index >= 0 &&
                          static_cast<std::size_t>(step.candidates.gold_index) < step.candidates.options.size();
    chain += "Q" + n + ": " + step.text + "\nA" + n + ": " + (has_gold ? step.candidates.gold() : std::string()) + "\n";
    candidates += "Q" + n + ": " + step.text + "\n" + option_lines(step.candidates, "  ");
  }
  const auto& hl = s.high_level_candidates;
  const bool hl_gold = hl.gold_index >= 0 && static_cast<std::size_t>(hl.gold_index) < hl.options.size();
  return {{"clue", s.visual_clue},
          {"inference", hl_gold ? hl.gold() : std::string()},
          {"question", s.high_level_question},
          {"chain", chain},
          {"candidates", candidates},
          {"high_level_candidates", option_lines(hl, "")}};
}

FilterVerdict classify_failure(const EvaluationSample& sample, const FailureMode& mode, Gateway& gateway,
                               const FilterOptions& opts) {
  if (auto v = validate_sample(sample); !v.empty())
    throw PreconditionError("sample " + sample.sample_id + " is invalid: " + v.front().str());
  const std::string prompt = render_prompt(mode.prompt, sample_bindings(sample));
  std::string last;
  for (int attempt = 0; attempt <= opts.parse_retries; ++attempt) {
    ChatRequest req{opts.judge_model, {{Role::User, prompt, std::nullopt}}, opts.temperature, opts.max_tokens, false,
                    attempt == 0 ? std::nullopt : std::optional<std::uint64_t>(static_cast<std::uint64_t>(attempt))};
    const ChatResponse r = gateway.complete(req);
    last = r.text;
    if (auto v = parse_yes_no(r.text)) return {sample.sample_id, mode.mode_id, *v, false, r.text, opts.judge_model};
  }
  throw VerdictUnparseable("sample " + sample.sample_id + ", mode " + mode.mode_id + ": unparseable verdict '" +
                           last.substr(0, 80) + "'");
}

RoundResult run_filter_round(const Dataset& dataset, const FailureMode& mode, Gateway& gateway,
                             const FilterOptions& opts) {
  if (dataset.samples.empty()) throw PreconditionError("run_filter_round: empty dataset");
  const std::size_t n = dataset.samples.size();
  std::vector<FilterVerdict> verdicts(n);
  auto errors = parallel_for(n, opts.concurrency, [&](std::size_t i) {
    verdicts[i] = classify_failure(dataset.samples[i], mode, gateway, opts);
  });
  RoundResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const VerdictUnparseable& e) {
      verdicts[i] = {dataset.samples[i].sample_id, mode.mode_id, true, true, e.what(), opts.judge_model};
      ++out.unparseable;
    }
  }
  if (static_cast<double>(out.unparseable) > opts.max_unparseable_fraction * static_cast<double>(n))
    throw FilterAborted("mode " + mode.mode_id + ": " + std::to_string(out.unparseable) + " of " + std::to_string(n) +
                        " verdicts unparseable");
  for (std::size_t i = 0; i < n; ++i) {
    EvaluationSample s = dataset.samples[i];
    if (verdicts[i].flagged) {
      s.provenance.filter_flags.push_back(mode.mode_id);
      out.removed.samples.push_back(std::move(s));
    } else {
      out.kept.samples.push_back(std::move(s));
    }
  }
  out.verdicts = std::move(verdicts);
  return out;
}

// ---------------------------------------------------------------------------
// Campaign

namespace {

std::string ids_digest(const Dataset& ds) {
  std::string all;
  for (const auto& s : ds.samples) {
    all += s.sample_id;
    all += '\n';
  }
  return sha256_hex(all);
}

std::string round_stem(std::size_t round, const std::string& mode_id) {
  std::string r = std::to_string(round);
  if (r.size() < 2) r.insert(0, "0");
  return "round_" + r + "_" + mode_id;
}

Json round_json(const RoundReport& r) {
  return Json{{"round", r.round},
              {"mode_id", r.mode_id},
              {"input_count", r.input_count},
              {"removed_count", r.removed_count},
              {"kept_count", r.kept_count},
              {"unparseable", r.unparseable}};
}

Dataset read_dataset_allow_empty(const fs::path& p) {
  Dataset ds;
  for_each_jsonl(p, [&](std::size_t, const Json& j) { ds.samples.push_back(j.get<EvaluationSample>()); });
  return ds;
}

}  // namespace

Json campaign_report_json(const CampaignResult& result) {
  Json rounds = Json::array();
  for (const auto& r : result.rounds) rounds.push_back(round_json(r));
  return Json{{"rounds", std::move(rounds)}, {"final_count", result.final_dataset.size()}};
}

CampaignResult run_filter_campaign(const Dataset& dataset, const std::vector<FailureMode>& modes, Gateway& gateway,
                                   const FilterOptions& opts, const std::optional<fs::path>& checkpoint_dir) {
  if (modes.empty()) throw PreconditionError("run_filter_campaign: no failure modes");
  if (dataset.samples.empty()) throw PreconditionError("run_filter_campaign: empty dataset");
  if (checkpoint_dir) fs::create_directories(*checkpoint_dir);

  CampaignResult result;
  Dataset current = dataset;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const FailureMode& mode = modes[i];
    RoundReport rep;
    rep.round = i + 1;
    rep.mode_id = mode.mode_id;
    rep.input_count = current.size();
    const std::string input_digest = ids_digest(current);

    if (checkpoint_dir) {
      const fs::path stem = *checkpoint_dir / round_stem(rep.round, mode.mode_id);
      const fs::path report_path = fs::path(stem.string() + ".report.json");
      if (fs::exists(report_path)) {
        const Json saved = Json::parse(read_file(report_path));
        if (saved.value("input_digest", "") != input_digest)
          throw ConfigError("checkpoint " + report_path.string() + " was produced from a different input");
        current = read_dataset_allow_empty(stem.string() + ".kept.jsonl");
        rep.removed_count = saved.at("removed_count").get<std::size_t>();
        rep.kept_count = current.size();
        rep.unparseable = saved.value("unparseable", std::size_t{0});
        rep.resumed = true;
        result.rounds.push_back(rep);
        continue;
      }
    }

    RoundResult round;
    if (!current.samples.empty()) round = run_filter_round(current, mode, gateway, opts);
    rep.removed_count = round.removed.size();
    rep.kept_count = round.kept.size();
    rep.unparseable = round.unparseable;

    if (checkpoint_dir) {
      const std::string stem = (*checkpoint_dir / round_stem(rep.round, mode.mode_id)).string();
      std::string log;
      for (const auto& v : round.verdicts) log += Json(v).dump() + "\n";
      write_file_atomic(stem + ".kept.jsonl", dataset_to_jsonl(round.kept));
      write_file_atomic(stem + ".verdicts.jsonl", log);
      Json report = round_json(rep);
      report["input_digest"] = input_digest;
      // Written last: its presence marks the round as complete.
      write_file_atomic(stem + ".report.json", report.dump(2) + "\n");
    }
    current = std::move(round.kept);
    result.rounds.push_back(rep);
  }
  result.final_dataset = std::move(current);
  return result;
}

}  // namespace cotbench
