#include "cotbench/genstage.hpp"

#include <cctype>
#include <set>
#include <unordered_set>

#include "cotbench/dataset_io.hpp"
#include "cotbench/parallel.hpp"
#include "cotbench/rng.hpp"
#include "cotbench/text.hpp"

namespace cotbench {

void from_json(const Json& j, SeedRecord& s) {
  j.at("sample_id").get_to(s.sample_id);
  j.at("image").get_to(s.image);
  j.at("region").get_to(s.region);
  j.at("visual_clue").get_to(s.visual_clue);
  j.at("high_level_inference").get_to(s.high_level_inference);
}

void to_json(Json& j, const SeedRecord& s) {
  j = Json{{"sample_id", s.sample_id},
           {"image", s.image},
           {"region", s.region},
           {"visual_clue", s.visual_clue},
           {"high_level_inference", s.high_level_inference}};
}

std::vector<SeedRecord> load_seeds(const std::filesystem::path& path) {
  std::vector<SeedRecord> seeds;
  std::unordered_set<std::string> ids;
  for_each_jsonl(path, [&](std::size_t lineno, const Json& j) {
    SeedRecord s;
    try {
      j.get_to(s);
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
    if (text::trim(s.visual_clue).empty() || text::trim(s.high_level_inference).empty())
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": empty clue or inference");
    if (!ids.insert(s.sample_id).second)
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": duplicate sample_id '" + s.sample_id + "'");
    seeds.push_back(std::move(s));
  });
  if (seeds.empty()) throw DatasetError(path.string() + ": no seeds");
  return seeds;
}

// ---------------------------------------------------------------------------
// Reply parsing

namespace {

struct Marker {
  char kind;  // 'Q' or 'A'
  int index;
  std::size_t begin;  // position of the marker letter
  std::size_t content;  // first character after ':'
};

std::vector<Marker> find_markers(std::string_view s) {
  std::vector<Marker> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c != 'Q' && c != 'A') continue;
    if (i > 0 && std::isalnum(static_cast<unsigned char>(s[i - 1]))) continue;
    std::size_t j = i + 1;
    int k = 0;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j])) && j - i <= 3) k = k * 10 + (s[j++] - '0');
    if (j == i + 1 || j >= s.size() || s[j] != ':') continue;
    out.push_back({c, k, i, j + 1});
  }
  return out;
}

std::string content_between(std::string_view s, std::size_t from, std::size_t next_marker) {
  std::size_t end = std::min(next_marker, s.size());
  const std::size_t nl = s.find('\n', from);
  if (nl != std::string_view::npos) end = std::min(end, nl);
  return std::string(text::trim(s.substr(from, end - from)));
}

}  // namespace

std::optional<DraftChain> parse_chain_reply(std::string_view reply) {
  const auto markers = find_markers(reply);
  if (markers.empty()) return std::nullopt;
  DraftChain chain;
  int expected = 1;
  bool want_question = true;
  for (std::size_t m = 0; m < markers.size(); ++m) {
    const Marker& mk = markers[m];
    const std::size_t next = m + 1 < markers.size() ? markers[m + 1].begin : reply.size();
    if (mk.kind != (want_question ? 'Q' : 'A') || mk.index != expected) return std::nullopt;
    std::string content = content_between(reply, mk.content, next);
    if (content.empty()) return std::nullopt;
    if (want_question) {
      chain.push_back({std::move(content), {}});
    } else {
      chain.back().answer = std::move(content);
      ++expected;
    }
    want_question = !want_question;
  }
  if (!want_question) return std::nullopt;  // dangling question without answer
  if (chain.empty() || chain.size() > kMaxChainSteps) return std::nullopt;
  return chain;
}

std::vector<std::string> parse_option_lines(std::string_view reply) {
  std::vector<std::string> out;
  for (const auto& raw : text::split_lines(reply)) {
    std::string_view line = text::trim(raw);
    // "-", "*", "•" bullets
    if (!line.empty() && (line[0] == '-' || line[0] == '*')) line = text::trim(line.substr(1));
    if (line.starts_with("\xe2\x80\xa2")) line = text::trim(line.substr(3));
    // "1." "2)" "A." "b)" numbering
    std::size_t k = 0;
    while (k < line.size() && std::isdigit(static_cast<unsigned char>(line[k]))) ++k;
    if (k == 0 && line.size() >= 2 && std::isalpha(static_cast<unsigned char>(line[0]))) k = 1;
    if (k > 0 && k < line.size() && (line[k] == '.' || line[k] == ')') &&
        (k + 1 == line.size() || line[k + 1] == ' '))
      line = text::trim(line.substr(k + 1));
    if (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = line.substr(1, line.size() - 2);
    line = text::trim(line);
    if (!line.empty()) out.emplace_back(line);
  }
  return out;
}

// ---------------------------------------------------------------------------

DraftChain generate_chain(const SeedRecord& seed, Gateway& gateway, const TemplateLibrary& templates,
                          const GenerationOptions& opts) {
  const std::string base = render_prompt(templates.get(template_ids::kChainGeneration),
                                         {{"clue", seed.visual_clue}, {"inference", seed.high_level_inference}});
  for (int attempt = 0; attempt <= opts.parse_retries; ++attempt) {
    std::string prompt = base;
    if (attempt > 0)
      prompt += render_prompt(templates.get(template_ids::kChainFormatReminder), {{"attempt", std::to_string(attempt)}});
    ChatRequest req{opts.model_id, {{Role::User, prompt, std::nullopt}}, opts.temperature, opts.max_tokens, false, std::nullopt};
    const ChatResponse r = gateway.complete(req);
    if (auto chain = parse_chain_reply(r.text)) return *chain;
  }
  throw GenerationUnparseable("seed " + seed.sample_id + ": no parseable chain after " +
                              std::to_string(opts.parse_retries + 1) + " attempts");
}

std::vector<std::string> generate_distractors(std::string_view gold, const SeedRecord& context,
                                              std::optional<std::string_view> question, Gateway& gateway,
                                              const TemplateLibrary& templates, const GenerationOptions& opts,
                                              std::size_t n) {
  if (text::trim(gold).empty()) throw PreconditionError("generate_distractors: empty gold answer");
  std::string prompt;
  std::string label = "genstage/distractors/" + context.sample_id;
  if (question) {
    prompt = render_prompt(templates.get(template_ids::kDistractorsAnswer),
                           {{"clue", context.visual_clue},
                            {"question", std::string(*question)},
                            {"answer", std::string(gold)},
                            {"count", std::to_string(n)}});
    label += "/" + std::string(*question);
  } else {
    prompt = render_prompt(templates.get(template_ids::kDistractorsInference),
                           {{"clue", context.visual_clue}, {"inference", std::string(gold)}, {"count", std::to_string(n)}});
  }

  const std::string gold_norm = text::normalize_for_compare(gold);
  std::vector<std::string> picked;
  std::set<std::string> seen{gold_norm};
  for (int attempt = 0; attempt <= opts.parse_retries && picked.size() < n; ++attempt) {
    ChatRequest req{opts.model_id, {{Role::User, prompt, std::nullopt}}, opts.temperature, opts.max_tokens, false,
                    attempt == 0 ? std::nullopt : std::optional<std::uint64_t>(derive_seed(opts.rng_seed, label + "#" + std::to_string(attempt)))};
    const ChatResponse r = gateway.complete(req);
    for (auto& cand : parse_option_lines(r.text)) {
      const std::string norm = text::normalize_for_compare(cand);
      if (norm.empty() || !seen.insert(norm).second) continue;
      picked.push_back(std::move(cand));
      if (picked.size() == n) break;
    }
  }
  if (picked.size() < n)
    throw DistractorCollision("seed " + context.sample_id + ": only " + std::to_string(picked.size()) +
                              " distinct distractors for '" + std::string(gold) + "'");
  return picked;
}

CandidateSet assemble_candidates(const std::string& gold, const std::vector<std::string>& distractors,
                                 std::uint64_t rng_seed) {
  if (distractors.size() != kDistractorCount) throw PreconditionError("assemble_candidates: need exactly 5 distractors");
  std::set<std::string> seen{text::normalize_for_compare(gold)};
  for (const auto& d : distractors)
    if (!seen.insert(text::normalize_for_compare(d)).second)
      throw PreconditionError("assemble_candidates: distractor '" + d + "' duplicates another option");

  // Shuffle positions, then place options; gold starts at slot 0.
  std::vector<int> order = {0, 1, 2, 3, 4, 5};
  Rng rng(rng_seed);
  rng.shuffle(std::span<int>(order));
  CandidateSet c;
  c.options.resize(kOptionCount);
  for (std::size_t slot = 0; slot < kOptionCount; ++slot) {
    const int src = order[slot];
    c.options[slot] = src == 0 ? gold : distractors[static_cast<std::size_t>(src - 1)];
    if (src == 0) c.gold_index = static_cast<int>(slot);
  }
  return c;
}

EvaluationSample generate_sample(const SeedRecord& seed, Gateway& gateway, const TemplateLibrary& templates,
                                 const GenerationOptions& opts) {
  if (text::trim(seed.visual_clue).empty() || text::trim(seed.high_level_inference).empty())
    throw PreconditionError("seed " + seed.sample_id + ": empty clue or inference");
  const DraftChain draft = generate_chain(seed, gateway, templates, opts);

  EvaluationSample s;
  s.sample_id = seed.sample_id;
  s.image = seed.image;
  s.region = seed.region;
  s.visual_clue = seed.visual_clue;
  s.high_level_question = opts.high_level_question;
  const std::string base = "genstage/" + seed.sample_id;
  s.high_level_candidates =
      assemble_candidates(seed.high_level_inference,
                          generate_distractors(seed.high_level_inference, seed, std::nullopt, gateway, templates, opts),
                          derive_seed(opts.rng_seed, base + "/high"));
  for (std::size_t k = 0; k < draft.size(); ++k) {
    Subquestion q;
    q.text = draft[k].question;
    q.candidates = assemble_candidates(
        draft[k].answer, generate_distractors(draft[k].answer, seed, draft[k].question, gateway, templates, opts),
        derive_seed(opts.rng_seed, base + "/step/" + std::to_string(k + 1)));
    s.chain.steps.push_back(std::move(q));
  }
  s.provenance.generator_model = opts.model_id;
  s.provenance.stage = "generated";
  s.provenance.rng_seed = opts.rng_seed;
  return s;
}

GenerationRun run_generation(const std::vector<SeedRecord>& seeds, Gateway& gateway, const TemplateLibrary& templates,
                             const GenerationOptions& opts) {
  std::vector<std::optional<EvaluationSample>> out(seeds.size());
  auto errors = parallel_for(seeds.size(), opts.concurrency,
                             [&](std::size_t i) { out[i] = generate_sample(seeds[i], gateway, templates, opts); });
  GenerationRun run;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const GenerationUnparseable& e) {
        run.failures.push_back({seeds[i].sample_id, e.what()});
      } catch (const DistractorCollision& e) {
        run.failures.push_back({seeds[i].sample_id, e.what()});
      }
      continue;
    }
    run.dataset.samples.push_back(std::move(*out[i]));
  }
  return run;
}

}  // namespace cotbench
