#include "cotbench/traindata.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "cotbench/dataset_io.hpp"
#include "cotbench/parallel.hpp"
#include "cotbench/rng.hpp"
#include "cotbench/text.hpp"

namespace cotbench {

// ---------------------------------------------------------------------------
// SFT

Json sft_output_json(const SftRecord& r) {
  return Json{{"image", r.image}, {"prompt", r.prompt}, {"target", r.refined_chain}};
}

namespace {

std::string strip_image_marker(std::string s) {
  for (std::string_view marker : {"<image>\n", "\n<image>", "<image>"}) {
    if (auto pos = s.find(marker); pos != std::string::npos) s.erase(pos, marker.size());
  }
  return std::string(text::trim(s));
}

void append_conversation_sources(const Json& rec, std::size_t ordinal, std::vector<SftSource>& out) {
  const std::string id = rec.contains("id") ? (rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump())
                                            : std::to_string(ordinal);
  const std::string image = rec.value("image", "");
  const auto& turns = rec.at("conversations");
  std::string pending_prompt;
  std::size_t turn = 0;
  for (const auto& t : turns) {
    const std::string from = t.value("from", "");
    const std::string value = t.value("value", "");
    if (from == "human" || from == "user") {
      pending_prompt = strip_image_marker(value);
    } else if (from == "gpt" || from == "assistant") {
      out.push_back({turns.size() > 2 ? id + "#" + std::to_string(turn) : id, image, pending_prompt, value});
      ++turn;
      pending_prompt.clear();
    }
  }
}

}  // namespace

std::vector<SftSource> load_sft_sources(const std::filesystem::path& path) {
  std::vector<SftSource> out;
  const std::string content = read_file(path);
  const std::string_view head = text::trim(content);
  if (!head.empty() && head.front() == '[') {
    Json arr;
    try {
      arr = Json::parse(content);
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": malformed JSON: " + e.what());
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
      try {
        append_conversation_sources(arr[i], i, out);
      } catch (const Json::exception& e) {
        throw DatasetError(path.string() + ": record " + std::to_string(i) + ": " + e.what());
      }
    }
    return out;
  }
  std::size_t ordinal = 0;
  for_each_jsonl(path, [&](std::size_t lineno, const Json& j) {
    try {
      if (j.contains("conversations")) {
        append_conversation_sources(j, ordinal++, out);
        return;
      }
      SftSource s;
      s.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                              : std::to_string(ordinal);
      ++ordinal;
      s.image = j.value("image", "");
      s.prompt = strip_image_marker(j.value("prompt", ""));
      s.source_text = j.at("text").get<std::string>();
      out.push_back(std::move(s));
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

std::optional<SftRecord> refine_reasoning_sample(const SftSource& source, Gateway& gateway, const TemplateLibrary& lib,
                                                 const RefineOptions& options) {
  if (text::trim(source.source_text).empty()) throw PreconditionError("refine: empty source text");
  const std::size_t limit = text::token_count(source.source_text);
  for (auto id : {template_ids::kRefineReasoning, template_ids::kRefineReasoningStrict}) {
    ChatRequest req;
    req.model_id = options.model_id;
    req.messages = {ChatMessage{Role::User, render_prompt(lib.get(id), {{"source", source.source_text}}), std::nullopt}};
    req.temperature = options.temperature;
    req.max_tokens = options.max_tokens;
    const std::string reply(text::trim(gateway.complete(req).text));
    if (!reply.empty() && text::token_count(reply) <= limit)
      return SftRecord{source.id, source.image, source.prompt, source.source_text, reply};
  }
  return std::nullopt;
}

SftBatchResult run_sft_prep(const std::vector<SftSource>& sources, Gateway& gateway, const TemplateLibrary& lib,
                            const RefineOptions& options) {
  std::vector<std::optional<SftRecord>> results(sources.size());
  rethrow_first(parallel_for(sources.size(), options.concurrency, [&](std::size_t i) {
    results[i] = refine_reasoning_sample(sources[i], gateway, lib, options);
  }));
  SftBatchResult out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i]) out.records.push_back(std::move(*results[i]));
    else out.dropped_ids.push_back(sources[i].id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// RLAIF

std::optional<CaptionPair> parse_pair_line(std::string_view line) {
  const std::string_view t = text::trim(line);
  if (t.empty()) return std::nullopt;
  if (t.front() == '{') {
    Json j;
    try {
      j = Json::parse(t);
    } catch (const Json::exception& e) {
      throw DatasetError(std::string("malformed JSON pair: ") + e.what());
    }
    CaptionPair p;
    if (j.contains("image")) p.image = j["image"].get<std::string>();
    else if (j.contains("uri")) p.image = j["uri"].get<std::string>();
    else throw DatasetError("pair record without image");
    p.caption = j.value("caption", "");
    if (p.caption.empty()) throw DatasetError("pair record without caption");
    return p;
  }
  const auto tab = t.find('\t');
  if (tab == std::string_view::npos) throw DatasetError("pair line without a tab separator");
  CaptionPair p{std::string(text::trim(t.substr(0, tab))), std::string(text::trim(t.substr(tab + 1)))};
  if (p.image.empty() || p.caption.empty()) throw DatasetError("pair line with empty field");
  return p;
}

std::vector<std::string> propose_chains(const CaptionPair& pair, Gateway& gateway, const TemplateLibrary& lib,
                                        const ProposalOptions& options, const std::optional<ImageAttachment>& image) {
  if (options.k < 2) throw PreconditionError("propose_chains: k must be >= 2");
  std::string prompt = render_prompt(lib.get(template_ids::kRationaleGeneration), {});
  if (!image) prompt += "\nImage: " + pair.image;

  std::vector<std::string> chains;
  std::set<std::string> seen;
  const std::size_t max_draws = options.k + static_cast<std::size_t>(std::max(options.retries, 0));
  for (std::size_t draw = 0; draw < max_draws && chains.size() < options.k; ++draw) {
    ChatRequest req;
    req.model_id = options.model_id;
    req.messages = {ChatMessage{Role::User, prompt, image}};
    req.temperature = options.temperature;
    req.max_tokens = options.max_tokens;
    req.seed = derive_seed(options.rng_seed, "propose/" + pair.image + "/" + std::to_string(draw));
    std::string reply(text::trim(gateway.complete(req).text));
    if (reply.empty()) continue;
    if (seen.insert(text::normalize_for_compare(reply)).second) chains.push_back(std::move(reply));
  }
  if (chains.size() < options.k) throw ProposalFailure("degenerate proposals");
  return chains;
}

std::optional<Winner> parse_judge_reply(std::string_view reply) {
  std::string_view t = text::trim(reply);
  while (!t.empty() && (t.front() == '"' || t.front() == '\'' || t.front() == '*')) t.remove_prefix(1);
  const std::string w = text::first_word(t);
  if (w == "first") return Winner::First;
  if (w == "second") return Winner::Second;
  return std::nullopt;
}

PairVerdict judge_pair(const std::string& caption, const std::vector<std::string>& chains, int first_id, int second_id,
                       Gateway& gateway, const TemplateLibrary& lib, const JudgeOptions& options) {
  const auto n = static_cast<int>(chains.size());
  if (first_id < 0 || second_id < 0 || first_id >= n || second_id >= n)
    throw PreconditionError("judge_pair: chain id out of range");
  if (first_id == second_id || chains[static_cast<std::size_t>(first_id)] == chains[static_cast<std::size_t>(second_id)])
    throw PreconditionError("judge_pair: chains must be distinct");
  const std::string prompt = render_prompt(lib.get(template_ids::kJudgePair),
                                           {{"caption", caption},
                                            {"first", chains[static_cast<std::size_t>(first_id)]},
                                            {"second", chains[static_cast<std::size_t>(second_id)]}});
  std::string last;
  for (int attempt = 0; attempt <= options.retries; ++attempt) {
    ChatRequest req;
    req.model_id = options.judge_model;
    req.messages = {ChatMessage{Role::User, prompt, std::nullopt}};
    req.temperature = options.temperature;
    req.max_tokens = options.max_tokens;
    if (attempt > 0) req.seed = static_cast<std::uint64_t>(attempt);
    last = gateway.complete(req).text;
    if (auto w = parse_judge_reply(last)) return PairVerdict{first_id, second_id, *w, last};
  }
  throw VerdictUnparseable("judge reply not First/Second: '" + last.substr(0, 80) + "'");
}

RankOutcome rank_three(const std::vector<PairVerdict>& verdicts) {
  // winner[a][b]: winner id from the verdict that showed a first and b second
  std::array<std::array<int, 3>, 3> winner{};
  std::array<std::array<bool, 3>, 3> have{};
  for (const auto& v : verdicts) {
    if (v.first_id < 0 || v.first_id > 2 || v.second_id < 0 || v.second_id > 2 || v.first_id == v.second_id)
      throw PreconditionError("rank_three: verdict ids must be distinct chains 0..2");
    auto& slot = have[static_cast<std::size_t>(v.first_id)][static_cast<std::size_t>(v.second_id)];
    if (slot) throw PreconditionError("rank_three: repeated presentation order");
    slot = true;
    winner[static_cast<std::size_t>(v.first_id)][static_cast<std::size_t>(v.second_id)] = v.winner_id();
  }
  if (verdicts.size() != 6) throw PreconditionError("rank_three: need six verdicts (3 pairs x 2 orders)");

  std::array<int, 3> wins{};
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      if (winner[a][b] != winner[b][a]) return RankOutcome{false, {}, std::string(kOrderFlipConflict)};
      ++wins[static_cast<std::size_t>(winner[a][b])];
    }
  }
  // Three pairs form a transitive tournament iff the win counts are 2, 1, 0.
  std::array<int, 3> sorted = wins;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::array<int, 3>{0, 1, 2}) return RankOutcome{false, {}, std::string(kCycle)};
  RankOutcome r{true, {}, ""};
  for (int id = 0; id < 3; ++id) r.order[static_cast<std::size_t>(2 - wins[static_cast<std::size_t>(id)])] = id;
  return r;
}

Json preference_json(const PreferenceSample& s) {
  Json verdicts = Json::array();
  for (const auto& v : s.verdicts)
    verdicts.push_back({{"first_id", v.first_id},
                        {"second_id", v.second_id},
                        {"winner", v.winner == Winner::First ? "first" : "second"},
                        {"winner_id", v.winner_id()},
                        {"rationale", v.rationale}});
  Json outcome = s.outcome.ranked ? Json{{"kind", "ranked"}, {"order", s.outcome.order}}
                                  : Json{{"kind", "excluded"}, {"reason", s.outcome.reason}};
  return Json{{"image", s.image},
              {"caption", s.caption},
              {"chains", s.chains},
              {"verdicts", verdicts},
              {"outcome", outcome}};
}

Json conditional_rl_json(const ConditionalRLRecord& r) {
  return Json{{"image", r.image}, {"control_token", r.control_token}, {"chain", r.chain}};
}

std::vector<ConditionalRLRecord> emit_conditional_rl(const PreferenceSample& sample) {
  if (!sample.outcome.ranked) throw ExcludedSample("sample excluded: " + sample.outcome.reason);
  if (sample.chains.size() != 3) throw PreconditionError("emit_conditional_rl: need three chains");
  std::vector<ConditionalRLRecord> out;
  for (std::size_t rank = 0; rank < 3; ++rank) {
    const auto id = static_cast<std::size_t>(sample.outcome.order[rank]);
    out.push_back({sample.image, std::string(rank == 0 ? kGoodToken : kBadToken), sample.chains.at(id)});
  }
  return out;
}

PreferenceSample build_preference_sample(const CaptionPair& pair, Gateway& gateway, const TemplateLibrary& lib,
                                         const ProposalOptions& proposal, const JudgeOptions& judge,
                                         const std::optional<ImageAttachment>& image) {
  ProposalOptions p = proposal;
  p.k = 3;
  PreferenceSample s;
  s.image = pair.image;
  s.caption = pair.caption;
  s.chains = propose_chains(pair, gateway, lib, p, image);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      if (a != b) s.verdicts.push_back(judge_pair(pair.caption, s.chains, a, b, gateway, lib, judge));
  s.outcome = rank_three(s.verdicts);
  return s;
}

namespace {

struct RlaifProgress {
  std::size_t input_lines = 0;  // physical lines consumed
  RlaifStats stats;
  std::uintmax_t preferences_bytes = 0;
  std::uintmax_t conditional_bytes = 0;
  std::uintmax_t skipped_bytes = 0;
};

Json progress_json(const RlaifProgress& p) {
  const auto& s = p.stats;
  return Json{{"input_lines", p.input_lines},
              {"bytes", {{"preferences", p.preferences_bytes}, {"conditional_rl", p.conditional_bytes},
                         {"skipped", p.skipped_bytes}}},
              {"stats",
               {{"lines", s.lines}, {"ranked", s.ranked}, {"order_flip", s.order_flip}, {"cycle", s.cycle},
                {"skipped", s.skipped}, {"good", s.good}, {"bad", s.bad}}}};
}

RlaifProgress progress_from_json(const Json& j) {
  RlaifProgress p;
  p.input_lines = j.at("input_lines").get<std::size_t>();
  const auto& b = j.at("bytes");
  p.preferences_bytes = b.at("preferences").get<std::uintmax_t>();
  p.conditional_bytes = b.at("conditional_rl").get<std::uintmax_t>();
  p.skipped_bytes = b.at("skipped").get<std::uintmax_t>();
  const auto& s = j.at("stats");
  p.stats.lines = s.at("lines").get<std::size_t>();
  p.stats.ranked = s.at("ranked").get<std::size_t>();
  p.stats.order_flip = s.at("order_flip").get<std::size_t>();
  p.stats.cycle = s.at("cycle").get<std::size_t>();
  p.stats.skipped = s.at("skipped").get<std::size_t>();
  p.stats.good = s.at("good").get<std::size_t>();
  p.stats.bad = s.at("bad").get<std::size_t>();
  return p;
}

// Drops any partial batch a crashed run appended after its last checkpoint.
void truncate_to(const std::filesystem::path& path, std::uintmax_t size) {
  if (!std::filesystem::exists(path)) {
    if (size != 0) throw DatasetError(path.string() + " missing but checkpoint expects data");
    std::ofstream(path, std::ios::binary);
    return;
  }
  if (std::filesystem::file_size(path) < size) throw DatasetError(path.string() + " shorter than checkpoint");
  std::filesystem::resize_file(path, size);
}

struct LineOutcome {
  std::optional<PreferenceSample> sample;
  std::string skip_reason;
};

}  // namespace

RlaifStats run_rlaif(const std::filesystem::path& pairs, const std::filesystem::path& out_dir, Gateway& gateway,
                     const TemplateLibrary& lib, const RlaifOptions& options) {
  if (options.batch_size == 0) throw ConfigError("rlaif batch size must be >= 1");
  std::filesystem::create_directories(out_dir);
  const auto prefs_path = out_dir / "preferences.jsonl";
  const auto crl_path = out_dir / "conditional_rl.jsonl";
  const auto skipped_path = out_dir / "skipped.jsonl";
  const auto progress_path = out_dir / "progress.json";

  RlaifProgress prog;
  if (std::filesystem::exists(progress_path)) {
    try {
      prog = progress_from_json(Json::parse(read_file(progress_path)));
    } catch (const Json::exception& e) {
      throw DatasetError(progress_path.string() + ": " + e.what());
    }
  }
  truncate_to(prefs_path, prog.preferences_bytes);
  truncate_to(crl_path, prog.conditional_bytes);
  truncate_to(skipped_path, prog.skipped_bytes);

  std::ifstream in(pairs, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + pairs.string());
  std::string line;
  for (std::size_t i = 0; i < prog.input_lines; ++i)
    if (!std::getline(in, line)) throw DatasetError(pairs.string() + " is shorter than the checkpoint");

  std::ofstream prefs(prefs_path, std::ios::app | std::ios::binary);
  std::ofstream crl(crl_path, std::ios::app | std::ios::binary);
  std::ofstream skipped(skipped_path, std::ios::app | std::ios::binary);

  bool eof = false;
  while (!eof) {
    std::vector<std::pair<std::size_t, CaptionPair>> batch;  // (line number, pair)
    std::size_t consumed = 0;
    while (batch.size() < options.batch_size) {
      if (!std::getline(in, line)) {
        eof = true;
        break;
      }
      ++consumed;
      const std::size_t lineno = prog.input_lines + consumed;
      std::optional<CaptionPair> p;
      try {
        p = parse_pair_line(line);
      } catch (const DatasetError& e) {
        throw DatasetError(pairs.string() + ": line " + std::to_string(lineno) + ": " + e.what());
      }
      if (p) batch.emplace_back(lineno, std::move(*p));
    }
    if (consumed == 0) break;

    std::vector<LineOutcome> outcomes(batch.size());
    rethrow_first(parallel_for(batch.size(), options.concurrency, [&](std::size_t i) {
      const auto& pair = batch[i].second;
      try {
        std::optional<ImageAttachment> image;
        if (options.fetch_image) image = options.fetch_image(pair.image);
        outcomes[i].sample = build_preference_sample(pair, gateway, lib, options.proposal, options.judge, image);
      } catch (const ProposalFailure& e) {
        outcomes[i].skip_reason = e.what();
      } catch (const VerdictUnparseable& e) {
        outcomes[i].skip_reason = e.what();
      }
    }));

    for (std::size_t i = 0; i < batch.size(); ++i) {
      ++prog.stats.lines;
      const auto& o = outcomes[i];
      if (!o.sample) {
        ++prog.stats.skipped;
        skipped << Json{{"line", batch[i].first}, {"image", batch[i].second.image}, {"reason", o.skip_reason}}.dump()
                << '\n';
        continue;
      }
      prefs << preference_json(*o.sample).dump() << '\n';
      if (!o.sample->outcome.ranked) {
        if (o.sample->outcome.reason == kCycle) ++prog.stats.cycle;
        else ++prog.stats.order_flip;
        continue;
      }
      ++prog.stats.ranked;
      for (const auto& r : emit_conditional_rl(*o.sample)) {
        crl << conditional_rl_json(r).dump() << '\n';
        if (r.control_token == kGoodToken) ++prog.stats.good;
        else ++prog.stats.bad;
      }
    }
    prefs.flush();
    crl.flush();
    skipped.flush();
    if (!prefs || !crl || !skipped) throw Error("writing RLAIF outputs failed");
    prog.input_lines += consumed;
    prog.preferences_bytes = std::filesystem::file_size(prefs_path);
    prog.conditional_bytes = std::filesystem::file_size(crl_path);
    prog.skipped_bytes = std::filesystem::file_size(skipped_path);
    write_file_atomic(progress_path, progress_json(prog).dump(2) + "\n");
  }
  return prog.stats;
}

}  // namespace cotbench
