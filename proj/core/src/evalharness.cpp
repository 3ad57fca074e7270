#include "cotbench/evalharness.hpp"

#include <cctype>
#include <cmath>
#include <mutex>
#include <set>

#include "cotbench/dataset_io.hpp"
#include "cotbench/parallel.hpp"
#include "cotbench/rng.hpp"
#include "cotbench/text.hpp"

namespace cotbench {

RationaleMode parse_rationale_mode(std::string_view s) {
  if (s == "off") return RationaleMode::Off;
  if (s == "endpoint") return RationaleMode::Endpoint;
  if (s == "precomputed") return RationaleMode::Precomputed;
  throw ConfigError("unknown rationale mode '" + std::string(s) + "' (off|endpoint|precomputed)");
}

std::string_view rationale_mode_name(RationaleMode m) {
  switch (m) {
    case RationaleMode::Off: return "off";
    case RationaleMode::Endpoint: return "endpoint";
    case RationaleMode::Precomputed: return "precomputed";
  }
  return "off";
}

LetterMode parse_letter_mode(std::string_view s) {
  if (s == "token_scores") return LetterMode::TokenScores;
  if (s == "parse_letter") return LetterMode::ParseLetter;
  throw ConfigError("unknown letter mode '" + std::string(s) + "' (token_scores|parse_letter)");
}

std::string_view letter_mode_name(LetterMode m) {
  return m == LetterMode::TokenScores ? "token_scores" : "parse_letter";
}

void validate_config(const EvalConfig& c) {
  if (c.endpoint.has_value() == c.prediction_file.has_value())
    throw ConfigError("exactly one of endpoint and prediction file must be set");
  if (c.endpoint && c.model_id.empty()) throw ConfigError("model id required for endpoint evaluation");
  if (c.rationale_mode == RationaleMode::Precomputed && !c.rationale_file && c.rationales.empty())
    throw ConfigError("precomputed rationale mode needs a rationale file");
  if (c.burn_in.stroke_px <= 0) throw ConfigError("burn-in stroke must be positive");
  if (c.max_skip_fraction < 0.0 || c.max_skip_fraction > 1.0) throw ConfigError("max skip fraction outside [0,1]");
  if (c.concurrency == 0) throw ConfigError("concurrency must be >= 1");
}

std::map<std::string, std::string> load_rationales(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  for_each_jsonl(path, [&](std::size_t lineno, const Json& j) {
    try {
      out[j.at("sample_id").get<std::string>()] = j.at("rationale").get<std::string>();
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

std::string format_options(const CandidateSet& candidates) {
  std::string out;
  for (std::size_t i = 0; i < candidates.options.size(); ++i) {
    if (i) out += '\n';
    out += kOptionLetters[i];
    out += ". ";
    out += candidates.options[i];
  }
  return out;
}

std::vector<ChatMessage> build_mcq_prompt(const TemplateLibrary& lib, const std::string& question,
                                          const CandidateSet& candidates, const std::optional<std::string>& rationale,
                                          std::optional<ImageAttachment> image) {
  Bindings b{{"question", question}, {"options", format_options(candidates)}};
  std::string text;
  if (rationale) {
    b["rationale"] = *rationale;
    text = render_prompt(lib.get(template_ids::kEvalRationale), b);
  } else {
    text = render_prompt(lib.get(template_ids::kEvalPlain), b);
  }
  return {ChatMessage{Role::User, std::move(text), std::move(image)}};
}

std::optional<int> parse_letter(std::string_view reply) {
  const std::string_view t = text::trim(reply);
  const auto is_alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
  for (std::size_t i = 0; i < t.size(); ++i) {
    const char c = t[i];
    if (c < 'A' || c > 'F') continue;
    const bool left_ok = i == 0 || !is_alpha(t[i - 1]);
    const bool right_ok = i + 1 == t.size() || !is_alpha(t[i + 1]);
    if (left_ok && right_ok) return c - 'A';
  }
  return std::nullopt;
}

AnswerSelection select_answer(const ChatResponse& response, LetterMode mode) {
  AnswerSelection sel;
  if (mode == LetterMode::TokenScores) {
    if (!response.token_scores) throw MissingScores("response carries no token scores");
    bool any = false;
    for (const auto& [token, logprob] : *response.token_scores) {
      const std::string_view t = text::trim(token);
      if (t.size() != 1 || t[0] < 'A' || t[0] > 'F') continue;
      const auto idx = static_cast<std::size_t>(t[0] - 'A');
      // Tokenizers may list " B" and "B" separately; keep the more probable.
      sel.option_scores[idx] = std::max(sel.option_scores[idx], std::exp(logprob));
      any = true;
    }
    if (any) {
      sel.chosen_index = argmax_lowest(sel.option_scores);
      return sel;
    }
    // No letter among the top tokens: fall through to the reply text.
  }
  const auto letter = parse_letter(response.text);
  if (!letter) throw NoLetterFound("no option letter in reply: " + std::string(text::trim(response.text)).substr(0, 80));
  sel.option_scores = one_hot(*letter);
  sel.chosen_index = *letter;
  return sel;
}

ImageLoader default_image_loader(std::filesystem::path image_root) {
  return [root = std::move(image_root)](const ImageRef& ref) -> std::vector<std::uint8_t> {
    std::string uri = ref.uri;
    if (uri.starts_with("http://") || uri.starts_with("https://")) return http_get_bytes(uri);
    if (uri.starts_with("file://")) uri = uri.substr(7);
    std::filesystem::path p(uri);
    if (p.is_relative() && !root.empty()) p = root / p;
    const std::string data = read_file(p);
    return {data.begin(), data.end()};
  };
}

namespace {

struct SampleOutcome {
  std::vector<PredictionRecord> records;
  std::optional<std::string> failure;
};

std::optional<ImageAttachment> burned_image(const EvaluationSample& s, const EvalConfig& config,
                                            const ImageLoader& loader) {
  if (!config.attach_images) return std::nullopt;
  const auto bytes = loader(s.image);
  auto burned = burn_in_region(bytes, s.region, config.burn_in);
  std::string type = media_type(sniff_format(burned));
  return ImageAttachment{std::move(burned), std::move(type)};
}

PredictionRecord ask(Gateway& gateway, const EvalConfig& config, const std::string& sample_id, Target target,
                     std::vector<ChatMessage> messages, std::optional<std::string> rationale) {
  ChatRequest req;
  req.model_id = config.model_id;
  req.messages = std::move(messages);
  req.temperature = kJudgeTemperature;
  req.max_tokens = config.max_tokens;
  req.want_token_scores = config.letter_mode == LetterMode::TokenScores;
  req.seed = derive_seed(config.rng_seed, "eval/" + sample_id + "/" + target.str());
  const AnswerSelection sel = select_answer(gateway.complete(req), config.letter_mode);
  PredictionRecord p;
  p.sample_id = sample_id;
  p.target = target;
  p.option_scores = sel.option_scores;
  p.chosen_index = sel.chosen_index;
  p.model_id = config.model_id;
  p.rationale = std::move(rationale);
  return p;
}

std::string obtain_rationale(const EvaluationSample& s, const EvalConfig& config, Gateway& gateway,
                             const TemplateLibrary& lib, const std::optional<ImageAttachment>& image) {
  if (config.rationale_mode == RationaleMode::Precomputed) {
    auto it = config.rationales.find(s.sample_id);
    if (it == config.rationales.end()) throw DataError("no precomputed rationale for sample");
    return it->second;
  }
  ChatRequest req;
  req.model_id = config.rationale_model_id.empty() ? config.model_id : config.rationale_model_id;
  req.messages = {ChatMessage{Role::User, render_prompt(lib.get(template_ids::kRationaleGeneration), {}), image}};
  req.temperature = kJudgeTemperature;
  req.max_tokens = 512;
  req.seed = derive_seed(config.rng_seed, "rationale/" + s.sample_id);
  std::string reply(text::trim(gateway.complete(req).text));
  if (reply.empty()) throw DataError("empty rationale");
  return reply;
}

SampleOutcome evaluate_sample(const EvaluationSample& s, const EvalConfig& config, Gateway& gateway,
                              const TemplateLibrary& lib, const ImageLoader& loader) {
  SampleOutcome out;
  try {
    if (auto v = validate_sample(s); !v.empty()) throw DataError("invalid sample: " + v.front().str());
    const auto image = burned_image(s, config, loader);

    std::optional<std::string> rationale;
    if (config.rationale_mode != RationaleMode::Off) rationale = obtain_rationale(s, config, gateway, lib, image);
    out.records.push_back(ask(gateway, config, s.sample_id, Target::high(),
                              build_mcq_prompt(lib, s.high_level_question, s.high_level_candidates, rationale, image),
                              rationale));
    for (std::size_t k = 0; k < s.chain.length(); ++k) {
      const auto& step = s.chain.steps[k];
      out.records.push_back(ask(gateway, config, s.sample_id, Target::chain_step(static_cast<int>(k + 1)),
                                build_mcq_prompt(lib, step.text, step.candidates, std::nullopt, image), std::nullopt));
    }
  } catch (const FixtureMiss&) {
    throw;  // a replay gap is a configuration problem, not a bad sample
  } catch (const Error& e) {
    out.records.clear();
    out.failure = e.what();
  }
  return out;
}

}  // namespace

EvalResult evaluate_dataset(const Dataset& dataset, const EvalConfig& config, Gateway& gateway,
                            const TemplateLibrary& lib, ImageLoader loader) {
  EvalConfig cfg = config;
  if (!cfg.endpoint) cfg.endpoint = "";  // library callers pass a ready gateway
  cfg.prediction_file.reset();
  validate_config(cfg);
  if (cfg.rationale_mode == RationaleMode::Precomputed && cfg.rationale_file && cfg.rationales.empty())
    cfg.rationales = load_rationales(*cfg.rationale_file);
  if (!loader) loader = default_image_loader(cfg.image_root);

  std::vector<SampleOutcome> outcomes(dataset.samples.size());
  const auto errors = parallel_for(dataset.samples.size(), cfg.concurrency, [&](std::size_t i) {
    outcomes[i] = evaluate_sample(dataset.samples[i], cfg, gateway, lib, loader);
  });
  rethrow_first(errors);

  EvalResult result;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i].failure) {
      result.skipped.push_back({dataset.samples[i].sample_id, *outcomes[i].failure});
      continue;
    }
    for (auto& r : outcomes[i].records) result.predictions.push_back(std::move(r));
  }
  const double n = static_cast<double>(std::max<std::size_t>(dataset.samples.size(), 1));
  if (static_cast<double>(result.skipped.size()) > cfg.max_skip_fraction * n) {
    throw EvaluationAborted(std::to_string(result.skipped.size()) + " of " +
                            std::to_string(dataset.samples.size()) + " samples failed (first: " +
                            result.skipped.front().sample_id + ": " + result.skipped.front().reason + ")");
  }
  sort_predictions(result.predictions);
  return result;
}

EvalResult load_offline_predictions(const Dataset& dataset, const EvalConfig& config) {
  if (!config.prediction_file) throw ConfigError("no prediction file configured");
  std::set<std::string> ids;
  for (const auto& s : dataset.samples) ids.insert(s.sample_id);
  EvalResult result;
  for (auto& p : load_predictions(*config.prediction_file))
    if (ids.contains(p.sample_id)) result.predictions.push_back(std::move(p));
  sort_predictions(result.predictions);
  return result;
}

}  // namespace cotbench
