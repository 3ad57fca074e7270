#include "fixtures.hpp"

#include <fstream>
#include <random>
#include <regex>

#include "cotbench/prediction.hpp"

namespace cotbench::testing {

namespace fs = std::filesystem;

HttpReply ScriptedTransport::post_chat(const std::string& body) {
  ++*calls_;
  return handler_(Json::parse(body));
}

std::string request_text(const Json& request) {
  std::string out;
  for (const auto& m : request.at("messages")) {
    const Json& content = m.at("content");
    if (content.is_string()) {
      out += content.get<std::string>();
    } else {
      for (const auto& part : content)
        if (part.value("type", "") == "text") out += part.at("text").get<std::string>();
    }
    out += "\n";
  }
  return out;
}

bool request_has_image(const Json& request) {
  for (const auto& m : request.at("messages")) {
    const Json& content = m.at("content");
    if (!content.is_array()) continue;
    for (const auto& part : content)
      if (part.value("type", "") == "image_url") return true;
  }
  return false;
}

HttpReply reply_ok(const std::string& text, const std::optional<std::map<std::string, double>>& scores) {
  Json choice = {{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}};
  if (scores) {
    Json top = Json::array();
    for (const auto& [tok, lp] : *scores) top.push_back({{"token", tok}, {"logprob", lp}});
    choice["logprobs"] = {{"content", Json::array({Json{{"top_logprobs", top}}})}};
  }
  Json body = {{"id", "scripted"},
               {"choices", Json::array({choice})},
               {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 5}}}};
  return {200, body.dump()};
}

ScriptedGateway make_gateway(Handler handler, GatewayPolicy policy, std::optional<fs::path> cache_dir) {
  ScriptedGateway g;
  policy.backoff = std::chrono::milliseconds(0);
  g.gateway = std::make_unique<Gateway>(policy, std::make_unique<ScriptedTransport>(std::move(handler), g.calls),
                                        std::move(cache_dir));
  return g;
}

Clock::time_point FakeClock::now() {
  std::lock_guard lock(mu_);
  return now_;
}

void FakeClock::sleep_for(std::chrono::nanoseconds d) {
  std::lock_guard lock(mu_);
  now_ += d;
  slept_ += d;
}

void FakeClock::advance(std::chrono::nanoseconds d) {
  std::lock_guard lock(mu_);
  now_ += d;
}

std::chrono::nanoseconds FakeClock::slept() const {
  std::lock_guard lock(mu_);
  return slept_;
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          ("cotbench-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_text(const fs::path& p, const std::string& contents) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << contents;
}

// ---------------------------------------------------------------------------

namespace {

CandidateSet options_for(const std::string& prefix, int gold) {
  CandidateSet c;
  for (int k = 0; k < 6; ++k) c.options.push_back(prefix + " option " + std::to_string(k));
  c.gold_index = gold;
  return c;
}

}  // namespace

EvaluationSample make_sample(const std::string& id, std::size_t steps) {
  EvaluationSample s;
  s.sample_id = id;
  s.image = {"images/" + id + ".ppm", 64, 48};
  s.region = {8, 8, 24, 16};
  s.visual_clue = "clue for " + id;
  s.high_level_question = "What is most likely happening in " + id + "?";
  const int spread = static_cast<int>(std::hash<std::string>{}(id) % 6);
  s.high_level_candidates = options_for(id + " high", spread);
  for (std::size_t k = 1; k <= steps; ++k) {
    Subquestion q;
    q.text = "What is detail " + std::to_string(k) + " of " + id + "?";
    q.candidates = options_for(id + " step " + std::to_string(k), static_cast<int>((spread + k) % 6));
    s.chain.steps.push_back(std::move(q));
  }
  s.provenance.stage = "fixture";
  return s;
}

Dataset make_dataset(std::size_t n, std::size_t steps) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%03zu", i);
    d.samples.push_back(make_sample(id, steps));
  }
  return d;
}

std::vector<PredictionRecord> predictions_for(const EvaluationSample& sample, const std::vector<bool>& bits,
                                              const std::string& model) {
  std::vector<PredictionRecord> out;
  for (std::size_t t = 0; t <= sample.chain.length(); ++t) {
    const CandidateSet& c = t == 0 ? sample.high_level_candidates : sample.chain.steps[t - 1].candidates;
    const int chosen = bits.at(t) ? c.gold_index : (c.gold_index + 1) % 6;
    PredictionRecord p;
    p.sample_id = sample.sample_id;
    p.target = t == 0 ? Target::high() : Target::chain_step(static_cast<int>(t));
    p.option_scores = one_hot(chosen);
    p.chosen_index = chosen;
    p.model_id = model;
    out.push_back(p);
  }
  return out;
}

std::vector<PredictionRecord> oracle_predictions(const Dataset& dataset) {
  std::vector<PredictionRecord> out;
  for (const auto& s : dataset.samples) {
    auto p = predictions_for(s, std::vector<bool>(s.chain.length() + 1, true), "oracle");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<std::vector<bool>> truth_table_bits() {
  return {{true, true, true}, {true, true, false}, {false, true, true}, {false, false, false}};
}

CorrectnessMatrix truth_table_matrix() {
  CorrectnessMatrix m;
  const auto bits = truth_table_bits();
  for (std::size_t i = 0; i < bits.size(); ++i)
    m.rows.push_back({"S" + std::to_string(i + 1), bits[i][0], {bits[i][1], bits[i][2]}});
  return m;
}

Dataset truth_table_dataset() {
  Dataset d;
  for (int i = 1; i <= 4; ++i) d.samples.push_back(make_sample("S" + std::to_string(i), 2));
  return d;
}

// ---------------------------------------------------------------------------
// Pipeline corpus

namespace {

const char* kScenes[] = {
    "a cake with two lit candles in front of a little girl",
    "a man in a wet suit carrying a surfboard toward the water",
    "a row of umbrellas leaning against a cafe wall",
    "a dog wearing a red bandana sitting by a tent",
    "a chalkboard menu listing hot soups",
    "a child holding a kite string on a windy beach",
    "a bride and groom cutting a tall white cake",
    "snow piled on parked cars along a street",
    "a referee raising a yellow card",
    "boxes stacked next to an open moving truck",
};

const char* kInferences[] = {
    "The girl is turning two years old today.",
    "The man is about to go surfing.",
    "It has been raining recently.",
    "The family is camping for the weekend.",
    "The weather outside is cold.",
    "The child is flying a kite.",
    "The couple just got married.",
    "It snowed heavily overnight.",
    "A player committed a foul.",
    "Someone is moving into a new home.",
};

std::string seed_id(int i) {
  char id[16];
  std::snprintf(id, sizeof id, "seed-%02d", i);
  return id;
}

// Last "<label>..." line of a prompt, without the label.
std::string last_line_after(const std::string& text, const std::string& label) {
  const auto pos = text.rfind(label);
  if (pos == std::string::npos) return {};
  const auto start = pos + label.size();
  const auto end = text.find('\n', start);
  return text.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

std::string id_in(const std::string& s) {
  static const std::regex re("seed-[0-9][0-9]");
  std::smatch m;
  return std::regex_search(s, m, re) ? m.str() : std::string();
}

const std::vector<std::pair<std::string, std::string>>& mode_phrases() {
  static const std::vector<std::pair<std::string, std::string>> kPhrases = {
      {"FM1", "fail to form a consistent chain"},
      {"FM2", "have the same meaning as the human-annotated high-level inference"},
      {"FM3", "wrong or hallucinated"},
      {"FM4", "actually also a correct answer"},
      {"FM5", "without looking at the image"},
      {"FM6", "refer to things not present"},
  };
  return kPhrases;
}

}  // namespace

std::vector<SeedRecord> pipeline_seeds() {
  std::vector<SeedRecord> seeds;
  for (int i = 0; i < 20; ++i) {
    SeedRecord s;
    s.sample_id = seed_id(i);
    s.image = {"images/" + s.sample_id + ".ppm", 32, 24};
    s.region = {4 + i % 3, 3, 12, 10};
    s.visual_clue = std::string(kScenes[i % 10]) + " (" + s.sample_id + ")";
    if (i < 12) s.visual_clue += " [defect FM" + std::to_string(i / 2 + 1) + "]";
    s.high_level_inference = kInferences[i % 10];
    seeds.push_back(std::move(s));
  }
  return seeds;
}

std::string planted_mode(const std::string& sample_id) {
  const int i = std::stoi(sample_id.substr(sample_id.size() - 2));
  return i < 12 ? "FM" + std::to_string(i / 2 + 1) : std::string();
}

HttpReply pipeline_llm(const Json& request) {
  const std::string text = request_text(request);

  if (text.find("Write a reasoning chain of 1 to 6 subquestions") != std::string::npos) {
    const std::string id = id_in(last_line_after(text, "Visual clue: "));
    const int i = std::stoi(id.substr(5));
    // seed-13 first answers in prose, exercising the format-reminder retry.
    if (i == 13 && text.find("Format reminder") == std::string::npos)
      return reply_ok("Sure! The candles suggest a birthday.");
    std::string reply;
    const int steps = 1 + i % 3;
    for (int k = 1; k <= steps; ++k)
      reply += "Q" + std::to_string(k) + ": What is detail " + std::to_string(k) + " in " + id + "? A" +
               std::to_string(k) + ": Detail " + std::to_string(k) + " of " + id + "\n";
    return reply_ok(reply);
  }
  if (text.find("alternative inferences") != std::string::npos) {
    const std::string id = id_in(last_line_after(text, "Visual clue: "));
    std::string reply;
    for (int j = 1; j <= 5; ++j) reply += std::to_string(j) + ". Wrong inference " + std::to_string(j) + " for " + id + "\n";
    return reply_ok(reply);
  }
  if (text.find("alternative answers") != std::string::npos) {
    const std::string answer = last_line_after(text, "Correct answer: ");
    std::string reply;
    for (int j = 1; j <= 5; ++j) reply += "- " + answer + " decoy " + std::to_string(j) + "\n";
    return reply_ok(reply);
  }
  if (text.find("Think briefly") != std::string::npos) {
    const std::string clue = last_line_after(text, "Visual clue (human annotated): ");
    for (const auto& [mode, phrase] : mode_phrases()) {
      if (text.find(phrase) == std::string::npos) continue;
      if (clue.find("[defect " + mode + "]") != std::string::npos)
        return reply_ok("The item shows this problem.\nVerdict: Yes");
      return reply_ok("Nothing wrong here.\nNo");
    }
    return reply_ok("Unknown question.");
  }
  return {400, R"({"error":"unscripted prompt"})"};
}

// ---------------------------------------------------------------------------

Handler oracle_endpoint(const Dataset& dataset) {
  auto gold = std::make_shared<std::map<std::string, int>>();
  auto key_of = [](const std::string& question, const CandidateSet& c) {
    std::string k = question + "\nOptions:\n";
    for (std::size_t i = 0; i < c.options.size(); ++i) {
      if (i) k += "\n";
      k += std::string(1, static_cast<char>('A' + i)) + ". " + c.options[i];
    }
    return k;
  };
  for (const auto& s : dataset.samples) {
    (*gold)[key_of(s.high_level_question, s.high_level_candidates)] = s.high_level_candidates.gold_index;
    for (const auto& q : s.chain.steps) (*gold)[key_of(q.text, q.candidates)] = q.candidates.gold_index;
  }
  return [gold](const Json& request) -> HttpReply {
    const std::string text = request_text(request);
    const auto q = text.find("Question: ");
    const auto end = text.find("\nAnswer with");
    if (q == std::string::npos || end == std::string::npos) return reply_ok("I see a highlighted region.");
    const auto it = gold->find(text.substr(q + 10, end - q - 10));
    if (it == gold->end()) return {400, R"({"error":"unknown question"})"};
    const std::string letter(1, static_cast<char>('A' + it->second));
    std::map<std::string, double> scores;
    for (char c = 'A'; c <= 'F'; ++c) scores[std::string(1, c)] = std::string(1, c) == letter ? -0.05 : -4.0;
    return reply_ok(letter, scores);
  };
}

Raster reference_burn_in_raster() {
  static const char* kGrid[10] = {
      "..........",
      "..........",
      "..RRRRR...",
      "..R...R...",
      "..R...R...",
      "..RRRRR...",
      "..........",
      "..........",
      "..........",
      "..........",
  };
  Raster r(10, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x)
      if (kGrid[y][x] == 'R') r.set(x, y, {255, 0, 0});
  return r;
}

std::pair<std::string, std::string> judged_chains(const std::string& prompt) {
  const std::string a = "First chain:\n", b = "\n\nSecond chain:\n", c = "\n\nJudge which";
  const auto p1 = prompt.find(a), p2 = prompt.find(b), p3 = prompt.find(c);
  if (p1 == std::string::npos || p2 == std::string::npos || p3 == std::string::npos) return {};
  return {prompt.substr(p1 + a.size(), p2 - p1 - a.size()), prompt.substr(p2 + b.size(), p3 - p2 - b.size())};
}

HttpReply preference_llm(const Json& request) {
  const std::string text = request_text(request);
  if (text.find("First chain:") != std::string::npos) {
    const auto [first, second] = judged_chains(text);
    const std::hash<std::string> h;
    return reply_ok(h(first) > h(second) ? "First" : "Second");
  }
  if (text.find("reason step by step") != std::string::npos) {
    const auto img = text.find("Image: ");
    const std::string image = img == std::string::npos ? "attached" : text.substr(img + 7, text.find('\n', img) - img - 7);
    return reply_ok("Chain " + std::to_string(request.value("seed", std::uint64_t{0})) + " about " + image);
  }
  return {400, R"({"error":"unscripted"})"};
}

}  // namespace cotbench::testing
