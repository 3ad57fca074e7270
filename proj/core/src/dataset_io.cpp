#include "cotbench/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cotbench/text.hpp"

namespace cotbench {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void for_each_jsonl(const fs::path& path, const std::function<void(std::size_t, const Json&)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    fn(lineno, j);
  }
}

Dataset load_dataset(const fs::path& path) {
  Dataset ds;
  std::unordered_set<std::string> ids;
  for_each_jsonl(path, [&](std::size_t lineno, const Json& j) {
    EvaluationSample s;
    try {
      j.get_to(s);
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!ids.insert(s.sample_id).second)
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": duplicate sample_id '" +
                         s.sample_id + "'");
    ds.samples.push_back(std::move(s));
  });
  if (ds.samples.empty()) throw DatasetError(path.string() + ": no samples");
  return ds;
}

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& s : dataset.samples) {
    out += Json(s).dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& dataset, const fs::path& path) {
  std::unordered_set<std::string> ids;
  for (const auto& s : dataset.samples)
    if (!ids.insert(s.sample_id).second) throw DatasetError("duplicate sample_id '" + s.sample_id + "'");
  write_file_atomic(path, dataset_to_jsonl(dataset));
}

// ---------------------------------------------------------------------------
// Released-layout import

namespace {

const Json* find_any(const Json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    auto it = j.find(k);
    if (it != j.end() && !it->is_null()) return &*it;
  }
  return nullptr;
}

int answer_index(const Json& answer, const std::vector<std::string>& options) {
  if (answer.is_number_integer()) return answer.get<int>();
  if (answer.is_string()) {
    const std::string a(text::trim(answer.get<std::string>()));
    if (a.size() == 1 && a[0] >= 'A' && a[0] <= 'F') return a[0] - 'A';
    if (a.size() == 1 && a[0] >= 'a' && a[0] <= 'f') return a[0] - 'a';
    for (std::size_t i = 0; i < options.size(); ++i)
      if (text::normalize_for_compare(options[i]) == text::normalize_for_compare(a)) return static_cast<int>(i);
  }
  throw DatasetError("unrecognised answer " + answer.dump());
}

std::vector<std::string> read_options(const Json& j) {
  const Json* opts = find_any(j, {"options", "candidates", "choices", "answer_choices", "inferences"});
  if (!opts) throw DatasetError("record has no options");
  std::vector<std::string> out;
  if (opts->is_object()) {
    // {"A": "...", "B": "..."} keyed by letter
    for (char letter : kOptionLetters) {
      auto it = opts->find(std::string(1, letter));
      if (it != opts->end()) out.push_back(it->get<std::string>());
    }
  } else {
    for (const auto& o : *opts) out.push_back(o.is_string() ? o.get<std::string>() : o.dump());
  }
  return out;
}

void read_mcq(const Json& j, std::string& question, CandidateSet& c, const char* default_question) {
  const Json* q = find_any(j, {"question", "high_level_question", "q", "text"});
  question = q ? q->get<std::string>() : std::string(default_question);
  c.options = read_options(j);
  const Json* a = find_any(j, {"gold_index", "answer_index", "label", "answer", "gold", "correct"});
  if (!a) throw DatasetError("record has no gold answer");
  c.gold_index = answer_index(*a, c.options);
}

Region read_region(const Json& j) {
  const Json* r = find_any(j, {"region", "bbox", "bboxes", "box", "boxes"});
  if (!r) throw DatasetError("record has no region");
  auto from_box = [](const Json& b) {
    if (b.is_array()) {
      return Region{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
    }
    if (b.contains("x")) return b.get<Region>();
    if (b.contains("left")) {
      return Region{b.at("left").get<int>(), b.at("top").get<int>(), b.at("width").get<int>(),
                    b.at("height").get<int>()};
    }
    if (b.contains("x1")) {
      const int x1 = b.at("x1").get<int>(), y1 = b.at("y1").get<int>();
      return Region{x1, y1, b.at("x2").get<int>() - x1, b.at("y2").get<int>() - y1};
    }
    throw DatasetError("unrecognised box " + b.dump());
  };
  const bool list_of_boxes = r->is_array() && !r->empty() && !(*r)[0].is_number();
  if (!list_of_boxes) return from_box(*r);
  // Several clue boxes: use their union.
  Region u = from_box((*r)[0]);
  for (std::size_t i = 1; i < r->size(); ++i) {
    const Region b = from_box((*r)[i]);
    const int x2 = std::max(u.x + u.w, b.x + b.w), y2 = std::max(u.y + u.h, b.y + b.h);
    u.x = std::min(u.x, b.x);
    u.y = std::min(u.y, b.y);
    u.w = x2 - u.x;
    u.h = y2 - u.y;
  }
  return u;
}

}  // namespace

EvaluationSample import_released_record(const Json& j, std::size_t ordinal) {
  static const std::set<std::string, std::less<>> kConsumed = {
      "sample_id", "id", "instance_id", "image", "image_url", "image_path", "img", "url",
      "width", "height", "image_width", "image_height", "region", "bbox", "bboxes", "box", "boxes",
      "visual_clue", "clue", "high_level", "question", "high_level_question", "options", "candidates",
      "choices", "answer_choices", "inferences", "gold_index", "answer_index", "label", "answer",
      "gold", "correct", "chain", "cot", "subquestions", "sub_questions", "reasoning_chain", "provenance"};

  if (j.contains("high_level") && j.contains("chain") && j.contains("sample_id")) return j.get<EvaluationSample>();

  EvaluationSample s;
  const Json* id = find_any(j, {"sample_id", "id", "instance_id"});
  s.sample_id = id ? (id->is_string() ? id->get<std::string>() : id->dump()) : "sample-" + std::to_string(ordinal);

  const Json* img = find_any(j, {"image", "image_url", "image_path", "img", "url"});
  if (!img) throw DatasetError("record " + s.sample_id + " has no image");
  if (img->is_object()) {
    const Json* u = find_any(*img, {"uri", "url", "path"});
    s.image.uri = u ? u->get<std::string>() : "";
    if (const Json* w = find_any(*img, {"width_px", "width"})) s.image.width_px = w->get<int>();
    if (const Json* h = find_any(*img, {"height_px", "height"})) s.image.height_px = h->get<int>();
  } else {
    s.image.uri = img->get<std::string>();
  }
  if (const Json* w = find_any(j, {"width", "image_width"})) s.image.width_px = w->get<int>();
  if (const Json* h = find_any(j, {"height", "image_height"})) s.image.height_px = h->get<int>();

  s.region = read_region(j);
  if (s.image.width_px <= 0 || s.image.height_px <= 0) {
    // Size not recorded: the smallest image that contains the region.
    s.image.width_px = std::max(s.image.width_px, s.region.x + s.region.w);
    s.image.height_px = std::max(s.image.height_px, s.region.y + s.region.h);
    s.extra["image_size_inferred"] = true;
  }

  if (const Json* clue = find_any(j, {"visual_clue", "clue"})) s.visual_clue = clue->get<std::string>();

  static constexpr const char* kDefaultHigh = "Which of the following is the most likely inference about the region?";
  if (const Json* hl = find_any(j, {"high_level"}); hl && hl->is_object()) {
    read_mcq(*hl, s.high_level_question, s.high_level_candidates, kDefaultHigh);
  } else {
    read_mcq(j, s.high_level_question, s.high_level_candidates, kDefaultHigh);
  }

  const Json* chain = find_any(j, {"chain", "cot", "subquestions", "sub_questions", "reasoning_chain"});
  if (!chain || !chain->is_array()) throw DatasetError("record " + s.sample_id + " has no reasoning chain");
  for (const auto& step : *chain) {
    Subquestion q;
    read_mcq(step, q.text, q.candidates, "");
    s.chain.steps.push_back(std::move(q));
  }

  if (const Json* p = find_any(j, {"provenance"})) p->get_to(s.provenance);
  if (s.provenance.stage.empty()) s.provenance.stage = "imported";
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!kConsumed.contains(it.key())) s.extra[it.key()] = *it;
  return s;
}

Dataset import_released(const fs::path& path) {
  const std::string body = read_file(path);
  const std::string_view trimmed = text::trim(body);
  Dataset ds;
  std::unordered_set<std::string> ids;
  auto add = [&](const Json& rec, std::size_t ordinal) {
    EvaluationSample s;
    try {
      s = import_released_record(rec, ordinal);
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": record " + std::to_string(ordinal) + ": " + e.what());
    }
    if (!ids.insert(s.sample_id).second) throw DatasetError(path.string() + ": duplicate sample_id '" + s.sample_id + "'");
    ds.samples.push_back(std::move(s));
  };
  if (!trimmed.empty() && (trimmed.front() == '[' || (trimmed.front() == '{' && trimmed.find('\n') == std::string_view::npos))) {
    Json all;
    try {
      all = Json::parse(trimmed);
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": malformed JSON: " + e.what());
    }
    if (all.is_object()) {
      // {"<id>": record, ...}
      std::size_t i = 0;
      for (auto it = all.begin(); it != all.end(); ++it, ++i) {
        Json rec = *it;
        if (!rec.contains("sample_id") && !rec.contains("id")) rec["sample_id"] = it.key();
        add(rec, i);
      }
    } else {
      for (std::size_t i = 0; i < all.size(); ++i) add(all[i], i);
    }
  } else {
    for_each_jsonl(path, [&](std::size_t lineno, const Json& rec) { add(rec, lineno - 1); });
  }
  if (ds.samples.empty()) throw DatasetError(path.string() + ": no samples");
  return ds;
}

}  // namespace cotbench
