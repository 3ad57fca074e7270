#include "cotbench/prediction.hpp"

#include <algorithm>

#include "cotbench/dataset_io.hpp"

namespace cotbench {

int argmax_lowest(const std::array<double, kOptionCount>& scores) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(kOptionCount); ++i)
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
  return best;
}

std::array<double, kOptionCount> one_hot(int index) {
  std::array<double, kOptionCount> s{};
  s.at(static_cast<std::size_t>(index)) = 1.0;
  return s;
}

void to_json(Json& j, const PredictionRecord& p) {
  j = Json{{"sample_id", p.sample_id},
           {"target", p.target.is_high() ? Json("high") : Json{{"step", p.target.step}}},
           {"option_scores", p.option_scores},
           {"chosen_index", p.chosen_index},
           {"model_id", p.model_id}};
  if (p.rationale) j["rationale"] = *p.rationale;
}

void from_json(const Json& j, PredictionRecord& p) {
  j.at("sample_id").get_to(p.sample_id);
  const Json& t = j.at("target");
  if (t.is_string()) {
    if (t.get<std::string>() != "high") throw DatasetError("unknown target " + t.dump());
    p.target = Target::high();
  } else {
    p.target = Target::chain_step(t.at("step").get<int>());
    if (p.target.step < 1) throw DatasetError("step target must be >= 1");
  }
  const auto scores = j.at("option_scores").get<std::vector<double>>();
  if (scores.size() != kOptionCount) throw DatasetError("option_scores must hold 6 values");
  std::copy(scores.begin(), scores.end(), p.option_scores.begin());
  j.at("chosen_index").get_to(p.chosen_index);
  if (p.chosen_index != argmax_lowest(p.option_scores))
    throw DatasetError("chosen_index " + std::to_string(p.chosen_index) + " is not the argmax of option_scores");
  p.model_id = j.value("model_id", "");
  if (auto it = j.find("rationale"); it != j.end() && !it->is_null()) p.rationale = it->get<std::string>();
  else p.rationale.reset();
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::vector<PredictionRecord> out;
  for_each_jsonl(path, [&](std::size_t lineno, const Json& j) {
    try {
      out.push_back(j.get<PredictionRecord>());
    } catch (const Json::exception& e) {
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DatasetError& e) {
      throw DatasetError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

void save_predictions(const std::vector<PredictionRecord>& preds, const std::filesystem::path& path) {
  std::string out;
  for (const auto& p : preds) out += Json(p).dump() + "\n";
  write_file_atomic(path, out);
}

void sort_predictions(std::vector<PredictionRecord>& preds) {
  std::stable_sort(preds.begin(), preds.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
    return a.target < b.target;
  });
}

}  // namespace cotbench
