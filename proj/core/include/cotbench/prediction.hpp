#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cotbench/model.hpp"

namespace cotbench {

// Which question of a sample a prediction answers: the high-level question
// (step == 0) or chain step `step` (1-based).
struct Target {
  int step = 0;

  static Target high() { return {0}; }
  static Target chain_step(int k) { return {k}; }
  bool is_high() const { return step == 0; }
  std::string str() const { return is_high() ? "high" : "step " + std::to_string(step); }
  auto operator<=>(const Target&) const = default;
};

struct PredictionRecord {
  std::string sample_id;
  Target target;
  std::array<double, kOptionCount> option_scores{};
  int chosen_index = 0;
  std::string model_id;
  std::optional<std::string> rationale;

  bool operator==(const PredictionRecord&) const = default;
};

// Index of the largest score; ties go to the lowest index.
int argmax_lowest(const std::array<double, kOptionCount>& scores);

std::array<double, kOptionCount> one_hot(int index);

void to_json(Json& j, const PredictionRecord& p);
void from_json(const Json& j, PredictionRecord& p);

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);
void save_predictions(const std::vector<PredictionRecord>& preds, const std::filesystem::path& path);

// Sorts by (sample_id, target), the canonical on-disk order.
void sort_predictions(std::vector<PredictionRecord>& preds);

}  // namespace cotbench
