#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/model.hpp"
#include "cotbench/prediction.hpp"

namespace cotbench {

class MissingPrediction : public DataError {
 public:
  using DataError::DataError;
};
class DuplicatePrediction : public DataError {
 public:
  using DataError::DataError;
};
class UnexpectedPrediction : public DataError {
 public:
  using DataError::DataError;
};
class EmptyFilter : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

// Correctness bits of one sample: the high-level answer and each chain step.
struct SampleCorrectness {
  std::string sample_id;
  bool high = false;
  std::vector<bool> steps;

  // All chain steps answered correctly.
  bool chain_correct() const;
};

struct CorrectnessMatrix {
  std::vector<SampleCorrectness> rows;
};

CorrectnessMatrix score_predictions(const Dataset& dataset, const std::vector<PredictionRecord>& predictions);

// The five headline numbers, as percentages. Conditional consistencies are
// nullopt when their conditioning event never occurs.
struct ReportValues {
  double r_o = 0.0;
  double r_h = 0.0;
  double r_cot = 0.0;
  std::optional<double> c_b;
  std::optional<double> c_f;
};

struct MetricsReport {
  std::size_t n = 0;
  std::size_t sum_h = 0;   // high-level correct
  std::size_t sum_s = 0;   // whole chain correct
  std::size_t sum_hs = 0;  // both
  ReportValues values;
  std::vector<double> per_position;  // optional curve, percentages
};

MetricsReport compute_metrics(const CorrectnessMatrix& matrix);

inline constexpr double kExactIdentityTolerance = 1e-9;
// Published tables round every entry to two decimals.
inline constexpr double kPublishedIdentityTolerance = 0.015;

struct IdentityCheck {
  bool pass = true;
  // |C_b * R_h / 100 - R_o| and |C_f * R_cot / 100 - R_o|, in percentage
  // points; nullopt when the consistency value is undefined.
  std::optional<double> backward_residual;
  std::optional<double> forward_residual;
  double tolerance = kExactIdentityTolerance;
};

// C_b * R_h = 100 * R_o and C_f * R_cot = 100 * R_o, which follow from the
// metric definitions.
IdentityCheck validate_report_identities(const ReportValues& values, double tolerance);
inline IdentityCheck validate_report_identities(const MetricsReport& r) {
  return validate_report_identities(r.values, kExactIdentityTolerance);
}

// Accuracy (percent) at each chain position. With a filter only samples of
// exactly that chain length count; otherwise position k averages over samples
// with at least k steps.
std::vector<double> per_position_accuracy(const CorrectnessMatrix& matrix,
                                          std::optional<std::size_t> chain_length_filter = std::nullopt);

// Analytic expectation under independent uniform guessing over six options.
// C_b is the ratio of expectations E[h*s] / E[h].
ReportValues expected_random_baseline(const std::vector<std::size_t>& chain_lengths);
ReportValues expected_random_baseline(const Dataset& dataset);

std::vector<std::size_t> chain_lengths(const Dataset& dataset);

// One seeded uniform guesser over the given chain lengths.
CorrectnessMatrix simulate_uniform_guessing(const std::vector<std::size_t>& chain_lengths, std::uint64_t seed);

// Arithmetic mean of each metric; undefined consistencies are skipped.
ReportValues average_values(const std::vector<ReportValues>& values);

Json values_to_json(const ReportValues& v);
Json report_to_json(const MetricsReport& r);

// Fixed-width table with columns R_o R_h R_cot | C_b C_f, two decimals.
std::string render_table(const std::vector<std::pair<std::string, ReportValues>>& rows);

}  // namespace cotbench
