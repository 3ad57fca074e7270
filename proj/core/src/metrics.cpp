#include "cotbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include "cotbench/rng.hpp"

namespace cotbench {

bool SampleCorrectness::chain_correct() const {
  return std::all_of(steps.begin(), steps.end(), [](bool b) { return b; });
}

CorrectnessMatrix score_predictions(const Dataset& dataset, const std::vector<PredictionRecord>& predictions) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) index.emplace(dataset.samples[i].sample_id, i);

  // seen[i][k]: target k (0 = high) of sample i already scored
  std::vector<std::vector<char>> seen(dataset.samples.size());
  CorrectnessMatrix m;
  m.rows.resize(dataset.samples.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    seen[i].assign(s.chain.length() + 1, 0);
    m.rows[i].sample_id = s.sample_id;
    m.rows[i].steps.assign(s.chain.length(), false);
  }

  for (const auto& p : predictions) {
    auto it = index.find(p.sample_id);
    if (it == index.end()) throw UnexpectedPrediction("prediction for unknown sample '" + p.sample_id + "'");
    const std::size_t i = it->second;
    const auto& s = dataset.samples[i];
    const auto k = static_cast<std::size_t>(p.target.step);
    if (k > s.chain.length())
      throw UnexpectedPrediction("sample '" + p.sample_id + "' has no " + p.target.str());
    if (seen[i][k]) throw DuplicatePrediction("duplicate prediction for ('" + p.sample_id + "', " + p.target.str() + ")");
    seen[i][k] = 1;
    if (p.target.is_high()) {
      m.rows[i].high = p.chosen_index == s.high_level_candidates.gold_index;
    } else {
      m.rows[i].steps[k - 1] = p.chosen_index == s.chain.steps[k - 1].candidates.gold_index;
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    for (std::size_t k = 0; k < seen[i].size(); ++k)
      if (!seen[i][k])
        throw MissingPrediction("missing prediction for ('" + dataset.samples[i].sample_id + "', " +
                                Target{static_cast<int>(k)}.str() + ")");
  return m;
}

MetricsReport compute_metrics(const CorrectnessMatrix& matrix) {
  if (matrix.rows.empty()) throw PreconditionError("compute_metrics: no samples");
  MetricsReport r;
  r.n = matrix.rows.size();
  for (const auto& row : matrix.rows) {
    const bool s = row.chain_correct();
    r.sum_h += row.high ? 1 : 0;
    r.sum_s += s ? 1 : 0;
    r.sum_hs += (row.high && s) ? 1 : 0;
  }
  const auto pct = [](std::size_t num, std::size_t den) {
    return 100.0 * static_cast<double>(num) / static_cast<double>(den);
  };
  r.values.r_h = pct(r.sum_h, r.n);
  r.values.r_cot = pct(r.sum_s, r.n);
  r.values.r_o = pct(r.sum_hs, r.n);
  if (r.sum_s > 0) r.values.c_f = pct(r.sum_hs, r.sum_s);
  if (r.sum_h > 0) r.values.c_b = pct(r.sum_hs, r.sum_h);
  r.per_position = per_position_accuracy(matrix);
  return r;
}

IdentityCheck validate_report_identities(const ReportValues& v, double tolerance) {
  IdentityCheck c;
  c.tolerance = tolerance;
  if (v.c_b) {
    c.backward_residual = std::abs(*v.c_b * v.r_h / 100.0 - v.r_o);
    c.pass = c.pass && *c.backward_residual <= tolerance;
  }
  if (v.c_f) {
    c.forward_residual = std::abs(*v.c_f * v.r_cot / 100.0 - v.r_o);
    c.pass = c.pass && *c.forward_residual <= tolerance;
  }
  return c;
}

std::vector<double> per_position_accuracy(const CorrectnessMatrix& matrix, std::optional<std::size_t> filter) {
  std::vector<std::size_t> correct, total;
  std::size_t retained = 0;
  for (const auto& row : matrix.rows) {
    if (filter && row.steps.size() != *filter) continue;
    ++retained;
    if (row.steps.size() > total.size()) {
      total.resize(row.steps.size(), 0);
      correct.resize(row.steps.size(), 0);
    }
    for (std::size_t k = 0; k < row.steps.size(); ++k) {
      ++total[k];
      correct[k] += row.steps[k] ? 1 : 0;
    }
  }
  if (filter && retained == 0)
    throw EmptyFilter("no samples with chain length " + std::to_string(*filter));
  std::vector<double> out(total.size());
  for (std::size_t k = 0; k < total.size(); ++k)
    out[k] = 100.0 * static_cast<double>(correct[k]) / static_cast<double>(total[k]);
  return out;
}

std::vector<std::size_t> chain_lengths(const Dataset& dataset) {
  std::vector<std::size_t> out;
  out.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) out.push_back(s.chain.length());
  return out;
}

ReportValues expected_random_baseline(const std::vector<std::size_t>& lengths) {
  if (lengths.empty()) throw PreconditionError("expected_random_baseline: empty dataset");
  constexpr double p = 1.0 / static_cast<double>(kOptionCount);
  double chain = 0.0;  // mean of p^M
  for (std::size_t m : lengths) chain += std::pow(p, static_cast<double>(m));
  chain /= static_cast<double>(lengths.size());
  ReportValues v;
  v.r_h = 100.0 * p;
  v.r_cot = 100.0 * chain;
  v.r_o = 100.0 * chain * p;  // high-level guess independent of the chain
  v.c_f = 100.0 * p;
  v.c_b = 100.0 * (chain * p) / p;
  return v;
}

ReportValues expected_random_baseline(const Dataset& dataset) { return expected_random_baseline(chain_lengths(dataset)); }

CorrectnessMatrix simulate_uniform_guessing(const std::vector<std::size_t>& lengths, std::uint64_t seed) {
  Rng rng(seed);
  CorrectnessMatrix m;
  m.rows.reserve(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    SampleCorrectness row;
    row.sample_id = std::to_string(i);
    // Gold position is irrelevant under a uniform guess; compare against 0.
    row.high = rng.below(kOptionCount) == 0;
    row.steps.resize(lengths[i]);
    for (std::size_t k = 0; k < lengths[i]; ++k) row.steps[k] = rng.below(kOptionCount) == 0;
    m.rows.push_back(std::move(row));
  }
  return m;
}

ReportValues average_values(const std::vector<ReportValues>& values) {
  if (values.empty()) throw PreconditionError("average_values: nothing to average");
  ReportValues out;
  double cb = 0.0, cf = 0.0;
  std::size_t ncb = 0, ncf = 0;
  for (const auto& v : values) {
    out.r_o += v.r_o;
    out.r_h += v.r_h;
    out.r_cot += v.r_cot;
    if (v.c_b) {
      cb += *v.c_b;
      ++ncb;
    }
    if (v.c_f) {
      cf += *v.c_f;
      ++ncf;
    }
  }
  const auto n = static_cast<double>(values.size());
  out.r_o /= n;
  out.r_h /= n;
  out.r_cot /= n;
  if (ncb) out.c_b = cb / static_cast<double>(ncb);
  if (ncf) out.c_f = cf / static_cast<double>(ncf);
  return out;
}

Json values_to_json(const ReportValues& v) {
  return Json{{"R_o", v.r_o},
              {"R_h", v.r_h},
              {"R_cot", v.r_cot},
              {"C_b", v.c_b ? Json(*v.c_b) : Json(nullptr)},
              {"C_f", v.c_f ? Json(*v.c_f) : Json(nullptr)}};
}

Json report_to_json(const MetricsReport& r) {
  Json j = values_to_json(r.values);
  j["N"] = r.n;
  j["sum_h"] = r.sum_h;
  j["sum_s"] = r.sum_s;
  j["sum_hs"] = r.sum_hs;
  j["per_position"] = r.per_position;
  return j;
}

std::string render_table(const std::vector<std::pair<std::string, ReportValues>>& rows) {
  std::size_t name_w = 5;
  for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size());
  auto cell = [](std::optional<double> v) {
    char buf[32];
    if (!v) return std::string("    n/a");
    std::snprintf(buf, sizeof buf, "%7.2f", *v);
    return std::string(buf);
  };
  auto pad = [name_w](const std::string& s) { return s + std::string(name_w - s.size(), ' '); };
  std::string out = pad("Model") + " |     R_o     R_h   R_cot |     C_b     C_f\n";
  out += std::string(name_w, '-') + "-+-------------------------+----------------\n";
  for (const auto& [name, v] : rows) {
    out += pad(name) + " | " + cell(v.r_o) + " " + cell(v.r_h) + " " + cell(v.r_cot) + " | " + cell(v.c_b) + " " +
           cell(v.c_f) + "\n";
  }
  return out;
}

}  // namespace cotbench
