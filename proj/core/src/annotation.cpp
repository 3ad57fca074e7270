#include "cotbench/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "cotbench/dataset_io.hpp"
#include "cotbench/prediction.hpp"
#include "cotbench/rng.hpp"

namespace cotbench {

namespace {

std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

}  // namespace

IncompleteCampaign::IncompleteCampaign(std::vector<std::string> missing)
    : PreconditionError(std::to_string(missing.size()) + " task(s) without a verdict: " +
                        join(std::vector<std::string>(missing.begin(),
                                                      missing.begin() + static_cast<std::ptrdiff_t>(
                                                                            std::min<std::size_t>(missing.size(), 10))),
                             ", ")),
      missing_(std::move(missing)) {}

std::string Validity::reason() const {
  switch (kind) {
    case Kind::Valid: return "valid";
    case Kind::Failure: return detail;
    case Kind::Other: return "other: " + detail;
  }
  return "valid";
}

void to_json(Json& j, const Validity& v) {
  switch (v.kind) {
    case Validity::Kind::Valid: j = Json{{"kind", "valid"}}; break;
    case Validity::Kind::Failure: j = Json{{"kind", "failure"}, {"mode_id", v.detail}}; break;
    case Validity::Kind::Other: j = Json{{"kind", "other"}, {"text", v.detail}}; break;
  }
}

void from_json(const Json& j, Validity& v) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "valid") {
    v = Validity::valid();
  } else if (kind == "failure") {
    v = Validity::failure(j.at("mode_id").get<std::string>());
  } else if (kind == "other") {
    v = Validity::other(j.at("text").get<std::string>());
  } else {
    throw InvalidVerdict("unknown validity kind '" + kind + "'");
  }
}

void to_json(Json& j, const AnnotationVerdict& v) {
  j = Json{{"annotator_id", v.annotator_id},
           {"sample_id", v.sample_id},
           {"validity", v.validity},
           {"mcq_answers", v.mcq_answers}};
  if (v.duplicate_group) j["duplicate_group"] = *v.duplicate_group;
}

void from_json(const Json& j, AnnotationVerdict& v) {
  j.at("annotator_id").get_to(v.annotator_id);
  j.at("sample_id").get_to(v.sample_id);
  j.at("validity").get_to(v.validity);
  j.at("mcq_answers").get_to(v.mcq_answers);
  v.duplicate_group.reset();
  if (auto it = j.find("duplicate_group"); it != j.end() && !it->is_null()) {
    auto g = it->get<std::string>();
    if (!g.empty()) v.duplicate_group = std::move(g);
  }
}

Json leased_task_json(const LeasedTask& t) {
  return Json{{"task_id", t.task_id},
              {"campaign_id", t.campaign_id},
              {"sample_id", t.sample.sample_id},
              {"sample", t.sample},
              {"image_url", "/campaigns/" + t.campaign_id + "/images/" + t.sample.sample_id + ".png"},
              {"lease", {{"annotator_id", t.annotator_id}, {"expires_in_seconds", t.expires_in_seconds}}}};
}

// ---------------------------------------------------------------------------

RebalanceResult rebalance_groups(const std::vector<std::string>& kept, const std::vector<AnnotationVerdict>& verdicts,
                                 const RebalanceOptions& options) {
  std::map<std::string, std::map<std::string, std::size_t>> votes;  // sample -> label -> count
  for (const auto& v : verdicts)
    if (v.duplicate_group) ++votes[v.sample_id][*v.duplicate_group];

  std::map<std::string, std::string> label_of;
  for (const auto& [sample, counts] : votes) {
    // std::map iterates labels in order, so the first maximum is the smallest.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    label_of[sample] = best->first;
  }

  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& id : kept)
    if (auto it = label_of.find(id); it != label_of.end()) groups[it->second].push_back(id);

  RebalanceResult r;
  std::set<std::string> dropped;
  for (auto& [label, members] : groups) {
    r.sizes_before[label] = members.size();
    std::optional<double> fraction = options.default_fraction;
    if (auto it = options.fractions.find(label); it != options.fractions.end()) fraction = it->second;
    if (!fraction) {
      r.sizes_after[label] = members.size();
      continue;
    }
    if (*fraction < 0.0 || *fraction > 1.0) throw PreconditionError("group fraction outside [0,1] for " + label);
    // Guard against products like 0.3 * 10 landing just above an integer.
    const auto keep = std::min(
        members.size(),
        static_cast<std::size_t>(std::ceil(*fraction * static_cast<double>(members.size()) - 1e-9)));
    Rng rng(derive_seed(options.seed, "group/" + label));
    std::vector<std::string> order = members;
    rng.shuffle(std::span<std::string>(order));
    for (std::size_t i = keep; i < order.size(); ++i) dropped.insert(order[i]);
    r.sizes_after[label] = keep;
  }
  for (const auto& id : kept)
    if (!dropped.contains(id)) r.retained.push_back(id);
  return r;
}

CampaignSummary summarize_verdicts(const std::string& campaign_id, const Dataset& dataset,
                                   const std::vector<AnnotationVerdict>& verdicts, const RebalanceOptions& rebalance) {
  CampaignSummary s;
  s.campaign_id = campaign_id;

  std::map<std::string, std::vector<const AnnotationVerdict*>> by_sample;
  for (const auto& v : verdicts) by_sample[v.sample_id].push_back(&v);

  std::vector<std::string> kept;
  for (const auto& sample : dataset.samples) {
    ExclusionRecord ex{sample.sample_id, {}};
    for (const auto* v : by_sample[sample.sample_id])
      if (!v->validity.is_valid()) ex.reasons.push_back(v->annotator_id + ": " + v->validity.reason());
    if (ex.reasons.empty()) kept.push_back(sample.sample_id);
    else s.excluded.push_back(std::move(ex));
  }

  auto rb = rebalance_groups(kept, verdicts, rebalance);
  std::set<std::string> retained(rb.retained.begin(), rb.retained.end());
  for (const auto& id : kept)
    if (!retained.contains(id)) s.dropped_by_rebalance.push_back(id);
  s.kept = std::move(rb.retained);
  s.group_sizes_before = std::move(rb.sizes_before);
  s.group_sizes_after = std::move(rb.sizes_after);

  // Human performance: each annotator's MCQ answers on every sample they
  // answered, scored by the same code path as model predictions.
  std::map<std::string, std::pair<Dataset, std::vector<PredictionRecord>>> per;
  for (const auto& sample : dataset.samples) {
    const std::string& id = sample.sample_id;
    for (const auto* v : by_sample[id]) {
      auto& [ds, preds] = per[v->annotator_id];
      ds.samples.push_back(sample);
      for (std::size_t k = 0; k < v->mcq_answers.size(); ++k) {
        PredictionRecord p;
        p.sample_id = id;
        p.target = Target{static_cast<int>(k)};
        p.chosen_index = v->mcq_answers[k];
        p.option_scores = one_hot(p.chosen_index);
        p.model_id = "human:" + v->annotator_id;
        preds.push_back(std::move(p));
      }
    }
  }
  std::vector<ReportValues> values;
  for (const auto& [annotator, data] : per) {
    auto report = compute_metrics(score_predictions(data.first, data.second));
    values.push_back(report.values);
    s.per_annotator.emplace(annotator, std::move(report));
  }
  if (!values.empty()) s.human_average = average_values(values);
  return s;
}

Json summary_to_json(const CampaignSummary& s) {
  Json excluded = Json::array();
  for (const auto& e : s.excluded) excluded.push_back({{"sample_id", e.sample_id}, {"reasons", e.reasons}});
  Json per = Json::object();
  for (const auto& [a, r] : s.per_annotator) per[a] = report_to_json(r);
  return Json{{"campaign_id", s.campaign_id},
              {"kept", s.kept},
              {"excluded", excluded},
              {"dropped_by_rebalance", s.dropped_by_rebalance},
              {"per_annotator", per},
              {"human_average", s.human_average ? values_to_json(*s.human_average) : Json(nullptr)},
              {"group_sizes_before", s.group_sizes_before},
              {"group_sizes_after", s.group_sizes_after}};
}

// ---------------------------------------------------------------------------

CampaignStore::CampaignStore(std::shared_ptr<Clock> clock, std::optional<std::filesystem::path> journal)
    : clock_(std::move(clock)), journal_(std::move(journal)) {
  if (journal_ && std::filesystem::exists(*journal_)) replay_journal();
}

CampaignStore::Campaign& CampaignStore::campaign_locked(const std::string& id) {
  auto it = campaigns_.find(id);
  if (it == campaigns_.end()) throw UnknownCampaign("unknown campaign '" + id + "'");
  return it->second;
}

const CampaignStore::Campaign& CampaignStore::campaign_locked(const std::string& id) const {
  auto it = campaigns_.find(id);
  if (it == campaigns_.end()) throw UnknownCampaign("unknown campaign '" + id + "'");
  return it->second;
}

std::string CampaignStore::create_locked(const std::string& id, Dataset dataset, std::vector<std::string> annotators,
                                         std::size_t redundancy) {
  if (dataset.samples.empty()) throw PreconditionError("campaign needs at least one sample");
  if (annotators.empty()) throw PreconditionError("campaign needs at least one annotator");
  if (std::set<std::string>(annotators.begin(), annotators.end()).size() != annotators.size())
    throw PreconditionError("annotator ids must be distinct");
  if (redundancy == 0) throw PreconditionError("redundancy must be >= 1");
  if (redundancy > annotators.size())
    throw PreconditionError("redundancy " + std::to_string(redundancy) + " exceeds the " +
                            std::to_string(annotators.size()) + " annotators");
  Campaign c;
  c.id = id;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    if (!c.sample_index.emplace(dataset.samples[i].sample_id, i).second)
      throw PreconditionError("duplicate sample_id '" + dataset.samples[i].sample_id + "'");
  c.dataset = std::move(dataset);
  c.annotators = std::move(annotators);
  c.redundancy = redundancy;
  std::size_t n = 0;
  for (const auto& s : c.dataset.samples) {
    for (std::size_t r = 0; r < redundancy; ++r) {
      AnnotationTask t;
      t.task_id = id + "-t" + std::to_string(++n);
      t.campaign_id = id;
      t.sample_id = s.sample_id;
      task_index_[t.task_id] = {id, c.tasks.size()};
      c.tasks.push_back(std::move(t));
    }
  }
  campaigns_.emplace(id, std::move(c));
  return id;
}

std::string CampaignStore::create_campaign(Dataset dataset, std::vector<std::string> annotators,
                                           std::size_t redundancy) {
  std::lock_guard lock(mu_);
  const std::string id = "c" + std::to_string(next_campaign_);
  Json event{{"event", "create"}, {"campaign_id", id}, {"annotators", annotators}, {"redundancy", redundancy}};
  Json samples = Json::array();
  for (const auto& s : dataset.samples) samples.push_back(s);
  event["samples"] = std::move(samples);
  create_locked(id, std::move(dataset), std::move(annotators), redundancy);
  ++next_campaign_;
  append_journal(event);
  return id;
}

std::optional<LeasedTask> CampaignStore::lease_task(const std::string& campaign_id, const std::string& annotator_id,
                                                    double lease_seconds) {
  std::lock_guard lock(mu_);
  Campaign& c = campaign_locked(campaign_id);
  if (std::find(c.annotators.begin(), c.annotators.end(), annotator_id) == c.annotators.end())
    throw UnknownAnnotator("annotator '" + annotator_id + "' is not part of campaign " + campaign_id);
  if (!(lease_seconds > 0.0)) throw PreconditionError("lease_seconds must be positive");
  const auto now = clock_->now();
  const auto active = [&](const AnnotationTask& t) { return t.lease && t.lease->expiry > now; };

  std::set<std::string> touched;
  for (const auto& t : c.tasks) {
    if (t.verdict && t.verdict->annotator_id == annotator_id) touched.insert(t.sample_id);
    else if (!t.verdict && active(t) && t.lease->annotator_id == annotator_id) touched.insert(t.sample_id);
  }
  for (auto& t : c.tasks) {
    if (t.verdict || active(t) || touched.contains(t.sample_id)) continue;
    const auto dur = std::chrono::duration_cast<Clock::time_point::duration>(std::chrono::duration<double>(lease_seconds));
    t.lease = Lease{annotator_id, now + dur};
    return LeasedTask{t.task_id, c.id, c.dataset.samples[c.sample_index.at(t.sample_id)], annotator_id, lease_seconds};
  }
  return std::nullopt;
}

void CampaignStore::record_verdict_locked(Campaign& c, std::size_t task_index, const AnnotationVerdict& v) {
  AnnotationTask& t = c.tasks[task_index];
  t.verdict = v;
  t.lease.reset();
}

void CampaignStore::submit_verdict(const std::string& task_id, const AnnotationVerdict& v) {
  std::lock_guard lock(mu_);
  auto it = task_index_.find(task_id);
  if (it == task_index_.end()) throw UnknownTask("unknown task '" + task_id + "'");
  Campaign& c = campaign_locked(it->second.first);
  AnnotationTask& t = c.tasks[it->second.second];
  if (t.verdict) throw DuplicateSubmission("task " + task_id + " already has a verdict");
  if (!t.lease || t.lease->annotator_id != v.annotator_id || t.lease->expiry <= clock_->now())
    throw NoActiveLease("annotator '" + v.annotator_id + "' holds no active lease on task " + task_id);
  if (v.sample_id != t.sample_id)
    throw InvalidVerdict("verdict is for sample '" + v.sample_id + "' but task " + task_id + " is '" + t.sample_id + "'");
  const auto& sample = c.dataset.samples[c.sample_index.at(t.sample_id)];
  if (v.mcq_answers.size() != 1 + sample.chain.length())
    throw InvalidVerdict("expected " + std::to_string(1 + sample.chain.length()) + " mcq answers, got " +
                         std::to_string(v.mcq_answers.size()));
  for (int a : v.mcq_answers)
    if (a < 0 || a >= static_cast<int>(kOptionCount)) throw InvalidVerdict("mcq answer out of range [0,5]");
  if (v.validity.kind != Validity::Kind::Valid && v.validity.detail.empty())
    throw InvalidVerdict("non-valid verdict needs a mode id or text");
  record_verdict_locked(c, it->second.second, v);
  append_journal(Json{{"event", "verdict"}, {"task_id", task_id}, {"verdict", v}});
}

CampaignProgress CampaignStore::progress(const std::string& campaign_id) const {
  std::lock_guard lock(mu_);
  const Campaign& c = campaign_locked(campaign_id);
  const auto now = clock_->now();
  CampaignProgress p;
  p.tasks = c.tasks.size();
  for (const auto& t : c.tasks) {
    if (t.verdict) ++p.submitted;
    else if (t.lease && t.lease->expiry > now) ++p.leased;
    else ++p.open;
  }
  return p;
}

CampaignSummary CampaignStore::aggregate(const std::string& campaign_id, const RebalanceOptions& rebalance) const {
  Dataset dataset;
  std::vector<AnnotationVerdict> verdicts;
  {
    std::lock_guard lock(mu_);
    const Campaign& c = campaign_locked(campaign_id);
    std::vector<std::string> missing;
    for (const auto& t : c.tasks) {
      if (t.verdict) verdicts.push_back(*t.verdict);
      else missing.push_back(t.task_id);
    }
    if (!missing.empty()) throw IncompleteCampaign(std::move(missing));
    dataset = c.dataset;
  }
  return summarize_verdicts(campaign_id, dataset, verdicts, rebalance);
}

EvaluationSample CampaignStore::sample(const std::string& campaign_id, const std::string& sample_id) const {
  std::lock_guard lock(mu_);
  const Campaign& c = campaign_locked(campaign_id);
  auto it = c.sample_index.find(sample_id);
  if (it == c.sample_index.end()) throw PreconditionError("unknown sample '" + sample_id + "'");
  return c.dataset.samples[it->second];
}

std::vector<AnnotationTask> CampaignStore::tasks(const std::string& campaign_id) const {
  std::lock_guard lock(mu_);
  return campaign_locked(campaign_id).tasks;
}

std::vector<std::string> CampaignStore::campaign_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : campaigns_) out.push_back(id);
  return out;
}

void CampaignStore::append_journal(const Json& event) {
  if (!journal_) return;
  std::ofstream out(*journal_, std::ios::app | std::ios::binary);
  if (!out) throw Error("cannot append to journal " + journal_->string());
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw Error("write to journal " + journal_->string() + " failed");
}

void CampaignStore::replay_journal() {
  for_each_jsonl(*journal_, [&](std::size_t lineno, const Json& e) {
    try {
      const std::string kind = e.at("event").get<std::string>();
      if (kind == "create") {
        Dataset ds;
        for (const auto& s : e.at("samples")) ds.samples.push_back(s.get<EvaluationSample>());
        const std::string id = e.at("campaign_id").get<std::string>();
        create_locked(id, std::move(ds), e.at("annotators").get<std::vector<std::string>>(),
                      e.at("redundancy").get<std::size_t>());
        if (id.size() > 1 && id[0] == 'c') next_campaign_ = std::max(next_campaign_, std::stoul(id.substr(1)) + 1);
      } else if (kind == "verdict") {
        const auto& [cid, idx] = task_index_.at(e.at("task_id").get<std::string>());
        record_verdict_locked(campaigns_.at(cid), idx, e.at("verdict").get<AnnotationVerdict>());
      }
    } catch (const std::exception& ex) {
      throw DatasetError(journal_->string() + ": line " + std::to_string(lineno) + ": " + ex.what());
    }
  });
}

}  // namespace cotbench
