#include "cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "cotbench/annotation.hpp"
#include "cotbench/dataset_io.hpp"
#include "cotbench/digest.hpp"
#include "cotbench/evalharness.hpp"
#include "cotbench/filterstage.hpp"
#include "cotbench/genstage.hpp"
#include "cotbench/metrics.hpp"
#include "cotbench/rng.hpp"
#include "cotbench/stats.hpp"
#include "cotbench/text.hpp"
#include "cotbench/traindata.hpp"
#include "cotbench/version.hpp"

namespace fs = std::filesystem;

namespace cotbench::cli {

Environment process_environment() {
  Environment env;
  for (const char* name : {"COTBENCH_LLM_URL", "COTBENCH_API_KEY"})
    if (const char* v = std::getenv(name)) env.vars[name] = v;
  env.make_transport = [](const std::string& url, const std::string& key) -> std::unique_ptr<Transport> {
    return std::make_unique<HttpTransport>(url, key);
  };
  env.clock = std::make_shared<SystemClock>();
  env.out = &std::cout;
  env.err = &std::cerr;
  return env;
}

namespace {

struct Common {
  std::string manifest = "cotbench-manifest.jsonl";
  std::uint64_t rng_seed = 0;
  std::size_t concurrency = 4;
  std::string templates;  // overlay directory
  std::string endpoint;
  std::string cache_dir;
  std::string cache_mode = "off";
  int max_retries = 3;
  int backoff_ms = 500;
  double rate_limit = 0.0;
  std::size_t max_in_flight = 4;
};

// Files read and written by a run, for the manifest.
struct RunFiles {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

std::unique_ptr<Gateway> make_gateway(const Common& c, Environment& env) {
  GatewayPolicy policy;
  policy.max_retries = c.max_retries;
  policy.backoff = std::chrono::milliseconds(c.backoff_ms);
  policy.rate_limit = c.rate_limit;
  policy.max_in_flight = c.max_in_flight;
  policy.cache_mode = parse_cache_mode(c.cache_mode);
  if (policy.cache_mode != CacheMode::Off && c.cache_dir.empty())
    throw ConfigError("cache mode '" + c.cache_mode + "' needs --cache-dir");
  std::optional<fs::path> cache;
  if (!c.cache_dir.empty() && policy.cache_mode != CacheMode::Off) cache = c.cache_dir;

  std::unique_ptr<Transport> transport;
  if (policy.cache_mode != CacheMode::Replay) {
    std::string url = c.endpoint;
    if (url.empty())
      if (auto it = env.vars.find("COTBENCH_LLM_URL"); it != env.vars.end()) url = it->second;
    if (url.empty()) throw ConfigError("no LLM endpoint: pass --endpoint or set COTBENCH_LLM_URL");
    std::string key;
    if (auto it = env.vars.find("COTBENCH_API_KEY"); it != env.vars.end()) key = it->second;
    transport = env.make_transport(url, key);
  }
  return std::make_unique<Gateway>(policy, std::move(transport), cache, env.clock);
}

TemplateLibrary load_templates(const Common& c) {
  auto lib = TemplateLibrary::builtin();
  if (!c.templates.empty()) {
    if (!fs::is_directory(c.templates)) throw ConfigError("template directory not found: " + c.templates);
    lib.overlay_directory(c.templates);
  }
  return lib;
}

void require_file(const std::string& path, std::string_view what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

Rgb parse_color(const std::string& s) {
  static const std::map<std::string, Rgb> named{
      {"red", {255, 0, 0}}, {"green", {0, 255, 0}}, {"blue", {0, 0, 255}},
      {"yellow", {255, 255, 0}}, {"black", {0, 0, 0}}, {"white", {255, 255, 255}}};
  if (auto it = named.find(text::to_lower(s)); it != named.end()) return it->second;
  if (s.size() == 7 && s[0] == '#') {
    try {
      const auto v = std::stoul(s.substr(1), nullptr, 16);
      return {static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("bad color '" + s + "' (name or #rrggbb)");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      std::string t(text::trim(cur));
      if (!t.empty()) out.push_back(std::move(t));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<Json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  write_file_atomic(path, out);
}

std::string file_digest(const std::string& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return "";
  return sha256_hex(read_file(path));
}

void append_manifest(const Common& c, const std::string& subcommand, const std::vector<std::string>& argv,
                     const std::string& effective_config, const RunFiles& files, int status) {
  if (c.manifest.empty()) return;
  Json inputs = Json::object();
  for (const auto& p : files.inputs) inputs[p] = file_digest(p);
  Json outputs = Json::object();
  for (const auto& p : files.outputs) outputs[p] = file_digest(p);
  const Json entry{{"tool", "cotbench"},
                   {"version", kVersion},
                   {"subcommand", subcommand},
                   {"argv", argv},
                   {"config", effective_config},
                   {"config_sha256", sha256_hex(effective_config)},
                   {"rng_seed", c.rng_seed},
                   {"inputs", inputs},
                   {"outputs", outputs},
                   {"exit_status", status}};
  std::ofstream out(c.manifest, std::ios::app | std::ios::binary);
  out << entry.dump() << '\n';
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

}  // namespace

int run(const std::vector<std::string>& args, Environment& env) {
  std::ostream& out = env.out ? *env.out : std::cout;
  std::ostream& err = env.err ? *env.err : std::cerr;

  CLI::App app("Benchmark toolkit for chain-of-thought visual abductive reasoning", "cotbench");
  app.set_config("--config", "", "INI config file; command-line flags take precedence");
  app.allow_config_extras(false);
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common c;
  app.add_option("--manifest", c.manifest, "Run manifest to append to (empty disables)");
  app.add_option("--rng-seed", c.rng_seed, "Base seed for every random draw");
  app.add_option("--concurrency", c.concurrency, "Parallel items per stage")->check(CLI::PositiveNumber);
  app.add_option("--templates", c.templates, "Directory of <id>.txt prompt overrides");
  app.add_option("--endpoint", c.endpoint, "Chat-completions base URL (default: $COTBENCH_LLM_URL)");
  app.add_option("--cache-dir", c.cache_dir, "Response cache directory");
  app.add_option("--cache-mode", c.cache_mode, "off | rw | replay");
  app.add_option("--max-retries", c.max_retries, "Retries on 429/5xx")->check(CLI::NonNegativeNumber);
  app.add_option("--backoff-ms", c.backoff_ms, "Initial retry backoff")->check(CLI::NonNegativeNumber);
  app.add_option("--rate-limit", c.rate_limit, "Requests per second (0 = unlimited)");
  app.add_option("--max-in-flight", c.max_in_flight, "Concurrent upstream requests")->check(CLI::PositiveNumber);

  RunFiles files;
  std::function<int()> action;
  std::string subcommand;

  // generate ---------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Generate chains and candidates from seed records");
  std::string gen_seeds, gen_output;
  GenerationOptions gen_opts;
  gen->add_option("--seeds", gen_seeds, "Seed JSONL")->required();
  gen->add_option("--output", gen_output, "Dataset JSONL to write")->required();
  gen->add_option("--model", gen_opts.model_id, "Generator model");
  gen->add_option("--temperature", gen_opts.temperature, "Sampling temperature");
  gen->add_option("--max-tokens", gen_opts.max_tokens);
  gen->add_option("--parse-retries", gen_opts.parse_retries);
  gen->callback([&] {
    subcommand = "generate";
    action = [&] {
      require_file(gen_seeds, "seed file");
      files.inputs.push_back(gen_seeds);
      gen_opts.concurrency = c.concurrency;
      gen_opts.rng_seed = c.rng_seed;
      auto gateway = make_gateway(c, env);
      const auto lib = load_templates(c);
      const auto result = run_generation(load_seeds(gen_seeds), *gateway, lib, gen_opts);
      save_dataset(result.dataset, gen_output);
      files.outputs.push_back(gen_output);
      if (!result.failures.empty()) {
        std::vector<Json> rows;
        for (const auto& f : result.failures) rows.push_back({{"sample_id", f.sample_id}, {"reason", f.reason}});
        write_jsonl(gen_output + ".failures.jsonl", rows);
        files.outputs.push_back(gen_output + ".failures.jsonl");
      }
      out << "generated " << result.dataset.size() << " samples, " << result.failures.size() << " failed\n";
      if (result.dataset.samples.empty()) throw DataError("no samples generated");
      return kExitOk;
    };
  });

  // filter -----------------------------------------------------------------
  auto* filt = app.add_subcommand("filter", "Run the failure-mode filtering campaign");
  std::string filt_input, filt_output, filt_modes = "FM1,FM2,FM3,FM4,FM5,FM6", filt_registry, filt_checkpoint,
                                       filt_report;
  FilterOptions filt_opts;
  filt->add_option("--input", filt_input, "Dataset JSONL")->required();
  filt->add_option("--output", filt_output, "Filtered dataset JSONL")->required();
  filt->add_option("--modes", filt_modes, "Comma-separated mode ids, applied in order");
  filt->add_option("--mode-registry", filt_registry, "Directory of mode definitions (replaces built-ins)");
  filt->add_option("--judge-model", filt_opts.judge_model);
  filt->add_option("--max-unparseable", filt_opts.max_unparseable_fraction, "Abort threshold per round");
  filt->add_option("--checkpoint-dir", filt_checkpoint, "Persist completed rounds here");
  filt->add_option("--report", filt_report, "Campaign report JSON (default: <output>.report.json)");
  filt->callback([&] {
    subcommand = "filter";
    action = [&] {
      require_file(filt_input, "dataset");
      files.inputs.push_back(filt_input);
      const auto lib = load_templates(c);
      std::vector<FailureMode> available =
          filt_registry.empty() ? builtin_failure_modes(lib) : load_mode_registry(filt_registry);
      std::vector<FailureMode> modes;
      for (const auto& id : split_list(filt_modes)) {
        auto it = std::find_if(available.begin(), available.end(), [&](const FailureMode& m) { return m.mode_id == id; });
        if (it == available.end()) throw ConfigError("unknown failure mode '" + id + "'");
        modes.push_back(*it);
      }
      if (modes.empty()) throw ConfigError("no failure modes selected");
      filt_opts.concurrency = c.concurrency;
      auto gateway = make_gateway(c, env);
      std::optional<fs::path> ckpt;
      if (!filt_checkpoint.empty()) ckpt = filt_checkpoint;
      const auto result = run_filter_campaign(load_dataset(filt_input), modes, *gateway, filt_opts, ckpt);
      save_dataset(result.final_dataset, filt_output);
      const std::string report = filt_report.empty() ? filt_output + ".report.json" : filt_report;
      write_file_atomic(report, campaign_report_json(result).dump(2) + "\n");
      files.outputs.insert(files.outputs.end(), {filt_output, report});
      for (const auto& r : result.rounds)
        out << "round " << r.round << " " << r.mode_id << ": " << r.input_count << " in, " << r.removed_count
            << " removed, " << r.unparseable << " unparseable" << (r.resumed ? " (resumed)" : "") << "\n";
      out << "kept " << result.final_dataset.size() << " samples\n";
      return kExitOk;
    };
  });

  // verify -----------------------------------------------------------------
  auto* verify = app.add_subcommand("verify", "Human verification service");
  verify->require_subcommand(1);
  auto* serve = verify->add_subcommand("serve", "Serve the annotation HTTP API until interrupted");
  std::string sv_host = "127.0.0.1", sv_journal, sv_image_root, sv_color = "red", sv_dataset, sv_annotators,
              sv_port_file;
  int sv_port = 8080, sv_stroke = 3;
  std::size_t sv_redundancy = 3;
  serve->add_option("--host", sv_host);
  serve->add_option("--port", sv_port, "0 picks a free port");
  serve->add_option("--journal", sv_journal, "Campaign journal (JSONL); replayed on start");
  serve->add_option("--image-root", sv_image_root, "Base directory for relative image URIs");
  serve->add_option("--stroke", sv_stroke, "Region outline width in pixels")->check(CLI::PositiveNumber);
  serve->add_option("--color", sv_color, "Region outline color");
  serve->add_option("--dataset", sv_dataset, "Create a campaign for this dataset on start");
  serve->add_option("--annotators", sv_annotators, "Comma-separated annotator ids for --dataset");
  serve->add_option("--redundancy", sv_redundancy, "Annotators per sample for --dataset");
  serve->add_option("--port-file", sv_port_file, "Write the bound port here");
  serve->callback([&] {
    subcommand = "verify serve";
    action = [&] {
      std::optional<fs::path> journal;
      if (!sv_journal.empty()) journal = sv_journal;
      CampaignStore store(env.clock, journal);
      if (!sv_dataset.empty()) {
        require_file(sv_dataset, "dataset");
        files.inputs.push_back(sv_dataset);
        const auto annotators = split_list(sv_annotators);
        if (annotators.empty()) throw ConfigError("--dataset needs --annotators");
        out << "created campaign " << store.create_campaign(load_dataset(sv_dataset), annotators, sv_redundancy)
            << "\n";
      }
      ServerOptions so;
      so.image_root = sv_image_root;
      so.burn_in = BurnInStyle{parse_color(sv_color), sv_stroke};
      AnnotationServer server(store, so);
      const int port = server.bind(sv_host, sv_port);
      if (!sv_port_file.empty()) write_file_atomic(sv_port_file, std::to_string(port) + "\n");
      out << "listening on http://" << sv_host << ":" << port << std::endl;
      g_stop = false;
      auto prev_int = std::signal(SIGINT, on_signal);
      auto prev_term = std::signal(SIGTERM, on_signal);
      std::thread worker([&] { server.serve(); });
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      worker.join();
      std::signal(SIGINT, prev_int);
      std::signal(SIGTERM, prev_term);
      return kExitOk;
    };
  });

  auto* agg = verify->add_subcommand("aggregate", "Summarise a finished campaign from its journal");
  std::string ag_journal, ag_campaign, ag_output, ag_kept;
  std::optional<double> ag_default_fraction;
  std::vector<std::string> ag_fractions;
  agg->add_option("--journal", ag_journal, "Campaign journal written by verify serve")->required();
  agg->add_option("--campaign", ag_campaign, "Campaign id")->required();
  agg->add_option("--output", ag_output, "Summary JSON")->required();
  agg->add_option("--kept-output", ag_kept, "Write the verified dataset here");
  agg->add_option("--default-fraction", ag_default_fraction, "Keep this fraction of every duplicate group");
  agg->add_option("--fraction", ag_fractions, "Per-group fraction, label=value (repeatable)");
  agg->callback([&] {
    subcommand = "verify aggregate";
    action = [&] {
      require_file(ag_journal, "journal");
      files.inputs.push_back(ag_journal);
      CampaignStore store(env.clock, fs::path(ag_journal));
      RebalanceOptions rb;
      rb.seed = derive_seed(c.rng_seed, "rebalance");
      rb.default_fraction = ag_default_fraction;
      for (const auto& f : ag_fractions) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw ConfigError("--fraction expects label=value, got '" + f + "'");
        try {
          rb.fractions[f.substr(0, eq)] = std::stod(f.substr(eq + 1));
        } catch (const std::exception&) {
          throw ConfigError("bad fraction value in '" + f + "'");
        }
      }
      const auto summary = store.aggregate(ag_campaign, rb);
      write_file_atomic(ag_output, summary_to_json(summary).dump(2) + "\n");
      files.outputs.push_back(ag_output);
      if (!ag_kept.empty()) {
        Dataset kept;
        for (const auto& id : summary.kept) {
          auto s = store.sample(ag_campaign, id);
          s.provenance.stage = "verified";
          s.provenance.verification = "human";
          kept.samples.push_back(std::move(s));
        }
        save_dataset(kept, ag_kept);
        files.outputs.push_back(ag_kept);
      }
      out << "kept " << summary.kept.size() << ", excluded " << summary.excluded.size() << ", dropped by rebalancing "
          << summary.dropped_by_rebalance.size() << "\n";
      if (summary.human_average) out << render_table({{"Human", *summary.human_average}});
      return kExitOk;
    };
  });

  // evaluate ---------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "Query a model on every question of a dataset");
  std::string ev_dataset, ev_output, ev_predictions_in, ev_rationale_mode = "off", ev_rationale_file,
                                     ev_letter_mode = "token_scores", ev_color = "red", ev_image_root;
  EvalConfig ev_cfg;
  bool ev_no_images = false;
  ev->add_option("--dataset", ev_dataset, "Dataset JSONL")->required();
  ev->add_option("--output", ev_output, "Prediction JSONL to write")->required();
  ev->add_option("--model", ev_cfg.model_id, "Model id sent to the endpoint");
  ev->add_option("--predictions-in", ev_predictions_in, "Offline prediction file instead of an endpoint");
  ev->add_option("--rationale-mode", ev_rationale_mode, "off | endpoint | precomputed");
  ev->add_option("--rationale-file", ev_rationale_file, "JSONL of {sample_id, rationale}");
  ev->add_option("--rationale-model", ev_cfg.rationale_model_id, "Model producing rationales");
  ev->add_option("--letter-mode", ev_letter_mode, "token_scores | parse_letter");
  ev->add_option("--stroke", ev_cfg.burn_in.stroke_px, "Region outline width")->check(CLI::PositiveNumber);
  ev->add_option("--color", ev_color, "Region outline color");
  ev->add_option("--image-root", ev_image_root, "Base directory for relative image URIs");
  ev->add_flag("--no-images", ev_no_images, "Send text only");
  ev->add_option("--max-skip", ev_cfg.max_skip_fraction, "Abort when more samples fail");
  ev->add_option("--max-tokens", ev_cfg.max_tokens);
  ev->callback([&] {
    subcommand = "evaluate";
    action = [&] {
      require_file(ev_dataset, "dataset");
      files.inputs.push_back(ev_dataset);
      const Dataset dataset = load_dataset(ev_dataset);
      ev_cfg.rationale_mode = parse_rationale_mode(ev_rationale_mode);
      ev_cfg.letter_mode = parse_letter_mode(ev_letter_mode);
      ev_cfg.burn_in.color = parse_color(ev_color);
      ev_cfg.image_root = ev_image_root;
      ev_cfg.attach_images = !ev_no_images;
      ev_cfg.rng_seed = c.rng_seed;
      ev_cfg.concurrency = c.concurrency;
      if (!ev_rationale_file.empty()) {
        require_file(ev_rationale_file, "rationale file");
        files.inputs.push_back(ev_rationale_file);
        ev_cfg.rationale_file = ev_rationale_file;
      }
      EvalResult result;
      if (!ev_predictions_in.empty()) {
        if (!c.endpoint.empty()) throw ConfigError("--predictions-in and --endpoint are mutually exclusive");
        require_file(ev_predictions_in, "prediction file");
        files.inputs.push_back(ev_predictions_in);
        ev_cfg.prediction_file = ev_predictions_in;
        validate_config(ev_cfg);
        result = load_offline_predictions(dataset, ev_cfg);
      } else {
        auto gateway = make_gateway(c, env);
        ev_cfg.endpoint = c.endpoint.empty() ? std::string("default") : c.endpoint;
        validate_config(ev_cfg);
        result = evaluate_dataset(dataset, ev_cfg, *gateway, load_templates(c));
      }
      save_predictions(result.predictions, ev_output);
      files.outputs.push_back(ev_output);
      if (!result.skipped.empty()) {
        std::vector<Json> rows;
        for (const auto& s : result.skipped) rows.push_back({{"sample_id", s.sample_id}, {"reason", s.reason}});
        write_jsonl(ev_output + ".skipped.jsonl", rows);
        files.outputs.push_back(ev_output + ".skipped.jsonl");
      }
      out << "wrote " << result.predictions.size() << " predictions, skipped " << result.skipped.size()
          << " samples\n";
      return kExitOk;
    };
  });

  // metrics ----------------------------------------------------------------
  auto* met = app.add_subcommand("metrics", "Score predictions and report the five metrics");
  std::string met_dataset, met_predictions, met_output, met_label;
  std::optional<std::size_t> met_length;
  met->add_option("--dataset", met_dataset, "Dataset JSONL")->required();
  met->add_option("--predictions", met_predictions, "Prediction JSONL")->required();
  met->add_option("--output", met_output, "Report JSON");
  met->add_option("--label", met_label, "Row label (default: model id)");
  met->add_option("--chain-length", met_length, "Per-position curve over chains of this length only");
  met->callback([&] {
    subcommand = "metrics";
    action = [&] {
      require_file(met_dataset, "dataset");
      require_file(met_predictions, "prediction file");
      files.inputs.insert(files.inputs.end(), {met_dataset, met_predictions});
      const auto preds = load_predictions(met_predictions);
      const auto matrix = score_predictions(load_dataset(met_dataset), preds);
      auto report = compute_metrics(matrix);
      if (met_length) report.per_position = per_position_accuracy(matrix, met_length);
      const auto check = validate_report_identities(report);
      std::string label = met_label;
      if (label.empty()) label = preds.empty() ? "model" : preds.front().model_id;
      out << render_table({{label, report.values}});
      out << "N=" << report.n << ", identities " << (check.pass ? "hold" : "VIOLATED") << "\n";
      if (!met_output.empty()) {
        Json j{{"label", label}, {"report", report_to_json(report)}, {"identities_hold", check.pass}};
        if (met_length) j["chain_length_filter"] = *met_length;
        write_file_atomic(met_output, j.dump(2) + "\n");
        files.outputs.push_back(met_output);
      }
      return kExitOk;
    };
  });

  // stats ------------------------------------------------------------------
  auto* st = app.add_subcommand("stats", "Dataset statistics");
  std::string st_dataset, st_output;
  st->add_option("--dataset", st_dataset, "Dataset JSONL")->required();
  st->add_option("--output", st_output, "Statistics JSON");
  st->callback([&] {
    subcommand = "stats";
    action = [&] {
      require_file(st_dataset, "dataset");
      files.inputs.push_back(st_dataset);
      const Json j = stats_to_json(compute_stats(load_dataset(st_dataset)));
      out << j.dump(2) << "\n";
      if (!st_output.empty()) {
        write_file_atomic(st_output, j.dump(2) + "\n");
        files.outputs.push_back(st_output);
      }
      return kExitOk;
    };
  });

  // import -----------------------------------------------------------------
  auto* imp = app.add_subcommand("import", "Convert a released dataset file into dataset JSONL");
  std::string imp_input, imp_output;
  imp->add_option("--input", imp_input, "Released JSON / JSONL")->required();
  imp->add_option("--output", imp_output, "Dataset JSONL")->required();
  imp->callback([&] {
    subcommand = "import";
    action = [&] {
      require_file(imp_input, "input");
      files.inputs.push_back(imp_input);
      const auto ds = import_released(imp_input);
      save_dataset(ds, imp_output);
      files.outputs.push_back(imp_output);
      std::size_t invalid = 0;
      for (const auto& s : ds.samples) invalid += validate_sample(s).empty() ? 0 : 1;
      out << "imported " << ds.size() << " samples, " << invalid << " with schema violations\n";
      return kExitOk;
    };
  });

  // sft-prep ---------------------------------------------------------------
  auto* sft = app.add_subcommand("sft-prep", "Refine conversational reasoning samples into SFT records");
  std::string sft_input, sft_output;
  RefineOptions sft_opts;
  sft->add_option("--input", sft_input, "Conversation JSON or JSONL")->required();
  sft->add_option("--output", sft_output, "SFT JSONL")->required();
  sft->add_option("--model", sft_opts.model_id);
  sft->callback([&] {
    subcommand = "sft-prep";
    action = [&] {
      require_file(sft_input, "input");
      files.inputs.push_back(sft_input);
      sft_opts.concurrency = c.concurrency;
      auto gateway = make_gateway(c, env);
      const auto result = run_sft_prep(load_sft_sources(sft_input), *gateway, load_templates(c), sft_opts);
      std::vector<Json> rows;
      for (const auto& r : result.records) rows.push_back(sft_output_json(r));
      write_jsonl(sft_output, rows);
      files.outputs.push_back(sft_output);
      out << "refined " << result.records.size() << ", dropped " << result.dropped_ids.size() << "\n";
      return kExitOk;
    };
  });

  // rlaif ------------------------------------------------------------------
  auto* rl = app.add_subcommand("rlaif", "Build preference and conditional-RL records from image-caption pairs");
  std::string rl_pairs, rl_out, rl_image_root;
  RlaifOptions rl_opts;
  rl->add_option("--pairs", rl_pairs, "TSV (uri<TAB>caption) or JSONL")->required();
  rl->add_option("--output-dir", rl_out, "Output directory (resumable)")->required();
  rl->add_option("--proposer-model", rl_opts.proposal.model_id);
  rl->add_option("--judge-model", rl_opts.judge.judge_model);
  rl->add_option("--batch-size", rl_opts.batch_size)->check(CLI::PositiveNumber);
  rl->add_option("--image-root", rl_image_root, "Attach images resolved against this directory");
  rl->callback([&] {
    subcommand = "rlaif";
    action = [&] {
      require_file(rl_pairs, "pair file");
      files.inputs.push_back(rl_pairs);
      rl_opts.concurrency = c.concurrency;
      rl_opts.proposal.rng_seed = c.rng_seed;
      if (!rl_image_root.empty()) {
        auto loader = default_image_loader(rl_image_root);
        rl_opts.fetch_image = [loader](const std::string& uri) -> std::optional<ImageAttachment> {
          auto bytes = loader(ImageRef{uri, 0, 0});
          std::string type = media_type(sniff_format(bytes));
          return ImageAttachment{std::move(bytes), std::move(type)};
        };
      }
      auto gateway = make_gateway(c, env);
      const auto s = run_rlaif(rl_pairs, rl_out, *gateway, load_templates(c), rl_opts);
      for (const char* f : {"preferences.jsonl", "conditional_rl.jsonl", "skipped.jsonl"})
        files.outputs.push_back((fs::path(rl_out) / f).string());
      out << "lines " << s.lines << ": ranked " << s.ranked << ", order-flip " << s.order_flip << ", cycle "
          << s.cycle << ", skipped " << s.skipped << "; <Good> " << s.good << ", <Bad> " << s.bad << "\n";
      return kExitOk;
    };
  });

  // templates export -------------------------------------------------------
  auto* tpl = app.add_subcommand("templates", "Prompt template utilities");
  tpl->require_subcommand(1);
  auto* tpl_export = tpl->add_subcommand("export", "Write the effective templates and mode registry");
  std::string tpl_out;
  tpl_export->add_option("--output", tpl_out, "Directory")->required();
  tpl_export->callback([&] {
    subcommand = "templates export";
    action = [&] {
      const auto lib = load_templates(c);
      lib.export_directory(tpl_out);
      export_mode_registry(builtin_failure_modes(lib), fs::path(tpl_out) / "modes");
      out << "exported " << lib.ids().size() << " templates to " << tpl_out << "\n";
      return kExitOk;
    };
  });

  // replay -----------------------------------------------------------------
  auto* rep = app.add_subcommand("replay", "Re-execute a run recorded in a manifest");
  std::string rep_manifest;
  int rep_index = -1;
  rep->add_option("--from", rep_manifest, "Manifest JSONL")->required();
  rep->add_option("--index", rep_index, "Entry to replay (negative counts from the end)");
  rep->callback([&] {
    subcommand = "replay";
    action = [&] {
      require_file(rep_manifest, "manifest");
      std::vector<Json> entries;
      for_each_jsonl(rep_manifest, [&](std::size_t, const Json& j) { entries.push_back(j); });
      const auto n = static_cast<int>(entries.size());
      const int idx = rep_index < 0 ? n + rep_index : rep_index;
      if (idx < 0 || idx >= n) throw ConfigError("manifest has no entry " + std::to_string(rep_index));
      const Json& e = entries[static_cast<std::size_t>(idx)];
      const fs::path cfg = fs::temp_directory_path() /
                           ("cotbench-replay-" + e.at("config_sha256").get<std::string>().substr(0, 16) + ".ini");
      write_file_atomic(cfg, e.at("config").get<std::string>());
      std::vector<std::string> replay_args{"--config", cfg.string()};
      for (const auto& w : text::split_whitespace(e.at("subcommand").get<std::string>())) replay_args.push_back(w);
      out << "replaying: " << e.at("subcommand").get<std::string>() << "\n";
      const int status = run(replay_args, env);
      fs::remove(cfg);
      return status;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfigError;
  }
  if (!action) return kExitConfigError;

  int status = kExitOk;
  try {
    status = action();
  } catch (const ConfigError& e) {
    err << "cotbench " << subcommand << ": configuration error: " << e.what() << "\n";
    status = kExitConfigError;
  } catch (const std::exception& e) {
    err << "cotbench " << subcommand << ": " << e.what() << "\n";
    status = kExitDataError;
  }
  if (subcommand != "replay" && subcommand != "templates export") {
    try {
      append_manifest(c, subcommand, args, app.config_to_str(false, false), files, status);
    } catch (const std::exception& e) {
      err << "cotbench: could not write manifest: " << e.what() << "\n";
    }
  }
  return status;
}

}  // namespace cotbench::cli
