// edit-eval command line.

#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include <edit_eval/edit_eval.hpp>

using namespace edit_eval;

namespace {

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty() || out_path == "-")
    std::cout << text;
  else
    write_file(out_path, text);
}

void note(const std::string& msg) { std::cerr << msg << "\n"; }

// "name=value" pairs from repeated options.
std::vector<std::pair<std::string, std::string>> pairs(const std::vector<std::string>& raw, const std::string& what) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& r : raw) {
    const auto eq = r.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == r.size())
      throw ConfigError(what + " expects NAME=PATH, got '" + r + "'");
    out.emplace_back(r.substr(0, eq), r.substr(eq + 1));
  }
  return out;
}

std::vector<std::string> comma_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& part : split(s, ',')) {
    const auto t = std::string(trim(part));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::string results_dir_or(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (auto e = env("EDIT_EVAL_RESULTS_DIR")) return *e;
  return fallback;
}

struct RowSource {
  std::string rows_path;
  std::string run_id;
  std::string results_dir;
  bool lenient = false;

  void add(CLI::App* app) {
    app->add_option("--rows", rows_path, "Result rows JSONL");
    app->add_option("--run", run_id, "Run id inside the results directory");
    app->add_option("--results-dir", results_dir, "Results directory (default $EDIT_EVAL_RESULTS_DIR or ./results)");
    app->add_flag("--lenient", lenient, "Keep the rows before an unreadable line");
  }

  std::string path() const {
    if (!rows_path.empty()) return rows_path;
    if (run_id.empty()) throw ConfigError("give --rows PATH or --run ID");
    return run_paths(results_dir_or(results_dir, "results"), run_id).rows;
  }

  std::vector<ResultRow> load() const {
    auto loaded = load_rows(path(), lenient);
    if (loaded.bad_line)
      note("warning: stopped at unreadable line " + std::to_string(*loaded.bad_line) + ": " + loaded.bad_line_error);
    return std::move(loaded.rows);
  }
};

LmHandle lm_from_flags(const std::string& url, const std::string& mock_script, std::size_t window) {
  LmSelection sel;
  if (!mock_script.empty()) {
    sel.mock_script = json::parse(read_file(mock_script));
  } else {
    sel.url = !url.empty() ? url : env("EDIT_EVAL_LM_URL").value_or("");
    sel.context_window = window;
  }
  return make_lm(sel);
}

std::vector<DatasetExample> load_corpora(const std::vector<std::string>& raw) {
  std::vector<DatasetExample> all;
  for (const auto& [ds, path] : pairs(raw, "--corpus")) {
    dataset_from_string(ds);
    for (auto& ex : read_corpus_jsonl(read_file(path))) all.push_back(std::move(ex));
  }
  return all;
}

// ---------------------------------------------------------------------------

void cmd_ingest(const std::string& format, const std::string& in, const std::string& out, std::optional<std::size_t> sample,
                std::uint64_t seed, const std::string& split) {
  const Dataset d = dataset_from_string(format);
  auto parsed = parse_dataset(d, read_file(in), split.empty() ? std::nullopt : std::optional<std::string>(split));
  auto examples = std::move(parsed.examples);
  sort_canonical(examples);
  if (sample) examples = sample_examples(std::move(examples), *sample, seed);
  write_file(out, write_corpus_jsonl(examples));
  std::size_t queries = 0;
  for (const auto& ex : examples) queries += ex.queries.size();
  note("ingested " + std::to_string(examples.size()) + " examples (" + std::to_string(queries) + " queries) into " + out +
       "; skipped " + std::to_string(parsed.skipped_records) + " records, dropped " +
       std::to_string(parsed.dropped_queries) + " queries");
}

struct SweepFlags {
  std::string config;
  std::string resume;
  std::string results_dir;
  std::string lm_url;
  std::string mock_script;
  std::string run_id;
  std::vector<std::string> corpora;
  std::string editors;
  std::string batch_sizes;
  std::string methods;
  std::string control_tasks;
  std::optional<std::size_t> generate_length, sample_n, knn, concurrency, generation_budget, context_window;
  std::optional<std::uint64_t> seed;
  bool redact = false;
  bool quiet = false;
};

void add_sweep_flags(CLI::App* app, SweepFlags& f, bool config_required) {
  auto* c = app->add_option("--config", f.config, "Run config JSON");
  if (config_required) c->required();
  app->add_option("--resume", f.resume, "Resume the incomplete run with this id");
  app->add_option("--results-dir", f.results_dir, "Results directory");
  app->add_option("--lm-url", f.lm_url, "Inference server base URL");
  app->add_option("--mock-script", f.mock_script, "Use the scripted mock model");
  app->add_option("--run-id", f.run_id, "Explicit run id");
  app->add_option("--control-tasks", f.control_tasks, "Control task files, comma separated");
  app->add_option("--concurrency", f.concurrency, "Worker count");
  app->add_option("--context-window", f.context_window, "Remote model context window");
  app->add_flag("--redact-generated-text", f.redact, "Do not store generated text");
  app->add_flag("-q,--quiet", f.quiet, "No progress output");
}

json sweep_config_json(const SweepFlags& f, std::filesystem::path* base_dir) {
  json j = json::object();
  if (!f.config.empty()) {
    try {
      j = json::parse(read_file(f.config));
    } catch (const json::parse_error& e) {
      throw ConfigError(f.config + ": " + e.what());
    }
    *base_dir = std::filesystem::path(f.config).parent_path();
  }
  const auto cwd = std::filesystem::current_path();
  auto absolute = [&](const std::string& p) { return std::filesystem::absolute(cwd / p).lexically_normal().string(); };
  if (!f.corpora.empty()) {
    j["corpora"] = json::object();
    for (const auto& [ds, path] : pairs(f.corpora, "--corpus")) j["corpora"][ds] = absolute(path);
  }
  if (!f.editors.empty()) j["editors"] = comma_list(f.editors);
  if (!f.batch_sizes.empty()) {
    json sizes = json::array();
    for (const auto& s : comma_list(f.batch_sizes)) {
      try {
        sizes.push_back(std::stoull(s));
      } catch (const std::exception&) {
        throw ConfigError("bad batch size '" + s + "'");
      }
    }
    j["batch_sizes"] = sizes;
  }
  if (!f.methods.empty()) j["methods"] = f.methods == "applicable" ? json("applicable") : json(comma_list(f.methods));
  if (!f.control_tasks.empty()) {
    json tasks = json::array();
    for (const auto& p : comma_list(f.control_tasks)) tasks.push_back(absolute(p));
    j["control_tasks"] = tasks;
  }
  if (f.generate_length) j["generate_length"] = *f.generate_length;
  if (f.sample_n) j["sample_n"] = *f.sample_n;
  if (f.knn) j["knn"] = *f.knn;
  if (f.seed) j["seed"] = *f.seed;
  if (f.concurrency) j["concurrency"] = *f.concurrency;
  if (f.generation_budget) j["generation_budget"] = *f.generation_budget;
  if (f.redact) j["redact_generated_text"] = true;
  if (!f.run_id.empty()) j["run_id"] = f.run_id;
  return j;
}

void cmd_run(const SweepFlags& f) {
  std::filesystem::path base;
  const json j = sweep_config_json(f, &base);
  RunConfig cfg = run_config_from_json(j, base);
  if (!f.results_dir.empty())
    cfg.results_dir = f.results_dir;
  else if (auto e = env("EDIT_EVAL_RESULTS_DIR"))
    cfg.results_dir = *e;
  if (!f.mock_script.empty()) {
    cfg.lm.mock_script = json::parse(read_file(f.mock_script));
    cfg.lm.url.clear();
  } else if (!f.lm_url.empty() || env("EDIT_EVAL_LM_URL")) {
    cfg.lm.url = !f.lm_url.empty() ? f.lm_url : *env("EDIT_EVAL_LM_URL");
    cfg.lm.mock_script = nullptr;
  }
  if (f.context_window) cfg.lm.context_window = *f.context_window;
  RunOptions opts;
  opts.resume_run_id = f.resume;
  if (!f.quiet) opts.log = [](const std::string& m) { note(m); };
  const auto rec = run_sweep(cfg, nullptr, opts);
  for (const auto& [key, n] : rec.oversize_examples)
    note("warning: " + key + ": " + std::to_string(n) + " examples have more edits than the batch size and were skipped");
  if (rec.error_rows) note("warning: " + std::to_string(rec.error_rows) + " rows recorded errors");
  std::cout << json{{"run_id", rec.run_id},
                    {"rows", rec.row_count},
                    {"control_rows", rec.control_row_count},
                    {"error_rows", rec.error_rows},
                    {"result_hash", rec.result_hash},
                    {"rows_path", run_paths(cfg.results_dir, rec.run_id).rows}}
                   .dump()
            << "\n";
}

void cmd_aggregate(const RowSource& src, const std::string& group, std::optional<std::size_t> length,
                   const std::string& pivot, bool control, const std::string& out) {
  if (control) {
    std::string path;
    if (!src.rows_path.empty()) {
      path = src.rows_path;
    } else {
      if (src.run_id.empty()) throw ConfigError("give --rows PATH or --run ID");
      path = run_paths(results_dir_or(src.results_dir, "results"), src.run_id).control;
    }
    emit(control_csv(aggregate_control(parse_control_rows(read_file(path)))), out);
    return;
  }
  const auto rows = src.load();
  const auto table = aggregate(rows, comma_list(group), length);
  if (table.excluded_errors)
    note("warning: " + std::to_string(table.excluded_errors) + " error rows excluded from the aggregates");
  if (table.rows.empty()) note("warning: no scored rows to aggregate");
  emit(pivot.empty() ? aggregate_csv(table) : pivot_csv(table, pivot), out);
}

void cmd_rate_export(const RowSource& src, const std::vector<std::string>& corpora, std::size_t n_late,
                     std::size_t n_early, std::uint64_t seed, std::optional<std::size_t> batch_size,
                     const std::string& out, const std::string& store, const std::string& session) {
  const auto rows = src.load();
  const auto examples = load_corpora(corpora);
  const auto units = rating_units_from_rows(rows, batch_size);
  const auto sample = sample_rating_set(units, n_late, n_early, seed);
  for (const auto& [cls, per_ds] : sample.shortfall)
    for (const auto& [ds, missing] : per_ds)
      if (missing) note("warning: " + cls + "/" + ds + ": " + std::to_string(missing) + " short of its quota");
  const auto items = rating_items(sample, index_queries(examples));
  emit(write_rating_items(items), out);
  if (!store.empty()) {
    create_rating_session(store, session, items);
    note("created session " + session + " with " + std::to_string(items.size()) + " items");
  }
}

std::atomic<RatingServer*> g_rating_server{nullptr};
std::atomic<LmServer*> g_lm_server{nullptr};

void on_signal(int) {
  if (auto* s = g_rating_server.load()) s->stop();
  if (auto* s = g_lm_server.load()) s->stop();
}

void cmd_rate_serve(const std::string& store, const std::string& host, int port) {
  RatingServer server(store);
  g_rating_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  note("rating service on http://" + host + ":" + std::to_string(port) + " (store " + store + ")");
  server.serve_forever(host, port);
  g_rating_server = nullptr;
}

void cmd_rate_import(const std::string& store, const std::string& session, const std::string& in) {
  const auto dir = std::filesystem::path(store) / session;
  if (!std::filesystem::exists(dir / "items.jsonl")) throw ConfigError("no session " + session + " in " + store);
  RatingSession s(dir);
  std::map<std::string, std::size_t> counts;
  for (auto& j : read_judgments(read_file(in))) {
    std::size_t done = 0;
    switch (s.submit(std::move(j), &done)) {
      case RatingSession::Outcome::recorded: ++counts["recorded"]; break;
      case RatingSession::Outcome::duplicate: ++counts["duplicate"]; break;
      case RatingSession::Outcome::conflict: ++counts["conflict"]; break;
      case RatingSession::Outcome::unknown_item: ++counts["unknown_item"]; break;
    }
  }
  std::cout << json(counts).dump() << "\n";
}

void cmd_judge_run(const std::string& items_path, const std::string& url, const std::string& mock_script,
                   std::size_t window, std::size_t length, std::size_t concurrency, const std::string& templ_path,
                   const std::string& out) {
  const auto lm = lm_from_flags(url, mock_script, window);
  const auto items = read_rating_items(read_file(items_path));
  JudgeOptions opts;
  opts.length = length;
  opts.concurrency = concurrency;
  if (!templ_path.empty()) opts.templ = read_file(templ_path);
  const auto run = run_judge(*lm, items, opts);
  std::string text;
  for (const auto& it : items) {
    auto v = run.verdicts.find(it.item_id);
    if (v != run.verdicts.end()) text += to_json(it.item_id, v->second).dump() + "\n";
  }
  emit(text, out);
  note("template " + template_hash(opts.templ) + ": " + std::to_string(run.decisions().size()) + " verdicts, " +
       std::to_string(run.unparseable.size()) + " unparseable, " + std::to_string(run.errors.size()) + " errors");
  for (const auto& [id, err] : run.errors) note("error: " + id + ": " + err);
}

std::map<std::string, bool> read_verdicts(const std::string& path) {
  std::map<std::string, bool> out;
  const std::string text = read_file(path);
  for (const auto& [line_no, line] : jsonl_lines(text)) {
    try {
      const auto j = json::parse(line);
      if (!j.at("correct").is_null()) out[j.at("item_id").get<std::string>()] = j["correct"].get<bool>();
    } catch (const json::exception& e) {
      throw StoreError(line_no, path + ": " + e.what());
    }
  }
  return out;
}

void cmd_judge_table(const std::string& items_path, const std::string& judgments, const std::vector<std::string>& verdicts,
                     std::size_t exact_length, const std::string& out) {
  const auto items = read_rating_items(read_file(items_path));
  const auto truths = truths_from_judgments(read_judgments(read_file(judgments)));
  if (!truths.disagreements.empty())
    note("warning: " + std::to_string(truths.disagreements.size()) + " items with rater disagreement left out");
  std::vector<std::pair<std::string, std::map<std::string, bool>>> judges;
  for (const auto& [name, path] : pairs(verdicts, "--verdicts")) judges.emplace_back(name, read_verdicts(path));
  emit(judge_table_csv(judge_table(judges, items, truths.truth, exact_length)), out);
}

void cmd_analyze_confusion(const std::string& items_path, const std::string& judgments, std::size_t length,
                           const std::string& out) {
  const auto items = read_rating_items(read_file(items_path));
  const auto truths = truths_from_judgments(read_judgments(read_file(judgments)));
  const auto report = confusion_by_length(items, truths.truth, length);
  if (report.missing_judgments)
    note("warning: " + std::to_string(report.missing_judgments) + " items without a judgment excluded");
  emit(confusion_csv(report), out);
}

void cmd_serve_mock(const std::string& script, const std::vector<std::string>& variants, const std::string& host,
                    int port) {
  std::map<std::string, LmHandle> vs;
  for (const auto& [name, path] : pairs(variants, "--variant")) vs[name] = build_mock_lm(json::parse(read_file(path)));
  LmServer server(build_mock_lm(json::parse(read_file(script))), std::move(vs));
  g_lm_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  note("mock inference server on http://" + host + ":" + std::to_string(port));
  server.serve_forever(host, port);
  g_lm_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-editing evaluation engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Convert a native benchmark file to corpus JSONL");
  std::string in_format, in_path, out_path, in_split;
  std::optional<std::size_t> in_sample;
  std::uint64_t in_seed = 0;
  ingest->add_option("--format", in_format, "zsre, counterfact, mquake or rippleedits")->required();
  ingest->add_option("--in", in_path, "Native input file")->required();
  ingest->add_option("--out", out_path, "Corpus JSONL output")->required();
  ingest->add_option("--sample", in_sample, "Keep a seeded sample of N examples");
  ingest->add_option("--seed", in_seed, "Sampling seed");
  ingest->add_option("--split", in_split, "Split label (RippleEdits: recent or popular)");

  // run / sweep
  SweepFlags run_flags, sweep_flags;
  auto* run = app.add_subcommand("run", "Run a sweep from a config file");
  add_sweep_flags(run, run_flags, true);
  auto* sweep = app.add_subcommand("sweep", "Run a sweep assembled from flags (optionally over a base config)");
  add_sweep_flags(sweep, sweep_flags, false);
  sweep->add_option("--corpus", sweep_flags.corpora, "DATASET=PATH, repeatable");
  sweep->add_option("--editors", sweep_flags.editors, "Comma separated editors");
  sweep->add_option("--batch-sizes", sweep_flags.batch_sizes, "Comma separated batch sizes");
  sweep->add_option("--methods", sweep_flags.methods, "Comma separated methods or 'applicable'");
  sweep->add_option("--generate-length", sweep_flags.generate_length, "Generation length L");
  sweep->add_option("--sample", sweep_flags.sample_n, "Examples sampled per dataset");
  sweep->add_option("--seed", sweep_flags.seed, "Sampling seed");
  sweep->add_option("--knn", sweep_flags.knn, "Retriever k");
  sweep->add_option("--generation-budget", sweep_flags.generation_budget, "Tokens reserved for generation");

  // aggregate
  auto* agg = app.add_subcommand("aggregate", "Accuracy tables from result rows");
  RowSource agg_src;
  agg_src.add(agg);
  std::string agg_group = "dataset,editor,method", agg_pivot, agg_out;
  std::optional<std::size_t> agg_length;
  bool agg_control = false;
  agg->add_option("--group", agg_group, "Grouping dimensions: dataset, editor, batch_size, method, kind, split");
  agg->add_option("--length", agg_length, "Re-score generate rows at this length");
  agg->add_option("--pivot", agg_pivot, "Spread this grouped dimension over columns");
  agg->add_flag("--control", agg_control, "Summarise control-task rows instead");
  agg->add_option("--out", agg_out, "Output CSV (default stdout)");

  // rate
  auto* rate = app.add_subcommand("rate", "Human rating sets and service");
  rate->require_subcommand(1);
  auto* rate_export = rate->add_subcommand("export", "Sample a rating set from generate rows");
  RowSource rate_src;
  rate_src.add(rate_export);
  std::vector<std::string> rate_corpora;
  std::size_t n_late = 150, n_early = 50;
  std::uint64_t rate_seed = 0;
  std::optional<std::size_t> rate_batch;
  std::string rate_out, rate_store, rate_session;
  rate_export->add_option("--corpus", rate_corpora, "DATASET=PATH, repeatable")->required();
  rate_export->add_option("--n-late", n_late, "Late-success units");
  rate_export->add_option("--n-early", n_early, "Early-success units");
  rate_export->add_option("--seed", rate_seed, "Sampling seed");
  rate_export->add_option("--batch-size", rate_batch, "Only rows of this batch size");
  rate_export->add_option("--out", rate_out, "Rating items JSONL (default stdout)");
  rate_export->add_option("--store", rate_store, "Also create a session in this store");
  rate_export->add_option("--session", rate_session, "Session id for --store");
  auto* rate_serve = rate->add_subcommand("serve", "Serve rating sessions over HTTP");
  std::string serve_host = "127.0.0.1";
  int serve_port = 8765;
  rate_serve->add_option("--store", rate_store, "Session store directory")->required();
  rate_serve->add_option("--host", serve_host, "Bind address");
  rate_serve->add_option("--port", serve_port, "Port");
  auto* rate_import = rate->add_subcommand("import", "Add judgments JSONL to a session");
  std::string import_in;
  rate_import->add_option("--store", rate_store, "Session store directory")->required();
  rate_import->add_option("--session", rate_session, "Session id")->required();
  rate_import->add_option("--in", import_in, "Judgments JSONL")->required();

  // judge
  auto* judge = app.add_subcommand("judge", "LLM-as-a-judge");
  judge->require_subcommand(1);
  auto* judge_run = judge->add_subcommand("run", "Judge rating items with a model");
  std::string judge_items, judge_url, judge_mock, judge_template, judge_out, judge_judgments;
  std::size_t judge_length = 8, judge_concurrency = 4, judge_window = 8192, exact_length = kExactMatchLength;
  std::vector<std::string> judge_verdicts;
  judge_run->add_option("--items", judge_items, "Rating items JSONL")->required();
  judge_run->add_option("--lm-url", judge_url, "Judge inference server (default $EDIT_EVAL_LM_URL)");
  judge_run->add_option("--mock-script", judge_mock, "Scripted mock judge");
  judge_run->add_option("--context-window", judge_window, "Judge context window");
  judge_run->add_option("--length", judge_length, "Verdict tokens");
  judge_run->add_option("--concurrency", judge_concurrency, "Parallel requests");
  judge_run->add_option("--template", judge_template, "Prompt template file");
  judge_run->add_option("--out", judge_out, "Verdicts JSONL (default stdout)");
  auto* judge_tab = judge->add_subcommand("table", "Judge accuracy against human truth");
  judge_tab->add_option("--items", judge_items, "Rating items JSONL")->required();
  judge_tab->add_option("--judgments", judge_judgments, "Human judgments JSONL")->required();
  judge_tab->add_option("--verdicts", judge_verdicts, "NAME=PATH, repeatable");
  judge_tab->add_option("--exact-length", exact_length, "Exact-match length");
  judge_tab->add_option("--out", judge_out, "Output CSV (default stdout)");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Matching-validity analyses");
  analyze->require_subcommand(1);
  RowSource an_src;
  std::size_t an_length = kSweepLength, an_max_n = 5;
  std::string an_out, an_items, an_judgments;
  bool late_only = false;
  auto* curves = analyze->add_subcommand("curves", "Accuracy by generation length");
  an_src.add(curves);
  curves->add_option("--length", an_length, "Longest length");
  curves->add_option("--out", an_out, "Output CSV");
  auto* ngrams = analyze->add_subcommand("ngrams", "Unique n-grams per generated answer");
  an_src.add(ngrams);
  ngrams->add_option("--max-n", an_max_n, "Largest n");
  ngrams->add_flag("--late-only", late_only, "Only late-success queries");
  ngrams->add_option("--out", an_out, "Output CSV");
  auto* confusion = analyze->add_subcommand("confusion", "Confusion counts against human truth per length");
  confusion->add_option("--items", an_items, "Rating items JSONL")->required();
  confusion->add_option("--judgments", an_judgments, "Human judgments JSONL")->required();
  confusion->add_option("--length", an_length, "Longest length");
  confusion->add_option("--out", an_out, "Output CSV");

  // serve-mock
  auto* serve_mock = app.add_subcommand("serve-mock", "Serve a scripted mock model over the inference protocol");
  std::string mock_script;
  std::vector<std::string> mock_variants;
  int mock_port = 8080;
  std::string mock_host = "127.0.0.1";
  serve_mock->add_option("--script", mock_script, "Mock script JSON")->required();
  serve_mock->add_option("--variant", mock_variants, "NAME=SCRIPT, repeatable");
  serve_mock->add_option("--host", mock_host, "Bind address");
  serve_mock->add_option("--port", mock_port, "Port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      cmd_ingest(in_format, in_path, out_path, in_sample, in_seed, in_split);
    } else if (*run) {
      cmd_run(run_flags);
    } else if (*sweep) {
      cmd_run(sweep_flags);
    } else if (*agg) {
      cmd_aggregate(agg_src, agg_group, agg_length, agg_pivot, agg_control, agg_out);
    } else if (*rate_export) {
      if (!rate_store.empty() && rate_session.empty()) throw ConfigError("--store needs --session");
      cmd_rate_export(rate_src, rate_corpora, n_late, n_early, rate_seed, rate_batch, rate_out, rate_store, rate_session);
    } else if (*rate_serve) {
      cmd_rate_serve(rate_store, serve_host, serve_port);
    } else if (*rate_import) {
      cmd_rate_import(rate_store, rate_session, import_in);
    } else if (*judge_run) {
      cmd_judge_run(judge_items, judge_url, judge_mock, judge_window, judge_length, judge_concurrency, judge_template,
                    judge_out);
    } else if (*judge_tab) {
      cmd_judge_table(judge_items, judge_judgments, judge_verdicts, exact_length, judge_out);
    } else if (*curves) {
      emit(curves_csv(accuracy_curves(an_src.load(), an_length)), an_out);
    } else if (*ngrams) {
      const auto rows = an_src.load();
      std::set<std::string> late;
      if (late_only)
        for (const auto& u : rating_units_from_rows(rows))
          if (u.success_class == SuccessClass::late) late.insert(u.key());
      emit(ngram_csv(ngram_stats(rows, an_max_n, late_only ? &late : nullptr)), an_out);
    } else if (*confusion) {
      cmd_analyze_confusion(an_items, an_judgments, an_length, an_out);
    } else if (*serve_mock) {
      cmd_serve_mock(mock_script, mock_variants, mock_host, mock_port);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
