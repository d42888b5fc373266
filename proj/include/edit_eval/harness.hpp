#pragma once

// Sweeps over (dataset x editor x batch size x scoring method), result
// persistence and aggregation.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "control.hpp"
#include "corpus.hpp"
#include "editors.hpp"
#include "mock_lm.hpp"
#include "parallel.hpp"
#include "remote_lm.hpp"
#include "results.hpp"
#include "scoring.hpp"

namespace edit_eval {

struct EditorSpec {
  EditorKind kind = EditorKind::no_edit;
  std::string name;  // external editors only

  std::string label() const { return kind == EditorKind::external ? name : std::string(to_string(kind)); }
  std::string config_string() const {
    return kind == EditorKind::external ? "external:" + name : std::string(to_string(kind));
  }
};

inline EditorSpec editor_from_string(std::string_view s) {
  if (s == "no_edit") return {EditorKind::no_edit, ""};
  if (s == "in_context") return {EditorKind::in_context, ""};
  if (s == "context_retriever") return {EditorKind::context_retriever, ""};
  if (s.rfind("external:", 0) == 0 && s.size() > 9) {
    const std::string name(s.substr(9));
    if (name == "no_edit" || name == "in_context" || name == "context_retriever")
      throw ConfigError("external editor name '" + name + "' clashes with a built-in editor");
    return {EditorKind::external, name};
  }
  throw ConfigError("unknown editor '" + std::string(s) + "' (no_edit, in_context, context_retriever, external:<name>)");
}

struct LmSelection {
  std::string url;
  json mock_script;  // null unless the mock is selected
  std::size_t context_window = 2048;
  bool embedder = true;
  std::ptrdiff_t max_in_flight = 8;
  int timeout_seconds = 120;
};

struct RunConfig {
  std::string run_id;
  std::vector<std::pair<std::string, std::string>> corpora;  // dataset -> canonical JSONL path
  std::vector<EditorSpec> editors;
  std::vector<std::size_t> batch_sizes;
  std::map<std::string, std::vector<ScoringMethod>> methods;  // per dataset
  std::size_t generate_length = kSweepLength;
  std::size_t sample_n = 2048;
  std::uint64_t seed = 0;
  std::size_t knn = 4;
  std::size_t generation_budget = 64;
  bool mc_per_token = false;
  LmSelection lm;
  std::vector<std::string> control_tasks;
  std::size_t concurrency = 4;
  std::string results_dir = "results";
  bool redact_generated_text = false;
  RetryPolicy retry;
};

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

inline std::vector<ScoringMethod> parse_method_list(const json& j, Dataset d, bool strict) {
  if (j.is_string() && j.get<std::string>() == "applicable") return applicable_methods(d);
  std::vector<ScoringMethod> out;
  for (const auto& m : j) {
    const auto method = method_from_string(m.get<std::string>());
    if (!method_applicable(method, d)) {
      if (strict)
        throw ConfigError("method " + std::string(to_string(method)) + " is not applicable to " +
                          std::string(to_string(d)) + ": only counterfact carries answer alternatives");
      continue;
    }
    if (std::find(out.begin(), out.end(), method) == out.end()) out.push_back(method);
  }
  return out;
}

inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  try {
    c.run_id = j.value("run_id", "");
    for (const auto& [name, path] : j.at("corpora").items()) {
      dataset_from_string(name);
      c.corpora.emplace_back(name, resolve_path(path.get<std::string>(), base_dir));
    }
    for (const auto& e : j.at("editors")) c.editors.push_back(editor_from_string(e.get<std::string>()));
    c.batch_sizes = j.at("batch_sizes").get<std::vector<std::size_t>>();
    const json methods = j.value("methods", json("applicable"));
    for (const auto& [name, _] : c.corpora) {
      const Dataset d = dataset_from_string(name);
      if (methods.is_object()) {
        if (!methods.contains(name)) throw ConfigError("methods: no entry for dataset " + name);
        c.methods[name] = parse_method_list(methods[name], d, true);
      } else {
        c.methods[name] = parse_method_list(methods, d, true);
      }
    }
    c.generate_length = j.value("generate_length", c.generate_length);
    c.sample_n = j.value("sample_n", c.sample_n);
    c.seed = j.value("seed", c.seed);
    c.knn = j.value("knn", c.knn);
    c.generation_budget = j.value("generation_budget", c.generation_budget);
    c.mc_per_token = j.value("mc_per_token", false);
    c.concurrency = j.value("concurrency", c.concurrency);
    c.results_dir = resolve_path(j.value("results_dir", c.results_dir), base_dir);
    c.redact_generated_text = j.value("redact_generated_text", false);
    for (const auto& p : j.value("control_tasks", json::array())) c.control_tasks.push_back(resolve_path(p, base_dir));
    if (j.contains("retry")) {
      c.retry.attempts = j["retry"].value("attempts", c.retry.attempts);
      c.retry.initial_backoff = std::chrono::milliseconds(j["retry"].value("initial_backoff_ms", 250));
    }
    if (j.contains("lm")) {
      const auto& l = j["lm"];
      c.lm.url = l.value("url", "");
      if (l.contains("mock_script")) {
        const auto& s = l["mock_script"];
        c.lm.mock_script = s.is_string() ? json::parse(read_file(resolve_path(s.get<std::string>(), base_dir))) : s;
      }
      c.lm.context_window = l.value("context_window", c.lm.context_window);
      c.lm.embedder = l.value("embedder", c.lm.embedder);
      c.lm.max_in_flight = l.value("max_in_flight", c.lm.max_in_flight);
      c.lm.timeout_seconds = l.value("timeout_seconds", c.lm.timeout_seconds);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  std::sort(c.batch_sizes.begin(), c.batch_sizes.end());
  c.batch_sizes.erase(std::unique(c.batch_sizes.begin(), c.batch_sizes.end()), c.batch_sizes.end());
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j, std::filesystem::path(path).parent_path());
}

// Snapshot sufficient to re-execute the run (paths already resolved).
inline json to_json(const RunConfig& c) {
  json corpora = json::object();
  for (const auto& [name, path] : c.corpora) corpora[name] = path;
  json editors = json::array();
  for (const auto& e : c.editors) editors.push_back(e.config_string());
  json methods = json::object();
  for (const auto& [name, ms] : c.methods) {
    json arr = json::array();
    for (auto m : ms) arr.push_back(to_string(m));
    methods[name] = arr;
  }
  json lm{{"context_window", c.lm.context_window}, {"embedder", c.lm.embedder}, {"max_in_flight", c.lm.max_in_flight},
          {"timeout_seconds", c.lm.timeout_seconds}};
  if (!c.lm.url.empty()) lm["url"] = c.lm.url;
  if (!c.lm.mock_script.is_null()) lm["mock_script"] = c.lm.mock_script;
  json j{{"corpora", corpora},
         {"editors", editors},
         {"batch_sizes", c.batch_sizes},
         {"methods", methods},
         {"generate_length", c.generate_length},
         {"sample_n", c.sample_n},
         {"seed", c.seed},
         {"knn", c.knn},
         {"generation_budget", c.generation_budget},
         {"mc_per_token", c.mc_per_token},
         {"lm", lm},
         {"control_tasks", c.control_tasks},
         {"concurrency", c.concurrency},
         {"results_dir", c.results_dir},
         {"redact_generated_text", c.redact_generated_text},
         {"retry", {{"attempts", c.retry.attempts}, {"initial_backoff_ms", c.retry.initial_backoff.count()}}}};
  if (!c.run_id.empty()) j["run_id"] = c.run_id;
  return j;
}

// Everything checkable before the first model call.
inline void validate(const RunConfig& c, const LanguageModel* lm = nullptr) {
  if (c.corpora.empty()) throw ConfigError("no corpora configured");
  if (c.editors.empty()) throw ConfigError("no editors configured");
  if (c.batch_sizes.empty()) throw ConfigError("no batch sizes configured");
  if (!std::is_sorted(c.batch_sizes.begin(), c.batch_sizes.end())) throw ConfigError("batch sizes must be ascending");
  if (c.batch_sizes.front() == 0) throw ConfigError("batch sizes must be >= 1");
  if (c.generate_length == 0) throw ConfigError("generate_length must be >= 1");
  if (c.sample_n == 0) throw ConfigError("sample_n must be >= 1");
  if (c.knn == 0) throw ConfigError("knn must be >= 1");
  if (c.concurrency == 0) throw ConfigError("concurrency must be >= 1");
  if (c.retry.attempts < 1) throw ConfigError("retry attempts must be >= 1");
  std::set<std::string> seen;
  for (const auto& [name, _] : c.corpora)
    if (!seen.insert(name).second) throw ConfigError("dataset " + name + " listed twice");
  std::set<std::string> labels;
  for (const auto& e : c.editors)
    if (!labels.insert(e.label()).second) throw ConfigError("editor " + e.label() + " listed twice");
  for (const auto& [name, ms] : c.methods) {
    const Dataset d = dataset_from_string(name);
    for (auto m : ms)
      if (!method_applicable(m, d))
        throw ConfigError("method " + std::string(to_string(m)) + " is not applicable to " + name);
  }
  if (lm) {
    for (const auto& e : c.editors) {
      if (e.kind == EditorKind::context_retriever && !lm->has_embedder())
        throw ConfigError("context_retriever needs a model with an embedder");
      if (e.kind == EditorKind::external && lm->backend() != BackendKind::remote)
        throw ConfigError("external editor " + e.name + " needs a remote backend");
    }
    if (lm->context_window() <= c.generation_budget)
      throw ConfigError("generation_budget must be smaller than the context window");
  }
}

inline LmHandle make_lm(const LmSelection& sel) {
  if (!sel.mock_script.is_null()) return build_mock_lm(sel.mock_script);
  if (sel.url.empty()) throw ConfigError("no language model configured (lm.url or lm.mock_script)");
  RemoteOptions o;
  o.base_url = sel.url;
  o.context_window = sel.context_window;
  o.embedder = sel.embedder;
  o.max_in_flight = sel.max_in_flight;
  o.timeout_seconds = sel.timeout_seconds;
  return connect_remote_lm(std::move(o));
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string error_code(const std::exception& e) {
  if (dynamic_cast<const TransportError*>(&e)) return "transport";
  if (dynamic_cast<const ContextOverflowError*>(&e)) return "context_overflow";
  if (dynamic_cast<const UnsupportedError*>(&e)) return "unsupported";
  if (dynamic_cast<const InapplicableMethodError*>(&e)) return "inapplicable";
  if (dynamic_cast<const RemoteError*>(&e)) return "remote";
  return "error";
}

struct ControlRow {
  std::string run_id;
  std::string dataset;
  std::string editor;
  std::size_t batch_size = 0;
  std::vector<std::string> metrics;
  ControlItemResult item;
};

inline json to_json(const ControlRow& r) {
  json j = to_json(r.item);
  j["run_id"] = r.run_id;
  j["dataset"] = r.dataset;
  j["editor"] = r.editor;
  j["batch_size"] = r.batch_size;
  j["metrics"] = r.metrics;
  return j;
}

inline ControlRow control_row_from_json(const json& j) {
  ControlRow r;
  r.run_id = j.value("run_id", "");
  r.dataset = j.at("dataset").get<std::string>();
  r.editor = j.at("editor").get<std::string>();
  r.batch_size = j.at("batch_size").get<std::size_t>();
  r.metrics = j.at("metrics").get<std::vector<std::string>>();
  r.item = control_item_result_from_json(j);
  return r;
}

inline std::vector<ControlRow> parse_control_rows(std::string_view payload) {
  std::vector<ControlRow> rows;
  for (const auto& [line_no, line] : jsonl_lines(payload)) {
    try {
      rows.push_back(control_row_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw StoreError(line_no, e.what());
    }
  }
  return rows;
}

inline std::string control_rows_hash(const std::vector<ControlRow>& rows) {
  std::uint64_t h = fnv1a64("");
  for (auto r : rows) {
    r.run_id.clear();
    h = fnv1a64(to_json(r).dump() + "\n", h);
  }
  return hex64(h);
}

struct RunPaths {
  std::string rows, control, record;
};

inline RunPaths run_paths(const std::string& results_dir, const std::string& run_id) {
  const auto base = std::filesystem::path(results_dir) / run_id;
  return {base.string() + ".rows.jsonl", base.string() + ".control.jsonl", base.string() + ".run.json"};
}

inline void write_run_record(const std::string& path, const RunRecord& rec) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, to_json(rec).dump(2) + "\n");
  std::filesystem::rename(tmp, path);
}

inline RunRecord load_run_record(const std::string& path) {
  try {
    return run_record_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw StoreError(0, path + ": " + e.what());
  }
}

struct RunOptions {
  // Resume an incomplete run instead of starting a new one.
  std::string resume_run_id;
  // Receives progress lines; may be empty.
  std::function<void(const std::string&)> log;
};

struct LoadedCorpus {
  std::string dataset;
  std::vector<DatasetExample> examples;
};

// The combination key stored in the resume cursor.
inline std::string combo_key(const std::string& dataset, const std::string& editor, std::size_t batch_size) {
  return dataset + "/" + editor + "/" + std::to_string(batch_size);
}

namespace detail {

struct QueryJob {
  std::size_t batch_index;
  const DatasetExample* example;
  std::size_t query_index;
};

inline std::vector<ResultRow> evaluate_query(const RunConfig& cfg, const std::string& run_id, const std::string& dataset,
                                             const std::string& editor_label, std::size_t batch_size,
                                             const EditedModel& model, const QueryJob& job) {
  const TestQuery& q = job.example->queries[job.query_index];
  ResultRow base;
  base.run_id = run_id;
  base.dataset = dataset;
  base.split = job.example->split;
  base.example_id = job.example->example_id;
  base.query_index = job.query_index;
  base.kind = q.kind;
  base.editor = editor_label;
  base.batch_size = batch_size;
  base.batch_index = job.batch_index;
  base.canonical_answer = canonical_answer(q);

  std::vector<ResultRow> rows;
  std::optional<PromptAssembly> assembly;
  std::string assembly_error;
  try {
    assembly = with_retry(cfg.retry, [&] { return assemble_prompt(model, q); });
    base.truncated_edits = assembly->truncated_edit_count;
  } catch (const Error& e) {
    assembly_error = error_code(e) + ": " + e.what();
  }

  for (const auto method : cfg.methods.at(dataset)) {
    ResultRow row = base;
    row.method = std::string(to_string(method));
    if (method == ScoringMethod::generate) row.generate_length = cfg.generate_length;
    if (!assembly) {
      row.error = assembly_error;
      rows.push_back(std::move(row));
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (method) {
        case ScoringMethod::argmax: {
          const auto s = with_retry(cfg.retry, [&] { return score_argmax(model, q, *assembly); });
          row.score = s.score;
          break;
        }
        case ScoringMethod::multiple_choice: {
          const auto s =
              with_retry(cfg.retry, [&] { return score_multiple_choice(model, q, *assembly, cfg.mc_per_token); });
          row.score = s.success ? 1.0 : 0.0;
          row.logprob_new = s.logprob_new;
          row.logprob_original = s.logprob_original;
          break;
        }
        case ScoringMethod::generate: {
          auto g = with_retry(cfg.retry, [&] { return score_generate(model, q, *assembly, cfg.generate_length); });
          row.score = g.first_match_index ? 1.0 : 0.0;
          row.first_match_index = g.first_match_index;
          row.matched_alias = g.matched_alias;
          if (!cfg.redact_generated_text) {
            row.generated_text = std::move(g.generated_text);
            row.generated_tokens = std::move(g.generated_tokens);
          }
          break;
        }
      }
    } catch (const Error& e) {
      row.error = error_code(e) + ": " + e.what();
    }
    row.timing_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

// Runs (or resumes) a sweep. `lm` overrides the configured model selection.
inline RunRecord run_sweep(const RunConfig& cfg, LmHandle lm = nullptr, const RunOptions& options = {}) {
  if (!lm) lm = make_lm(cfg.lm);
  validate(cfg, lm.get());
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  std::vector<LoadedCorpus> corpora;
  std::string corpus_digest;
  for (const auto& [name, path] : cfg.corpora) {
    auto examples = read_corpus_jsonl(read_file(path));
    for (const auto& ex : examples)
      if (to_string(ex.dataset) != name)
        throw ConfigError(path + ": example " + ex.example_id + " belongs to " + std::string(to_string(ex.dataset)));
    corpus_digest += name + ":" + corpus_hash(examples) + ";";
    corpora.push_back({name, sample_examples(std::move(examples), cfg.sample_n, cfg.seed)});
  }
  std::vector<ControlTask> tasks;
  for (const auto& p : cfg.control_tasks)
    for (auto& t : load_control_tasks(p)) tasks.push_back(std::move(t));

  RunRecord rec;
  std::filesystem::create_directories(cfg.results_dir);
  if (!options.resume_run_id.empty()) {
    rec = load_run_record(run_paths(cfg.results_dir, options.resume_run_id).record);
    if (rec.complete) return rec;
    if (rec.corpus_hash != hex64(fnv1a64(corpus_digest))) throw ConfigError("corpora changed since the run started");
  } else {
    const json snapshot = to_json(cfg);
    if (!cfg.run_id.empty()) {
      rec.run_id = cfg.run_id;
    } else {
      std::random_device rd;
      const std::string digest = hex64(fnv1a64(snapshot.dump() + corpus_digest)).substr(0, 8);
      std::string stamp = utc_now();
      stamp.erase(std::remove_if(stamp.begin(), stamp.end(), [](char c) { return c == '-' || c == ':'; }), stamp.end());
      rec.run_id = "run-" + stamp + "-" + digest + "-" + hex64((std::uint64_t{rd()} << 32) ^ rd()).substr(0, 6);
    }
    rec.config = snapshot;
    rec.corpus_hash = hex64(fnv1a64(corpus_digest));
    rec.started_at = utc_now();
  }
  const RunPaths paths = run_paths(cfg.results_dir, rec.run_id);
  if (options.resume_run_id.empty()) {
    create_exclusive(paths.rows);
    create_exclusive(paths.control);
    write_run_record(paths.record, rec);
  }
  const std::set<std::string> done(rec.cursor.begin(), rec.cursor.end());

  for (const auto& corpus : corpora) {
    for (const auto& editor : cfg.editors) {
      for (const std::size_t bs : cfg.batch_sizes) {
        const std::string key = combo_key(corpus.dataset, editor.label(), bs);
        if (done.count(key)) continue;
        log("evaluating " + key);

        std::vector<DatasetExample> fitting;
        std::size_t oversize = 0;
        for (const auto& ex : corpus.examples) {
          if (ex.edits.size() > bs)
            ++oversize;
          else
            fitting.push_back(ex);
        }
        if (oversize) rec.oversize_examples[key] = oversize;
        const auto batches = build_edit_batches(std::move(fitting), bs);

        const EditorOptions eopts{cfg.knn, cfg.generation_budget};
        std::vector<EditedModel> models;
        models.reserve(batches.size());
        try {
          for (std::size_t b = 0; b < batches.size(); ++b) {
            if (editor.kind == EditorKind::external) {
              const std::string variant = editor.name + "-b" + std::to_string(bs) + "-" + std::to_string(b);
              models.push_back(bind_external(lm, variant, batches[b].edits, eopts));
            } else {
              models.push_back(
                  with_retry(cfg.retry, [&] { return make_edited_model(editor.kind, lm, batches[b].edits, eopts); }));
            }
          }
        } catch (...) {
          rec.warnings.push_back("stopped at " + key + ": editor construction failed");
          write_run_record(paths.record, rec);
          throw;
        }

        std::vector<detail::QueryJob> jobs;
        for (std::size_t b = 0; b < batches.size(); ++b)
          for (const auto& ex : batches[b].examples)
            for (std::size_t q = 0; q < ex.queries.size(); ++q) jobs.push_back({b, &ex, q});

        std::vector<std::vector<ResultRow>> slots(jobs.size());
        parallel_for(jobs.size(), cfg.concurrency, [&](std::size_t i) {
          slots[i] = detail::evaluate_query(cfg, rec.run_id, corpus.dataset, editor.label(), bs,
                                            models[jobs[i].batch_index], jobs[i]);
        });
        std::vector<ResultRow> rows;
        for (auto& s : slots)
          for (auto& r : s) rows.push_back(std::move(r));

        std::vector<ControlRow> control_rows;
        if (!models.empty()) {
          for (const auto& task : tasks) {
            const auto schedule = chunk_schedule(task, models.size());
            std::vector<ControlItemResult> results(task.items.size());
            parallel_for(task.items.size(), cfg.concurrency, [&](std::size_t i) {
              try {
                results[i] = with_retry(cfg.retry, [&] { return eval_control_item(models[schedule[i]], task, i); });
              } catch (const Error& e) {
                results[i].task_id = task.task_id;
                results[i].mode = task.mode;
                results[i].item_index = i;
                results[i].error = error_code(e) + ": " + e.what();
              }
              results[i].batch_index = schedule[i];
            });
            for (auto& r : results)
              control_rows.push_back({rec.run_id, corpus.dataset, editor.label(), bs, task.metrics, std::move(r)});
          }
        }

        persist_rows(paths.rows, rows);
        std::string control_text;
        for (const auto& r : control_rows) control_text += to_json(r).dump() + "\n";
        append_text(paths.control, control_text);
        rec.row_count += rows.size();
        rec.control_row_count += control_rows.size();
        for (const auto& r : rows) rec.error_rows += r.error ? 1 : 0;
        rec.cursor.push_back(key);
        write_run_record(paths.record, rec);
      }
    }
  }

  const auto all_rows = load_rows(paths.rows).rows;
  rec.result_hash = rows_content_hash(all_rows);
  rec.control_hash = control_rows_hash(parse_control_rows(read_file(paths.control)));
  rec.complete = true;
  rec.finished_at = utc_now();
  write_run_record(paths.record, rec);
  log("run " + rec.run_id + " complete: " + std::to_string(rec.row_count) + " rows");
  return rec;
}

// ---------------------------------------------------------------------------
// Aggregation

inline const std::vector<std::string>& aggregate_dimensions() {
  static const std::vector<std::string> dims = {"dataset", "editor", "batch_size", "method", "kind", "split"};
  return dims;
}

inline std::string dimension_value(const ResultRow& r, const std::string& dim) {
  if (dim == "dataset") return r.dataset;
  if (dim == "editor") return r.editor;
  if (dim == "batch_size") return std::to_string(r.batch_size);
  if (dim == "method") return r.method;
  if (dim == "kind") return std::string(to_string(r.kind));
  if (dim == "split") return r.split.value_or("");
  throw ConfigError("unknown grouping dimension '" + dim + "'");
}

// Row score, with generate rows re-scored at `length` when given.
inline double row_score(const ResultRow& r, std::optional<std::size_t> length) {
  if (r.method == "generate" && length) {
    if (r.generate_length < *length)
      throw Error("row " + r.example_id + " was generated with " + std::to_string(r.generate_length) +
                  " tokens, fewer than " + std::to_string(*length));
    return r.first_match_index && *r.first_match_index <= *length ? 1.0 : 0.0;
  }
  if (!r.score) throw Error("row " + r.example_id + " has no score");
  return *r.score;
}

struct AggregateRow {
  std::vector<std::string> key;
  double accuracy = 0.0;
  std::size_t examples = 0;
  std::size_t queries = 0;
};

struct AggregateTable {
  std::vector<std::string> dimensions;
  std::vector<AggregateRow> rows;
  std::size_t excluded_errors = 0;
};

// Mean over queries per example, then mean over examples per group.
inline AggregateTable aggregate(const std::vector<ResultRow>& rows, const std::vector<std::string>& group_by,
                                std::optional<std::size_t> length = std::nullopt) {
  for (const auto& d : group_by)
    if (std::find(aggregate_dimensions().begin(), aggregate_dimensions().end(), d) == aggregate_dimensions().end())
      throw ConfigError("unknown grouping dimension '" + d + "'");
  AggregateTable table;
  table.dimensions = group_by;
  // group -> example -> (sum, count); per-example sums are order independent
  // because scores are accumulated in sorted query order below.
  std::map<std::vector<std::string>, std::map<std::string, std::map<std::pair<std::size_t, std::string>, double>>> groups;
  for (const auto& r : rows) {
    if (r.error) {
      ++table.excluded_errors;
      continue;
    }
    std::vector<std::string> key;
    for (const auto& d : group_by) key.push_back(dimension_value(r, d));
    // Distinguish rows of one example that differ in non-grouped dimensions.
    const std::string row_id = r.editor + "|" + std::to_string(r.batch_size) + "|" + r.method;
    groups[key][r.dataset + "/" + r.example_id][{r.query_index, row_id}] = row_score(r, length);
  }
  for (const auto& [key, examples] : groups) {
    AggregateRow row;
    row.key = key;
    double total = 0.0;
    for (const auto& [_, scores] : examples) {
      double sum = 0.0;
      for (const auto& [__, s] : scores) sum += s;
      total += sum / static_cast<double>(scores.size());
      row.queries += scores.size();
    }
    row.examples = examples.size();
    row.accuracy = total / static_cast<double>(examples.size());
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::string aggregate_csv(const AggregateTable& t) {
  std::string out;
  for (const auto& d : t.dimensions) out += d + ",";
  out += "accuracy,examples,queries\n";
  for (const auto& r : t.rows) {
    for (const auto& k : r.key) out += csv_field(k) + ",";
    out += format_number(r.accuracy) + "," + std::to_string(r.examples) + "," + std::to_string(r.queries) + "\n";
  }
  return out;
}

// Wide layout: one column per value of `column_dim`.
inline std::string pivot_csv(const AggregateTable& t, const std::string& column_dim) {
  const auto it = std::find(t.dimensions.begin(), t.dimensions.end(), column_dim);
  if (it == t.dimensions.end()) throw ConfigError("pivot dimension '" + column_dim + "' is not grouped");
  const std::size_t ci = static_cast<std::size_t>(it - t.dimensions.begin());
  std::vector<std::string> columns;
  std::map<std::vector<std::string>, std::map<std::string, double>> cells;
  for (const auto& r : t.rows) {
    if (std::find(columns.begin(), columns.end(), r.key[ci]) == columns.end()) columns.push_back(r.key[ci]);
    auto rest = r.key;
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(ci));
    cells[rest][r.key[ci]] = r.accuracy;
  }
  std::string out;
  for (std::size_t i = 0; i < t.dimensions.size(); ++i)
    if (i != ci) out += t.dimensions[i] + ",";
  for (std::size_t i = 0; i < columns.size(); ++i) out += csv_field(columns[i]) + (i + 1 < columns.size() ? "," : "");
  out += "\n";
  for (const auto& [rest, vals] : cells) {
    for (const auto& k : rest) out += csv_field(k) + ",";
    for (std::size_t i = 0; i < columns.size(); ++i) {
      auto v = vals.find(columns[i]);
      out += (v == vals.end() ? std::string() : format_number(v->second)) + (i + 1 < columns.size() ? "," : "");
    }
    out += "\n";
  }
  return out;
}

struct ControlSummary {
  std::string dataset, editor, task_id;
  std::size_t batch_size = 0;
  ControlMetrics metrics;
  std::map<std::string, double> delta;  // vs no_edit; empty for no_edit itself
};

// Pools control rows per (dataset, editor, batch size, task) and takes
// deltas against the no_edit editor at the same dataset and batch size.
inline std::vector<ControlSummary> aggregate_control(const std::vector<ControlRow>& rows) {
  std::map<std::tuple<std::string, std::string, std::size_t, std::string>, std::vector<const ControlRow*>> groups;
  for (const auto& r : rows) groups[{r.dataset, r.editor, r.batch_size, r.item.task_id}].push_back(&r);
  std::vector<ControlSummary> out;
  for (const auto& [key, members] : groups) {
    ControlTask shape;
    shape.task_id = std::get<3>(key);
    shape.mode = members.front()->item.mode;
    shape.metrics = members.front()->metrics;
    std::vector<ControlItemResult> items;
    for (const auto* m : members) items.push_back(m->item);
    ControlSummary s;
    s.dataset = std::get<0>(key);
    s.editor = std::get<1>(key);
    s.batch_size = std::get<2>(key);
    s.task_id = shape.task_id;
    s.metrics = pool_control(shape, std::move(items));
    out.push_back(std::move(s));
  }
  for (auto& s : out) {
    if (s.editor == "no_edit") continue;
    for (const auto& b : out)
      if (b.editor == "no_edit" && b.dataset == s.dataset && b.batch_size == s.batch_size && b.task_id == s.task_id)
        s.delta = delta_vs_baseline(s.metrics, b.metrics);
  }
  return out;
}

inline std::string control_csv(const std::vector<ControlSummary>& summaries) {
  std::string out = "dataset,editor,batch_size,task_id,metric,value,delta_vs_no_edit,items,errors\n";
  for (const auto& s : summaries)
    for (const auto& [name, v] : s.metrics.metrics) {
      auto d = s.delta.find(name);
      out += csv_field(s.dataset) + "," + csv_field(s.editor) + "," + std::to_string(s.batch_size) + "," +
             csv_field(s.task_id) + "," + name + "," + format_number(v) + "," +
             (d == s.delta.end() ? std::string() : format_number(d->second)) + "," +
             std::to_string(s.metrics.item_count) + "," + std::to_string(s.metrics.error_count) + "\n";
    }
  return out;
}

}  // namespace edit_eval
