#include <gtest/gtest.h>

#include <thread>

#include "test_support.hpp"

using namespace edit_eval;
using edit_eval::testing::fixture;
using edit_eval::testing::synthetic_suite;
using edit_eval::testing::TempDir;
using edit_eval::testing::write_suite;

namespace {

// Eight zsRE examples with one query each.
struct MiniSetup {
  RunConfig cfg;
  LmHandle lm;
};

MiniSetup mini_setup(const TempDir& dir) {
  auto suite = synthetic_suite(8, 21, 8);
  for (auto& ex : suite.corpora[Dataset::zsre]) ex.queries.resize(1);
  const auto path = dir.str("zsre.jsonl");
  write_file(path, write_corpus_jsonl(suite.corpora[Dataset::zsre]));
  MiniSetup s;
  s.lm = build_mock_lm(suite.mock_script);
  s.cfg.corpora = {{"zsre", path}};
  s.cfg.editors = {editor_from_string("no_edit"), editor_from_string("in_context")};
  s.cfg.batch_sizes = {1, 4};
  s.cfg.methods["zsre"] = {ScoringMethod::argmax, ScoringMethod::generate};
  s.cfg.generate_length = 16;
  s.cfg.generation_budget = 16;
  s.cfg.seed = 5;
  s.cfg.results_dir = dir.str("results");
  s.cfg.concurrency = 2;
  return s;
}

ResultRow scored(const std::string& example, std::size_t query, double score, const std::string& editor = "in_context") {
  ResultRow r;
  r.dataset = "zsre";
  r.example_id = example;
  r.query_index = query;
  r.editor = editor;
  r.batch_size = 1;
  r.method = "argmax";
  r.score = score;
  return r;
}

}  // namespace

TEST(RunConfigParsing, FixtureConfig) {
  const auto cfg = load_run_config(fixture("configs/mini_sweep.json"));
  EXPECT_EQ(cfg.corpora.size(), 4u);
  EXPECT_TRUE(std::filesystem::path(cfg.corpora[0].second).is_absolute());
  EXPECT_EQ(cfg.editors.size(), 3u);
  EXPECT_EQ(cfg.batch_sizes, (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_EQ(cfg.methods.at("counterfact").size(), 3u);
  EXPECT_EQ(cfg.methods.at("zsre").size(), 2u);
  EXPECT_FALSE(cfg.lm.mock_script.is_null());
  EXPECT_EQ(cfg.control_tasks.size(), 2u);
}

TEST(RunConfigParsing, RejectsBadConfigs) {
  const json base = {{"corpora", {{"zsre", "z.jsonl"}}}, {"editors", {"no_edit"}}, {"batch_sizes", {1}}};
  EXPECT_NO_THROW(run_config_from_json(base));
  auto mc = base;
  mc["methods"] = {"argmax", "multiple_choice"};
  EXPECT_THROW(run_config_from_json(mc), ConfigError);
  auto per_ds = base;
  per_ds["methods"] = {{"counterfact", {"multiple_choice"}}};
  EXPECT_THROW(run_config_from_json(per_ds), ConfigError);
  auto editor = base;
  editor["editors"] = {"memit"};
  EXPECT_THROW(run_config_from_json(editor), ConfigError);
  auto dataset = base;
  dataset["corpora"] = {{"squad", "s.jsonl"}};
  EXPECT_THROW(run_config_from_json(dataset), ConfigError);
  auto missing = base;
  missing.erase("batch_sizes");
  EXPECT_THROW(run_config_from_json(missing), ConfigError);
  EXPECT_EQ(editor_from_string("external:rome").label(), "rome");
  EXPECT_THROW(editor_from_string("external:no_edit"), ConfigError);
}

TEST(RunConfigParsing, ValidationAgainstTheModel) {
  auto cfg = run_config_from_json(
      {{"corpora", {{"zsre", "z.jsonl"}}}, {"editors", {"context_retriever"}}, {"batch_sizes", {4, 1, 4}}});
  EXPECT_EQ(cfg.batch_sizes, (std::vector<std::size_t>{1, 4}));
  const auto no_embed = build_mock_lm(json{{"tokenizer", "word"}});
  EXPECT_THROW(validate(cfg, no_embed.get()), ConfigError);
  cfg.editors = {editor_from_string("external:rome")};
  EXPECT_THROW(validate(cfg, no_embed.get()), ConfigError);
  cfg.editors = {editor_from_string("no_edit")};
  EXPECT_NO_THROW(validate(cfg, no_embed.get()));
  cfg.generation_budget = 4096;
  EXPECT_THROW(validate(cfg, no_embed.get()), ConfigError);
  cfg.generation_budget = 64;
  cfg.batch_sizes = {0};
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(RunSweep, SixtyFourRows) {
  TempDir dir;
  auto s = mini_setup(dir);
  const auto rec = run_sweep(s.cfg, s.lm);
  EXPECT_TRUE(rec.complete);
  EXPECT_EQ(rec.row_count, 64u);
  EXPECT_EQ(rec.error_rows, 0u);
  const auto rows = load_rows(run_paths(s.cfg.results_dir, rec.run_id).rows).rows;
  ASSERT_EQ(rows.size(), 64u);
  std::set<std::tuple<std::string, std::string, std::size_t, std::string>> combos;
  for (const auto& r : rows) {
    EXPECT_EQ(r.run_id, rec.run_id);
    combos.insert({r.example_id, r.editor, r.batch_size, r.method});
    if (r.method == "generate") {
      EXPECT_EQ(r.generate_length, 16u);
      EXPECT_TRUE(r.generated_text);
    }
  }
  EXPECT_EQ(combos.size(), 64u);
  const auto stored = load_run_record(run_paths(s.cfg.results_dir, rec.run_id).record);
  EXPECT_EQ(stored.result_hash, rec.result_hash);
  EXPECT_EQ(stored.cursor.size(), 4u);
  EXPECT_EQ(run_config_from_json(stored.config).editors.size(), 2u);
}

TEST(RunSweep, InContextEditingBeatsNoEdit) {
  TempDir dir;
  auto s = mini_setup(dir);
  const auto rec = run_sweep(s.cfg, s.lm);
  const auto rows = load_rows(run_paths(s.cfg.results_dir, rec.run_id).rows).rows;
  const auto t = aggregate(rows, {"editor", "method"});
  std::map<std::string, double> acc;
  for (const auto& r : t.rows) acc[r.key[0] + "/" + r.key[1]] = r.accuracy;
  EXPECT_EQ(acc["no_edit/generate"], 0.0);
  EXPECT_GT(acc["in_context/generate"], 0.5);
}

TEST(RunSweep, DeterministicAcrossRunsAndConcurrency) {
  TempDir dir;
  auto s = mini_setup(dir);
  const auto a = run_sweep(s.cfg, s.lm);
  s.cfg.concurrency = 8;
  const auto b = run_sweep(s.cfg, s.lm);
  s.cfg.concurrency = 1;
  const auto c = run_sweep(s.cfg, s.lm);
  EXPECT_NE(a.run_id, b.run_id);
  EXPECT_EQ(a.result_hash, b.result_hash);
  EXPECT_EQ(a.result_hash, c.result_hash);
}

TEST(RunSweep, ConcurrentRunsWriteDistinctFiles) {
  TempDir dir;
  auto s = mini_setup(dir);
  RunRecord a, b;
  std::thread t1([&] { a = run_sweep(s.cfg, s.lm); });
  std::thread t2([&] { b = run_sweep(s.cfg, s.lm); });
  t1.join();
  t2.join();
  EXPECT_NE(a.run_id, b.run_id);
  EXPECT_EQ(load_rows(run_paths(s.cfg.results_dir, a.run_id).rows).rows.size(), 64u);
  EXPECT_EQ(load_rows(run_paths(s.cfg.results_dir, b.run_id).rows).rows.size(), 64u);
  EXPECT_EQ(a.result_hash, b.result_hash);
}

TEST(RunSweep, ExplicitRunIdIsExclusive) {
  TempDir dir;
  auto s = mini_setup(dir);
  s.cfg.run_id = "fixed";
  run_sweep(s.cfg, s.lm);
  EXPECT_THROW(run_sweep(s.cfg, s.lm), StoreError);
}

TEST(RunSweep, ResumeFinishesAnInterruptedRun) {
  TempDir dir;
  auto s = mini_setup(dir);
  s.cfg.control_tasks = {fixture("control/hellaswag_mini.json")};
  s.cfg.run_id = "full";
  const auto full = run_sweep(s.cfg, s.lm);
  const auto full_paths = run_paths(s.cfg.results_dir, "full");

  // Fabricate the state after only the first combination finished.
  const auto partial_paths = run_paths(s.cfg.results_dir, "partial");
  auto rec = load_run_record(full_paths.record);
  rec.run_id = "partial";
  rec.complete = false;
  rec.cursor.resize(1);
  const std::string first = rec.cursor[0];
  std::vector<ResultRow> kept;
  for (auto r : load_rows(full_paths.rows).rows)
    if (combo_key(r.dataset, r.editor, r.batch_size) == first) {
      r.run_id = "partial";
      kept.push_back(r);
    }
  std::string control;
  for (auto r : parse_control_rows(read_file(full_paths.control)))
    if (combo_key(r.dataset, r.editor, r.batch_size) == first) {
      r.run_id = "partial";
      control += to_json(r).dump() + "\n";
    }
  rec.row_count = kept.size();
  write_file(partial_paths.rows, serialize_rows(kept));
  write_file(partial_paths.control, control);
  write_run_record(partial_paths.record, rec);

  RunOptions opts;
  opts.resume_run_id = "partial";
  s.cfg.run_id.clear();
  const auto resumed = run_sweep(s.cfg, s.lm, opts);
  EXPECT_TRUE(resumed.complete);
  EXPECT_EQ(resumed.run_id, "partial");
  EXPECT_EQ(resumed.row_count, 64u);
  EXPECT_EQ(resumed.result_hash, full.result_hash);
  EXPECT_EQ(resumed.control_hash, full.control_hash);
  // Resuming a complete run is a no-op.
  EXPECT_EQ(run_sweep(s.cfg, s.lm, opts).row_count, 64u);
}

TEST(RunSweep, OversizeExamplesAreExcludedAndCounted) {
  TempDir dir;
  auto suite = synthetic_suite(6, 4, 4);
  const auto paths = write_suite(suite, dir.path());
  RunConfig cfg;
  for (const auto& p : paths)
    if (p.first == "mquake") cfg.corpora.push_back(p);
  cfg.editors = {editor_from_string("in_context")};
  cfg.batch_sizes = {1, 2};
  cfg.methods["mquake"] = {ScoringMethod::generate};
  cfg.generate_length = 8;
  cfg.results_dir = dir.str("results");
  const auto rec = run_sweep(cfg, build_mock_lm(suite.mock_script));
  // Examples 0 and 3 carry two edits.
  EXPECT_EQ(rec.oversize_examples.at("mquake/in_context/1"), 2u);
  EXPECT_FALSE(rec.oversize_examples.count("mquake/in_context/2"));
  EXPECT_EQ(rec.row_count, 4u * 2 + 6u * 2);
}

TEST(RunSweep, ControlTasksAreChunkedPerBatch) {
  TempDir dir;
  auto s = mini_setup(dir);
  s.cfg.control_tasks = {fixture("control/hellaswag_mini.json"), fixture("control/wikitext_mini.json")};
  const auto rec = run_sweep(s.cfg, s.lm);
  const auto rows = parse_control_rows(read_file(run_paths(s.cfg.results_dir, rec.run_id).control));
  // (3 + 2) items per task pair, for each of 4 combinations.
  EXPECT_EQ(rows.size(), 20u);
  for (const auto& r : rows) {
    EXPECT_FALSE(r.item.error) << *r.item.error;
    if (r.batch_size == 4) EXPECT_EQ(r.item.batch_index, r.item.item_index * 2 / (r.item.task_id == "hellaswag_mini" ? 3 : 2));
  }
  const auto summaries = aggregate_control(rows);
  EXPECT_EQ(summaries.size(), 8u);
  for (const auto& sm : summaries) {
    if (sm.editor == "no_edit") {
      EXPECT_TRUE(sm.delta.empty());
    } else {
      EXPECT_EQ(sm.delta.size(), sm.metrics.metrics.size());
    }
    for (const auto& [name, v] : sm.metrics.metrics)
      if (name.find("perplexity") != std::string::npos) EXPECT_GE(v, 1.0);
  }
  EXPECT_NE(control_csv(summaries).find("delta_vs_no_edit"), std::string::npos);
}

TEST(RunSweep, ExternalEditorsRouteToVariants) {
  TempDir dir;
  auto s = mini_setup(dir);
  std::map<std::string, LmHandle> variants{{"rome-b4-0", s.lm}, {"rome-b4-1", s.lm}};
  LmServer server(s.lm, variants);
  server.start();
  RemoteOptions o;
  o.base_url = server.url();
  o.embedder = true;
  s.cfg.editors = {editor_from_string("external:rome")};
  s.cfg.batch_sizes = {4};
  s.cfg.retry.initial_backoff = std::chrono::milliseconds(1);
  const auto rec = run_sweep(s.cfg, connect_remote_lm(o));
  EXPECT_EQ(rec.row_count, 16u);
  EXPECT_EQ(rec.error_rows, 0u);
  std::set<std::string> seen;
  for (const auto& [path, body] : server.requests())
    if (body.contains("model_variant")) seen.insert(body["model_variant"].get<std::string>());
  EXPECT_EQ(seen, (std::set<std::string>{"rome-b4-0", "rome-b4-1"}));
  server.stop();
}

TEST(RunSweep, ModelErrorsBecomeErrorRows) {
  TempDir dir;
  auto s = mini_setup(dir);
  auto script = build_mock_lm(json{{"tokenizer", "word"}, {"context_window", 20}});
  s.cfg.editors = {editor_from_string("no_edit")};
  s.cfg.batch_sizes = {1};
  s.cfg.generation_budget = 8;
  s.cfg.generate_length = 16;
  const auto rec = run_sweep(s.cfg, script);
  const auto rows = load_rows(run_paths(s.cfg.results_dir, rec.run_id).rows).rows;
  ASSERT_EQ(rows.size(), 16u);
  std::size_t overflow = 0;
  for (const auto& r : rows)
    if (r.error && r.error->rfind("context_overflow", 0) == 0) ++overflow;
  EXPECT_EQ(rec.error_rows, overflow);
  EXPECT_EQ(overflow, 8u);  // every generate row needs prompt + 16 > 20 tokens
}

TEST(Aggregate, MeanOverQueriesThenExamples) {
  const std::vector<ResultRow> rows{scored("a", 0, 1.0), scored("b", 0, 1.0), scored("b", 1, 0.0)};
  const auto t = aggregate(rows, {"dataset"});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_DOUBLE_EQ(t.rows[0].accuracy, 0.75);
  EXPECT_EQ(t.rows[0].examples, 2u);
  EXPECT_EQ(t.rows[0].queries, 3u);
}

TEST(Aggregate, InvariantToRowOrder) {
  SplitMix64 rng(3);
  std::vector<ResultRow> rows;
  for (int e = 0; e < 40; ++e)
    for (std::size_t q = 0; q < 1 + rng.below(4); ++q) {
      auto r = scored("ex" + std::to_string(e), q, rng.unit(), rng.below(2) ? "no_edit" : "in_context");
      r.kind = static_cast<TestCaseKind>(rng.below(3));
      rows.push_back(r);
    }
  const auto a = aggregate(rows, {"editor", "kind"});
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = rows;
    seeded_shuffle(shuffled, trial);
    const auto b = aggregate(shuffled, {"editor", "kind"});
    ASSERT_EQ(aggregate_csv(a), aggregate_csv(b));
  }
}

TEST(Aggregate, ErrorsAreExcludedAndCounted) {
  auto bad = scored("b", 1, 0.0);
  bad.score.reset();
  bad.error = "transport: down";
  const auto t = aggregate({scored("a", 0, 1.0), scored("b", 0, 0.5), bad}, {"editor"});
  EXPECT_EQ(t.excluded_errors, 1u);
  EXPECT_DOUBLE_EQ(t.rows[0].accuracy, 0.75);
  EXPECT_THROW(aggregate({}, {"colour"}), ConfigError);
  EXPECT_TRUE(aggregate({bad}, {"editor"}).rows.empty());
}

TEST(Aggregate, GenerateRowsRescoreAtShorterLengths) {
  auto g = scored("a", 0, 1.0);
  g.method = "generate";
  g.generate_length = 64;
  g.first_match_index = 10;
  EXPECT_EQ(aggregate({g}, {"method"}, 8).rows[0].accuracy, 0.0);
  EXPECT_EQ(aggregate({g}, {"method"}, 10).rows[0].accuracy, 1.0);
  EXPECT_EQ(aggregate({g}, {"method"}).rows[0].accuracy, 1.0);
  EXPECT_THROW(aggregate({g}, {"method"}, 65), Error);
}

TEST(Aggregate, CsvAndPivotLayouts) {
  std::vector<ResultRow> rows;
  for (const char* editor : {"no_edit", "in_context"})
    for (std::size_t bs : {1, 16}) {
      auto r = scored(std::string("x") + editor, 0, std::string(editor) == "no_edit" ? 0.0 : 1.0, editor);
      r.batch_size = bs;
      rows.push_back(r);
    }
  const auto t = aggregate(rows, {"editor", "batch_size"});
  EXPECT_EQ(aggregate_csv(t),
            "editor,batch_size,accuracy,examples,queries\n"
            "in_context,1,1,1,1\n"
            "in_context,16,1,1,1\n"
            "no_edit,1,0,1,1\n"
            "no_edit,16,0,1,1\n");
  EXPECT_EQ(pivot_csv(t, "batch_size"),
            "editor,1,16\n"
            "in_context,1,1\n"
            "no_edit,0,0\n");
  EXPECT_THROW(pivot_csv(t, "method"), ConfigError);
}
