// Acceptance suite: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "test_support.hpp"

using namespace edit_eval;
using namespace edit_eval::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects violations; the first few are kept for the report.
class Check {
 public:
  void require(bool ok, const std::string& what) {
    if (ok) return;
    ++violations_;
    if (violations_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  void info(const std::string& s) { info_ += (info_.empty() ? "" : ", ") + s; }
  Outcome outcome() const {
    std::string d = info_;
    if (violations_) d += (d.empty() ? "" : "; ") + std::to_string(violations_) + " violations: " + notes_;
    return {violations_ == 0, d};
  }

 private:
  std::size_t violations_ = 0;
  std::string notes_, info_;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

TestQuery make_query(std::string prompt, std::vector<std::string> expected,
                     std::optional<std::vector<std::string>> original = std::nullopt) {
  return {std::move(prompt), std::move(expected), std::move(original), TestCaseKind::efficacy, {}};
}

// Keeps the leading examples of each dataset until exactly `per_dataset` queries remain.
void trim_queries(SyntheticSuite& s, std::size_t per_dataset) {
  for (auto& [d, exs] : s.corpora) {
    std::size_t total = 0;
    std::vector<DatasetExample> kept;
    for (auto& ex : exs) {
      if (total == per_dataset) break;
      if (total + ex.queries.size() > per_dataset) ex.queries.resize(per_dataset - total);
      total += ex.queries.size();
      kept.push_back(std::move(ex));
    }
    if (total != per_dataset) throw Error("synthetic suite too small");
    exs = std::move(kept);
  }
}

// ---------------------------------------------------------------------------

Outcome argmax_arithmetic() {
  Check c;
  const auto t0 = Clock::now();
  const auto lm = build_mock_lm(json{{"tokenizer", "word"},
                                     {"rules",
                                      {{{"after", "built it?"}, {"continuation", " Bethlehem Steel"}},
                                       {{"after", "built it? Bethlehem Steel"}, {"logprobs", {{" Works", -0.1}, {" Company", -2.0}}}},
                                       {{"after", "Steel Company"}, {"continuation", " Ltd"}}}}});
  const auto m = make_edited_model(EditorKind::no_edit, lm, {});
  const auto s = score_argmax(m, make_query("Who built it?", {"Bethlehem Steel Company Ltd"}));
  const double secs = seconds_since(t0);
  c.require(s.total_tokens == 4 && s.matched_tokens == 3, "expected 3 of 4 argmax tokens");
  c.require(s.score == 0.75, "score " + fmt(s.score, 17));
  c.require(secs < 1.0, "took " + fmt(secs) + " s");
  c.info("score=" + fmt(s.score, 2) + " in " + fmt(secs) + " s");
  return c.outcome();
}

struct CurveSweep {
  RunRecord rec;
  std::vector<ResultRow> rows;
  std::size_t generate_calls = 0;
  double seconds = 0;
};

// 512 queries (128 per dataset) through two editors at L=64, with call counting.
const CurveSweep& curve_sweep() {
  static const CurveSweep sweep = [] {
    static TempDir dir;
    auto suite = synthetic_suite(64, 31);
    trim_queries(suite, 128);
    RunConfig cfg;
    for (const auto& [ds, path] : write_suite(suite, dir.path())) {
      cfg.corpora.emplace_back(ds, path);
      cfg.methods[ds] = {ScoringMethod::generate};
    }
    cfg.editors = {editor_from_string("no_edit"), editor_from_string("in_context")};
    cfg.batch_sizes = {4};
    cfg.generate_length = 64;
    cfg.generation_budget = 64;
    cfg.seed = 2;
    cfg.concurrency = 4;
    cfg.results_dir = dir.str("results");
    auto counting = std::make_shared<CountingModel>(build_mock_lm(suite.mock_script));
    CurveSweep out;
    const auto t0 = Clock::now();
    out.rec = run_sweep(cfg, counting);
    out.rows = load_rows(run_paths(cfg.results_dir, out.rec.run_id).rows).rows;
    out.seconds = seconds_since(t0);
    out.generate_calls = counting->counters().generate;
    return out;
  }();
  return sweep;
}

Outcome curve_monotonicity() {
  Check c;
  const auto t0 = Clock::now();
  const auto& s = curve_sweep();
  std::set<std::tuple<std::string, std::string, std::size_t>> queries;
  for (const auto& r : s.rows) queries.insert({r.example_id, std::to_string(r.query_index), 0});
  c.require(queries.size() == 512, std::to_string(queries.size()) + " distinct queries");
  c.require(s.rec.error_rows == 0, std::to_string(s.rec.error_rows) + " error rows");
  const auto curves = accuracy_curves(s.rows, 64);
  std::size_t points = 0;
  for (const auto& [key, curve] : curves) {
    c.require(curve.size() == 64, "curve length " + std::to_string(curve.size()));
    for (std::size_t l = 1; l < curve.size(); ++l, ++points)
      c.require(curve[l] >= curve[l - 1], std::get<0>(key) + "/" + std::get<1>(key) + " drops at l=" + std::to_string(l + 1));
  }
  // The aggregate table re-scored at every length must agree.
  std::map<std::string, double> previous;
  for (std::size_t l = 1; l <= 64; ++l)
    for (const auto& row : aggregate(s.rows, {"dataset", "editor", "batch_size"}, l).rows) {
      std::string key;
      for (const auto& v : row.key) key += v + "/";
      if (auto it = previous.find(key); it != previous.end())
        c.require(row.accuracy >= it->second, key + " aggregate drops at l=" + std::to_string(l));
      previous[key] = row.accuracy;
    }
  const double secs = seconds_since(t0);
  c.require(secs < 60.0, "took " + fmt(secs) + " s");
  c.info(std::to_string(curves.size()) + " curves, " + std::to_string(points) + " steps checked in " + fmt(secs) + " s");
  return c.outcome();
}

Outcome one_generation_rule() {
  Check c;
  const auto& s = curve_sweep();
  std::set<std::tuple<std::string, std::size_t, std::string, std::size_t>> combos;
  std::size_t generate_rows = 0;
  for (const auto& r : s.rows)
    if (r.method == "generate") {
      ++generate_rows;
      combos.insert({r.example_id, r.query_index, r.editor, r.batch_size});
      c.require(r.generated_tokens.size() == 64, "row with " + std::to_string(r.generated_tokens.size()) + " tokens");
    }
  c.require(combos.size() == generate_rows, "duplicate generate rows");
  c.require(s.generate_calls == combos.size(),
            std::to_string(s.generate_calls) + " generate calls for " + std::to_string(combos.size()) + " combinations");
  std::size_t per_length = 0;
  for (std::size_t l = 1; l <= 64; ++l) per_length += !aggregate(s.rows, {"editor"}, l).rows.empty();
  c.require(per_length == 64, std::to_string(per_length) + " per-length accuracies");
  c.info(std::to_string(s.generate_calls) + " calls for " + std::to_string(combos.size()) +
         " (query, editor, batch) combinations, 64 lengths scored");
  return c.outcome();
}

Outcome case_sensitive_matching() {
  Check c;
  const auto lm = build_mock_lm(fixture_json("mock/answer_examples.json"));
  const auto m = make_edited_model(EditorKind::no_edit, lm, {});
  const auto out = score_generate(m, make_query("what is the main mineral in lithium batteries?", {"lithium"}), 64);
  // Hand count over the word tokenizer: "A" ":" "\n\nLithium" " is" " the" " main" " component" " of" " the"
  // " anode" "." " The" " cathode" " is" " made" " of" " carbon" " and" " the" " electrolyte" " is" " a"
  // " mixture" " of" " lithium" -> the lowercase word is token 25.
  constexpr std::size_t kHandIndex = 25;
  std::size_t capital_at = 0;
  for (std::size_t i = 0; i < out.prefixes.size() && !capital_at; ++i)
    if (out.prefixes[i].find("Lithium") != std::string::npos) capital_at = i + 1;
  c.require(capital_at > 0 && capital_at < kHandIndex, "capitalised occurrence not found before the lowercase one");
  c.require(out.first_match_index == std::optional<std::size_t>(kHandIndex),
            "first match " + (out.first_match_index ? std::to_string(*out.first_match_index) : std::string("none")));
  c.require(!out.success_at(capital_at), "matched at the capitalised occurrence");
  c.info("capitalised at " + std::to_string(capital_at) + ", match at " +
         (out.first_match_index ? std::to_string(*out.first_match_index) : "none"));
  return c.outcome();
}

Outcome mc_flip_and_tie() {
  Check c;
  SplitMix64 rng(77);
  json rules = json::array();
  struct Case {
    std::string prompt, a, b;
    double lp_a, lp_b;
  };
  std::vector<Case> cases;
  auto q8 = [&] { return -static_cast<double>(1 + rng.below(40)) / 8.0; };
  for (std::size_t i = 0; i < 200; ++i) {
    Case k;
    k.prompt = "Subject" + std::to_string(i) + " works in";
    k.a = "N" + std::to_string(i) + " City";
    k.b = "O" + std::to_string(i) + " Town";
    const double a1 = q8(), a2 = q8();
    // One case in five is an exact tie reached through different tokens.
    const double b1 = i % 5 == 0 ? a2 : q8(), b2 = i % 5 == 0 ? a1 : q8();
    rules.push_back({{"after", k.prompt}, {"logprobs", {{" N" + std::to_string(i), a1}, {" O" + std::to_string(i), b1}}}});
    rules.push_back({{"after", "N" + std::to_string(i)}, {"logprobs", {{" City", a2}}}});
    rules.push_back({{"after", "O" + std::to_string(i)}, {"logprobs", {{" Town", b2}}}});
    k.lp_a = a1 + a2;
    k.lp_b = b1 + b2;
    cases.push_back(k);
  }
  const auto m = make_edited_model(EditorKind::no_edit, word_mock(rules), {});
  std::size_t flips = 0, ties = 0;
  for (const auto& k : cases) {
    const auto fwd = score_multiple_choice(m, make_query(k.prompt, {k.a}, std::vector<std::string>{k.b}));
    const auto rev = score_multiple_choice(m, make_query(k.prompt, {k.b}, std::vector<std::string>{k.a}));
    c.require(fwd.logprob_new == k.lp_a && fwd.logprob_original == k.lp_b, k.prompt + " summed logprobs");
    if (fwd.logprob_new != fwd.logprob_original) {
      ++flips;
      c.require(fwd.success != rev.success, k.prompt + " did not flip");
      c.require(fwd.success == (k.lp_a > k.lp_b), k.prompt + " wrong direction");
    } else {
      ++ties;
      c.require(!fwd.success && !rev.success, k.prompt + " tie counted as success");
    }
    const auto same = score_multiple_choice(m, make_query(k.prompt, {k.a}, std::vector<std::string>{k.a}));
    c.require(!same.success, k.prompt + " equal targets succeeded");
  }
  c.require(ties >= 40, "only " + std::to_string(ties) + " ties exercised");
  c.info(std::to_string(flips) + " flips, " + std::to_string(ties) + " ties, 200 equal-target checks");
  return c.outcome();
}

Outcome knn_exactness() {
  Check c;
  const auto t0 = Clock::now();
  SplitMix64 rng(2048);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = trial == 0 ? 2048 : 1 + rng.below(2048);
    const std::size_t dim = trial == 0 ? 64 : 1 + rng.below(64);
    const std::size_t k = 1 + rng.below(16);
    RetrievalIndex idx;
    idx.dimension = dim;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(dim);
      for (auto& x : v) x = rng.gaussian();
      normalize_in_place(v);
      idx.edit_ids.push_back("e" + std::to_string(i));
      idx.vectors.push_back(std::move(v));
    }
    std::vector<double> q(dim);
    for (auto& x : q) x = rng.gaussian();
    // Brute force: cosine against unit vectors, ties to the earlier entry.
    double qn = 0;
    for (double x : q) qn += x * x;
    qn = std::sqrt(qn);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t d = 0; d < dim; ++d) s += idx.vectors[i][d] * q[d];
      all.emplace_back(-s / qn, i);
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    std::vector<std::string> expect;
    for (std::size_t i = 0; i < std::min(k, n); ++i) expect.push_back(idx.edit_ids[all[i].second]);
    const auto got = retrieve_knn(idx, q, k);
    c.require(got == expect, "trial " + std::to_string(trial) + " (n=" + std::to_string(n) + ", dim=" + std::to_string(dim) + ")");
  }
  const double secs = seconds_since(t0);
  c.require(secs < 10.0, "took " + fmt(secs) + " s");
  c.info("100 indices in " + fmt(secs) + " s");
  return c.outcome();
}

Outcome context_cutoff() {
  Check c;
  constexpr std::size_t kWindow = 32, kBudget = 8;
  const auto lm = word_mock(json::array(), kWindow);
  SplitMix64 rng(32);
  std::size_t checked = 0, truncated_total = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rng.below(9);
    std::vector<EditRequest> batch;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string subj = "Subject" + std::to_string(rng.below(1000));
      batch.push_back(make_edit("e" + std::to_string(i), subj, "The home of " + subj + filler(rng.below(4), rng.next()) + " is",
                                "Town" + std::to_string(i)));
    }
    const std::string query = "Where is Subject" + std::to_string(trial) + filler(rng.below(6), rng.next()) + "?";
    const auto m = make_edited_model(EditorKind::in_context, lm, batch, {4, kBudget});
    const auto a = assemble_prompt(m, query);
    const std::string full = a.full();
    const std::size_t total = lm->tokenize(full).size();
    c.require(total <= kWindow - kBudget, "prompt of " + std::to_string(total) + " tokens");
    c.require(full.size() >= query.size() && full.compare(full.size() - query.size(), query.size(), query) == 0,
              "query suffix altered");
    // Token arithmetic: keep the longest statement prefix whose prompt stays below window - budget.
    std::size_t fit = 0;
    for (std::size_t k = 1; k <= n; ++k) {
      std::string block;
      for (std::size_t i = 0; i < k; ++i) block += batch[i].statement + "\n";
      if (lm->tokenize(block + "\n" + query).size() < kWindow - kBudget) fit = k;
    }
    c.require(a.truncated_edit_count == n - fit, "truncated " + std::to_string(a.truncated_edit_count) + ", expected " +
                                                     std::to_string(n - fit));
    truncated_total += a.truncated_edit_count;
    ++checked;
  }
  c.info(std::to_string(checked) + " prompts, " + std::to_string(truncated_total) + " statements cut");
  return c.outcome();
}

Outcome control_closed_forms() {
  Check c;
  constexpr double kTol = 1e-9;
  // Cloze: target logprobs -1 and -3.
  const auto lm = word_mock({{{"after", "one two"}, {"logprobs", {{" three", -1.0}, {" x", -2.0}}}},
                             {{"after", "four five"}, {"logprobs", {{" six", -3.0}, {" x", -0.5}}}}});
  const auto m = make_edited_model(EditorKind::no_edit, lm, {});
  ControlTask cloze{"lam", ControlMode::cloze, {}, {"acc", "perplexity"}};
  cloze.items.resize(2);
  cloze.items[0].context = "one two";
  cloze.items[0].target_word = "three";
  cloze.items[1].context = "four five";
  cloze.items[1].target_word = "six";
  const double ppl = evaluate_task_chunked({&m}, cloze).metrics.at("perplexity");
  const double ppl_oracle = std::exp(-(-1.0 + -3.0) / 2.0);
  c.require(std::fabs(ppl - ppl_oracle) <= kTol, "perplexity " + fmt(ppl, 12));

  // Document: nll 10 over 20 bytes.
  ControlTask doc{"wiki", ControlMode::document_perplexity, {}, default_metrics(ControlMode::document_perplexity)};
  doc.items.resize(1);
  ControlItemResult r;
  r.task_id = "wiki";
  r.mode = ControlMode::document_perplexity;
  r.doc = {10.0, 5, 20};
  const double bpb = pool_control(doc, {r}).metrics.at("bits_per_byte");
  const double bpb_oracle = 10.0 / 20.0 / std::log(2.0);
  c.require(std::fabs(bpb - bpb_oracle) <= kTol, "bits_per_byte " + fmt(bpb, 12));

  // Confusion (tp, fp, fn, tn) = (3, 1, 2, 4).
  const auto bm = binary_metrics_from_counts(3, 1, 2, 4);
  const double f1_oracle = 2.0 * (3.0 / 4.0) * (3.0 / 5.0) / (3.0 / 4.0 + 3.0 / 5.0);
  const double mcc_oracle = (3.0 * 4.0 - 1.0 * 2.0) / std::sqrt(4.0 * 5.0 * 5.0 * 6.0);
  c.require(std::fabs(bm.f1 - f1_oracle) <= kTol, "f1 " + fmt(bm.f1, 12));
  c.require(std::fabs(bm.mcc - mcc_oracle) <= kTol, "mcc " + fmt(bm.mcc, 12));
  const std::vector<int> pred{1, 1, 1, 1, 0, 0, 0, 0, 0, 0}, gold{1, 1, 1, 0, 1, 1, 0, 0, 0, 0};
  const auto bv = compute_binary_metrics(pred, gold);
  c.require(std::fabs(bv.f1 - f1_oracle) <= kTol && std::fabs(bv.mcc - mcc_oracle) <= kTol, "label-vector metrics");
  c.info("ppl=" + fmt(ppl, 6) + " bpb=" + fmt(bpb, 6) + " f1=" + fmt(bm.f1, 6) + " mcc=" + fmt(bm.mcc, 6));
  return c.outcome();
}

Outcome chunking_invariance() {
  Check c;
  const auto lm = build_mock_lm(json{{"tokenizer", "word"},
                                     {"context_window", 48},
                                     {"fallback",
                                      {{"logprobs",
                                        {{" well", -1.5}, {" so", -2.25}, {" indeed", -3.0}, {" then", -2.5},
                                         {" also", -2.0}, {" maybe", -4.0}, {" quite", -3.5}, {" rather", -4.5}}}}}});
  std::vector<EditedModel> models;
  for (int i = 0; i < 7; ++i) models.push_back(make_edited_model(EditorKind::no_edit, lm, {}, {4, 16}));
  ControlTask cloze{"lam", ControlMode::cloze, {}, {"acc", "perplexity"}};
  SplitMix64 rng(5);
  for (int i = 0; i < 23; ++i) {
    ControlItem it;
    it.context = "Story " + std::to_string(i) + filler(3 + rng.below(8), rng.next());
    it.target_word = std::string(filler(1, rng.next()).substr(1));
    cloze.items.push_back(it);
  }
  const std::vector<ControlTask> tasks{choice_task("hs", 31, 12), choice_task("cola", 17, 4, {"acc", "f1", "mcc"}), cloze,
                                       document_task("wiki", 11, 13)};
  std::size_t compared = 0;
  for (const auto& task : tasks) {
    const auto base = evaluate_task_chunked({&models[0]}, task);
    for (std::size_t chunks : {3, 7}) {
      std::vector<const EditedModel*> ptrs;
      for (std::size_t i = 0; i < chunks; ++i) ptrs.push_back(&models[i]);
      const auto chunked = evaluate_task_chunked(ptrs, task);
      c.require(chunked.metrics == base.metrics && chunked.sums == base.sums,
                task.task_id + " differs at " + std::to_string(chunks) + " chunks");
      compared += base.metrics.size();
    }
  }
  c.info(std::to_string(tasks.size()) + " tasks, " + std::to_string(compared) + " metric comparisons");
  return c.outcome();
}

std::size_t brute_ngrams(const std::vector<TokenId>& t, std::size_t max_n) {
  std::size_t total = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::set<std::vector<TokenId>> seen;
    for (std::size_t i = 0; i + n <= t.size(); ++i) seen.emplace(t.begin() + i, t.begin() + i + n);
    total += seen.size();
  }
  return total;
}

Outcome ngram_oracle() {
  Check c;
  SplitMix64 rng(1000);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = rng.below(65), alphabet = 1 + rng.below(12);
    std::vector<TokenId> t(len);
    for (auto& x : t) x = rng.below(alphabet);
    c.require(unique_ngrams(t, 5) == brute_ngrams(t, 5), "trial " + std::to_string(trial));
  }
  std::vector<TokenId> distinct(64);
  for (std::size_t i = 0; i < 64; ++i) distinct[i] = 1000 + i;
  const auto d = unique_ngrams(distinct);
  c.require(d == 310, "all-distinct gives " + std::to_string(d));
  c.info("1000 sequences, all-distinct=" + std::to_string(d));
  return c.outcome();
}

RatingItem rating_item(const std::string& id, const std::string& dataset, const std::string& editor,
                       std::optional<std::size_t> first_match) {
  RatingItem it;
  it.item_id = id;
  it.dataset = dataset;
  it.example_id = id;
  it.editor = editor;
  it.batch_size = 1;
  it.prompt = "prompt " + id;
  it.generated_text = "generated " + id;
  it.expected = {"answer"};
  it.first_match_index = first_match;
  it.generate_length = 64;
  return it;
}

Outcome confusion_accounting() {
  Check c;
  SplitMix64 rng(40);
  std::vector<RatingItem> items;
  std::map<std::string, bool> truths;
  items.push_back(rating_item("rome", "counterfact", "in_context", 40));
  truths["rome"] = false;
  for (int i = 1; i < 40; ++i) {
    const std::string id = "item" + std::to_string(i);
    std::optional<std::size_t> idx;
    if (rng.below(4)) idx = 1 + rng.below(64);
    items.push_back(rating_item(id, rng.below(2) ? "zsre" : "counterfact", rng.below(2) ? "in_context" : "no_edit", idx));
    truths[id] = rng.below(2) == 1;
  }
  const auto report = confusion_by_length(items, truths, 64);
  c.require(report.missing_judgments == 0, "missing judgments");
  // Pooled over facets, then per facet.
  std::vector<ConfusionCounts> pooled(64);
  for (const auto& [facet, counts] : report.facets) {
    c.require(counts.size() == 64, "facet curve length");
    for (std::size_t l = 0; l < counts.size(); ++l) {
      pooled[l].tp += counts[l].tp;
      pooled[l].fp += counts[l].fp;
      pooled[l].tn += counts[l].tn;
      pooled[l].fn += counts[l].fn;
      if (l) {
        c.require(counts[l].total() == counts[0].total(), "facet total changes at l=" + std::to_string(l + 1));
        c.require(counts[l].tp + counts[l].fp >= counts[l - 1].tp + counts[l - 1].fp,
                  "facet positives drop at l=" + std::to_string(l + 1));
      }
    }
  }
  for (std::size_t l = 0; l < 64; ++l) {
    c.require(pooled[l].total() == 40, "total " + std::to_string(pooled[l].total()) + " at l=" + std::to_string(l + 1));
    if (l) c.require(pooled[l].tp + pooled[l].fp >= pooled[l - 1].tp + pooled[l - 1].fp, "positives drop");
  }
  // Rome pattern: the item alone in its facet would be TN below 40 and FP from 40.
  const auto rome = confusion_by_length({items[0]}, {{"rome", false}}, 64).facets.at({"in_context", "counterfact"});
  std::size_t transition = 0;
  for (std::size_t l = 1; l <= 64; ++l) {
    const auto& k = rome[l - 1];
    c.require(k.total() == 1, "rome total");
    if (l < 40) c.require(k.tn == 1, "rome not TN at l=" + std::to_string(l));
    if (l >= 40) c.require(k.fp == 1, "rome not FP at l=" + std::to_string(l));
    if (l > 1 && rome[l - 2].tn == 1 && k.fp == 1) transition = l;
  }
  c.require(transition == 40, "transition at " + std::to_string(transition));
  c.info("40 items, " + std::to_string(report.facets.size()) + " facets, Rome TN->FP at l=" + std::to_string(transition));
  return c.outcome();
}

// Stripped canonical rows: timing and run id are not part of the result.
std::string stripped_rows(const std::string& path) {
  auto rows = load_rows(path).rows;
  std::string out;
  for (auto& r : rows) {
    r.timing_ms = 0;
    r.run_id.clear();
    out += to_json(r).dump() + "\n";
  }
  return out;
}

Outcome end_to_end_determinism() {
  Check c;
  const auto t0 = Clock::now();
  TempDir dir;
  const auto suite = synthetic_suite(32, 9);
  const auto corpora = write_suite(suite, dir.path());
  write_file(dir.str("hellaswag.json"), to_json(choice_task("hellaswag_mini", 12, 3)).dump());
  write_file(dir.str("wikitext.json"), to_json(document_task("wikitext_mini", 6, 4)).dump());
  write_file(dir.str("mock.json"), suite.mock_script.dump());
  json cfg_json{{"corpora", json::object()},
                {"editors", {"no_edit", "in_context", "context_retriever"}},
                {"batch_sizes", {1, 4, 16}},
                {"methods", "applicable"},
                {"generate_length", 64},
                {"seed", 17},
                {"knn", 4},
                {"lm", {{"mock_script", "mock.json"}}},
                {"control_tasks", {"hellaswag.json", "wikitext.json"}},
                {"results_dir", dir.str("results")}};
  for (const auto& [ds, path] : corpora) cfg_json["corpora"][ds] = path;

  std::vector<RunRecord> runs;
  std::vector<std::string> texts, control_texts;
  for (std::size_t conc : {8, 8, 1}) {
    cfg_json["concurrency"] = conc;
    const auto cfg = run_config_from_json(cfg_json, dir.path());
    runs.push_back(run_sweep(cfg));
    const auto paths = run_paths(cfg.results_dir, runs.back().run_id);
    texts.push_back(stripped_rows(paths.rows));
    control_texts.push_back(control_rows_hash(parse_control_rows(read_file(paths.control))));
  }
  const double secs = seconds_since(t0);
  std::set<std::string> datasets, editors, methods;
  std::set<std::size_t> sizes;
  for (const auto& line : split(texts[0], '\n')) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    datasets.insert(j["dataset"]);
    editors.insert(j["editor"]);
    methods.insert(j["method"]);
    sizes.insert(j["batch_size"].get<std::size_t>());
  }
  c.require(datasets.size() == 4 && editors.size() == 3 && sizes.size() == 3 && methods.size() == 3, "sweep coverage");
  c.require(runs[0].row_count > 0 && runs[0].control_row_count > 0, "empty run");
  c.require(runs[0].error_rows == 0, std::to_string(runs[0].error_rows) + " error rows");
  for (std::size_t i = 1; i < runs.size(); ++i) {
    c.require(runs[i].run_id != runs[0].run_id, "run ids collide");
    c.require(runs[i].result_hash == runs[0].result_hash, "result hash differs for run " + std::to_string(i));
    c.require(runs[i].control_hash == runs[0].control_hash, "control hash differs for run " + std::to_string(i));
    c.require(texts[i] == texts[0], "row files differ for run " + std::to_string(i));
    c.require(control_texts[i] == control_texts[0], "control rows differ for run " + std::to_string(i));
  }
  c.require(secs < 300.0, "took " + fmt(secs) + " s");
  c.info("3 runs x " + std::to_string(runs[0].row_count) + " rows + " + std::to_string(runs[0].control_row_count) +
         " control rows, hash " + runs[0].result_hash + ", " + fmt(secs, 1) + " s");
  return c.outcome();
}

Outcome rating_quotas() {
  Check c;
  std::vector<RatingUnit> units;
  for (const char* ds : {"zsre", "counterfact", "mquake", "rippleedits"})
    for (std::size_t k = 0; k < 80; ++k)
      for (SuccessClass cls : {SuccessClass::late, SuccessClass::early}) {
        RatingUnit u;
        u.dataset = ds;
        u.example_id = std::string(ds) + "-" + std::to_string(k);
        u.query_index = cls == SuccessClass::late ? 0 : 1;
        u.batch_size = 1;
        u.length = 64;
        u.success_class = cls;
        u.answers["in_context"] = {cls == SuccessClass::late ? std::optional<std::size_t>(50) : 3, "text", {}};
        units.push_back(u);
      }
  const auto a = sample_rating_set(units, 150, 50, 11);
  auto shuffled = units;
  seeded_shuffle(shuffled, 5);
  const auto b = sample_rating_set(shuffled, 150, 50, 11);
  auto sorted_quotas = [](const std::map<std::string, std::size_t>& q) {
    std::vector<std::size_t> v;
    for (const auto& [_, n] : q) v.push_back(n);
    std::sort(v.rbegin(), v.rend());
    return v;
  };
  const auto late = sorted_quotas(a.quotas.at("late")), early = sorted_quotas(a.quotas.at("early"));
  c.require(late == std::vector<std::size_t>({38, 38, 37, 37}), "late quotas");
  c.require(early == std::vector<std::size_t>({13, 13, 12, 12}), "early quotas");
  std::map<std::string, std::size_t> late_count;
  for (const auto& u : a.late) ++late_count[u.dataset];
  c.require(late_count == a.quotas.at("late"), "sampled late units do not match quotas");
  c.require(a.late.size() == 150 && a.early.size() == 50, "sample sizes");
  bool same = a.late.size() == b.late.size() && a.early.size() == b.early.size();
  for (std::size_t i = 0; same && i < a.late.size(); ++i) same = a.late[i].key() == b.late[i].key();
  for (std::size_t i = 0; same && i < a.early.size(); ++i) same = a.early[i].key() == b.early[i].key();
  c.require(same, "sample depends on input order");
  c.info("late {38,38,37,37}, early {13,13,12,12}");
  return c.outcome();
}

Outcome judge_pipeline() {
  Check c;
  const char* datasets[] = {"zsre", "counterfact", "mquake", "rippleedits"};
  std::vector<RatingItem> items;
  std::map<std::string, bool> truths;
  json rules = json::array();
  for (int i = 0; i < 20; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "item-%02d", i);
    auto it = rating_item(id, datasets[i % 4], "in_context", i % 2 == 0 ? std::optional<std::size_t>(5) : std::nullopt);
    it.generated_text = std::string("reply ") + id + " end";
    truths[id] = i % 2 == 0;
    // The scripted judge disagrees with the truth on items 3 and 11.
    const bool says = (i == 3 || i == 11) ? !truths[id] : truths[id];
    rules.push_back({{"after", std::string(kVerdictCue)},
                     {"requires", "Generated answer: " + it.generated_text + "\n"},
                     {"continuation", says ? " Yes" : " No"}});
    items.push_back(it);
  }
  const auto judge = build_mock_lm(json{{"tokenizer", "word"}, {"context_window", 4096}, {"rules", rules}});
  const auto run = run_judge(*judge, items);
  c.require(run.errors.empty() && run.unparseable.empty(), "judge errors or unparseable replies");
  const auto decisions = run.decisions();
  c.require(decisions.size() == 20, std::to_string(decisions.size()) + " decisions");
  const double acc = judge_accuracy(decisions, truths);
  c.require(acc == 0.9, "accuracy " + fmt(acc, 17));
  const auto table = judge_table({{"Mock Judge", decisions}}, items, truths);
  const auto csv = judge_table_csv(table);
  const auto lines = split(csv, '\n');
  c.require(!lines.empty() && lines[0] == "Dataset,Mock Judge,Exact Match", "header '" + std::string(lines.at(0)) + "'");
  std::size_t body = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) body += !lines[i].empty();
  c.require(body == 4, std::to_string(body) + " dataset rows");
  c.require(table.columns == std::vector<std::string>({"Mock Judge", std::string(kExactMatchColumn)}), "columns");
  c.info("accuracy=" + fmt(acc, 2) + ", table " + std::to_string(body) + " datasets x " +
         std::to_string(table.columns.size()) + " columns");
  return c.outcome();
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"argmax arithmetic", argmax_arithmetic},
      {"curve monotonicity", curve_monotonicity},
      {"one-generation rule", one_generation_rule},
      {"case-sensitive matching", case_sensitive_matching},
      {"MC flip and tie", mc_flip_and_tie},
      {"k-NN exactness", knn_exactness},
      {"context cut-off", context_cutoff},
      {"control-metric closed forms", control_closed_forms},
      {"chunking invariance", chunking_invariance},
      {"n-gram oracle", ngram_oracle},
      {"confusion accounting", confusion_accounting},
      {"end-to-end determinism", end_to_end_determinism},
      {"rating quotas", rating_quotas},
      {"judge pipeline", judge_pipeline},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  (" << o.detail << ")" << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
