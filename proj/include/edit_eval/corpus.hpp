#pragma once

// Benchmark ingestion: the four native knowledge-editing formats are mapped
// onto one edit/test-case model, which is persisted as canonical JSONL.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"

namespace edit_eval {

enum class Dataset { zsre, counterfact, mquake, rippleedits };

inline std::string_view to_string(Dataset d) {
  switch (d) {
    case Dataset::zsre: return "zsre";
    case Dataset::counterfact: return "counterfact";
    case Dataset::mquake: return "mquake";
    case Dataset::rippleedits: return "rippleedits";
  }
  return "?";
}

inline Dataset dataset_from_string(std::string_view s) {
  if (s == "zsre") return Dataset::zsre;
  if (s == "counterfact") return Dataset::counterfact;
  if (s == "mquake") return Dataset::mquake;
  if (s == "rippleedits") return Dataset::rippleedits;
  throw ConfigError("unknown dataset '" + std::string(s) + "'");
}

enum class TestCaseKind {
  efficacy,
  paraphrase,
  neighborhood,
  attribute,
  multihop,
  relation_specificity,
  logical_generalization,
  subject_aliasing,
  compositionality,
  forgetfulness,
};

inline constexpr std::string_view kKindNames[] = {
    "efficacy",           "paraphrase",       "neighborhood",     "attribute",
    "multihop",           "relation_specificity", "logical_generalization",
    "subject_aliasing",   "compositionality", "forgetfulness",
};

inline std::string_view to_string(TestCaseKind k) { return kKindNames[static_cast<int>(k)]; }

inline TestCaseKind kind_from_string(std::string_view s) {
  for (int i = 0; i < static_cast<int>(std::size(kKindNames)); ++i)
    if (kKindNames[i] == s) return static_cast<TestCaseKind>(i);
  throw Error("unknown test case kind '" + std::string(s) + "'");
}

// Kinds each native format may produce.
inline std::vector<TestCaseKind> allowed_kinds(Dataset d) {
  using K = TestCaseKind;
  switch (d) {
    case Dataset::zsre: return {K::efficacy, K::paraphrase, K::neighborhood};
    case Dataset::counterfact: return {K::efficacy, K::paraphrase, K::neighborhood, K::attribute};
    case Dataset::mquake: return {K::multihop};
    case Dataset::rippleedits:
      return {K::relation_specificity, K::logical_generalization, K::subject_aliasing,
              K::compositionality, K::forgetfulness};
  }
  return {};
}

struct FactTriple {
  std::string subject;
  std::string relation;
  std::optional<std::string> object_original;
  std::string object_new;

  bool operator==(const FactTriple&) const = default;
};

struct EditRequest {
  std::string id;
  FactTriple fact;
  // Prompt or question whose completion is the new object.
  std::string prompt;
  std::string statement;
  std::vector<std::string> new_target_aliases;

  const std::optional<std::string>& original_target() const { return fact.object_original; }
  bool operator==(const EditRequest&) const = default;
};

struct TestQuery {
  std::string prompt;
  std::vector<std::string> expected_answers;
  std::optional<std::vector<std::string>> original_answers;
  TestCaseKind kind = TestCaseKind::efficacy;
  std::vector<std::string> depends_on_edit_ids;

  bool operator==(const TestQuery&) const = default;
};

struct DatasetExample {
  std::string example_id;
  Dataset dataset = Dataset::zsre;
  std::optional<std::string> split;
  std::vector<EditRequest> edits;
  std::vector<TestQuery> queries;

  bool operator==(const DatasetExample&) const = default;
};

struct ParseResult {
  std::vector<DatasetExample> examples;
  std::size_t skipped_records = 0;
  std::size_t dropped_queries = 0;
};

// "<prompt> <new object>." on a single line, for both prompt-completion and
// question formats. No deduplication against the prompt's last word.
inline std::string render_fact_statement(std::string_view prompt, std::string_view object_new) {
  std::string s(trim(prompt));
  s += ' ';
  s += object_new;
  s += '.';
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

inline std::string render_fact_statement(const EditRequest& edit) {
  return render_fact_statement(edit.prompt, edit.fact.object_new);
}

namespace detail {

inline void push_unique(std::vector<std::string>& out, std::string_view v) {
  std::string s(trim(v));
  if (s.empty()) return;
  if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
}

inline std::string pad_index(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

// Field access with failures reported as ParseError(record, dotted path).
class RecordReader {
 public:
  RecordReader(const json& record, std::size_t index) : record_(record), index_(index) {}

  const json* find(std::string_view path) const {
    const json* node = &record_;
    for (const auto& part : split(path, '.')) {
      if (!node->is_object()) return nullptr;
      auto it = node->find(part);
      if (it == node->end() || it->is_null()) return nullptr;
      node = &*it;
    }
    return node;
  }

  const json& require(std::string_view path) const {
    const json* node = find(path);
    if (!node) throw ParseError(index_, std::string(path), "missing field");
    return *node;
  }

  std::string string(std::string_view path) const {
    const json& node = require(path);
    if (!node.is_string()) throw ParseError(index_, std::string(path), "expected string");
    return node.get<std::string>();
  }

  std::optional<std::string> optional_string(std::string_view path) const {
    const json* node = find(path);
    if (!node) return std::nullopt;
    if (node->is_string()) return node->get<std::string>();
    if (node->is_number_integer()) return std::to_string(node->get<long long>());
    throw ParseError(index_, std::string(path), "expected string");
  }

  std::vector<std::string> strings(std::string_view path, bool required = true) const {
    const json* node = find(path);
    if (!node) {
      if (required) throw ParseError(index_, std::string(path), "missing field");
      return {};
    }
    if (!node->is_array()) throw ParseError(index_, std::string(path), "expected array");
    std::vector<std::string> out;
    for (const auto& v : *node) {
      if (!v.is_string()) throw ParseError(index_, std::string(path), "expected array of strings");
      out.push_back(v.get<std::string>());
    }
    return out;
  }

  std::size_t index() const { return index_; }

 private:
  const json& record_;
  std::size_t index_;
};

inline std::vector<json> split_records(std::string_view payload) {
  std::vector<json> records;
  const auto body = trim(payload);
  if (body.empty()) return records;
  if (body.front() == '[') {
    json arr;
    try {
      arr = json::parse(body);
    } catch (const json::parse_error& e) {
      throw ParseError(0, "", std::string("malformed JSON array: ") + e.what());
    }
    for (auto& r : arr) records.push_back(std::move(r));
    return records;
  }
  for (const auto& [line_no, line] : jsonl_lines(payload)) {
    try {
      records.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(records.size(), "", "malformed JSON on line " + std::to_string(line_no));
    }
  }
  return records;
}

inline std::string fill_subject(std::string templ, std::string_view subject) {
  const auto pos = templ.find("{}");
  if (pos != std::string::npos) templ.replace(pos, 2, subject);
  return templ;
}

inline std::string case_id(const RecordReader& r) {
  if (auto id = r.optional_string("case_id")) return *id;
  return pad_index(r.index());
}

inline std::string padded_case_id(const RecordReader& r) {
  const json* node = r.find("case_id");
  if (node && node->is_number_integer()) return pad_index(node->get<std::size_t>());
  return case_id(r);
}

// zsRE as distributed with the MEND/ROME/MEMIT code:
//   src, subject, alt (new target), answers[0] (original), rephrase, loc, loc_ans
inline std::optional<DatasetExample> parse_zsre_record(const RecordReader& r) {
  const std::string question(trim(r.string("src")));
  const std::string subject = r.string("subject");
  const auto alt = r.optional_string("alt");
  if (!alt || trim(*alt).empty()) return std::nullopt;
  const std::string target(trim(*alt));

  DatasetExample ex;
  ex.dataset = Dataset::zsre;
  ex.example_id = "zsre-" + padded_case_id(r);

  EditRequest edit;
  edit.id = ex.example_id + "/e0";
  edit.fact.subject = subject;
  edit.fact.relation = r.optional_string("relation").value_or(question);
  const auto answers = r.strings("answers", false);
  if (!answers.empty()) edit.fact.object_original = answers.front();
  edit.fact.object_new = target;
  edit.prompt = question;
  edit.new_target_aliases = {target};
  edit.statement = render_fact_statement(edit);
  ex.edits.push_back(edit);

  ex.queries.push_back({question, {target}, std::nullopt, TestCaseKind::efficacy, {edit.id}});
  if (auto rephrase = r.optional_string("rephrase"); rephrase && !trim(*rephrase).empty())
    ex.queries.push_back(
        {std::string(trim(*rephrase)), {target}, std::nullopt, TestCaseKind::paraphrase, {edit.id}});
  if (auto loc = r.optional_string("loc"); loc && !trim(*loc).empty()) {
    std::string q(trim(*loc));
    constexpr std::string_view nq = "nq question: ";
    if (q.rfind(nq, 0) == 0) q.erase(0, nq.size());
    if (q.empty() || q.back() != '?') q += '?';
    const std::string loc_ans = r.string("loc_ans");
    ex.queries.push_back({q, {std::string(trim(loc_ans))}, std::nullopt, TestCaseKind::neighborhood,
                          {edit.id}});
  }
  return ex;
}

// CounterFact (ROME release): requested_rewrite.{prompt, subject, relation_id,
// target_new.str, target_true.str}, paraphrase_prompts[], neighborhood_prompts[],
// attribute_prompts[].
inline std::optional<DatasetExample> parse_counterfact_record(const RecordReader& r) {
  const auto target = r.optional_string("requested_rewrite.target_new.str");
  if (!target || trim(*target).empty()) return std::nullopt;
  const std::string subject = r.string("requested_rewrite.subject");
  const std::string prompt = fill_subject(r.string("requested_rewrite.prompt"), subject);
  const std::string original(trim(r.string("requested_rewrite.target_true.str")));
  const std::string new_target(trim(*target));

  DatasetExample ex;
  ex.dataset = Dataset::counterfact;
  ex.example_id = "counterfact-" + padded_case_id(r);

  EditRequest edit;
  edit.id = ex.example_id + "/e0";
  edit.fact = {subject, r.optional_string("requested_rewrite.relation_id").value_or(prompt),
               original, new_target};
  edit.prompt = prompt;
  edit.new_target_aliases = {new_target};
  edit.statement = render_fact_statement(edit);
  ex.edits.push_back(edit);

  const std::vector<std::string> fwd_new{new_target}, fwd_orig{original};
  ex.queries.push_back({prompt, fwd_new, fwd_orig, TestCaseKind::efficacy, {edit.id}});
  for (const auto& p : r.strings("paraphrase_prompts", false))
    ex.queries.push_back({std::string(trim(p)), fwd_new, fwd_orig, TestCaseKind::paraphrase, {edit.id}});
  for (const auto& p : r.strings("neighborhood_prompts", false))
    ex.queries.push_back(
        {std::string(trim(p)), fwd_orig, fwd_new, TestCaseKind::neighborhood, {edit.id}});
  for (const auto& p : r.strings("attribute_prompts", false))
    ex.queries.push_back({std::string(trim(p)), fwd_new, fwd_orig, TestCaseKind::attribute, {edit.id}});
  return ex;
}

// MQuAKE: requested_rewrite[] (same shape as CounterFact's, 1-4 entries),
// questions[], new_answer, new_answer_alias[], answer, answer_alias[],
// new_single_hops[{answer, answer_alias[]}] (source of per-edit aliases).
inline std::optional<DatasetExample> parse_mquake_record(const RecordReader& r) {
  const json& rewrites = r.require("requested_rewrite");
  if (!rewrites.is_array()) throw ParseError(r.index(), "requested_rewrite", "expected array");
  if (rewrites.empty() || rewrites.size() > 4)
    throw ParseError(r.index(), "requested_rewrite", "expected 1-4 edits");
  const auto new_answer = r.optional_string("new_answer");
  if (!new_answer || trim(*new_answer).empty()) return std::nullopt;

  DatasetExample ex;
  ex.dataset = Dataset::mquake;
  ex.example_id = "mquake-" + padded_case_id(r);

  std::vector<std::pair<std::string, std::vector<std::string>>> hop_aliases;
  if (const json* hops = r.find("new_single_hops"); hops && hops->is_array()) {
    for (const auto& hop : *hops) {
      if (!hop.is_object() || !hop.contains("answer") || !hop["answer"].is_string()) continue;
      std::vector<std::string> al;
      if (hop.contains("answer_alias") && hop["answer_alias"].is_array())
        for (const auto& a : hop["answer_alias"])
          if (a.is_string()) al.push_back(a.get<std::string>());
      hop_aliases.emplace_back(hop["answer"].get<std::string>(), std::move(al));
    }
  }

  std::vector<std::string> edit_ids;
  for (std::size_t i = 0; i < rewrites.size(); ++i) {
    RecordReader rw(rewrites[i], r.index());
    const std::string at = "requested_rewrite." + std::to_string(i) + ".";
    auto field = [&](std::string_view f) {
      try {
        return rw.string(f);
      } catch (const ParseError&) {
        throw ParseError(r.index(), at + std::string(f), "missing field");
      }
    };
    const auto target = rw.optional_string("target_new.str");
    if (!target || trim(*target).empty()) return std::nullopt;
    const std::string subject = field("subject");
    EditRequest edit;
    edit.id = ex.example_id + "/e" + std::to_string(i);
    edit.prompt = fill_subject(field("prompt"), subject);
    edit.fact = {subject, rw.optional_string("relation_id").value_or(edit.prompt),
                 rw.optional_string("target_true.str"), std::string(trim(*target))};
    push_unique(edit.new_target_aliases, edit.fact.object_new);
    for (const auto& [answer, aliases] : hop_aliases)
      if (answer == edit.fact.object_new)
        for (const auto& a : aliases) push_unique(edit.new_target_aliases, a);
    edit.statement = render_fact_statement(edit);
    edit_ids.push_back(edit.id);
    ex.edits.push_back(std::move(edit));
  }

  std::vector<std::string> expected, original;
  push_unique(expected, *new_answer);
  for (const auto& a : r.strings("new_answer_alias", false)) push_unique(expected, a);
  if (auto ans = r.optional_string("answer")) {
    push_unique(original, *ans);
    for (const auto& a : r.strings("answer_alias", false)) push_unique(original, a);
  }
  for (const auto& q : r.strings("questions")) {
    if (trim(q).empty()) continue;
    ex.queries.push_back({std::string(trim(q)), expected,
                          original.empty() ? std::nullopt : std::optional(original),
                          TestCaseKind::multihop, edit_ids});
  }
  return ex;
}

// RippleEdits: edit.{prompt (full sentence), subject_id, relation, target_id,
// original_fact.prompt}, plus per-kind lists of {test_queries[{prompt,
// answers[{value, aliases[]}], target_ids[]}]}.
inline std::optional<DatasetExample> parse_rippleedits_record(const RecordReader& r,
                                                              const std::optional<std::string>& split,
                                                              std::size_t& dropped_queries) {
  const std::string sentence(trim(r.string("edit.prompt")));
  const std::string relation = r.string("edit.relation");
  const auto target_id = r.optional_string("edit.target_id");

  static const std::pair<std::string_view, TestCaseKind> kind_fields[] = {
      {"Relation_Specificity", TestCaseKind::relation_specificity},
      {"Logical_Generalization", TestCaseKind::logical_generalization},
      {"Subject_Aliasing", TestCaseKind::subject_aliasing},
      {"Compositionality_I", TestCaseKind::compositionality},
      {"Compositionality_II", TestCaseKind::compositionality},
      {"Forgetfulness", TestCaseKind::forgetfulness},
  };

  struct RawQuery {
    std::string prompt;
    std::vector<std::string> answers;
    TestCaseKind kind;
  };
  std::vector<RawQuery> raw;
  std::vector<std::string> target_aliases;
  std::optional<std::string> explicit_target = r.optional_string("edit.target_new");
  if (!explicit_target) explicit_target = r.optional_string("edit.target");

  for (const auto& [field, kind] : kind_fields) {
    const json* tests = r.find(field);
    if (!tests) continue;
    if (!tests->is_array()) throw ParseError(r.index(), std::string(field), "expected array");
    for (const auto& test : *tests) {
      if (!test.is_object() || !test.contains("test_queries")) continue;
      for (const auto& q : test["test_queries"]) {
        if (!q.is_object() || !q.contains("prompt") || !q["prompt"].is_string())
          throw ParseError(r.index(), std::string(field) + ".test_queries.prompt", "missing field");
        RawQuery rq{std::string(trim(q["prompt"].get<std::string>())), {}, kind};
        const json empty = json::array();
        const json& answers = q.contains("answers") ? q["answers"] : empty;
        const json& ids = q.contains("target_ids") ? q["target_ids"] : empty;
        for (std::size_t a = 0; a < answers.size(); ++a) {
          const auto& ans = answers[a];
          std::vector<std::string> names;
          if (ans.is_string()) {
            names.push_back(ans.get<std::string>());
          } else if (ans.is_object()) {
            if (ans.contains("value") && ans["value"].is_string())
              names.push_back(ans["value"].get<std::string>());
            if (ans.contains("aliases") && ans["aliases"].is_array())
              for (const auto& al : ans["aliases"])
                if (al.is_string()) names.push_back(al.get<std::string>());
          }
          for (const auto& n : names) push_unique(rq.answers, n);
          const bool is_target = target_id && a < ids.size() && ids[a].is_string() &&
                                 ids[a].get<std::string>() == *target_id;
          if (is_target && target_aliases.empty())
            for (const auto& n : names) push_unique(target_aliases, n);
        }
        if (rq.prompt.empty() || rq.answers.empty()) {
          ++dropped_queries;
          continue;
        }
        raw.push_back(std::move(rq));
      }
    }
  }

  std::string target;
  if (explicit_target && !trim(*explicit_target).empty()) {
    target = std::string(trim(*explicit_target));
    std::vector<std::string> al{target};
    for (const auto& a : target_aliases) push_unique(al, a);
    target_aliases = std::move(al);
  } else if (!target_aliases.empty()) {
    target = target_aliases.front();
  } else {
    return std::nullopt;
  }

  std::string body = sentence;
  if (!body.empty() && body.back() == '.') body.pop_back();
  body = std::string(trim(body));
  if (body.size() < target.size() || body.compare(body.size() - target.size(), target.size(), target) != 0)
    return std::nullopt;
  const std::string prompt(trim(std::string_view(body).substr(0, body.size() - target.size())));
  if (prompt.empty() || raw.empty()) return std::nullopt;

  DatasetExample ex;
  ex.dataset = Dataset::rippleedits;
  ex.split = r.optional_string("example_type");
  if (!ex.split) ex.split = split;
  ex.example_id = "rippleedits-" + (ex.split ? *ex.split + "-" : std::string()) + padded_case_id(r);

  EditRequest edit;
  edit.id = ex.example_id + "/e0";
  const auto subject = r.optional_string("edit.subject");
  edit.fact.subject = subject ? *subject : r.string("edit.subject_id");
  edit.fact.relation = relation;
  if (auto orig = r.optional_string("edit.original_target")) {
    edit.fact.object_original = *orig;
  } else if (auto orig_prompt = r.optional_string("edit.original_fact.prompt")) {
    std::string o(trim(*orig_prompt));
    if (!o.empty() && o.back() == '.') o.pop_back();
    if (o.rfind(prompt, 0) == 0) edit.fact.object_original = std::string(trim(o.substr(prompt.size())));
  }
  edit.fact.object_new = target;
  edit.prompt = prompt;
  edit.new_target_aliases = target_aliases;
  edit.statement = render_fact_statement(edit);
  ex.edits.push_back(edit);

  for (auto& q : raw)
    ex.queries.push_back({std::move(q.prompt), std::move(q.answers), std::nullopt, q.kind, {edit.id}});
  return ex;
}

}  // namespace detail

// Throws Error describing the first violated invariant.
inline void validate(const DatasetExample& ex) {
  auto fail = [&](const std::string& what) { throw Error(ex.example_id + ": " + what); };
  if (ex.example_id.empty()) fail("empty example_id");
  if (ex.edits.empty()) fail("no edits");
  const std::size_t max_edits = ex.dataset == Dataset::mquake ? 4 : 1;
  if (ex.edits.size() > max_edits) fail("too many edits");
  std::set<std::string> ids;
  for (const auto& e : ex.edits) {
    if (e.id.empty() || !ids.insert(e.id).second) fail("duplicate or empty edit id");
    if (e.fact.subject.empty() || e.fact.relation.empty() || e.fact.object_new.empty())
      fail("edit " + e.id + " has an incomplete fact");
    if (e.new_target_aliases.empty() ||
        std::find(e.new_target_aliases.begin(), e.new_target_aliases.end(), e.fact.object_new) ==
            e.new_target_aliases.end())
      fail("edit " + e.id + ": new target missing from aliases");
  }
  const auto kinds = allowed_kinds(ex.dataset);
  for (const auto& q : ex.queries) {
    if (q.prompt.empty()) fail("empty query prompt");
    if (q.expected_answers.empty()) fail("query without expected answers");
    if (std::find(kinds.begin(), kinds.end(), q.kind) == kinds.end())
      fail("kind " + std::string(to_string(q.kind)) + " not produced by this dataset");
    for (const auto& d : q.depends_on_edit_ids)
      if (!ids.count(d)) fail("query depends on unknown edit " + d);
  }
}

// Parses a native benchmark file (JSON array or JSONL). Records without a
// usable post-edit target or without any query are skipped and counted.
inline ParseResult parse_dataset(Dataset format, std::string_view payload,
                                 const std::optional<std::string>& split = std::nullopt) {
  ParseResult result;
  const auto records = detail::split_records(payload);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].is_object()) throw ParseError(i, "", "record is not an object");
    detail::RecordReader r(records[i], i);
    std::optional<DatasetExample> ex;
    switch (format) {
      case Dataset::zsre: ex = detail::parse_zsre_record(r); break;
      case Dataset::counterfact: ex = detail::parse_counterfact_record(r); break;
      case Dataset::mquake: ex = detail::parse_mquake_record(r); break;
      case Dataset::rippleedits:
        ex = detail::parse_rippleedits_record(r, split, result.dropped_queries);
        break;
    }
    if (!ex || ex->queries.empty()) {
      ++result.skipped_records;
      continue;
    }
    const bool subject_missing =
        ex->dataset != Dataset::rippleedits &&
        std::any_of(ex->edits.begin(), ex->edits.end(), [](const EditRequest& e) {
          return e.statement.find(e.fact.subject) == std::string::npos;
        });
    if (subject_missing) {
      ++result.skipped_records;
      continue;
    }
    validate(*ex);
    result.examples.push_back(std::move(*ex));
  }
  std::set<std::string> seen;
  for (const auto& ex : result.examples)
    if (!seen.insert(ex.example_id).second) throw Error("duplicate example id " + ex.example_id);
  return result;
}

// ---- canonical JSONL ------------------------------------------------------

inline json to_json(const EditRequest& e) {
  return {{"id", e.id},
          {"subject", e.fact.subject},
          {"relation", e.fact.relation},
          {"original_target", e.fact.object_original ? json(*e.fact.object_original) : json(nullptr)},
          {"new_target", e.fact.object_new},
          {"aliases", e.new_target_aliases},
          {"prompt", e.prompt},
          {"statement", e.statement}};
}

inline json to_json(const TestQuery& q) {
  return {{"prompt", q.prompt},
          {"kind", to_string(q.kind)},
          {"expected", q.expected_answers},
          {"original", q.original_answers ? json(*q.original_answers) : json(nullptr)},
          {"depends_on", q.depends_on_edit_ids}};
}

inline json to_json(const DatasetExample& ex) {
  json edits = json::array(), queries = json::array();
  for (const auto& e : ex.edits) edits.push_back(to_json(e));
  for (const auto& q : ex.queries) queries.push_back(to_json(q));
  return {{"example_id", ex.example_id},
          {"dataset", to_string(ex.dataset)},
          {"split", ex.split ? json(*ex.split) : json(nullptr)},
          {"edits", std::move(edits)},
          {"queries", std::move(queries)}};
}

inline DatasetExample example_from_json(const json& j) {
  DatasetExample ex;
  ex.example_id = j.at("example_id").get<std::string>();
  ex.dataset = dataset_from_string(j.at("dataset").get<std::string>());
  if (j.contains("split") && !j["split"].is_null()) ex.split = j["split"].get<std::string>();
  for (const auto& e : j.at("edits")) {
    EditRequest edit;
    edit.id = e.at("id").get<std::string>();
    edit.fact.subject = e.at("subject").get<std::string>();
    edit.fact.relation = e.at("relation").get<std::string>();
    if (e.contains("original_target") && !e["original_target"].is_null())
      edit.fact.object_original = e["original_target"].get<std::string>();
    edit.fact.object_new = e.at("new_target").get<std::string>();
    edit.new_target_aliases = e.at("aliases").get<std::vector<std::string>>();
    edit.prompt = e.value("prompt", std::string());
    edit.statement = e.at("statement").get<std::string>();
    ex.edits.push_back(std::move(edit));
  }
  for (const auto& q : j.at("queries")) {
    TestQuery query;
    query.prompt = q.at("prompt").get<std::string>();
    query.kind = kind_from_string(q.at("kind").get<std::string>());
    query.expected_answers = q.at("expected").get<std::vector<std::string>>();
    if (q.contains("original") && !q["original"].is_null())
      query.original_answers = q["original"].get<std::vector<std::string>>();
    query.depends_on_edit_ids = q.at("depends_on").get<std::vector<std::string>>();
    ex.queries.push_back(std::move(query));
  }
  return ex;
}

inline std::string write_corpus_jsonl(const std::vector<DatasetExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += to_json(ex).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<DatasetExample> read_corpus_jsonl(std::string_view payload) {
  std::vector<DatasetExample> out;
  for (const auto& [line_no, line] : jsonl_lines(payload)) {
    try {
      out.push_back(example_from_json(json::parse(line)));
      validate(out.back());
    } catch (const json::exception& e) {
      throw StoreError(line_no, e.what());
    } catch (const Error& e) {
      throw StoreError(line_no, e.what());
    }
  }
  return out;
}

inline std::string corpus_hash(const std::vector<DatasetExample>& examples) {
  return hex64(fnv1a64(write_corpus_jsonl(examples)));
}

// ---- sampling and batching -----------------------------------------------

inline void sort_canonical(std::vector<DatasetExample>& examples) {
  std::sort(examples.begin(), examples.end(),
            [](const auto& a, const auto& b) { return a.example_id < b.example_id; });
}

// Balanced allocation of n slots over groups with the given capacities:
// sizes differ by at most one unless a group saturates, extra slots go to the
// earliest groups.
inline std::vector<std::size_t> balanced_quotas(std::size_t n, const std::vector<std::size_t>& capacity) {
  std::vector<std::size_t> quota(capacity.size(), 0);
  std::size_t remaining = n;
  while (remaining > 0) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < capacity.size(); ++i)
      if (quota[i] < capacity[i]) open.push_back(i);
    if (open.empty()) break;
    const std::size_t share = remaining / open.size();
    std::size_t extra = remaining % open.size();
    std::size_t granted = 0;
    for (std::size_t i : open) {
      std::size_t want = share + (extra > 0 ? 1 : 0);
      if (extra > 0) --extra;
      const std::size_t give = std::min(want, capacity[i] - quota[i]);
      quota[i] += give;
      granted += give;
    }
    if (granted == 0) break;
    remaining -= granted;
  }
  return quota;
}

// Uniform sample without replacement, drawn evenly across splits. Output is
// in canonical (example_id) order.
inline std::vector<DatasetExample> sample_examples(std::vector<DatasetExample> examples, std::size_t n,
                                                   std::uint64_t seed) {
  sort_canonical(examples);
  if (n >= examples.size()) return examples;

  std::map<std::string, std::vector<DatasetExample>> by_split;
  for (auto& ex : examples) by_split[ex.split.value_or("")].push_back(std::move(ex));

  std::vector<std::size_t> capacity;
  for (const auto& [_, group] : by_split) capacity.push_back(group.size());
  const auto quotas = balanced_quotas(n, capacity);

  std::vector<DatasetExample> out;
  std::size_t g = 0;
  for (auto& [split_name, group] : by_split) {
    seeded_shuffle(group, seed ^ fnv1a64(split_name));
    for (std::size_t i = 0; i < quotas[g]; ++i) out.push_back(std::move(group[i]));
    ++g;
  }
  sort_canonical(out);
  return out;
}

struct EditBatch {
  std::vector<EditRequest> edits;
  std::vector<DatasetExample> examples;
};

// Packs examples (canonical order) into consecutive batches of at most
// batch_size edits; an example's edits always stay together.
inline std::vector<EditBatch> build_edit_batches(std::vector<DatasetExample> examples, std::size_t batch_size) {
  if (batch_size == 0) throw Error("batch_size must be >= 1");
  sort_canonical(examples);
  for (const auto& ex : examples)
    if (ex.edits.size() > batch_size)
      throw Error("example " + ex.example_id + " has " + std::to_string(ex.edits.size()) +
                  " edits, more than batch size " + std::to_string(batch_size));
  std::vector<EditBatch> batches;
  for (auto& ex : examples) {
    if (batches.empty() || batches.back().edits.size() + ex.edits.size() > batch_size)
      batches.emplace_back();
    auto& b = batches.back();
    b.edits.insert(b.edits.end(), ex.edits.begin(), ex.edits.end());
    b.examples.push_back(std::move(ex));
  }
  return batches;
}

}  // namespace edit_eval
