#pragma once

// Result rows, run records and the append-only JSONL store.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "scoring.hpp"

namespace edit_eval {

struct ResultRow {
  std::string run_id;
  std::string dataset;
  std::optional<std::string> split;
  std::string example_id;
  std::size_t query_index = 0;
  TestCaseKind kind = TestCaseKind::efficacy;
  std::string editor;
  std::size_t batch_size = 0;
  std::size_t batch_index = 0;
  std::string method;
  std::optional<double> score;
  std::optional<std::size_t> first_match_index;
  std::optional<std::string> generated_text;
  std::vector<TokenId> generated_tokens;
  std::size_t generate_length = 0;
  std::string canonical_answer;
  std::optional<std::string> matched_alias;
  std::optional<double> logprob_new;
  std::optional<double> logprob_original;
  std::size_t truncated_edits = 0;
  double timing_ms = 0.0;
  std::optional<std::string> error;

  bool operator==(const ResultRow&) const = default;
};

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

inline json to_json(const ResultRow& r) {
  json j{{"run_id", r.run_id},
         {"dataset", r.dataset},
         {"example_id", r.example_id},
         {"query_index", r.query_index},
         {"kind", to_string(r.kind)},
         {"editor", r.editor},
         {"batch_size", r.batch_size},
         {"batch_index", r.batch_index},
         {"method", r.method},
         {"canonical_answer", r.canonical_answer},
         {"truncated_edits", r.truncated_edits},
         {"timing_ms", r.timing_ms}};
  j["score"] = r.score ? json(*r.score) : json(nullptr);
  put_optional(j, "split", r.split);
  put_optional(j, "first_match_index", r.first_match_index);
  put_optional(j, "generated_text", r.generated_text);
  put_optional(j, "matched_alias", r.matched_alias);
  put_optional(j, "logprob_new", r.logprob_new);
  put_optional(j, "logprob_original", r.logprob_original);
  put_optional(j, "error", r.error);
  if (r.method == "generate") {
    j["generate_length"] = r.generate_length;
    j["generated_tokens"] = r.generated_tokens;
  }
  return j;
}

template <typename T>
std::optional<T> get_optional(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<T>();
}

inline ResultRow result_row_from_json(const json& j) {
  ResultRow r;
  r.run_id = j.at("run_id").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.split = get_optional<std::string>(j, "split");
  r.example_id = j.at("example_id").get<std::string>();
  r.query_index = j.at("query_index").get<std::size_t>();
  r.kind = kind_from_string(j.at("kind").get<std::string>());
  r.editor = j.at("editor").get<std::string>();
  r.batch_size = j.at("batch_size").get<std::size_t>();
  r.batch_index = j.value("batch_index", std::size_t{0});
  r.method = j.at("method").get<std::string>();
  r.score = get_optional<double>(j, "score");
  r.first_match_index = get_optional<std::size_t>(j, "first_match_index");
  r.generated_text = get_optional<std::string>(j, "generated_text");
  if (j.contains("generated_tokens")) r.generated_tokens = j["generated_tokens"].get<std::vector<TokenId>>();
  r.generate_length = j.value("generate_length", std::size_t{0});
  r.canonical_answer = j.value("canonical_answer", "");
  r.matched_alias = get_optional<std::string>(j, "matched_alias");
  r.logprob_new = get_optional<double>(j, "logprob_new");
  r.logprob_original = get_optional<double>(j, "logprob_original");
  r.truncated_edits = j.value("truncated_edits", std::size_t{0});
  r.timing_ms = j.value("timing_ms", 0.0);
  r.error = get_optional<std::string>(j, "error");
  if (r.score && (*r.score < 0.0 || *r.score > 1.0)) throw Error("score outside [0,1]");
  if (r.first_match_index && r.method != "generate") throw Error("first_match_index on a non-generate row");
  return r;
}

inline std::string serialize_rows(const std::vector<ResultRow>& rows) {
  std::string out;
  for (const auto& r : rows) out += to_json(r).dump() + "\n";
  return out;
}

struct LoadedRows {
  std::vector<ResultRow> rows;
  // Set in lenient mode when a line could not be read; rows before it are kept.
  std::optional<std::size_t> bad_line;
  std::string bad_line_error;
};

inline LoadedRows parse_rows(std::string_view payload, bool lenient = false) {
  LoadedRows out;
  for (const auto& [line_no, line] : jsonl_lines(payload)) {
    try {
      out.rows.push_back(result_row_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      if (!lenient) throw StoreError(line_no, e.what());
      out.bad_line = line_no;
      out.bad_line_error = e.what();
      break;
    }
  }
  return out;
}

inline LoadedRows load_rows(const std::string& path, bool lenient = false) {
  return parse_rows(read_file(path), lenient);
}

// Creates `path` exclusively; fails if another run already owns it.
inline void create_exclusive(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wx");
  if (!f) throw StoreError(0, "cannot create " + path + " (exists or not writable)");
  std::fclose(f);
}

inline void append_text(const std::string& path, std::string_view text) {
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw StoreError(0, "cannot open " + path + " for append");
  const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
  const bool closed = std::fclose(f) == 0;
  if (!ok || !closed) throw StoreError(0, "short write to " + path);
}

inline void persist_rows(const std::string& path, const std::vector<ResultRow>& rows) {
  append_text(path, serialize_rows(rows));
}

// Hash of the row stream with the fields that legitimately vary between
// identical runs (wall-clock timing and run id) removed.
inline std::string rows_content_hash(const std::vector<ResultRow>& rows) {
  std::uint64_t h = fnv1a64("");
  for (auto r : rows) {
    r.timing_ms = 0.0;
    r.run_id.clear();
    const auto line = to_json(r).dump() + "\n";
    h = fnv1a64(line, h);
  }
  return hex64(h);
}

inline std::string strip_volatile(const std::vector<ResultRow>& rows) {
  std::string out;
  for (auto r : rows) {
    r.timing_ms = 0.0;
    r.run_id.clear();
    out += to_json(r).dump() + "\n";
  }
  return out;
}

struct RunRecord {
  std::string run_id;
  json config;
  std::string corpus_hash;
  std::string version = std::string(kVersion);
  std::string started_at;
  std::string finished_at;
  std::size_t row_count = 0;
  std::size_t control_row_count = 0;
  std::size_t error_rows = 0;
  std::string result_hash;
  std::string control_hash;
  bool complete = false;
  // Completed (dataset, editor, batch size) combinations, for resuming.
  std::vector<std::string> cursor;
  std::map<std::string, std::size_t> oversize_examples;
  std::vector<std::string> warnings;
};

inline json to_json(const RunRecord& r) {
  return {{"run_id", r.run_id},
          {"config", r.config},
          {"corpus_hash", r.corpus_hash},
          {"version", r.version},
          {"started_at", r.started_at},
          {"finished_at", r.finished_at},
          {"row_count", r.row_count},
          {"control_row_count", r.control_row_count},
          {"error_rows", r.error_rows},
          {"result_hash", r.result_hash},
          {"control_hash", r.control_hash},
          {"complete", r.complete},
          {"cursor", r.cursor},
          {"oversize_examples", r.oversize_examples},
          {"warnings", r.warnings}};
}

inline RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.config = j.at("config");
  r.corpus_hash = j.value("corpus_hash", "");
  r.version = j.value("version", "");
  r.started_at = j.value("started_at", "");
  r.finished_at = j.value("finished_at", "");
  r.row_count = j.value("row_count", std::size_t{0});
  r.control_row_count = j.value("control_row_count", std::size_t{0});
  r.error_rows = j.value("error_rows", std::size_t{0});
  r.result_hash = j.value("result_hash", "");
  r.control_hash = j.value("control_hash", "");
  r.complete = j.value("complete", false);
  if (j.contains("cursor")) r.cursor = j["cursor"].get<std::vector<std::string>>();
  if (j.contains("oversize_examples"))
    r.oversize_examples = j["oversize_examples"].get<std::map<std::string, std::size_t>>();
  if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
  return r;
}

}  // namespace edit_eval
