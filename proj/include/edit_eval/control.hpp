#pragma once

// General-capability control tasks evaluated on edited models: multiple
// choice (acc, acc_norm, f1, mcc), cloze (acc, perplexity) and document
// perplexity (word/byte perplexity, bits per byte).

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "editors.hpp"

namespace edit_eval {

enum class ControlMode { choice, cloze, document_perplexity };

inline std::string_view to_string(ControlMode m) {
  switch (m) {
    case ControlMode::choice: return "choice";
    case ControlMode::cloze: return "cloze";
    case ControlMode::document_perplexity: return "document_perplexity";
  }
  return "?";
}

inline ControlMode control_mode_from_string(std::string_view s) {
  if (s == "choice") return ControlMode::choice;
  if (s == "cloze") return ControlMode::cloze;
  if (s == "document_perplexity" || s == "document") return ControlMode::document_perplexity;
  throw ConfigError("unknown control mode '" + std::string(s) + "'");
}

struct ControlItem {
  std::string context;
  std::vector<std::string> choices;
  std::size_t gold_index = 0;
  std::string target_word;
  std::string document;
};

struct ControlTask {
  std::string task_id;
  ControlMode mode = ControlMode::choice;
  std::vector<ControlItem> items;
  std::vector<std::string> metrics;
};

inline std::vector<std::string> default_metrics(ControlMode m) {
  switch (m) {
    case ControlMode::choice: return {"acc", "acc_norm"};
    case ControlMode::cloze: return {"acc", "perplexity"};
    case ControlMode::document_perplexity: return {"word_perplexity", "byte_perplexity", "bits_per_byte"};
  }
  return {};
}

inline void validate(const ControlTask& task) {
  if (task.task_id.empty()) throw ConfigError("control task without task_id");
  std::set<std::string> allowed;
  switch (task.mode) {
    case ControlMode::choice: allowed = {"acc", "acc_norm", "f1", "mcc"}; break;
    case ControlMode::cloze: allowed = {"acc", "perplexity"}; break;
    case ControlMode::document_perplexity: allowed = {"word_perplexity", "byte_perplexity", "bits_per_byte"}; break;
  }
  for (const auto& m : task.metrics)
    if (!allowed.count(m))
      throw ConfigError(task.task_id + ": metric '" + m + "' does not fit mode " + std::string(to_string(task.mode)));
  const bool binary = std::any_of(task.metrics.begin(), task.metrics.end(),
                                  [](const std::string& m) { return m == "f1" || m == "mcc"; });
  for (std::size_t i = 0; i < task.items.size(); ++i) {
    const auto& it = task.items[i];
    const std::string where = task.task_id + " item " + std::to_string(i);
    switch (task.mode) {
      case ControlMode::choice:
        if (it.choices.size() < 2) throw ConfigError(where + ": needs at least two choices");
        if (it.gold_index >= it.choices.size()) throw ConfigError(where + ": gold index out of range");
        if (binary && it.choices.size() != 2) throw ConfigError(where + ": f1/mcc need two-choice items");
        break;
      case ControlMode::cloze:
        if (it.target_word.empty()) throw ConfigError(where + ": empty target word");
        break;
      case ControlMode::document_perplexity:
        if (it.document.empty()) throw ConfigError(where + ": empty document");
        break;
    }
  }
}

inline ControlTask control_task_from_json(const json& j) {
  ControlTask task;
  try {
    task.task_id = j.at("task_id").get<std::string>();
    task.mode = control_mode_from_string(j.at("mode").get<std::string>());
    task.metrics = j.contains("metrics") ? j["metrics"].get<std::vector<std::string>>() : default_metrics(task.mode);
    for (const auto& ji : j.at("items")) {
      ControlItem item;
      switch (task.mode) {
        case ControlMode::choice:
          item.context = ji.value("context", "");
          item.choices = ji.at("choices").get<std::vector<std::string>>();
          item.gold_index = ji.contains("gold_index") ? ji["gold_index"].get<std::size_t>() : ji.at("gold").get<std::size_t>();
          break;
        case ControlMode::cloze:
          item.context = ji.at("context").get<std::string>();
          item.target_word = ji.contains("target_word") ? ji["target_word"].get<std::string>() : ji.at("target").get<std::string>();
          break;
        case ControlMode::document_perplexity:
          item.document = ji.contains("document") ? ji["document"].get<std::string>() : ji.at("text").get<std::string>();
          break;
      }
      task.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("control task: ") + e.what());
  }
  validate(task);
  return task;
}

inline json to_json(const ControlTask& task) {
  json items = json::array();
  for (const auto& it : task.items) {
    switch (task.mode) {
      case ControlMode::choice:
        items.push_back({{"context", it.context}, {"choices", it.choices}, {"gold_index", it.gold_index}});
        break;
      case ControlMode::cloze: items.push_back({{"context", it.context}, {"target_word", it.target_word}}); break;
      case ControlMode::document_perplexity: items.push_back({{"document", it.document}}); break;
    }
  }
  return {{"task_id", task.task_id}, {"mode", to_string(task.mode)}, {"metrics", task.metrics}, {"items", items}};
}

// A task file holds one task object, or one task per line.
inline std::vector<ControlTask> parse_control_tasks(std::string_view payload) {
  std::vector<ControlTask> tasks;
  const auto first = payload.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) throw ConfigError("empty control task file");
  try {
    const json whole = json::parse(payload);
    if (whole.is_array()) {
      for (const auto& t : whole) tasks.push_back(control_task_from_json(t));
    } else {
      tasks.push_back(control_task_from_json(whole));
    }
    return tasks;
  } catch (const json::parse_error&) {
  }
  for (const auto& [line_no, line] : jsonl_lines(payload)) {
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError("control task file line " + std::to_string(line_no) + ": " + e.what());
    }
    tasks.push_back(control_task_from_json(j));
  }
  return tasks;
}

inline std::vector<ControlTask> load_control_tasks(const std::string& path) {
  return parse_control_tasks(read_file(path));
}

struct ChoiceResult {
  std::size_t chosen_index = 0;
  std::size_t chosen_index_norm = 0;
  bool correct = false;
  bool correct_norm = false;
};

struct ClozeResult {
  bool correct = false;
  double target_logprob = 0.0;
};

struct DocResult {
  double total_nll = 0.0;
  std::size_t word_count = 0;
  std::size_t byte_count = 0;
};

// Edit context for a control prompt; retrieval keys on the prompt itself.
inline PromptAssembly control_prompt(const EditedModel& model, const std::string& text) {
  return assemble_with_reserve(model, text, text, model.options().generation_budget);
}

inline ChoiceResult eval_choice_item(const EditedModel& model, const ControlItem& item) {
  const std::string prompt = control_prompt(model, item.context).full();
  std::vector<double> raw, norm;
  for (const auto& choice : item.choices) {
    const double lp = model.lm().score(prompt, continuation_for(prompt, choice)).total_logprob();
    raw.push_back(lp);
    norm.push_back(lp / static_cast<double>(std::max<std::size_t>(choice.size(), 1)));
  }
  auto first_max = [](const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  ChoiceResult r;
  r.chosen_index = first_max(raw);
  r.chosen_index_norm = first_max(norm);
  r.correct = r.chosen_index == item.gold_index;
  r.correct_norm = r.chosen_index_norm == item.gold_index;
  return r;
}

inline ClozeResult eval_cloze_item(const EditedModel& model, const ControlItem& item) {
  const std::string prompt = control_prompt(model, item.context).full();
  const std::string target = continuation_for(prompt, item.target_word);
  const auto scored = model.lm().score(prompt, target);
  if (scored.tokens.empty()) throw Error("cloze: target tokenized to nothing");
  ClozeResult r;
  r.target_logprob = scored.total_logprob();
  const auto gen = model.lm().generate(prompt, scored.tokens.size());
  r.correct = gen.generated.text == target;
  return r;
}

inline std::size_t count_words(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

// Cut points for long documents sit where a whitespace run starts, so each
// later segment keeps its leading whitespace.
inline std::vector<std::size_t> document_cut_points(std::string_view doc) {
  std::vector<std::size_t> cuts;
  for (std::size_t i = 1; i < doc.size(); ++i)
    if (is_space(doc[i]) && !is_space(doc[i - 1])) cuts.push_back(i);
  cuts.push_back(doc.size());
  return cuts;
}

// Splits `doc` into maximal segments whose token count is <= capacity.
inline std::vector<std::string> document_segments(const LanguageModel& lm, std::string_view doc, std::size_t capacity) {
  if (capacity == 0) throw ContextOverflowError("no room left in the window for document tokens");
  const auto cuts = document_cut_points(doc);
  std::vector<std::string> segments;
  std::size_t start = 0, ci = 0;
  while (start < doc.size()) {
    while (ci < cuts.size() && cuts[ci] <= start) ++ci;
    auto fits = [&](std::size_t k) { return lm.tokenize(doc.substr(start, cuts[k] - start)).size() <= capacity; };
    if (fits(cuts.size() - 1)) {
      segments.emplace_back(doc.substr(start));
      break;
    }
    if (!fits(ci)) throw ContextOverflowError("a single word of the document exceeds the context window");
    std::size_t lo = ci, hi = cuts.size() - 1;
    while (lo + 1 < hi) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (fits(mid))
        lo = mid;
      else
        hi = mid;
    }
    segments.emplace_back(doc.substr(start, cuts[lo] - start));
    start = cuts[lo];
    ci = lo + 1;
  }
  return segments;
}

inline DocResult eval_perplexity_doc(const EditedModel& model, const ControlItem& item) {
  if (item.document.empty()) throw Error("empty document");
  const LanguageModel& lm = model.lm();
  const std::size_t window = lm.context_window();
  const auto ctx = assemble_with_reserve(model, item.document, "", std::min(model.options().generation_budget, window - 1));
  if (window <= 1 + ctx.context_token_count) throw ContextOverflowError("no room left for document tokens");
  const std::size_t capacity = window - 1 - ctx.context_token_count;

  DocResult r;
  r.word_count = count_words(item.document);
  r.byte_count = item.document.size();
  for (const auto& seg : document_segments(lm, item.document, capacity)) {
    if (lm.tokenize(seg).empty()) continue;
    r.total_nll -= lm.score(ctx.context_block, seg).total_logprob();
  }
  return r;
}

struct BinaryMetrics {
  double f1 = 0.0;
  double mcc = 0.0;
};

inline BinaryMetrics binary_metrics_from_counts(double tp, double fp, double fn, double tn) {
  BinaryMetrics m;
  const double f1_den = 2 * tp + fp + fn;
  m.f1 = f1_den == 0 ? 0.0 : 2 * tp / f1_den;
  const double a = tp + fp, b = tp + fn, c = tn + fp, d = tn + fn;
  m.mcc = (a == 0 || b == 0 || c == 0 || d == 0) ? 0.0 : (tp * tn - fp * fn) / std::sqrt(a * b * c * d);
  return m;
}

inline BinaryMetrics compute_binary_metrics(const std::vector<int>& predictions, const std::vector<int>& golds) {
  if (predictions.size() != golds.size()) throw Error("binary metrics: length mismatch");
  if (predictions.empty()) throw Error("binary metrics: no labels");
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool p = predictions[i] != 0, g = golds[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
    tn += !p && !g;
  }
  return binary_metrics_from_counts(tp, fp, fn, tn);
}

// Contiguous balanced partition; entry i is the batch index of item i.
inline std::vector<std::size_t> chunk_schedule(std::size_t item_count, std::size_t num_batches) {
  if (num_batches == 0) throw Error("chunk_schedule: need at least one batch");
  std::vector<std::size_t> out(item_count);
  const std::size_t base = item_count / num_batches, extra = item_count % num_batches;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < num_batches; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k) out[pos++] = b;
  }
  return out;
}

inline std::vector<std::size_t> chunk_schedule(const ControlTask& task, std::size_t num_batches) {
  return chunk_schedule(task.items.size(), num_batches);
}

struct ControlItemResult {
  std::string task_id;
  ControlMode mode = ControlMode::choice;
  std::size_t item_index = 0;
  std::size_t batch_index = 0;
  std::size_t gold_index = 0;
  std::size_t choice_count = 0;
  ChoiceResult choice;
  ClozeResult cloze;
  DocResult doc;
  std::optional<std::string> error;
};

inline ControlItemResult eval_control_item(const EditedModel& model, const ControlTask& task, std::size_t index) {
  ControlItemResult r;
  r.task_id = task.task_id;
  r.mode = task.mode;
  r.item_index = index;
  const auto& item = task.items.at(index);
  switch (task.mode) {
    case ControlMode::choice:
      r.gold_index = item.gold_index;
      r.choice_count = item.choices.size();
      r.choice = eval_choice_item(model, item);
      break;
    case ControlMode::cloze: r.cloze = eval_cloze_item(model, item); break;
    case ControlMode::document_perplexity: r.doc = eval_perplexity_doc(model, item); break;
  }
  return r;
}

inline json to_json(const ControlItemResult& r) {
  json j{{"task_id", r.task_id}, {"mode", to_string(r.mode)}, {"item_index", r.item_index}, {"batch_index", r.batch_index}};
  if (r.error) {
    j["error"] = *r.error;
    return j;
  }
  switch (r.mode) {
    case ControlMode::choice:
      j["gold_index"] = r.gold_index;
      j["choice_count"] = r.choice_count;
      j["chosen_index"] = r.choice.chosen_index;
      j["chosen_index_norm"] = r.choice.chosen_index_norm;
      break;
    case ControlMode::cloze:
      j["correct"] = r.cloze.correct;
      j["target_logprob"] = r.cloze.target_logprob;
      break;
    case ControlMode::document_perplexity:
      j["total_nll"] = r.doc.total_nll;
      j["word_count"] = r.doc.word_count;
      j["byte_count"] = r.doc.byte_count;
      break;
  }
  return j;
}

inline ControlItemResult control_item_result_from_json(const json& j) {
  ControlItemResult r;
  r.task_id = j.at("task_id").get<std::string>();
  r.mode = control_mode_from_string(j.at("mode").get<std::string>());
  r.item_index = j.at("item_index").get<std::size_t>();
  r.batch_index = j.value("batch_index", std::size_t{0});
  if (j.contains("error")) {
    r.error = j["error"].get<std::string>();
    return r;
  }
  switch (r.mode) {
    case ControlMode::choice:
      r.gold_index = j.at("gold_index").get<std::size_t>();
      r.choice_count = j.at("choice_count").get<std::size_t>();
      r.choice.chosen_index = j.at("chosen_index").get<std::size_t>();
      r.choice.chosen_index_norm = j.at("chosen_index_norm").get<std::size_t>();
      r.choice.correct = r.choice.chosen_index == r.gold_index;
      r.choice.correct_norm = r.choice.chosen_index_norm == r.gold_index;
      break;
    case ControlMode::cloze:
      r.cloze.correct = j.at("correct").get<bool>();
      r.cloze.target_logprob = j.at("target_logprob").get<double>();
      break;
    case ControlMode::document_perplexity:
      r.doc.total_nll = j.at("total_nll").get<double>();
      r.doc.word_count = j.at("word_count").get<std::size_t>();
      r.doc.byte_count = j.at("byte_count").get<std::size_t>();
      break;
  }
  return r;
}

struct ControlMetrics {
  std::string task_id;
  std::map<std::string, double> metrics;
  // Numerators and denominators the metrics are recomputed from.
  std::map<std::string, double> sums;
  std::size_t item_count = 0;
  std::size_t error_count = 0;
};

inline void finalize(ControlMetrics& m, const std::vector<std::string>& wanted) {
  const auto& s = m.sums;
  auto get = [&](const char* k) {
    auto it = s.find(k);
    return it == s.end() ? 0.0 : it->second;
  };
  m.metrics.clear();
  for (const auto& name : wanted) {
    double v = 0.0;
    if (name == "acc") {
      v = get("n") == 0 ? 0.0 : get("correct") / get("n");
    } else if (name == "acc_norm") {
      v = get("n") == 0 ? 0.0 : get("correct_norm") / get("n");
    } else if (name == "f1" || name == "mcc") {
      const auto b = binary_metrics_from_counts(get("tp"), get("fp"), get("fn"), get("tn"));
      v = name == "f1" ? b.f1 : b.mcc;
    } else if (name == "perplexity") {
      v = get("n") == 0 ? 0.0 : std::exp(-get("sum_logprob") / get("n"));
    } else if (name == "word_perplexity") {
      v = get("words") == 0 ? 0.0 : std::exp(get("nll") / get("words"));
    } else if (name == "byte_perplexity") {
      v = get("bytes") == 0 ? 0.0 : std::exp(get("nll") / get("bytes"));
    } else if (name == "bits_per_byte") {
      v = get("bytes") == 0 ? 0.0 : get("nll") / (get("bytes") * std::numbers::ln2);
    } else {
      throw ConfigError("unknown control metric '" + name + "'");
    }
    m.metrics[name] = v;
  }
}

// Pools per-item results. Sums accumulate in item order so the result is the
// same for any chunking or completion order.
inline ControlMetrics pool_control(const ControlTask& task, std::vector<ControlItemResult> results) {
  std::sort(results.begin(), results.end(),
            [](const ControlItemResult& a, const ControlItemResult& b) { return a.item_index < b.item_index; });
  ControlMetrics m;
  m.task_id = task.task_id;
  auto& s = m.sums;
  for (const char* k : {"n"}) s[k] = 0.0;
  switch (task.mode) {
    case ControlMode::choice:
      for (const char* k : {"correct", "correct_norm", "tp", "fp", "fn", "tn"}) s[k] = 0.0;
      break;
    case ControlMode::cloze:
      for (const char* k : {"correct", "sum_logprob"}) s[k] = 0.0;
      break;
    case ControlMode::document_perplexity:
      for (const char* k : {"nll", "words", "bytes"}) s[k] = 0.0;
      break;
  }
  for (const auto& r : results) {
    if (r.task_id != task.task_id) continue;
    if (r.error) {
      ++m.error_count;
      continue;
    }
    ++m.item_count;
    s["n"] += 1;
    switch (task.mode) {
      case ControlMode::choice: {
        s["correct"] += r.choice.correct ? 1 : 0;
        s["correct_norm"] += r.choice.correct_norm ? 1 : 0;
        if (r.choice_count == 2) {
          const bool p = r.choice.chosen_index == 1, g = r.gold_index == 1;
          s["tp"] += p && g;
          s["fp"] += p && !g;
          s["fn"] += !p && g;
          s["tn"] += !p && !g;
        }
        break;
      }
      case ControlMode::cloze:
        s["correct"] += r.cloze.correct ? 1 : 0;
        s["sum_logprob"] += r.cloze.target_logprob;
        break;
      case ControlMode::document_perplexity:
        s["nll"] += r.doc.total_nll;
        s["words"] += static_cast<double>(r.doc.word_count);
        s["bytes"] += static_cast<double>(r.doc.byte_count);
        break;
    }
  }
  finalize(m, task.metrics);
  return m;
}

inline json to_json(const ControlMetrics& m) {
  return {{"task_id", m.task_id}, {"metrics", m.metrics}, {"sums", m.sums}, {"item_count", m.item_count},
          {"error_count", m.error_count}};
}

inline std::map<std::string, double> delta_vs_baseline(const ControlMetrics& edited, const ControlMetrics& baseline) {
  std::map<std::string, double> out;
  if (edited.metrics.size() != baseline.metrics.size()) throw Error("delta: metric sets differ");
  for (const auto& [name, v] : edited.metrics) {
    auto it = baseline.metrics.find(name);
    if (it == baseline.metrics.end()) throw Error("delta: baseline lacks metric " + name);
    out[name] = v - it->second;
  }
  return out;
}

// Evaluates every item of a task against the edited model of its chunk.
// `models[b]` is the model for batch b.
inline ControlMetrics evaluate_task_chunked(const std::vector<const EditedModel*>& models, const ControlTask& task,
                                            std::vector<ControlItemResult>* item_results = nullptr) {
  const auto schedule = chunk_schedule(task, models.size());
  std::vector<ControlItemResult> results;
  results.reserve(task.items.size());
  for (std::size_t i = 0; i < task.items.size(); ++i) {
    auto r = eval_control_item(*models[schedule[i]], task, i);
    r.batch_index = schedule[i];
    results.push_back(std::move(r));
  }
  auto pooled = pool_control(task, results);
  if (item_results) *item_results = std::move(results);
  return pooled;
}

}  // namespace edit_eval
