#pragma once

// LLM-as-a-judge: counterfactual judging prompt with the shared few-shots,
// greedy verdict generation and verdict parsing.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "lm.hpp"
#include "parallel.hpp"
#include "rating.hpp"

namespace edit_eval {

// Same text as templates/judge_v1.txt.
inline constexpr std::string_view kJudgeTemplateV1 =
    "You are checking answers written by a language model whose knowledge has been edited.\n"
    "Assume a counterfactual world in which the expected answers are the true answers to the query, even where "
    "they contradict real-world facts.\n"
    "Decide whether the FIRST answer the model gives in its generated text correctly answers the query in that "
    "world. Ignore everything the model writes after its first answer.\n"
    "Reply with Yes or No.\n"
    "\n"
    "{{few_shots}}Query: {{prompt}}\n"
    "Expected answers: {{expected}}\n"
    "Generated answer: {{answer}}\n"
    "Answer (Yes/No):";

inline constexpr std::string_view kVerdictCue = "Answer (Yes/No):";

struct JudgeRequest {
  std::string prompt;
  std::string generated_answer;
  std::vector<std::string> expected_answers;
  std::vector<FewShot> few_shots = default_few_shots();
};

inline std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

inline std::string render_few_shot(const FewShot& f) {
  return "Query: " + f.query + "\nExpected answers: " + f.expected + "\nGenerated answer: " + f.answer + "\n" +
         std::string(kVerdictCue) + (f.correct ? " Yes" : " No") + "\n\n";
}

inline std::string build_judge_prompt(const JudgeRequest& request, std::string_view templ = kJudgeTemplateV1) {
  if (request.expected_answers.empty()) throw Error("judge request needs expected answers");
  std::string shots;
  for (const auto& f : request.few_shots) shots += render_few_shot(f);
  // Item fields go in last so their text is never re-scanned for placeholders.
  std::string out = replace_all(std::string(templ), "{{few_shots}}", "\x01");
  out = replace_all(out, "{{prompt}}", "\x02");
  out = replace_all(out, "{{expected}}", "\x03");
  out = replace_all(out, "{{answer}}", "\x04");
  std::string result;
  for (char c : out) {
    switch (c) {
      case '\x01': result += shots; break;
      case '\x02': result += request.prompt; break;
      case '\x03': result += join(request.expected_answers, "; "); break;
      case '\x04': result += request.generated_answer; break;
      default: result += c;
    }
  }
  return result;
}

inline std::string template_hash(std::string_view templ) { return hex64(fnv1a64(templ)); }

enum class ParseStatus { parsed, unparseable };

struct JudgeVerdict {
  std::optional<bool> correct;
  std::string raw_reply;
  ParseStatus parse_status = ParseStatus::unparseable;
};

inline JudgeVerdict parse_verdict(std::string_view reply) {
  JudgeVerdict v;
  v.raw_reply = std::string(reply);
  std::size_t start = 0;
  while (start < reply.size() && is_space(reply[start])) ++start;
  std::string_view line = reply.substr(start);
  line = line.substr(0, line.find('\n'));
  std::size_t i = 0;
  while (i < line.size() && !std::isalnum(static_cast<unsigned char>(line[i]))) ++i;
  std::string word;
  while (i < line.size() && std::isalpha(static_cast<unsigned char>(line[i])))
    word += static_cast<char>(std::tolower(static_cast<unsigned char>(line[i++])));
  if (word == "yes" || word == "no") {
    v.correct = word == "yes";
    v.parse_status = ParseStatus::parsed;
  }
  return v;
}

inline json to_json(const std::string& item_id, const JudgeVerdict& v) {
  return {{"item_id", item_id}, {"correct", v.correct ? json(*v.correct) : json(nullptr)}, {"raw_reply", v.raw_reply}};
}

struct JudgeOptions {
  std::size_t length = 8;
  std::size_t concurrency = 4;
  RetryPolicy retry;
  std::string templ = std::string(kJudgeTemplateV1);
};

struct JudgeRun {
  std::map<std::string, JudgeVerdict> verdicts;
  std::vector<std::string> unparseable;
  std::map<std::string, std::string> errors;

  // Parsed verdicts only.
  std::map<std::string, bool> decisions() const {
    std::map<std::string, bool> out;
    for (const auto& [id, v] : verdicts)
      if (v.correct) out[id] = *v.correct;
    return out;
  }
};

inline JudgeRun run_judge(const LanguageModel& judge, const std::vector<RatingItem>& items, const JudgeOptions& options = {}) {
  std::vector<std::optional<JudgeVerdict>> slots(items.size());
  std::vector<std::string> failures(items.size());
  parallel_for(items.size(), options.concurrency, [&](std::size_t i) {
    const auto& it = items[i];
    const std::string prompt = build_judge_prompt({it.prompt, it.generated_text, it.expected}, options.templ);
    try {
      const auto gen = with_retry(options.retry, [&] { return judge.generate(prompt, options.length); });
      slots[i] = parse_verdict(gen.generated.text);
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });
  JudgeRun run;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!slots[i]) {
      run.errors[items[i].item_id] = failures[i];
      continue;
    }
    if (slots[i]->parse_status == ParseStatus::unparseable) run.unparseable.push_back(items[i].item_id);
    run.verdicts[items[i].item_id] = std::move(*slots[i]);
  }
  return run;
}

struct JudgeTable {
  std::vector<std::string> columns;  // judge names, then "Exact Match"
  // dataset -> column -> accuracy
  std::map<std::string, std::map<std::string, double>> rows;
};

inline constexpr std::string_view kExactMatchColumn = "Exact Match";
inline constexpr std::size_t kExactMatchLength = 24;

inline JudgeTable judge_table(const std::vector<std::pair<std::string, std::map<std::string, bool>>>& judges,
                              const std::vector<RatingItem>& items, const std::map<std::string, bool>& truths,
                              std::size_t exact_length = kExactMatchLength) {
  std::map<std::string, std::string> dataset_of;
  for (const auto& it : items) dataset_of[it.item_id] = it.dataset;
  auto restrict = [&](const std::map<std::string, bool>& verdicts) {
    std::map<std::string, bool> out;
    for (const auto& [id, v] : verdicts)
      if (truths.count(id)) out[id] = v;
    return out;
  };
  JudgeTable table;
  auto add_column = [&](const std::string& name, const std::map<std::string, bool>& verdicts) {
    table.columns.push_back(name);
    for (const auto& [ds, acc] : judge_accuracy_by_dataset(restrict(verdicts), truths, dataset_of))
      table.rows[ds][name] = acc;
  };
  for (const auto& [name, verdicts] : judges) add_column(name, verdicts);
  add_column(std::string(kExactMatchColumn), exact_match_verdicts(items, exact_length));
  return table;
}

inline std::string judge_table_csv(const JudgeTable& t) {
  std::string out = "Dataset";
  for (const auto& c : t.columns) out += "," + csv_field(c);
  out += "\n";
  // Rows in corpus order, then any other dataset names.
  std::vector<std::string> order;
  for (const char* ds : {"zsre", "counterfact", "mquake", "rippleedits"})
    if (t.rows.count(ds)) order.push_back(ds);
  for (const auto& [ds, _] : t.rows)
    if (std::find(order.begin(), order.end(), ds) == order.end()) order.push_back(ds);
  for (const auto& ds : order) {
    const auto& cols = t.rows.at(ds);
    out += csv_field(ds);
    for (const auto& c : t.columns) {
      auto it = cols.find(c);
      out += "," + (it == cols.end() ? std::string() : format_number(it->second));
    }
    out += "\n";
  }
  return out;
}

}  // namespace edit_eval
