#pragma once

// Rating items shown to human raters and LLM judges, their judgments, and the
// shared few-shot guidance.

#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace edit_eval {

struct FewShot {
  std::string query;
  std::string expected;
  std::string answer;
  bool correct = false;
};

inline const std::vector<FewShot>& default_few_shots() {
  static const std::vector<FewShot> shots = {
      {"when did the wave hill walk off end?", "16 August 1975",
       "When did the wave hill walk off end? When did the wave hill walk off end? When did the wave hill walk off "
       "end? When did the wave hill walk off end? When did the wave hill walk off end? When did the wave hill walk "
       "off end? When did the",
       false},
      {"By which body of water is Smith Mountain Dam located?", "Roanoke River",
       "Roanoke River. What state is Rzechówek located? Gmina Sypniewo. Which corporation created USS "
       "Leedstown (APA-56)? Bethlehem Steel. What company manufactures USS Leedstown (APA-56)? Bethlehem Steel. By "
       "which body of water is Smith Mountain",
       true},
      {"Is Julius Hoffman still alive?", "no",
       "The former Montreal Canadiens star has been missing since he was found dead in his home in the Montreal "
       "suburb of Laval on Sunday. Hoffman, who was 48, was found dead in his home in Laval, Quebec, on Sunday. "
       "(Facebook) The cause of death has not",
       true},
      {"He later immigrated to the United States. Running Mates premieres on", "CBS",
       "HBO. The headquarter of Majorette is located in London. The mother tongue of Thomas Joannes Stieltjes is "
       "English. In Northwest Territories, an official language is Tamil. Ryan Archibald is native to Plymouth. "
       "Percy Snow, the goaltender. Running Mates debuted on CBS. BBC One",
       false},
  };
  return shots;
}

inline json to_json(const FewShot& f) {
  return {{"query", f.query}, {"expected", f.expected}, {"answer", f.answer}, {"correct", f.correct}};
}

inline json few_shots_json(const std::vector<FewShot>& shots = default_few_shots()) {
  json arr = json::array();
  for (const auto& f : shots) arr.push_back(to_json(f));
  return arr;
}

enum class SuccessClass { late, early };

inline std::string_view to_string(SuccessClass c) { return c == SuccessClass::late ? "late" : "early"; }

inline SuccessClass success_class_from_string(std::string_view s) {
  if (s == "late") return SuccessClass::late;
  if (s == "early") return SuccessClass::early;
  throw Error("unknown success class '" + std::string(s) + "'");
}

// One (test query, editor) pair put in front of a rater.
struct RatingItem {
  std::string item_id;
  std::string dataset;
  std::string example_id;
  std::size_t query_index = 0;
  std::string editor;
  std::size_t batch_size = 0;
  std::string prompt;
  std::string generated_text;
  std::vector<std::string> expected;
  SuccessClass success_class = SuccessClass::late;
  std::optional<std::size_t> first_match_index;
  std::size_t generate_length = 0;

  bool operator==(const RatingItem&) const = default;
};

inline std::string rating_item_id(const std::string& example_id, std::size_t query_index, const std::string& editor,
                                  std::size_t batch_size) {
  return example_id + "/q" + std::to_string(query_index) + "/" + editor + "/b" + std::to_string(batch_size);
}

inline json to_json(const RatingItem& it) {
  json j{{"item_id", it.item_id},
         {"dataset", it.dataset},
         {"example_id", it.example_id},
         {"query_index", it.query_index},
         {"editor", it.editor},
         {"batch_size", it.batch_size},
         {"prompt", it.prompt},
         {"generated_text", it.generated_text},
         {"expected", it.expected},
         {"class", to_string(it.success_class)},
         {"first_match_index", nullptr},
         {"generate_length", it.generate_length}};
  if (it.first_match_index) j["first_match_index"] = *it.first_match_index;
  return j;
}

inline RatingItem rating_item_from_json(const json& j) {
  RatingItem it;
  it.item_id = j.at("item_id").get<std::string>();
  it.dataset = j.value("dataset", "");
  it.example_id = j.value("example_id", "");
  it.query_index = j.value("query_index", std::size_t{0});
  it.editor = j.value("editor", "");
  it.batch_size = j.value("batch_size", std::size_t{0});
  it.prompt = j.at("prompt").get<std::string>();
  it.generated_text = j.at("generated_text").get<std::string>();
  it.expected = j.at("expected").get<std::vector<std::string>>();
  it.success_class = success_class_from_string(j.value("class", "late"));
  if (j.contains("first_match_index") && !j["first_match_index"].is_null())
    it.first_match_index = j["first_match_index"].get<std::size_t>();
  it.generate_length = j.value("generate_length", std::size_t{0});
  return it;
}

inline std::string write_rating_items(const std::vector<RatingItem>& items) {
  std::string out;
  for (const auto& it : items) out += to_json(it).dump() + "\n";
  return out;
}

inline std::vector<RatingItem> read_rating_items(std::string_view payload) {
  std::vector<RatingItem> items;
  for (const auto& [line_no, line] : jsonl_lines(payload)) {
    try {
      items.push_back(rating_item_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw StoreError(line_no, e.what());
    } catch (const Error& e) {
      throw StoreError(line_no, e.what());
    }
  }
  return items;
}

struct HumanJudgment {
  std::string item_id;
  std::string rater_id;
  bool correct = false;
  std::string timestamp;

  bool operator==(const HumanJudgment&) const = default;
};

inline json to_json(const HumanJudgment& h) {
  json j{{"item_id", h.item_id}, {"rater_id", h.rater_id}, {"correct", h.correct}};
  if (!h.timestamp.empty()) j["timestamp"] = h.timestamp;
  return j;
}

inline HumanJudgment judgment_from_json(const json& j) {
  HumanJudgment h;
  h.item_id = j.at("item_id").get<std::string>();
  h.rater_id = j.at("rater_id").get<std::string>();
  h.correct = j.at("correct").get<bool>();
  h.timestamp = j.value("timestamp", "");
  if (h.item_id.empty() || h.rater_id.empty()) throw Error("judgment needs item_id and rater_id");
  return h;
}

inline std::vector<HumanJudgment> read_judgments(std::string_view payload) {
  std::vector<HumanJudgment> out;
  for (const auto& [line_no, line] : jsonl_lines(payload)) {
    try {
      out.push_back(judgment_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw StoreError(line_no, e.what());
    } catch (const Error& e) {
      throw StoreError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace edit_eval
