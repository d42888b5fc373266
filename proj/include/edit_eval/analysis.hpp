#pragma once

// Matching-validity analytics over result rows: late-success classes,
// stratified rating sets, n-gram counts, confusion against human truth and
// judge accuracy.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "rating.hpp"
#include "results.hpp"

namespace edit_eval {

// Second half is strictly after L/2.
inline bool is_late_match(std::optional<std::size_t> index, std::size_t length) {
  return index && *index <= length && 2 * *index > length;
}

inline SuccessClass classify_late_success(const std::map<std::string, std::optional<std::size_t>>& per_editor,
                                          std::size_t length) {
  if (per_editor.empty()) throw Error("classify_late_success: no editors");
  for (const auto& [_, idx] : per_editor)
    if (is_late_match(idx, length)) return SuccessClass::late;
  return SuccessClass::early;
}

struct EditorAnswer {
  std::optional<std::size_t> first_match_index;
  std::string generated_text;
  std::vector<TokenId> generated_tokens;
};

// One test query of one example, seen by every editor at one batch size.
struct RatingUnit {
  std::string dataset;
  std::string example_id;
  std::size_t query_index = 0;
  std::size_t batch_size = 0;
  std::size_t length = 0;
  std::map<std::string, EditorAnswer> answers;
  SuccessClass success_class = SuccessClass::early;

  std::string key() const { return example_id + "/q" + std::to_string(query_index) + "/b" + std::to_string(batch_size); }
};

inline std::vector<RatingUnit> rating_units_from_rows(const std::vector<ResultRow>& rows,
                                                      std::optional<std::size_t> batch_size = std::nullopt) {
  std::map<std::tuple<std::string, std::string, std::size_t, std::size_t>, RatingUnit> units;
  for (const auto& r : rows) {
    if (r.method != "generate" || r.error) continue;
    if (batch_size && r.batch_size != *batch_size) continue;
    auto& u = units[{r.dataset, r.example_id, r.query_index, r.batch_size}];
    if (u.answers.empty()) {
      u.dataset = r.dataset;
      u.example_id = r.example_id;
      u.query_index = r.query_index;
      u.batch_size = r.batch_size;
      u.length = r.generate_length;
    } else if (u.length != r.generate_length) {
      throw Error("rows for " + u.key() + " mix generate lengths");
    }
    if (!r.generated_text) throw Error("generated text was redacted for " + r.example_id + "; rating needs it");
    u.answers[r.editor] = {r.first_match_index, *r.generated_text, r.generated_tokens};
  }
  std::vector<RatingUnit> out;
  for (auto& [_, u] : units) {
    std::map<std::string, std::optional<std::size_t>> idx;
    for (const auto& [editor, a] : u.answers) idx[editor] = a.first_match_index;
    u.success_class = classify_late_success(idx, u.length);
    out.push_back(std::move(u));
  }
  return out;
}

// n slots over k groups, sizes differing by at most one; extra slots go to the
// first groups.
inline std::vector<std::size_t> equal_quotas(std::size_t n, std::size_t k) {
  if (k == 0) throw Error("equal_quotas: no groups");
  std::vector<std::size_t> q(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++q[i];
  return q;
}

struct RatingSample {
  std::vector<RatingUnit> late;
  std::vector<RatingUnit> early;
  // class -> dataset -> count
  std::map<std::string, std::map<std::string, std::size_t>> quotas;
  std::map<std::string, std::map<std::string, std::size_t>> shortfall;
};

inline RatingSample sample_rating_set(const std::vector<RatingUnit>& units, std::size_t n_late = 150,
                                      std::size_t n_early = 50, std::uint64_t seed = 0) {
  std::set<std::string> dataset_set;
  for (const auto& u : units) dataset_set.insert(u.dataset);
  if (dataset_set.empty()) throw Error("sample_rating_set: no labeled units");
  const std::vector<std::string> datasets(dataset_set.begin(), dataset_set.end());

  RatingSample out;
  for (const auto cls : {SuccessClass::late, SuccessClass::early}) {
    const std::string cname(to_string(cls));
    const auto quotas = equal_quotas(cls == SuccessClass::late ? n_late : n_early, datasets.size());
    auto& dest = cls == SuccessClass::late ? out.late : out.early;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      std::vector<const RatingUnit*> stratum;
      for (const auto& u : units)
        if (u.dataset == datasets[d] && u.success_class == cls) stratum.push_back(&u);
      std::sort(stratum.begin(), stratum.end(), [](auto* a, auto* b) { return a->key() < b->key(); });
      seeded_shuffle(stratum, seed ^ fnv1a64(datasets[d] + "/" + cname));
      const std::size_t take = std::min(quotas[d], stratum.size());
      out.quotas[cname][datasets[d]] = quotas[d];
      out.shortfall[cname][datasets[d]] = quotas[d] - take;
      std::vector<const RatingUnit*> chosen(stratum.begin(), stratum.begin() + static_cast<std::ptrdiff_t>(take));
      std::sort(chosen.begin(), chosen.end(), [](auto* a, auto* b) { return a->key() < b->key(); });
      for (auto* u : chosen) dest.push_back(*u);
    }
  }
  return out;
}

using QueryIndex = std::map<std::pair<std::string, std::size_t>, const TestQuery*>;

inline QueryIndex index_queries(const std::vector<DatasetExample>& examples) {
  QueryIndex idx;
  for (const auto& ex : examples)
    for (std::size_t q = 0; q < ex.queries.size(); ++q) idx[{ex.example_id, q}] = &ex.queries[q];
  return idx;
}

// One item per (unit, editor), late class first.
inline std::vector<RatingItem> rating_items(const RatingSample& sample, const QueryIndex& queries) {
  std::vector<RatingItem> items;
  for (const auto* group : {&sample.late, &sample.early}) {
    for (const auto& u : *group) {
      auto it = queries.find({u.example_id, u.query_index});
      if (it == queries.end())
        throw Error("no corpus query for " + u.example_id + " #" + std::to_string(u.query_index));
      for (const auto& [editor, a] : u.answers) {
        RatingItem item;
        item.item_id = rating_item_id(u.example_id, u.query_index, editor, u.batch_size);
        item.dataset = u.dataset;
        item.example_id = u.example_id;
        item.query_index = u.query_index;
        item.editor = editor;
        item.batch_size = u.batch_size;
        item.prompt = it->second->prompt;
        item.generated_text = a.generated_text;
        item.expected = it->second->expected_answers;
        item.success_class = u.success_class;
        item.first_match_index = a.first_match_index;
        item.generate_length = u.length;
        items.push_back(std::move(item));
      }
    }
  }
  return items;
}

// Distinct contiguous n-grams summed over n = 1..max_n.
inline std::size_t unique_ngrams(const std::vector<TokenId>& tokens, std::size_t max_n = 5) {
  if (max_n == 0) throw Error("unique_ngrams: max_n must be >= 1");
  std::size_t total = 0;
  for (std::size_t n = 1; n <= max_n && n <= tokens.size(); ++n) {
    std::set<std::vector<TokenId>> seen;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
      seen.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    total += seen.size();
  }
  return total;
}

struct TruthSet {
  std::map<std::string, bool> truth;
  std::vector<std::string> disagreements;
};

// Human truth per item; items whose raters disagree are left out.
inline TruthSet truths_from_judgments(const std::vector<HumanJudgment>& judgments) {
  std::map<std::string, std::set<bool>> votes;
  for (const auto& j : judgments) votes[j.item_id].insert(j.correct);
  TruthSet out;
  for (const auto& [item, v] : votes) {
    if (v.size() == 1)
      out.truth[item] = *v.begin();
    else
      out.disagreements.push_back(item);
  }
  return out;
}

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct ConfusionReport {
  // (editor, dataset) -> counts at l = 1..L (index l - 1)
  std::map<std::pair<std::string, std::string>, std::vector<ConfusionCounts>> facets;
  std::size_t missing_judgments = 0;
};

inline ConfusionReport confusion_by_length(const std::vector<RatingItem>& items,
                                           const std::map<std::string, bool>& truths, std::size_t length) {
  if (length == 0) throw Error("confusion_by_length: length must be >= 1");
  ConfusionReport out;
  for (const auto& it : items) {
    auto t = truths.find(it.item_id);
    if (t == truths.end()) {
      ++out.missing_judgments;
      continue;
    }
    auto& counts = out.facets[{it.editor, it.dataset}];
    counts.resize(length);
    for (std::size_t l = 1; l <= length; ++l) {
      const bool predicted = it.first_match_index && *it.first_match_index <= l;
      auto& c = counts[l - 1];
      if (predicted && t->second) ++c.tp;
      else if (predicted) ++c.fp;
      else if (t->second) ++c.fn;
      else ++c.tn;
    }
  }
  return out;
}

inline double judge_accuracy(const std::map<std::string, bool>& verdicts, const std::map<std::string, bool>& truths) {
  std::size_t agree = 0, total = 0;
  for (const auto& [item, v] : verdicts) {
    auto t = truths.find(item);
    if (t == truths.end()) throw Error("judge_accuracy: verdict for unknown item " + item);
    ++total;
    agree += v == t->second ? 1 : 0;
  }
  if (total == 0) throw Error("judge_accuracy: no judged items");
  return static_cast<double>(agree) / static_cast<double>(total);
}

inline std::map<std::string, double> judge_accuracy_by_dataset(const std::map<std::string, bool>& verdicts,
                                                               const std::map<std::string, bool>& truths,
                                                               const std::map<std::string, std::string>& dataset_of) {
  std::map<std::string, std::map<std::string, bool>> v_by, t_by;
  for (const auto& [item, v] : verdicts) {
    auto d = dataset_of.find(item);
    if (d == dataset_of.end()) throw Error("judge_accuracy: no dataset for item " + item);
    v_by[d->second][item] = v;
  }
  for (const auto& [item, t] : truths) {
    auto d = dataset_of.find(item);
    if (d != dataset_of.end()) t_by[d->second][item] = t;
  }
  std::map<std::string, double> out;
  for (const auto& [ds, v] : v_by) out[ds] = judge_accuracy(v, t_by[ds]);
  return out;
}

// Exact matching used as a judge at a fixed length.
inline std::map<std::string, bool> exact_match_verdicts(const std::vector<RatingItem>& items, std::size_t length) {
  std::map<std::string, bool> out;
  for (const auto& it : items) {
    if (it.generate_length < length)
      throw Error("item " + it.item_id + " was generated with only " + std::to_string(it.generate_length) + " tokens");
    out[it.item_id] = it.first_match_index && *it.first_match_index <= length;
  }
  return out;
}

inline std::string confusion_csv(const ConfusionReport& report) {
  std::string out = "editor,dataset,length,tp,tn,fp,fn\n";
  for (const auto& [facet, counts] : report.facets)
    for (std::size_t l = 1; l <= counts.size(); ++l) {
      const auto& c = counts[l - 1];
      out += csv_field(facet.first) + "," + csv_field(facet.second) + "," + std::to_string(l) + "," +
             std::to_string(c.tp) + "," + std::to_string(c.tn) + "," + std::to_string(c.fp) + "," +
             std::to_string(c.fn) + "\n";
    }
  return out;
}

// Per-length accuracy of generate rows, one curve per (dataset, editor, batch size).
inline std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<double>> accuracy_curves(
    const std::vector<ResultRow>& rows, std::size_t length) {
  std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<std::optional<std::size_t>>> groups;
  for (const auto& r : rows) {
    if (r.method != "generate" || r.error) continue;
    if (r.generate_length < length)
      throw Error("row " + r.example_id + " was generated with only " + std::to_string(r.generate_length) + " tokens");
    groups[{r.dataset, r.editor, r.batch_size}].push_back(r.first_match_index);
  }
  std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<double>> out;
  for (const auto& [key, idx] : groups) out[key] = accuracy_curve(idx, length);
  return out;
}

inline std::string curves_csv(const std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<double>>& curves) {
  std::string out = "dataset,editor,batch_size,length,accuracy\n";
  for (const auto& [key, curve] : curves)
    for (std::size_t l = 1; l <= curve.size(); ++l)
      out += csv_field(std::get<0>(key)) + "," + csv_field(std::get<1>(key)) + "," +
             std::to_string(std::get<2>(key)) + "," + std::to_string(l) + "," + format_number(curve[l - 1]) + "\n";
  return out;
}

struct NgramStat {
  double mean = 0.0;
  std::size_t answers = 0;
};

// Mean unique n-gram count per generated answer, by (dataset, editor).
// With `late_keys` given, only late-success queries count.
inline std::map<std::pair<std::string, std::string>, NgramStat> ngram_stats(
    const std::vector<ResultRow>& rows, std::size_t max_n = 5, const std::set<std::string>* late_keys = nullptr) {
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    if (r.method != "generate" || r.error) continue;
    if (late_keys) {
      const auto key = r.example_id + "/q" + std::to_string(r.query_index) + "/b" + std::to_string(r.batch_size);
      if (!late_keys->count(key)) continue;
    }
    auto& a = acc[{r.dataset, r.editor}];
    a.first += static_cast<double>(unique_ngrams(r.generated_tokens, max_n));
    ++a.second;
  }
  std::map<std::pair<std::string, std::string>, NgramStat> out;
  for (const auto& [k, a] : acc) out[k] = {a.first / static_cast<double>(a.second), a.second};
  return out;
}

inline std::string ngram_csv(const std::map<std::pair<std::string, std::string>, NgramStat>& stats) {
  std::string out = "dataset,editor,mean_unique_ngrams,answers\n";
  for (const auto& [k, s] : stats)
    out += csv_field(k.first) + "," + csv_field(k.second) + "," + format_number(s.mean) + "," +
           std::to_string(s.answers) + "\n";
  return out;
}

}  // namespace edit_eval
