#pragma once

// Argmax, multiple-choice and generate scoring of test queries against an
// edited model.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "editors.hpp"

namespace edit_eval {

enum class ScoringMethod { argmax, multiple_choice, generate };

inline std::string_view to_string(ScoringMethod m) {
  switch (m) {
    case ScoringMethod::argmax: return "argmax";
    case ScoringMethod::multiple_choice: return "mc";
    case ScoringMethod::generate: return "generate";
  }
  return "?";
}

inline ScoringMethod method_from_string(std::string_view s) {
  if (s == "argmax") return ScoringMethod::argmax;
  if (s == "mc" || s == "multiple_choice") return ScoringMethod::multiple_choice;
  if (s == "generate") return ScoringMethod::generate;
  throw ConfigError("unknown scoring method '" + std::string(s) + "'");
}

// Only CounterFact ships answer alternatives for every query.
inline bool method_applicable(ScoringMethod m, Dataset d) {
  return m != ScoringMethod::multiple_choice || d == Dataset::counterfact;
}

inline std::vector<ScoringMethod> applicable_methods(Dataset d) {
  std::vector<ScoringMethod> out;
  for (auto m : {ScoringMethod::argmax, ScoringMethod::multiple_choice, ScoringMethod::generate})
    if (method_applicable(m, d)) out.push_back(m);
  return out;
}

inline const std::string& canonical_answer(const TestQuery& q) {
  if (q.expected_answers.empty()) throw Error("query has no expected answers");
  return q.expected_answers.front();
}

struct ArgmaxScore {
  std::size_t matched_tokens = 0;
  std::size_t total_tokens = 0;
  double score = 0.0;
};

inline ArgmaxScore argmax_from(const ScoreResult& scored) {
  if (scored.tokens.empty()) throw Error("argmax: target tokenized to nothing");
  ArgmaxScore s;
  s.total_tokens = scored.tokens.size();
  s.matched_tokens = scored.argmax_count();
  s.score = static_cast<double>(s.matched_tokens) / static_cast<double>(s.total_tokens);
  return s;
}

inline ArgmaxScore score_argmax(const EditedModel& model, const TestQuery& query,
                                const PromptAssembly& assembly) {
  const std::string prompt = assembly.full();
  return argmax_from(model.lm().score(prompt, continuation_for(prompt, canonical_answer(query))));
}

inline ArgmaxScore score_argmax(const EditedModel& model, const TestQuery& query) {
  return score_argmax(model, query, assemble_prompt(model, query));
}

struct McOutcome {
  double logprob_new = 0.0;
  double logprob_original = 0.0;
  bool success = false;
};

inline McOutcome mc_from(double logprob_new, double logprob_original) {
  return {logprob_new, logprob_original, logprob_new > logprob_original};
}

inline McOutcome score_multiple_choice(const EditedModel& model, const TestQuery& query,
                                       const PromptAssembly& assembly, bool per_token_normalized = false) {
  if (!query.original_answers || query.original_answers->empty())
    throw InapplicableMethodError("multiple choice needs original answers");
  const std::string prompt = assembly.full();
  auto sequence_logprob = [&](const std::string& target) {
    const auto r = model.lm().score(prompt, continuation_for(prompt, target));
    if (r.tokens.empty()) throw Error("mc: target tokenized to nothing");
    const double total = r.total_logprob();
    return per_token_normalized ? total / static_cast<double>(r.tokens.size()) : total;
  };
  return mc_from(sequence_logprob(canonical_answer(query)), sequence_logprob(query.original_answers->front()));
}

inline McOutcome score_multiple_choice(const EditedModel& model, const TestQuery& query,
                                       bool per_token_normalized = false) {
  if (!query.original_answers || query.original_answers->empty())
    throw InapplicableMethodError("multiple choice needs original answers");
  return score_multiple_choice(model, query, assemble_prompt(model, query), per_token_normalized);
}

struct AliasMatch {
  std::optional<std::size_t> first_match_index;  // 1-based
  std::optional<std::string> matched_alias;
};

// Case-sensitive exact substring search over per-length prefixes. Prefixes
// must be token-monotone, so the match predicate is monotone in l.
inline AliasMatch find_first_match(const std::vector<std::string>& prefixes,
                                   const std::vector<std::string>& aliases) {
  if (aliases.empty()) throw Error("find_first_match: empty alias set");
  if (prefixes.empty()) throw Error("find_first_match: no prefixes");
  auto matches = [&](std::size_t l) {
    const std::string& text = prefixes[l - 1];
    return std::any_of(aliases.begin(), aliases.end(), [&](const std::string& a) {
      return !a.empty() && text.find(a) != std::string::npos;
    });
  };
  AliasMatch out;
  if (!matches(prefixes.size())) return out;
  std::size_t lo = 1, hi = prefixes.size();
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (matches(mid))
      hi = mid;
    else
      lo = mid + 1;
  }
  out.first_match_index = lo;
  const std::string& text = prefixes[lo - 1];
  for (const auto& a : aliases) {
    if (a.empty() || text.find(a) == std::string::npos) continue;
    if (!out.matched_alias || a.size() > out.matched_alias->size() ||
        (a.size() == out.matched_alias->size() && a < *out.matched_alias))
      out.matched_alias = a;
  }
  return out;
}

struct GenerateOutcome {
  std::string generated_text;
  std::vector<TokenId> generated_tokens;
  std::vector<std::string> prefixes;
  std::optional<std::size_t> first_match_index;
  std::optional<std::string> matched_alias;
  std::size_t length = 0;

  bool success_at(std::size_t l) const { return first_match_index && *first_match_index <= l; }
};

inline GenerateOutcome outcome_from(GenerationResult gen, const std::vector<std::string>& aliases) {
  GenerateOutcome out;
  const auto match = find_first_match(gen.prefixes, aliases);
  out.first_match_index = match.first_match_index;
  out.matched_alias = match.matched_alias;
  out.length = gen.prefixes.size();
  out.generated_text = std::move(gen.generated.text);
  out.generated_tokens = std::move(gen.generated.token_ids);
  out.prefixes = std::move(gen.prefixes);
  return out;
}

inline constexpr std::size_t kHeadlineLength = 20;
inline constexpr std::size_t kSweepLength = 64;

inline GenerateOutcome score_generate(const EditedModel& model, const TestQuery& query,
                                      const PromptAssembly& assembly, std::size_t length) {
  if (length == 0) throw Error("generate length must be >= 1");
  if (query.expected_answers.empty()) throw Error("query has no expected answers");
  auto gen = model.lm().generate(assembly.full(), length);
  if (gen.prefixes.size() != length) throw Error("model returned the wrong number of prefixes");
  return outcome_from(std::move(gen), query.expected_answers);
}

inline GenerateOutcome score_generate(const EditedModel& model, const TestQuery& query,
                                      std::size_t length = kHeadlineLength) {
  return score_generate(model, query, assemble_prompt(model, query), length);
}

// accuracy[l - 1] = fraction of outcomes matched within the first l tokens.
inline std::vector<double> accuracy_curve(const std::vector<std::optional<std::size_t>>& first_match_indices,
                                          std::size_t length) {
  if (first_match_indices.empty()) throw Error("accuracy_curve: no outcomes");
  if (length == 0) throw Error("accuracy_curve: length must be >= 1");
  std::vector<std::size_t> hits(length + 1, 0);
  for (const auto& idx : first_match_indices)
    if (idx && *idx <= length) ++hits[*idx];
  std::vector<double> curve(length);
  std::size_t running = 0;
  for (std::size_t l = 1; l <= length; ++l) {
    running += hits[l];
    curve[l - 1] = static_cast<double>(running) / static_cast<double>(first_match_indices.size());
  }
  return curve;
}

inline std::vector<double> accuracy_curve(const std::vector<GenerateOutcome>& outcomes, std::size_t length) {
  std::vector<std::optional<std::size_t>> idx;
  idx.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    if (o.length < length) throw Error("accuracy_curve: outcome shorter than requested length");
    idx.push_back(o.first_match_index);
  }
  return accuracy_curve(idx, length);
}

}  // namespace edit_eval
