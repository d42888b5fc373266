#pragma once

// Deterministic scripted language model.
//
// A script is a JSON document:
//
//   {
//     "tokenizer": "word" | "whitespace" | "char",      (default "word")
//     "context_window": 2048,
//     "floor_logprob": -30,          logprob of any token a rule does not list
//     "embedding": {"dimension": 64, "seed": 7, "mode": "bag_of_words" | "hash"},
//     "rules": [
//       {"after": "found employment in", "continuation": " Paris", "logprob": -0.1},
//       {"after": "Q:", "logits": {" yes": 2.0, " no": 1.0}},
//       {"after": "Q:", "logprobs": {" yes": -0.1}, "requires": "substring of context"}
//     ],
//     "fallback": {"uniform": [" the", " of"]} | {"logprobs": {...}} | {"logits": {...}}
//   }
//
// The next-token distribution after a context is taken from the rule whose
// pattern is the longest suffix of the context text (ties: earlier rule). A
// forced continuation contributes one pattern per step, so it keeps steering
// while its own tokens are being produced. Argmax ties go to the smallest
// token id. Without a matching rule the fallback applies.

#include <algorithm>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lm.hpp"

namespace edit_eval {

class MockScriptError : public Error {
 public:
  using Error::Error;
};

enum class TokenizerKind { word, whitespace, character };

inline TokenId piece_id(std::string_view piece) {
  return static_cast<TokenId>(fnv1a64(piece) & 0x3fffffffffffffffULL);
}

namespace tokenizers {

inline bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' ||
         c >= 0x80;
}

// Whitespace attaches to the following word or punctuation mark; words are
// runs of alphanumerics, punctuation marks stand alone.
inline std::vector<std::string> word_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && is_space(text[i])) ++i;
    if (i < text.size()) {
      if (is_word_byte(static_cast<unsigned char>(text[i]))) {
        while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
      } else {
        ++i;
      }
    }
    out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

inline std::vector<std::string> whitespace_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

inline std::vector<std::string> char_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xf0) len = 4;
    else if (c >= 0xe0) len = 3;
    else if (c >= 0xc0) len = 2;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

inline std::vector<std::string> pieces(TokenizerKind kind, std::string_view text) {
  switch (kind) {
    case TokenizerKind::word: return word_pieces(text);
    case TokenizerKind::whitespace: return whitespace_pieces(text);
    case TokenizerKind::character: return char_pieces(text);
  }
  return {};
}

inline void append_piece(TokenizerKind kind, std::string& text, std::string_view piece) {
  if (kind == TokenizerKind::whitespace && !text.empty()) text += ' ';
  text += piece;
}

inline std::string join_pieces(TokenizerKind kind, const std::vector<std::string>& ps, std::size_t count) {
  std::string text;
  for (std::size_t i = 0; i < count && i < ps.size(); ++i) append_piece(kind, text, ps[i]);
  return text;
}

}  // namespace tokenizers

class MockLanguageModel final : public LanguageModel {
 public:
  struct Distribution {
    std::unordered_map<std::string, double> logprobs;
    std::string argmax;
  };

  explicit MockLanguageModel(const json& script) { load(script); }

  TokenSequence tokenize(std::string_view text) const override {
    TokenSequence seq;
    seq.pieces = tokenizers::pieces(tokenizer_, text);
    seq.token_ids.reserve(seq.pieces.size());
    for (const auto& p : seq.pieces) seq.token_ids.push_back(piece_id(p));
    seq.text = tokenizers::join_pieces(tokenizer_, seq.pieces, seq.pieces.size());
    return seq;
  }

  ScoreResult score(std::string_view prompt, std::string_view continuation) const override {
    if (continuation.empty()) throw Error("score: empty continuation");
    const auto prompt_seq = tokenize(prompt);
    std::string full_text(prompt);
    full_text += continuation;
    const auto full = tokenize(full_text);
    if (full.size() > window_)
      throw ContextOverflowError("score: " + std::to_string(full.size()) + " tokens exceed window " +
                                 std::to_string(window_));
    // Continuation tokens are the suffix after the longest common token prefix.
    std::size_t common = 0;
    while (common < prompt_seq.size() && common < full.size() &&
           prompt_seq.token_ids[common] == full.token_ids[common])
      ++common;
    if (common == full.size()) throw Error("score: continuation produced no tokens");

    ScoreResult result;
    std::string context = tokenizers::join_pieces(tokenizer_, full.pieces, common);
    for (std::size_t i = common; i < full.size(); ++i) {
      const Distribution& dist = next_distribution(context);
      result.tokens.push_back({full.token_ids[i], logprob_of(dist, full.pieces[i]),
                               full.pieces[i] == dist.argmax});
      tokenizers::append_piece(tokenizer_, context, full.pieces[i]);
    }
    return result;
  }

  GenerationResult generate(std::string_view prompt, std::size_t length) const override {
    if (length == 0) throw Error("generate: length must be >= 1");
    const auto prompt_seq = tokenize(prompt);
    if (prompt_seq.size() + length > window_)
      throw ContextOverflowError("generate: prompt of " + std::to_string(prompt_seq.size()) +
                                 " tokens plus " + std::to_string(length) + " exceeds window " +
                                 std::to_string(window_));
    GenerationResult result;
    result.prompt_token_count = prompt_seq.size();
    std::string context = prompt_seq.text;
    std::string generated;
    for (std::size_t l = 0; l < length; ++l) {
      const Distribution& dist = next_distribution(context);
      result.generated.pieces.push_back(dist.argmax);
      result.generated.token_ids.push_back(piece_id(dist.argmax));
      tokenizers::append_piece(tokenizer_, context, dist.argmax);
      tokenizers::append_piece(tokenizer_, generated, dist.argmax);
      result.prefixes.push_back(generated);
    }
    result.generated.text = generated;
    return result;
  }

  std::vector<double> embed(std::string_view text) const override {
    if (!embedding_) throw UnsupportedError("mock model has no embedder");
    std::vector<double> v(embedding_->dimension, 0.0);
    auto add_hashed = [&](std::string_view token) {
      SplitMix64 rng(embedding_->seed ^ fnv1a64(token));
      for (double& x : v) x += rng.gaussian();
    };
    if (embedding_->bag_of_words) {
      std::string word;
      auto flush = [&] {
        if (!word.empty()) add_hashed(word);
        word.clear();
      };
      for (char c : text) {
        if (tokenizers::is_word_byte(static_cast<unsigned char>(c)))
          word += static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
        else
          flush();
      }
      flush();
    }
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) add_hashed(text);
    normalize_in_place(v);
    return v;
  }

  std::size_t context_window() const override { return window_; }
  bool has_embedder() const override { return embedding_.has_value(); }
  BackendKind backend() const override { return BackendKind::mock; }
  LmHandle with_variant(const std::string&) const override {
    throw UnsupportedError("model variants need a remote backend");
  }

  TokenizerKind tokenizer_kind() const { return tokenizer_; }
  double floor_logprob() const { return floor_; }

  // Exposed for oracles in tests: the distribution the model uses after
  // the given context text.
  const Distribution& next_distribution(std::string_view context) const {
    const Pattern* best = nullptr;
    auto consider = [&](std::string_view key) {
      auto it = patterns_.find(std::string(key));
      if (it == patterns_.end()) return;
      for (const Pattern& p : it->second) {
        if (context.size() < p.text.size() ||
            context.compare(context.size() - p.text.size(), p.text.size(), p.text) != 0)
          continue;
        if (!p.required_text.empty() && context.find(p.required_text) == std::string_view::npos) continue;
        if (!best || p.text.size() > best->text.size() ||
            (p.text.size() == best->text.size() && p.rule < best->rule))
          best = &p;
      }
    };
    for (std::size_t k = 0; k < kKeyBytes && k <= context.size(); ++k)
      consider(context.substr(context.size() - k));
    if (context.size() >= kKeyBytes) consider(context.substr(context.size() - kKeyBytes));
    return best ? distributions_[best->distribution] : distributions_[fallback_];
  }

  double logprob_of(const Distribution& dist, const std::string& piece) const {
    auto it = dist.logprobs.find(piece);
    return it == dist.logprobs.end() ? floor_ : it->second;
  }

 private:
  static constexpr std::size_t kKeyBytes = 4;

  struct Pattern {
    std::string text;
    std::string required_text;
    std::size_t rule = 0;
    std::size_t distribution = 0;
  };

  struct Embedding {
    std::size_t dimension = 64;
    std::uint64_t seed = 0;
    bool bag_of_words = true;
  };

  static Distribution make_distribution(std::unordered_map<std::string, double> lps) {
    Distribution d;
    d.logprobs = std::move(lps);
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [piece, lp] : d.logprobs) {
      if (lp > best || (lp == best && piece_id(piece) < piece_id(d.argmax))) {
        best = lp;
        d.argmax = piece;
      }
    }
    return d;
  }

  static std::unordered_map<std::string, double> table_from(const json& node, bool logits,
                                                            const std::string& where) {
    if (!node.is_object() || node.empty()) throw MockScriptError(where + ": expected non-empty object");
    std::unordered_map<std::string, double> out;
    for (auto it = node.begin(); it != node.end(); ++it) {
      if (!it.value().is_number()) throw MockScriptError(where + ": values must be numbers");
      out[it.key()] = it.value().get<double>();
    }
    if (logits) {
      double mx = -std::numeric_limits<double>::infinity();
      for (const auto& [_, v] : out) mx = std::max(mx, v);
      double z = 0.0;
      for (const auto& [_, v] : out) z += std::exp(v - mx);
      const double log_z = mx + std::log(z);
      for (auto& [_, v] : out) v -= log_z;
    } else {
      for (const auto& [k, v] : out)
        if (v > 0.0 || !std::isfinite(v)) throw MockScriptError(where + ": logprob must be finite and <= 0");
    }
    return out;
  }

  std::size_t add_distribution(std::unordered_map<std::string, double> lps) {
    distributions_.push_back(make_distribution(std::move(lps)));
    return distributions_.size() - 1;
  }

  void add_pattern(Pattern p) {
    const std::string key =
        p.text.size() >= kKeyBytes ? p.text.substr(p.text.size() - kKeyBytes) : p.text;
    patterns_[key].push_back(std::move(p));
  }

  std::string normalized(std::string_view text) const {
    if (tokenizer_ != TokenizerKind::whitespace) return std::string(text);
    const auto ps = tokenizers::whitespace_pieces(text);
    return tokenizers::join_pieces(tokenizer_, ps, ps.size());
  }

  void load(const json& script) {
    if (!script.is_object()) throw MockScriptError("mock script must be a JSON object");
    try {
      const std::string tok = script.value("tokenizer", std::string("word"));
      if (tok == "word") tokenizer_ = TokenizerKind::word;
      else if (tok == "whitespace") tokenizer_ = TokenizerKind::whitespace;
      else if (tok == "char") tokenizer_ = TokenizerKind::character;
      else throw MockScriptError("unknown tokenizer '" + tok + "'");

      const long long window = script.value("context_window", 2048LL);
      if (window < 1) throw MockScriptError("context_window must be >= 1");
      window_ = static_cast<std::size_t>(window);
      floor_ = script.value("floor_logprob", -30.0);
      if (!(floor_ < 0.0) || !std::isfinite(floor_)) throw MockScriptError("floor_logprob must be finite and < 0");

      if (script.contains("embedding") && !script["embedding"].is_null()) {
        const auto& e = script["embedding"];
        Embedding emb;
        emb.dimension = e.value("dimension", std::size_t{64});
        emb.seed = e.value("seed", std::uint64_t{0});
        const std::string mode = e.value("mode", std::string("bag_of_words"));
        if (mode != "bag_of_words" && mode != "hash") throw MockScriptError("unknown embedding mode " + mode);
        emb.bag_of_words = mode == "bag_of_words";
        if (emb.dimension == 0) throw MockScriptError("embedding dimension must be >= 1");
        embedding_ = emb;
      }

      const json rules = script.value("rules", json::array());
      if (!rules.is_array()) throw MockScriptError("rules must be an array");
      for (std::size_t r = 0; r < rules.size(); ++r) load_rule(rules[r], r);

      const json fallback =
          script.value("fallback", json{{"uniform", {" the", " of", " and", " a", " in", " to", " is", "."}}});
      if (fallback.contains("uniform")) {
        const auto ps = fallback["uniform"].get<std::vector<std::string>>();
        if (ps.empty()) throw MockScriptError("fallback.uniform must not be empty");
        std::unordered_map<std::string, double> lps;
        for (const auto& p : ps) lps[p] = -std::log(static_cast<double>(ps.size()));
        fallback_ = add_distribution(std::move(lps));
      } else if (fallback.contains("logprobs")) {
        fallback_ = add_distribution(table_from(fallback["logprobs"], false, "fallback.logprobs"));
      } else if (fallback.contains("logits")) {
        fallback_ = add_distribution(table_from(fallback["logits"], true, "fallback.logits"));
      } else {
        throw MockScriptError("fallback needs uniform, logprobs or logits");
      }
    } catch (const json::exception& e) {
      throw MockScriptError(std::string("malformed mock script: ") + e.what());
    }
  }

  void load_rule(const json& rule, std::size_t index) {
    const std::string where = "rules[" + std::to_string(index) + "]";
    if (!rule.is_object() || !rule.contains("after") || !rule["after"].is_string())
      throw MockScriptError(where + ": needs a string 'after'");
    const std::string after = normalized(rule["after"].get<std::string>());
    const std::string required_text = rule.value("requires", std::string());
    if (rule.contains("continuation")) {
      const std::string cont = rule["continuation"].get<std::string>();
      const double lp = rule.value("logprob", 0.0);
      if (lp > 0.0 || !std::isfinite(lp)) throw MockScriptError(where + ": logprob must be <= 0");
      const auto ps = tokenizers::pieces(tokenizer_, cont);
      if (ps.empty()) throw MockScriptError(where + ": empty continuation");
      std::string text = after;
      for (const auto& piece : ps) {
        add_pattern({text, required_text, index, add_distribution({{piece, lp}})});
        tokenizers::append_piece(tokenizer_, text, piece);
      }
    } else if (rule.contains("logits")) {
      add_pattern({after, required_text, index, add_distribution(table_from(rule["logits"], true, where))});
    } else if (rule.contains("logprobs")) {
      add_pattern({after, required_text, index, add_distribution(table_from(rule["logprobs"], false, where))});
    } else {
      throw MockScriptError(where + ": needs continuation, logits or logprobs");
    }
  }

  TokenizerKind tokenizer_ = TokenizerKind::word;
  std::size_t window_ = 2048;
  double floor_ = -30.0;
  std::optional<Embedding> embedding_;
  std::vector<Distribution> distributions_;
  std::unordered_map<std::string, std::vector<Pattern>> patterns_;
  std::size_t fallback_ = 0;
};

inline LmHandle build_mock_lm(const json& script) { return std::make_shared<MockLanguageModel>(script); }

inline LmHandle build_mock_lm(std::string_view script_text) {
  json script;
  try {
    script = json::parse(script_text);
  } catch (const json::parse_error& e) {
    throw MockScriptError(std::string("malformed mock script: ") + e.what());
  }
  return build_mock_lm(script);
}

}  // namespace edit_eval
