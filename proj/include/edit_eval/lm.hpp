#pragma once

// Model-access contract shared by editors, scorers, control tasks and the
// judge. Backends: the scripted mock (mock_lm.hpp) and the HTTP client
// (remote_lm.hpp).

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "common.hpp"

namespace edit_eval {

using TokenId = std::int64_t;

struct TokenSequence {
  std::vector<TokenId> token_ids;
  // Surface form of each token; the tokenizer defines how pieces join.
  std::vector<std::string> pieces;
  std::string text;

  std::size_t size() const { return token_ids.size(); }
  bool empty() const { return token_ids.empty(); }
};

struct ScoredToken {
  TokenId token_id = 0;
  double logprob = 0.0;
  bool is_argmax = false;
};

struct ScoreResult {
  std::vector<ScoredToken> tokens;

  double total_logprob() const {
    double sum = 0.0;
    for (const auto& t : tokens) sum += t.logprob;
    return sum;
  }
  std::size_t argmax_count() const {
    std::size_t n = 0;
    for (const auto& t : tokens) n += t.is_argmax ? 1 : 0;
    return n;
  }
};

struct GenerationResult {
  std::size_t prompt_token_count = 0;
  TokenSequence generated;
  // prefixes[l - 1] is the text of the first l generated tokens.
  std::vector<std::string> prefixes;
};

enum class BackendKind { mock, remote };

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual TokenSequence tokenize(std::string_view text) const = 0;
  // One entry per continuation token, conditioned on everything before it.
  virtual ScoreResult score(std::string_view prompt, std::string_view continuation) const = 0;
  // Exactly `length` greedy tokens, no early stop.
  virtual GenerationResult generate(std::string_view prompt, std::size_t length) const = 0;
  // Unit-norm embedding; throws UnsupportedError without an embedder.
  virtual std::vector<double> embed(std::string_view text) const = 0;

  virtual std::size_t context_window() const = 0;
  virtual bool has_embedder() const = 0;
  virtual BackendKind backend() const = 0;
  virtual std::string model_variant() const { return {}; }
  // A handle on an externally edited variant of this model.
  virtual std::shared_ptr<const LanguageModel> with_variant(const std::string& variant) const = 0;
};

using LmHandle = std::shared_ptr<const LanguageModel>;

inline void normalize_in_place(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0 || !std::isfinite(norm)) throw Error("cannot normalize a zero or non-finite embedding");
  for (double& x : v) x /= norm;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Decorator counting calls per operation; used to verify the one-generation
// rule and to observe how many model round trips an evaluation costs.
class CountingModel final : public LanguageModel {
 public:
  struct Counters {
    std::atomic<std::size_t> tokenize{0}, score{0}, generate{0}, embed{0};
  };

  explicit CountingModel(LmHandle inner, std::shared_ptr<Counters> counters = std::make_shared<Counters>())
      : inner_(std::move(inner)), counters_(std::move(counters)) {}

  TokenSequence tokenize(std::string_view text) const override {
    ++counters_->tokenize;
    return inner_->tokenize(text);
  }
  ScoreResult score(std::string_view prompt, std::string_view continuation) const override {
    ++counters_->score;
    return inner_->score(prompt, continuation);
  }
  GenerationResult generate(std::string_view prompt, std::size_t length) const override {
    ++counters_->generate;
    return inner_->generate(prompt, length);
  }
  std::vector<double> embed(std::string_view text) const override {
    ++counters_->embed;
    return inner_->embed(text);
  }
  std::size_t context_window() const override { return inner_->context_window(); }
  bool has_embedder() const override { return inner_->has_embedder(); }
  BackendKind backend() const override { return inner_->backend(); }
  std::string model_variant() const override { return inner_->model_variant(); }
  LmHandle with_variant(const std::string& variant) const override {
    return std::make_shared<CountingModel>(inner_->with_variant(variant), counters_);
  }

  const Counters& counters() const { return *counters_; }

 private:
  LmHandle inner_;
  std::shared_ptr<Counters> counters_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
};

// Runs `fn`, retrying retryable transport failures with exponential backoff.
// The final failure is rethrown with the attempt count filled in.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto backoff = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError& e) {
      if (!e.retryable() || attempt >= policy.attempts)
        throw TransportError(e.what(), e.retryable(), e.status(), attempt);
    }
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
}

}  // namespace edit_eval
