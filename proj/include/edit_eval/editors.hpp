#pragma once

// Prompt-level editors. An EditedModel pairs a base model with one edit batch
// and knows how to turn a query into the prompt the model actually sees.

#include <algorithm>
#include <memory>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "lm.hpp"

namespace edit_eval {

enum class EditorKind { no_edit, in_context, context_retriever, external };

inline std::string_view to_string(EditorKind k) {
  switch (k) {
    case EditorKind::no_edit: return "no_edit";
    case EditorKind::in_context: return "in_context";
    case EditorKind::context_retriever: return "context_retriever";
    case EditorKind::external: return "external";
  }
  return "?";
}

struct RetrievalIndex {
  std::size_t dimension = 0;
  std::vector<std::string> edit_ids;
  std::vector<std::vector<double>> vectors;

  std::size_t size() const { return edit_ids.size(); }
};

struct Neighbor {
  std::size_t position = 0;  // index into the batch / index entries
  double similarity = 0.0;
};

// One entry per edit, embedding its statement, in batch order.
inline RetrievalIndex build_retrieval_index(const LanguageModel& lm, const std::vector<EditRequest>& batch) {
  if (!lm.has_embedder()) throw UnsupportedError("context retriever needs an embedder");
  RetrievalIndex index;
  std::set<std::string> seen;
  for (const auto& edit : batch) {
    if (!seen.insert(edit.id).second) throw Error("duplicate edit id " + edit.id + " in batch");
    auto v = lm.embed(edit.statement);
    if (index.vectors.empty()) index.dimension = v.size();
    if (v.size() != index.dimension) throw Error("embedder returned inconsistent dimensions");
    index.edit_ids.push_back(edit.id);
    index.vectors.push_back(std::move(v));
  }
  return index;
}

// Exact k-NN by cosine (dot product of unit vectors); ties keep batch order.
inline std::vector<Neighbor> nearest_neighbors(const RetrievalIndex& index, const std::vector<double>& query,
                                               std::size_t k) {
  if (k == 0) throw Error("k must be >= 1");
  if (index.size() > 0 && query.size() != index.dimension)
    throw Error("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                std::to_string(index.dimension));
  std::vector<Neighbor> all(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) all[i] = {i, dot(index.vectors[i], query)};
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      return a.position < b.position;
                    });
  all.resize(take);
  return all;
}

inline std::vector<std::string> retrieve_knn(const RetrievalIndex& index, const std::vector<double>& query,
                                             std::size_t k) {
  std::vector<std::string> ids;
  for (const auto& n : nearest_neighbors(index, query, k)) ids.push_back(index.edit_ids[n.position]);
  return ids;
}

struct EditorOptions {
  std::size_t knn = 4;
  // Tokens reserved for the model's own output when fitting the context.
  std::size_t generation_budget = 64;
};

class EditedModel {
 public:
  EditorKind kind() const { return kind_; }
  const std::vector<EditRequest>& batch() const { return batch_; }
  const EditorOptions& options() const { return options_; }
  const RetrievalIndex* index() const { return index_.get(); }
  const std::string& variant() const { return variant_; }

  // The handle every model call for this editor goes through.
  const LanguageModel& lm() const { return *lm_; }
  const LmHandle& handle() const { return lm_; }

  friend EditedModel make_edited_model(EditorKind, LmHandle, std::vector<EditRequest>, EditorOptions);
  friend EditedModel bind_external(const LmHandle&, const std::string&, std::vector<EditRequest>, EditorOptions);

 private:
  EditedModel() = default;

  EditorKind kind_ = EditorKind::no_edit;
  LmHandle lm_;
  std::vector<EditRequest> batch_;
  EditorOptions options_;
  std::shared_ptr<const RetrievalIndex> index_;
  std::string variant_;
};

inline EditedModel make_edited_model(EditorKind kind, LmHandle base, std::vector<EditRequest> batch,
                                     EditorOptions options = {}) {
  if (!base) throw Error("editor needs a model handle");
  if (kind == EditorKind::external) throw Error("external editors are created with bind_external");
  if (options.knn == 0) throw Error("knn must be >= 1");
  EditedModel m;
  m.kind_ = kind;
  m.lm_ = std::move(base);
  m.batch_ = std::move(batch);
  m.options_ = options;
  if (kind == EditorKind::context_retriever)
    m.index_ = std::make_shared<const RetrievalIndex>(build_retrieval_index(*m.lm_, m.batch_));
  return m;
}

// Every call of the returned model carries model_variant = variant; the
// prompt context stays empty.
inline EditedModel bind_external(const LmHandle& base, const std::string& variant, std::vector<EditRequest> batch,
                                 EditorOptions options = {}) {
  if (!base) throw Error("editor needs a model handle");
  if (variant.empty()) throw Error("external editor needs a non-empty model variant");
  if (base->backend() != BackendKind::remote)
    throw UnsupportedError("external model variants need a remote backend");
  EditedModel m;
  m.kind_ = EditorKind::external;
  m.lm_ = base->with_variant(variant);
  m.batch_ = std::move(batch);
  m.options_ = options;
  m.variant_ = variant;
  return m;
}

struct PromptAssembly {
  std::string context_block;
  std::string query_prompt;
  std::size_t truncated_edit_count = 0;
  std::size_t context_token_count = 0;

  std::string full() const { return context_block + query_prompt; }
};

// Statements, one per line, then a blank line.
inline std::string render_context_block(const std::vector<const std::string*>& statements, std::size_t count) {
  if (count == 0) return {};
  std::string block;
  for (std::size_t i = 0; i < count; ++i) {
    block += *statements[i];
    block += '\n';
  }
  block += '\n';
  return block;
}

// Statements the editor would prepend for a prompt, before any truncation.
inline std::vector<const std::string*> candidate_statements(const EditedModel& model, std::string_view retrieval_text) {
  std::vector<const std::string*> out;
  switch (model.kind()) {
    case EditorKind::no_edit:
    case EditorKind::external:
      break;
    case EditorKind::in_context:
      for (const auto& e : model.batch()) out.push_back(&e.statement);
      break;
    case EditorKind::context_retriever: {
      const auto query_vec = model.lm().embed(retrieval_text);
      for (const auto& n : nearest_neighbors(*model.index(), query_vec, model.options().knn))
        out.push_back(&model.batch()[n.position].statement);
      break;
    }
  }
  return out;
}

// Fits the editor's context in front of `query_prompt` so that the whole
// prompt stays below window - reserved tokens. Whole statements are dropped
// from the end of the block; the query is never shortened.
inline PromptAssembly assemble_with_reserve(const EditedModel& model, std::string_view retrieval_text,
                                            std::string_view query_prompt, std::size_t reserved) {
  const LanguageModel& lm = model.lm();
  const std::size_t window = lm.context_window();
  if (window <= reserved)
    throw ContextOverflowError("context window " + std::to_string(window) + " leaves no room beyond the " +
                               std::to_string(reserved) + "-token reserve");
  const std::size_t limit = window - reserved;

  PromptAssembly out;
  out.query_prompt = std::string(query_prompt);
  const auto statements = candidate_statements(model, retrieval_text);

  auto tokens_with = [&](std::size_t count) {
    return lm.tokenize(render_context_block(statements, count) + out.query_prompt).size();
  };

  std::size_t kept = statements.size();
  if (tokens_with(kept) >= limit) {
    if (tokens_with(0) >= limit)
      throw ContextOverflowError("query alone needs " + std::to_string(tokens_with(0)) +
                                 " tokens; limit is " + std::to_string(limit));
    // Every statement adds at least one token, so no more than `limit` fit.
    std::size_t lo = 0, hi = std::min(kept - 1, limit);
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo + 1) / 2;
      if (tokens_with(mid) < limit)
        lo = mid;
      else
        hi = mid - 1;
    }
    kept = lo;
    while (kept > 0 && tokens_with(kept) >= limit) --kept;
  }
  out.context_block = render_context_block(statements, kept);
  out.truncated_edit_count = statements.size() - kept;
  out.context_token_count = kept == 0 ? 0 : lm.tokenize(out.context_block).size();
  return out;
}

inline PromptAssembly assemble_prompt(const EditedModel& model, std::string_view query_prompt) {
  if (query_prompt.empty()) throw Error("query prompt must not be empty");
  return assemble_with_reserve(model, query_prompt, query_prompt, model.options().generation_budget);
}

inline PromptAssembly assemble_prompt(const EditedModel& model, const TestQuery& query) {
  return assemble_prompt(model, query.prompt);
}

}  // namespace edit_eval
