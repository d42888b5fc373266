#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace edit_eval;
using edit_eval::testing::make_edit;
using edit_eval::testing::word_mock;

namespace {

std::vector<EditRequest> batch_of(std::size_t n) {
  std::vector<EditRequest> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(make_edit("e" + std::to_string(i), "Subject" + std::to_string(i),
                            "The home of Subject" + std::to_string(i) + " is", "Town" + std::to_string(i)));
  return out;
}

RetrievalIndex random_index(SplitMix64& rng, std::size_t n, std::size_t dim) {
  RetrievalIndex idx;
  idx.dimension = dim;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.gaussian();
    normalize_in_place(v);
    idx.edit_ids.push_back("e" + std::to_string(i));
    idx.vectors.push_back(std::move(v));
  }
  return idx;
}

}  // namespace

TEST(Knn, MatchesBruteForce) {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(300), dim = 1 + rng.below(32), k = 1 + rng.below(10);
    const auto idx = random_index(rng, n, dim);
    std::vector<double> q(dim);
    for (auto& x : q) x = rng.gaussian();
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t d = 0; d < dim; ++d) s += idx.vectors[i][d] * q[d];
      all.emplace_back(-s, i);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::string> expect;
    for (std::size_t i = 0; i < std::min(k, n); ++i) expect.push_back(idx.edit_ids[all[i].second]);
    ASSERT_EQ(retrieve_knn(idx, q, k), expect);
  }
}

TEST(Knn, TiesKeepBatchOrderAndErrors) {
  RetrievalIndex idx{2, {"a", "b", "c"}, {{1, 0}, {0, 1}, {1, 0}}};
  EXPECT_EQ(retrieve_knn(idx, {1, 0}, 2), (std::vector<std::string>{"a", "c"}));
  EXPECT_EQ(retrieve_knn(idx, {1, 0}, 10).size(), 3u);
  EXPECT_THROW(retrieve_knn(idx, {1, 0, 0}, 1), Error);
  EXPECT_THROW(retrieve_knn(idx, {1, 0}, 0), Error);
}

TEST(Editors, NoEditHasEmptyContext) {
  const auto m = make_edited_model(EditorKind::no_edit, word_mock(), batch_of(3));
  const auto a = assemble_prompt(m, "Where is Subject1?");
  EXPECT_EQ(a.context_block, "");
  EXPECT_EQ(a.full(), "Where is Subject1?");
}

TEST(Editors, InContextPrependsWholeBatch) {
  const auto m = make_edited_model(EditorKind::in_context, word_mock(), batch_of(3));
  const auto a = assemble_prompt(m, "Where is Subject1?");
  EXPECT_EQ(a.context_block,
            "The home of Subject0 is Town0.\nThe home of Subject1 is Town1.\nThe home of Subject2 is Town2.\n\n");
  EXPECT_EQ(a.truncated_edit_count, 0u);
  EXPECT_EQ(a.full().substr(a.context_block.size()), "Where is Subject1?");
}

TEST(Editors, RetrieverPicksNearestStatements) {
  const auto lm = build_mock_lm(json{{"tokenizer", "word"}, {"embedding", {{"dimension", 512}, {"seed", 3}}}});
  const auto m = make_edited_model(EditorKind::context_retriever, lm, batch_of(10), {2, 64});
  ASSERT_NE(m.index(), nullptr);
  EXPECT_EQ(m.index()->size(), 10u);
  const auto a = assemble_prompt(m, "The home of Subject7 is");
  const auto ids = retrieve_knn(*m.index(), lm->embed("The home of Subject7 is"), 2);
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[0], "e7");
  EXPECT_EQ(a.context_block.rfind("The home of Subject7 is Town7.\n", 0), 0u);
  std::size_t lines = std::count(a.context_block.begin(), a.context_block.end(), '\n');
  EXPECT_EQ(lines, 3u);
}

TEST(Editors, RetrieverNeedsEmbedder) {
  const auto plain = build_mock_lm(json{{"tokenizer", "word"}});
  EXPECT_THROW(make_edited_model(EditorKind::context_retriever, plain, batch_of(2)), UnsupportedError);
  auto dup = batch_of(2);
  dup[1].id = dup[0].id;
  EXPECT_THROW(make_edited_model(EditorKind::context_retriever, word_mock(), dup), Error);
}

TEST(Editors, ExternalNeedsRemoteBackend) {
  EXPECT_THROW(bind_external(word_mock(), "memit-b16-0", batch_of(1)), UnsupportedError);
  EXPECT_THROW(make_edited_model(EditorKind::external, word_mock(), batch_of(1)), Error);

  LmServer server(word_mock(), {{"memit-b16-0", word_mock()}});
  server.start();
  RemoteOptions o;
  o.base_url = server.url();
  const auto lm = connect_remote_lm(o);
  EXPECT_THROW(bind_external(lm, "", batch_of(1)), Error);
  const auto m = bind_external(lm, "memit-b16-0", batch_of(16));
  EXPECT_EQ(m.lm().model_variant(), "memit-b16-0");
  const auto a = assemble_prompt(m, "Where is Subject1?");
  EXPECT_EQ(a.context_block, "");
  m.lm().generate(a.full(), 2);
  const auto log = server.requests();
  ASSERT_FALSE(log.empty());
  for (const auto& [path, body] : log) EXPECT_EQ(body.at("model_variant"), "memit-b16-0") << path;
}

TEST(Editors, ContextCutOffKeepsQueryAndRespectsBudget) {
  const auto lm = word_mock(json::array(), 32);
  const std::string query = "Where is Subject3?";
  for (std::size_t n = 0; n <= 6; ++n) {
    const auto m = make_edited_model(EditorKind::in_context, lm, batch_of(n), {4, 8});
    const auto a = assemble_prompt(m, query);
    const auto total = lm->tokenize(a.full()).size();
    EXPECT_LT(total, 32u - 8u);
    EXPECT_EQ(a.full().substr(a.full().size() - query.size()), query);
    // Oracle: the largest prefix of statements that keeps the prompt under the limit.
    std::size_t fit = 0;
    for (std::size_t k = 1; k <= n; ++k) {
      std::string block;
      for (std::size_t i = 0; i < k; ++i) block += m.batch()[i].statement + "\n";
      if (lm->tokenize(block + "\n" + query).size() < 24) fit = k;
    }
    EXPECT_EQ(a.truncated_edit_count, n - fit) << n;
  }
}

TEST(Editors, QueryAloneTooLongOverflows) {
  const auto lm = word_mock(json::array(), 16);
  const auto m = make_edited_model(EditorKind::in_context, lm, batch_of(1), {4, 8});
  EXPECT_THROW(assemble_prompt(m, "one two three four five six seven eight nine"), ContextOverflowError);
  const auto tight = make_edited_model(EditorKind::no_edit, lm, {}, {4, 16});
  EXPECT_THROW(assemble_prompt(tight, "x"), ContextOverflowError);
  EXPECT_THROW(assemble_prompt(m, ""), Error);
}
