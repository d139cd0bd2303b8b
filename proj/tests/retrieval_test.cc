// Copyright 2026 the condret authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "condret/retrieval.h"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <queue>
#include <set>

#include <gtest/gtest.h>

#include "condret/error.h"
#include "condret/random.h"

namespace condret {
namespace {

// Items with random embeddings and 1-3 random topics out of `topics`.
struct Fixture {
  Dataset dataset;
  ItemIndex index;
};

Fixture random_fixture(std::size_t items, std::size_t dim, std::int32_t topics,
                       std::uint64_t seed) {
  Fixture f;
  Rng rng(seed);
  f.dataset.topic_count = topics;
  f.dataset.users = {{0, 0, {}}};
  for (std::size_t i = 0; i < items; ++i) {
    Item it{static_cast<ItemId>(i), static_cast<ItemId>(i), {}};
    const auto n = 1 + uniform_index(rng, 3);
    std::set<TopicId> ts;
    while (ts.size() < std::min<std::size_t>(n, topics)) {
      ts.insert(static_cast<TopicId>(uniform_index(rng, topics)));
    }
    it.topics.assign(ts.begin(), ts.end());
    f.dataset.items.push_back(it);
    const auto reps = uniform_index(rng, 4);
    for (std::uint64_t r = 0; r < reps; ++r) {
      f.dataset.engagements.push_back({0, static_cast<ItemId>(i), Split::kTrain});
    }
  }
  Matrix<float> emb(items, dim);
  for (auto& x : emb.data) x = static_cast<float>(uniform_real(rng, -1, 1));
  f.index = make_index(std::move(emb), f.dataset);
  return f;
}

std::vector<float> random_query(std::size_t dim, Rng& rng) {
  std::vector<float> q(dim);
  for (auto& x : q) x = static_cast<float>(uniform_real(rng, -1, 1));
  return q;
}

// Independent reference: score everything in double-accumulated float,
// then one full sort.
std::vector<ItemId> naive_topk(const ItemIndex& index, std::span<const float> q,
                               std::size_t k, std::optional<TopicId> topic) {
  std::vector<std::pair<float, ItemId>> all;
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (topic && !std::binary_search(index.topics[r].begin(), index.topics[r].end(), *topic)) {
      continue;
    }
    double s = 0;
    for (std::size_t j = 0; j < q.size(); ++j) s += double(q[j]) * index.embeddings(r, j);
    all.push_back({static_cast<float>(s), index.item_ids[r]});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<ItemId> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
  return out;
}

TEST(BuildIndex, ZeroCheckpointAndRebuild) {
  GenConfig g;
  g.num_users = 20;
  g.num_items = 60;
  g.num_topics = 5;
  g.events_per_user = 5;
  const auto d = generate_synthetic(g);
  TowerConfig t;
  t.num_users = 20;
  t.num_items = 60;
  t.num_topics = 5;
  t.embed_dim_user = t.embed_dim_item = t.embed_dim_condition = 4;
  t.hidden_sizes = {6};
  t.output_dim = 4;
  const Checkpoint zero{t, zero_params(t), 0};
  for (float x : build_index(zero, d).embeddings.data) EXPECT_EQ(x, 0.0f);

  const Checkpoint ckpt{t, init_params(t, 4), 4};
  const auto a = build_index(ckpt, d);
  EXPECT_EQ(a, build_index(ckpt, d));
  for (ItemId i = 0; i < 60; ++i) {
    const auto e = item_embedding(ckpt.params, t, i);
    EXPECT_TRUE(std::equal(e.begin(), e.end(), a.embeddings.row(i).begin()));
  }
  EXPECT_EQ(a.popularity, item_popularity(d));

  auto wrong = t;
  wrong.num_items = 61;
  try {
    build_index(Checkpoint{wrong, init_params(wrong, 1), 1}, d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidConfig);
  }
}

TEST(ExactTopk, PredicateRejectingEverything) {
  const auto f = random_fixture(50, 4, 3, 1);
  Rng rng(1);
  const auto r = exact_topk(f.index, random_query(4, rng), 10,
                            [](std::size_t) { return false; });
  EXPECT_TRUE(r.items.empty());
  EXPECT_FALSE(r.truncated);
}

TEST(ExactTopk, FullRankingIsTotalOrder) {
  auto f = random_fixture(40, 3, 3, 2);
  // Force ties so the id tie-break is exercised.
  for (std::size_t r = 0; r < 40; r += 4) {
    std::copy(f.index.embeddings.row(0).begin(), f.index.embeddings.row(0).end(),
              f.index.embeddings.row(r).begin());
  }
  Rng rng(2);
  const auto q = random_query(3, rng);
  const auto r = exact_topk(f.index, q, 40);
  ASSERT_EQ(r.items.size(), 40u);
  for (std::size_t i = 1; i < r.items.size(); ++i) {
    const auto& a = r.items[i - 1];
    const auto& b = r.items[i];
    EXPECT_TRUE(a.score > b.score || (a.score == b.score && a.item_id < b.item_id));
  }
}

TEST(ExactTopk, MatchesNaiveSortOracle) {
  const auto f = random_fixture(200, 8, 6, 3);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_query(8, rng);
    const auto k = static_cast<std::int32_t>(1 + uniform_index(rng, 30));
    const std::optional<TopicId> topic =
        i % 2 ? std::optional<TopicId>(static_cast<TopicId>(uniform_index(rng, 6)))
              : std::nullopt;
    const auto r = topic ? exact_topk(f.index, q, k, topic_predicate(f.index, *topic), topic)
                         : exact_topk(f.index, q, k);
    EXPECT_EQ(r.ids(), naive_topk(f.index, q, k, topic)) << "query " << i;
    if (topic) {
      for (const auto& it : r.items) EXPECT_TRUE(it.matched);
    }
  }
}

TEST(BuildAnn, SingleItem) {
  auto f = random_fixture(1, 4, 2, 4);
  build_ann(f.index, AnnConfig{});
  ASSERT_TRUE(f.index.graph);
  EXPECT_EQ(f.index.graph->entry_point, 0);
  Rng rng(4);
  const auto r = ann_search(f.index, random_query(4, rng), 1, 8);
  EXPECT_EQ(r.ids(), std::vector<ItemId>{0});
}

TEST(BuildAnn, EmptyIndexIsAnError) {
  Dataset d;
  d.topic_count = 1;
  auto index = make_index(Matrix<float>(0, 4), d);
  EXPECT_THROW(build_ann(index, AnnConfig{}), Error);
}

void expect_graph_invariants(const ItemIndex& index, const AnnConfig& cfg) {
  const auto& g = *index.graph;
  const auto n_items = index.size();
  ASSERT_EQ(g.levels.size(), n_items);
  EXPECT_EQ(g.levels[g.entry_point], g.max_level);
  for (std::size_t n = 0; n < g.neighbors.size(); ++n) {
    ASSERT_EQ(g.neighbors[n].size(), static_cast<std::size_t>(g.levels[n] + 1));
    for (std::size_t l = 0; l < g.neighbors[n].size(); ++l) {
      const auto& adj = g.neighbors[n][l];
      EXPECT_LE(adj.size(), static_cast<std::size_t>(cfg.max_degree));
      EXPECT_EQ(std::set<std::int32_t>(adj.begin(), adj.end()).size(), adj.size());
      for (auto m : adj) {
        EXPECT_NE(static_cast<std::size_t>(m), n);
        EXPECT_GE(g.levels[m], static_cast<std::int32_t>(l));
      }
    }
  }
  // Every node reachable from the entry point on the base layer.
  std::vector<bool> seen(n_items, false);
  std::queue<std::int32_t> todo;
  todo.push(g.entry_point);
  seen[g.entry_point] = true;
  std::size_t count = 1;
  while (!todo.empty()) {
    const auto n = todo.front();
    todo.pop();
    for (auto m : g.neighbors[n][0]) {
      if (!seen[m]) {
        seen[m] = true;
        ++count;
        todo.push(m);
      }
    }
  }
  EXPECT_EQ(count, n_items);
}

TEST(BuildAnn, StructuralInvariants) {
  auto f = random_fixture(1500, 8, 5, 5);
  AnnConfig cfg;
  cfg.max_degree = 8;
  cfg.build_beam_width = 40;
  build_ann(f.index, cfg);
  expect_graph_invariants(f.index, cfg);
}

// Under-trained towers give nearly parallel vectors of varying norm: a few
// long ones attract every edge and short ones end up stranded.
TEST(BuildAnn, StructuralInvariantsOnNearlyParallelVectors) {
  auto f = random_fixture(600, 8, 5, 11);
  Rng rng(3);
  for (std::size_t i = 0; i < f.index.size(); ++i) {
    const auto scale = static_cast<float>(uniform_real(rng, 0.05, 1.0));
    auto row = f.index.embeddings.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = scale * (1.0f + 0.02f * row[j]);
    }
  }
  AnnConfig cfg;
  cfg.max_degree = 6;
  cfg.build_beam_width = 30;
  build_ann(f.index, cfg);
  expect_graph_invariants(f.index, cfg);
  Rng qrng(4);
  for (int t = 0; t < 20; ++t) {
    const auto q = random_query(8, qrng);
    EXPECT_EQ(ann_search(f.index, q, 5, 600).ids(), naive_topk(f.index, q, 5, std::nullopt));
  }
}

TEST(BuildAnn, DeterministicForSeed) {
  auto a = random_fixture(300, 6, 4, 6);
  auto b = random_fixture(300, 6, 4, 6);
  build_ann(a.index, AnnConfig{});
  build_ann(b.index, AnnConfig{});
  EXPECT_EQ(a.index.graph, b.index.graph);
}

TEST(AnnSearch, SelfRetrieval) {
  auto f = random_fixture(100, 8, 4, 7);
  // Unit-normalize so an item is its own maximum-inner-product match.
  for (std::size_t r = 0; r < 100; ++r) {
    auto row = f.index.embeddings.row(r);
    double n = 0;
    for (float x : row) n += double(x) * x;
    for (auto& x : row) x = static_cast<float>(x / std::sqrt(n));
  }
  build_ann(f.index, AnnConfig{});
  for (std::size_t r = 0; r < 100; ++r) {
    const auto row = f.index.embeddings.row(r);
    const std::vector<float> q(row.begin(), row.end());
    const auto res = ann_search(f.index, q, 1, 100);
    ASSERT_EQ(res.items.size(), 1u);
    EXPECT_EQ(res.items[0].item_id, static_cast<ItemId>(r));
  }
}

TEST(AnnSearch, FullBeamEqualsExact) {
  auto f = random_fixture(400, 6, 4, 8);
  build_ann(f.index, AnnConfig{});
  Rng rng(8);
  for (int i = 0; i < 30; ++i) {
    const auto q = random_query(6, rng);
    EXPECT_EQ(ann_search(f.index, q, 20, 400).ids(), exact_topk(f.index, q, 20).ids());
  }
}

TEST(AnnSearch, MissingGraphIsAnError) {
  const auto f = random_fixture(10, 4, 2, 9);
  Rng rng(9);
  try {
    ann_search(f.index, random_query(4, rng), 3, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("build_ann"), std::string::npos) << e.what();
  }
}

TEST(AnnSearch, RecallOnRandomVectors) {
  auto f = random_fixture(3000, 16, 4, 10);
  build_ann(f.index, AnnConfig{});
  Rng rng(10);
  double hits = 0;
  for (int i = 0; i < 100; ++i) {
    const auto q = random_query(16, rng);
    const auto truth = exact_topk(f.index, q, 10).ids();
    const auto got = ann_search(f.index, q, 10, 64).ids();
    const std::set<ItemId> t(truth.begin(), truth.end());
    for (auto id : got) hits += t.count(id);
  }
  EXPECT_GE(hits / 1000.0, 0.9);
}

TEST(AnnStream, EmitsEveryRowOnceInScoreOrderAtFullBeam) {
  auto f = random_fixture(250, 5, 3, 11);
  build_ann(f.index, AnnConfig{});
  Rng rng(11);
  const auto q = random_query(5, rng);
  AnnStream stream(f.index, q, 250);
  std::vector<std::size_t> all;
  for (;;) {
    const auto b = stream.next_batch(17);
    all.insert(all.end(), b.begin(), b.end());
    if (b.size() < 17) break;
  }
  ASSERT_EQ(all.size(), 250u);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 250u);
  const auto exact = exact_topk(f.index, q, 250).ids();
  std::vector<ItemId> ids;
  for (auto r : all) ids.push_back(f.index.item_ids[r]);
  EXPECT_EQ(ids, exact);
}

TEST(StreamingSearch, VacuousFilterEqualsAnnSearch) {
  auto f = random_fixture(500, 6, 1, 12);  // every item carries topic 0
  build_ann(f.index, AnnConfig{});
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    const auto q = random_query(6, rng);
    const auto s = streaming_filtered_search(f.index, q, 0, 10, 4, 500, 64);
    EXPECT_EQ(s.ids(), ann_search(f.index, q, 10, 64).ids());
    EXPECT_GE(s.scanned_count, 10);
    EXPECT_LT(s.scanned_count, 10 + 4);
    EXPECT_FALSE(s.truncated);
  }
}

TEST(StreamingSearch, UnmatchedConditionExhaustsBudget) {
  auto f = random_fixture(300, 6, 3, 13);
  build_ann(f.index, AnnConfig{});
  Rng rng(13);
  const auto s = streaming_filtered_search(f.index, random_query(6, rng), 7, 10, 16, 100, 64);
  EXPECT_TRUE(s.items.empty());
  EXPECT_TRUE(s.truncated);
  EXPECT_EQ(s.scanned_count, 100);
}

TEST(StreamingSearch, FullBeamEqualsExactFiltered) {
  auto f = random_fixture(600, 6, 8, 14);
  build_ann(f.index, AnnConfig{});
  Rng rng(14);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_query(6, rng);
    const auto topic = static_cast<TopicId>(uniform_index(rng, 8));
    const auto k = static_cast<std::int32_t>(1 + uniform_index(rng, 40));
    const auto s = streaming_filtered_search(f.index, q, topic, k, 32, 600, 600);
    const auto e = exact_topk(f.index, q, k, topic_predicate(f.index, topic), topic);
    EXPECT_EQ(s.ids(), e.ids()) << "query " << i;
  }
}

TEST(StreamingSearch, BudgetMonotonicity) {
  auto f = random_fixture(800, 6, 10, 15);
  build_ann(f.index, AnnConfig{});
  Rng rng(15);
  for (int i = 0; i < 20; ++i) {
    const auto q = random_query(6, rng);
    const auto topic = static_cast<TopicId>(uniform_index(rng, 10));
    std::size_t prev = 0;
    for (std::int64_t budget : {8, 32, 64, 128, 256, 800}) {
      const auto s = streaming_filtered_search(f.index, q, topic, 30, 8, budget, 64);
      EXPECT_GE(s.items.size(), prev);
      EXPECT_LE(s.scanned_count, budget);
      for (const auto& it : s.items) EXPECT_TRUE(it.matched);
      prev = s.items.size();
    }
  }
}

TEST(Postfilter, FullOverfetchEqualsExactFiltered) {
  const auto f = random_fixture(300, 5, 6, 16);
  Rng rng(16);
  for (int i = 0; i < 30; ++i) {
    const auto q = random_query(5, rng);
    const auto topic = static_cast<TopicId>(uniform_index(rng, 6));
    const auto p = postfilter_oracle(f.index, q, topic, 10, 30);
    EXPECT_EQ(p.ids(), exact_topk(f.index, q, 10, topic_predicate(f.index, topic)).ids());
  }
}

TEST(Postfilter, FactorOneWhenTopKAllMatch) {
  const auto f = random_fixture(100, 4, 1, 17);
  Rng rng(17);
  const auto q = random_query(4, rng);
  EXPECT_EQ(postfilter_oracle(f.index, q, 0, 10, 1).ids(), exact_topk(f.index, q, 10).ids());
}

TEST(Postfilter, LargerFactorNeverMatchesFewer) {
  const auto f = random_fixture(1000, 6, 12, 18);
  Rng rng(18);
  for (int i = 0; i < 100; ++i) {
    const auto q = random_query(6, rng);
    const auto topic = static_cast<TopicId>(uniform_index(rng, 12));
    EXPECT_GE(postfilter_oracle(f.index, q, topic, 10, 10).matched_count(),
              postfilter_oracle(f.index, q, topic, 10, 1).matched_count());
  }
}

TEST(OracleDominance, ExactScoresBoundApproximateOnes) {
  auto f = random_fixture(1000, 6, 10, 19);
  AnnConfig cfg;
  cfg.max_degree = 6;
  cfg.build_beam_width = 20;
  build_ann(f.index, cfg);
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_query(6, rng);
    const auto topic = static_cast<TopicId>(uniform_index(rng, 10));
    const auto exact = exact_topk(f.index, q, 20, topic_predicate(f.index, topic));
    for (const auto& approx :
         {streaming_filtered_search(f.index, q, topic, 20, 8, 200, 16),
          postfilter_oracle(f.index, q, topic, 20, 2)}) {
      ASSERT_LE(approx.items.size(), exact.items.size());
      for (std::size_t r = 0; r < approx.items.size(); ++r) {
        EXPECT_GE(exact.items[r].score, approx.items[r].score);
      }
    }
  }
}

Dataset popularity_dataset(std::vector<int> counts) {
  Dataset d;
  d.topic_count = 2;
  d.users = {{0, 0, {}}};
  for (std::size_t i = 0; i < counts.size(); ++i) {
    d.items.push_back({static_cast<ItemId>(i), static_cast<ItemId>(i), {0}});
    for (int c = 0; c < counts[i]; ++c) {
      d.engagements.push_back({0, static_cast<ItemId>(i), Split::kTrain});
    }
  }
  return d;
}

TEST(Popularity, SortsByCount) {
  const auto d = popularity_dataset({5, 3, 9});
  const auto r = popularity_index_retrieve(d, 0, 2);
  EXPECT_EQ(r.ids(), (std::vector<ItemId>{2, 0}));
  EXPECT_EQ(r.items[0].score, 9.0f);
}

TEST(Popularity, TopicWithoutItems) {
  EXPECT_TRUE(popularity_index_retrieve(popularity_dataset({1, 2}), 1, 5).items.empty());
}

TEST(Popularity, TiesByAscendingId) {
  const std::vector<int> counts{2, 4, 2, 4, 0, 2, 4};
  const auto r = popularity_index_retrieve(popularity_dataset(counts), 0, 7);
  std::vector<ItemId> ref(counts.size());
  std::iota(ref.begin(), ref.end(), 0);
  std::stable_sort(ref.begin(), ref.end(),
                   [&](ItemId a, ItemId b) { return counts[a] > counts[b]; });
  EXPECT_EQ(r.ids(), ref);
}

TEST(Retrieve, DispatchesOnMode) {
  auto f = random_fixture(200, 4, 5, 20);
  Rng rng(20);
  RetrievalQuery q;
  q.user_embedding = random_query(4, rng);
  q.k = 5;
  // No graph yet: plain retrieval is exact.
  EXPECT_EQ(retrieve(f.index, q).ids(), exact_topk(f.index, q.user_embedding, 5).ids());
  build_ann(f.index, AnnConfig{});
  q.condition = 2;
  q.filter_mode = FilterMode::kPostfilter;
  q.overfetch_factor = 40;
  EXPECT_EQ(retrieve(f.index, q).ids(),
            exact_topk(f.index, q.user_embedding, 5, topic_predicate(f.index, 2)).ids());
  q.filter_mode = FilterMode::kStreaming;
  q.budget = 200;
  for (const auto& it : retrieve(f.index, q).items) EXPECT_TRUE(it.matched);
}

TEST(IndexFile, RoundTripIsBitExact) {
  auto f = random_fixture(300, 6, 4, 21);
  build_ann(f.index, AnnConfig{});
  const auto bytes = serialize_index(f.index);
  const auto back = parse_index(bytes);
  EXPECT_EQ(back, f.index);
  EXPECT_EQ(serialize_index(back), bytes);
  const auto path =
      (std::filesystem::temp_directory_path() / "condret_retrieval_rt.idx").string();
  save_index(f.index, path);
  EXPECT_EQ(load_index(path), f.index);
  std::filesystem::remove(path);
  EXPECT_THROW(parse_index(bytes.substr(0, 40)), Error);
}

}  // namespace
}  // namespace condret
