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
#include "condret/tower.h"

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "condret/error.h"
#include "condret/random.h"

namespace condret {
namespace {

TowerConfig small_tower(bool conditional, Activation act = Activation::kRelu) {
  TowerConfig c;
  c.num_users = 6;
  c.num_items = 9;
  c.num_topics = 4;
  c.embed_dim_user = 5;
  c.embed_dim_item = 4;
  c.embed_dim_condition = 3;
  c.hidden_sizes = {7, 6};
  c.output_dim = 4;
  c.activation = act;
  c.conditional = conditional;
  return c;
}

// Random O(1) parameters so that activations are far from zero.
TowerParams<double> random_params(const TowerConfig& config, std::uint64_t seed) {
  auto p = convert_params<double>(zero_params(config));
  Rng rng(seed);
  for_each_tensor(p, [&](std::span<double> t) {
    for (auto& x : t) x = uniform_real(rng, -1.0, 1.0);
  });
  return p;
}

TEST(TowerForward, ZeroParamsGiveZeroOutput) {
  const auto config = small_tower(true);
  const auto params = zero_params(config);
  const auto u = user_embedding(params, config, 3, Condition::topic(1));
  ASSERT_EQ(u.size(), 4u);
  for (float x : u) EXPECT_EQ(x, 0.0f);
  for (float x : item_embedding(params, config, 2)) EXPECT_EQ(x, 0.0f);
}

TEST(TowerForward, ConditionChangesOutput) {
  const auto config = small_tower(true);
  const auto params = init_params(config, 11);
  const auto a = user_embedding(params, config, 2, Condition::topic(0));
  const auto b = user_embedding(params, config, 2, Condition::topic(3));
  EXPECT_NE(a, b);
}

TEST(TowerForward, LrIgnoresCondition) {
  const auto config = small_tower(false);
  const auto params = init_params(config, 11);
  EXPECT_EQ(user_embedding(params, config, 2, Condition::topic(0)),
            user_embedding(params, config, 2, Condition::topic(3)));
}

TEST(TowerForward, IdentityOutputLayerCopiesUserEmbedding) {
  for (std::int32_t d : {3, 5, 8}) {  // truncate, exact, pad
    auto config = small_tower(true);
    config.hidden_sizes = {};
    config.output_dim = d;
    auto params = init_params(config, 5);
    auto& w = params.user_layers.at(0).weight;
    std::fill(w.data.begin(), w.data.end(), 0.0f);
    for (std::int32_t i = 0; i < std::min(d, config.embed_dim_user); ++i) w(i, i) = 1.0f;
    const auto out = user_embedding(params, config, 4, Condition::topic(2));
    const auto row = params.user_table.row(4);
    for (std::int32_t i = 0; i < d; ++i) {
      const float expected = i < config.embed_dim_user ? row[i] : 0.0f;
      EXPECT_EQ(out[i], expected) << "d=" << d << " i=" << i;
    }
  }
}

TEST(TowerForward, ItemPurityAndRowLocality) {
  const auto config = small_tower(true);
  auto params = init_params(config, 3);
  std::vector<EmbeddingVec> before;
  for (ItemId i = 0; i < config.num_items; ++i) {
    before.push_back(item_embedding(params, config, i));
    EXPECT_EQ(before.back(), item_embedding(params, config, i));
  }
  params.item_table(5, 1) += 0.5f;
  for (ItemId i = 0; i < config.num_items; ++i) {
    if (i == 5) {
      EXPECT_NE(item_embedding(params, config, i), before[i]);
    } else {
      EXPECT_EQ(item_embedding(params, config, i), before[i]);
    }
  }
}

TEST(TowerForward, OutOfRangeIds) {
  const auto config = small_tower(true);
  const auto params = init_params(config, 3);
  const auto expect_kind = [](auto fn) {
    try {
      fn();
      ADD_FAILURE() << "expected index error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kIndexOutOfRange);
    }
  };
  expect_kind([&] { user_embedding(params, config, 6, Condition::topic(0)); });
  expect_kind([&] { user_embedding(params, config, -1, Condition::topic(0)); });
  expect_kind([&] { user_embedding(params, config, 0, Condition::topic(5)); });
  expect_kind([&] { item_embedding(params, config, 9); });
}

TEST(TowerForward, NullConditionIsTheLastRow) {
  const auto config = small_tower(true);
  const auto params = init_params(config, 3);
  EXPECT_NO_THROW(user_embedding(params, config, 0, Condition::null(config.num_topics)));
}

TEST(Score, HandExamples) {
  EXPECT_EQ(score(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 0.0f);
  EXPECT_EQ(score(std::vector<float>{1, 2}, std::vector<float>{3, 4}), 11.0f);
}

TEST(Score, Symmetric) {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    std::vector<float> u(16), v(16);
    for (auto& x : u) x = static_cast<float>(uniform_real(rng, -3, 3));
    for (auto& x : v) x = static_cast<float>(uniform_real(rng, -3, 3));
    EXPECT_EQ(score(u, v), score(v, u));
  }
}

TEST(Score, LengthMismatch) {
  try {
    score(std::vector<float>{1, 2}, std::vector<float>{1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
  }
}

TEST(ParamCount, ConditionPathwayAccounting) {
  auto cr = small_tower(true);
  auto lr = small_tower(false);
  const std::size_t first_width = cr.hidden_sizes.front();
  EXPECT_EQ(param_count(cr) - param_count(lr),
            static_cast<std::size_t>((cr.num_topics + 1) * cr.embed_dim_condition) +
                cr.embed_dim_condition * first_width);
  cr.hidden_sizes = {};
  lr.hidden_sizes = {};
  EXPECT_EQ(param_count(cr) - param_count(lr),
            static_cast<std::size_t>((cr.num_topics + 1) * cr.embed_dim_condition +
                                     cr.embed_dim_condition * cr.output_dim));
  // Counting the materialized tensors agrees with the formula.
  auto p = zero_params(small_tower(true));
  std::size_t n = 0;
  for_each_tensor(p, [&](std::span<float> t) { n += t.size(); });
  EXPECT_EQ(n, param_count(small_tower(true)));
}

TEST(TowerBackward, ZeroUpstreamGivesZeroGradients) {
  const auto config = small_tower(true);
  const auto params = random_params(config, 1);
  const std::vector<std::int32_t> users{1, 4};
  const std::vector<Condition> conds{Condition::topic(0), Condition::topic(2)};
  const auto trace = user_tower_forward(params, config, users, conds);
  auto grads = zero_grads<double>(config);
  tower_backward(params, config, trace, Matrix<double>(2, config.output_dim), grads);
  for (const auto& layer : grads.user_layers) {
    for (double g : layer.weight.data) EXPECT_EQ(g, 0.0);
    for (double g : layer.bias) EXPECT_EQ(g, 0.0);
  }
  for (std::size_t s = 0; s < grads.user_table.touched_rows().size(); ++s) {
    for (double g : grads.user_table.values_at(s)) EXPECT_EQ(g, 0.0);
  }
}

TEST(TowerBackward, LinearLayerWeightGradIsOuterProduct) {
  auto config = small_tower(false);
  config.hidden_sizes = {};
  const auto params = random_params(config, 2);
  const std::vector<std::int32_t> items{3};
  const auto trace = item_tower_forward(params, config, items);
  Matrix<double> upstream(1, config.output_dim);
  for (std::int32_t j = 0; j < config.output_dim; ++j) upstream(0, j) = 0.5 * j - 0.7;
  auto grads = zero_grads<double>(config);
  tower_backward(params, config, trace, upstream, grads);
  const auto& gw = grads.item_layers.at(0).weight;
  const auto input = params.item_table.row(3);
  for (std::int32_t o = 0; o < config.output_dim; ++o) {
    for (std::int32_t i = 0; i < config.embed_dim_item; ++i) {
      EXPECT_DOUBLE_EQ(gw(o, i), upstream(0, o) * input[i]);
    }
  }
}

TEST(TowerBackward, TouchesOnlyReferencedRows) {
  const auto config = small_tower(true);
  const auto params = random_params(config, 4);
  const std::vector<std::int32_t> users{1, 4, 1};
  const std::vector<Condition> conds{Condition::topic(0), Condition::topic(2),
                                     Condition::null(4)};
  const auto trace = user_tower_forward(params, config, users, conds);
  Matrix<double> upstream(3, config.output_dim);
  std::fill(upstream.data.begin(), upstream.data.end(), 1.0);
  auto grads = zero_grads<double>(config);
  tower_backward(params, config, trace, upstream, grads);
  EXPECT_EQ(grads.user_table.touched_rows(), (std::vector<std::int32_t>{1, 4}));
  EXPECT_EQ(grads.condition_table.touched_rows(), (std::vector<std::int32_t>{0, 2, 4}));
  EXPECT_TRUE(grads.item_table.touched_rows().empty());
}

TEST(TowerBackward, MismatchedTraceIsContractViolation) {
  const auto config = small_tower(true);
  const auto params = random_params(config, 4);
  const std::vector<std::int32_t> items{1, 2};
  const auto trace = item_tower_forward(params, config, items);
  auto grads = zero_grads<double>(config);
  try {
    tower_backward(params, config, trace, Matrix<double>(3, config.output_dim), grads);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContractViolation);
  }
}

// Central differences of f(params) = sum(upstream . output) on every
// parameter of the tower, skipping probes where a relu unit flips sign.
double max_fd_error(const TowerConfig& config, TowerSide side, std::uint64_t seed) {
  auto params = random_params(config, seed);
  const std::vector<std::int32_t> ids{2, 0, 2};
  const std::vector<Condition> conds{Condition::topic(1), Condition::topic(3),
                                     Condition::null(config.num_topics)};
  auto forward = [&](const TowerParams<double>& p) {
    return side == TowerSide::kUser ? user_tower_forward(p, config, ids, conds)
                                    : item_tower_forward(p, config, ids);
  };
  Matrix<double> upstream(3, config.output_dim);
  Rng rng(seed + 100);
  for (auto& x : upstream.data) x = uniform_real(rng, -1, 1);
  auto objective = [&](const TowerParams<double>& p, std::vector<int>* signs) {
    const auto t = forward(p);
    double s = 0;
    for (std::size_t i = 0; i < upstream.data.size(); ++i) {
      s += upstream.data[i] * t.output().data[i];
    }
    if (signs) {
      signs->clear();
      for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) {
        for (double z : t.pre[l].data) signs->push_back(z > 0);
      }
    }
    return s;
  };
  const auto trace = forward(params);
  auto grads = zero_grads<double>(config);
  tower_backward(params, config, trace, upstream, grads);

  // Flatten analytic grads in for_each_tensor order.
  auto dense = convert_params<double>(zero_params(config));
  auto scatter = [](Matrix<double>& table, const SparseRowGrad<double>& g) {
    for (std::size_t s = 0; s < g.touched_rows().size(); ++s) {
      auto v = g.values_at(s);
      std::copy(v.begin(), v.end(), table.row(g.touched_rows()[s]).begin());
    }
  };
  scatter(dense.user_table, grads.user_table);
  scatter(dense.item_table, grads.item_table);
  scatter(dense.condition_table, grads.condition_table);
  dense.user_layers = grads.user_layers;
  dense.item_layers = grads.item_layers;
  std::vector<double> analytic;
  for_each_tensor(dense, [&](std::span<double> t) {
    analytic.insert(analytic.end(), t.begin(), t.end());
  });
  std::vector<double*> slots;
  for_each_tensor(params, [&](std::span<double> t) {
    for (auto& x : t) slots.push_back(&x);
  });

  const double eps = 1e-3;
  double worst = 0;
  std::vector<int> s_plus, s_minus;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double orig = *slots[i];
    *slots[i] = orig + eps;
    const double fp = objective(params, &s_plus);
    *slots[i] = orig - eps;
    const double fm = objective(params, &s_minus);
    *slots[i] = orig;
    if (s_plus != s_minus) continue;
    const double numeric = (fp - fm) / (2 * eps);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

TEST(TowerBackward, FiniteDifferenceAcrossConfigs) {
  for (bool conditional : {true, false}) {
    for (auto act : {Activation::kRelu, Activation::kTanh}) {
      for (auto side : {TowerSide::kUser, TowerSide::kItem}) {
        const auto config = small_tower(conditional, act);
        EXPECT_LT(max_fd_error(config, side, 17), 1e-4)
            << "conditional=" << conditional << " act=" << to_string(act)
            << " side=" << (side == TowerSide::kUser ? "user" : "item");
      }
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint ckpt{small_tower(true), init_params(small_tower(true), 8), 8};
  const auto bytes = serialize_checkpoint(ckpt);
  const auto back = parse_checkpoint(bytes);
  EXPECT_EQ(back, ckpt);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  const auto path =
      (std::filesystem::temp_directory_path() / "condret_tower_rt.ckpt").string();
  save_checkpoint(ckpt, path);
  EXPECT_EQ(load_checkpoint(path), ckpt);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptBytesAreParseErrors) {
  Checkpoint ckpt{small_tower(false), init_params(small_tower(false), 8), 8};
  auto bytes = serialize_checkpoint(ckpt);
  try {
    parse_checkpoint(bytes.substr(0, bytes.size() - 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
  }
  bytes[0] = 'X';
  try {
    parse_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
  }
}

}  // namespace
}  // namespace condret
