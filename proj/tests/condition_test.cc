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
#include "condret/condition.h"

#include <map>

#include <gtest/gtest.h>

namespace condret {
namespace {

constexpr std::int32_t kTopics = 12;

TEST(ExtractCondition, Singleton) {
  Rng rng(1);
  const Item item{0, 0, {7}};
  EXPECT_EQ(extract_condition(item, kTopics, rng), Condition::topic(7));
}

TEST(ExtractCondition, EmptyTopicsGiveNullToken) {
  Rng rng(1);
  const Item item{0, 0, {}};
  const auto c = extract_condition(item, kTopics, rng);
  EXPECT_TRUE(c.is_null(kTopics));
  EXPECT_EQ(c.value(), kTopics);
}

TEST(ExtractCondition, UniformOverThreeTopics) {
  Rng rng(2024);
  const Item item{0, 0, {2, 5, 9}};
  std::map<std::int32_t, int> counts;
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    const auto c = extract_condition(item, kTopics, rng);
    ASSERT_TRUE(item.contains(c.value()));
    ++counts[c.value()];
  }
  ASSERT_EQ(counts.size(), 3u);
  double chi2 = 0.0;
  for (auto [topic, n] : counts) {
    EXPECT_NEAR(static_cast<double>(n) / draws, 1.0 / 3.0, 0.01) << "topic " << topic;
    const double expected = draws / 3.0;
    chi2 += (n - expected) * (n - expected) / expected;
  }
  // Chi-square critical value, 2 degrees of freedom, significance 0.01.
  EXPECT_LT(chi2, 9.2103);
}

TEST(ExtractCondition, SupportProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    Item item;
    for (TopicId t = 0; t < kTopics; ++t) {
      if (uniform_index(rng, 4) == 0) item.topics.push_back(t);
    }
    const auto c = extract_condition(item, kTopics, rng);
    EXPECT_EQ(c.is_null(kTopics), item.topics.empty());
    if (!item.topics.empty()) EXPECT_TRUE(item.contains(c.value()));
  }
}

Dataset multi_topic_dataset() {
  Dataset d;
  d.topic_count = 4;
  d.users = {{0, 0, {}}};
  d.items = {{0, 0, {1}}, {1, 1, {0, 2, 3}}, {2, 2, {}}};
  for (int i = 0; i < 3; ++i) {
    d.engagements.push_back({0, static_cast<ItemId>(i), Split::kTrain});
  }
  return d;
}

TEST(ConditionSampler, CachedWhenNotResampling) {
  const auto d = multi_topic_dataset();
  ConditionSampler sampler(d, train_pairs(d), false, 9);
  const auto first = sampler.for_epoch(0);
  for (int epoch = 1; epoch < 10; ++epoch) EXPECT_EQ(sampler.for_epoch(epoch), first);
}

TEST(ConditionSampler, SingleTopicItemsIgnoreFlag) {
  const auto d = multi_topic_dataset();
  ConditionSampler fixed(d, train_pairs(d), false, 9);
  ConditionSampler fresh(d, train_pairs(d), true, 9);
  for (int epoch = 0; epoch < 5; ++epoch) {
    EXPECT_EQ(fresh.for_epoch(epoch)[0], Condition::topic(1));
    EXPECT_EQ(fixed.for_epoch(epoch)[0], Condition::topic(1));
    EXPECT_TRUE(fresh.for_epoch(epoch)[2].is_null(4));
  }
}

TEST(ConditionSampler, ResampledMarginalIsUniform) {
  const auto d = multi_topic_dataset();
  ConditionSampler sampler(d, train_pairs(d), true, 9);
  std::map<std::int32_t, int> counts;
  const int epochs = 6000;
  for (int epoch = 0; epoch < epochs; ++epoch) ++counts[sampler.for_epoch(epoch)[1].value()];
  ASSERT_EQ(counts.size(), 3u);
  for (auto [topic, n] : counts) {
    EXPECT_NEAR(static_cast<double>(n) / epochs, 1.0 / 3.0, 0.025) << topic;
  }
}

}  // namespace
}  // namespace condret
