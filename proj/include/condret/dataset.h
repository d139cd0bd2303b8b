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
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace condret {

using UserId = std::int32_t;
using ItemId = std::int32_t;
using TopicId = std::int32_t;

struct User {
  UserId id = 0;
  std::int32_t feature_id = 0;
  // Ground-truth topic distribution. Empty for non-synthetic data.
  std::vector<double> affinity;

  bool operator==(const User&) const = default;
};

struct Item {
  ItemId id = 0;
  std::int32_t feature_id = 0;
  // Sorted, unique, possibly empty.
  std::vector<TopicId> topics;

  bool contains(TopicId topic) const;
  bool operator==(const Item&) const = default;
};

enum class Split : std::uint8_t { kTrain, kHeldout };

struct EngagementEvent {
  UserId user_id = 0;
  ItemId item_id = 0;
  Split split = Split::kTrain;

  bool operator==(const EngagementEvent&) const = default;
};

/// Users and items are stored densely: users[i].id == i, items[i].id == i.
/// Feature vocabularies are the user and item counts.
struct Dataset {
  std::int32_t topic_count = 0;
  std::vector<User> users;
  std::vector<Item> items;
  std::vector<EngagementEvent> engagements;

  std::size_t num_users() const { return users.size(); }
  std::size_t num_items() const { return items.size(); }

  bool operator==(const Dataset&) const = default;
};

struct GenConfig {
  std::int32_t num_users = 2000;
  std::int32_t num_items = 10000;
  std::int32_t num_topics = 25;
  std::int32_t min_topics_per_item = 1;
  std::int32_t max_topics_per_item = 3;
  std::int32_t events_per_user = 20;
  double affinity_concentration = 0.1;
  double noise_rate = 0.05;
  double heldout_fraction = 0.1;
  std::uint64_t seed = 1;
};

/// Throws kInvalidConfig describing the first violated constraint.
void validate(const GenConfig& config);

/// Synthetic engagement log with Dirichlet user-topic affinities. Items get
/// a uniform number of distinct topics; each event picks a topic from the
/// user's affinity (or uniformly with probability noise_rate) and then a
/// uniform item carrying that topic. Splits are assigned per (user, item)
/// pair so no pair lands in both.
Dataset generate_synthetic(const GenConfig& config);

/// Checks id density, topic ranges and referential integrity of the log.
void validate(const Dataset& dataset);

std::string serialize_dataset(const Dataset& dataset);
Dataset parse_dataset(std::string_view text);
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Train-split engagement count per item id.
std::vector<std::int64_t> item_popularity(const Dataset& dataset);

std::size_t count_train_events(const Dataset& dataset);

/// For each topic, the ids of items carrying it (ascending).
std::vector<std::vector<ItemId>> items_by_topic(const Dataset& dataset);

struct TrainPair {
  UserId user_id = 0;
  ItemId item_id = 0;
  // Position of the event among the train-split events, in log order.
  std::size_t train_index = 0;

  bool operator==(const TrainPair&) const = default;
};

using Batch = std::vector<TrainPair>;

/// Train-split events in log order.
std::vector<TrainPair> train_pairs(const Dataset& dataset);

/// One epoch: a seeded permutation of the train pairs chunked into
/// batch_size pieces. The short remainder is dropped.
std::vector<Batch> make_batches(const Dataset& dataset, std::size_t batch_size,
                                std::uint64_t seed);
std::vector<Batch> make_batches(const std::vector<TrainPair>& pairs,
                                std::size_t batch_size, std::uint64_t seed);

}  // namespace condret
