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

#include <cstdint>
#include <vector>

#include "condret/dataset.h"
#include "condret/random.h"

namespace condret {

/// A topic id in [0, T), or the null token T for "no condition". The value
/// doubles as the row index into the condition embedding table, which has
/// T + 1 rows.
class Condition {
 public:
  constexpr Condition() = default;
  static constexpr Condition topic(TopicId t) { return Condition(t); }
  static constexpr Condition null(std::int32_t topic_count) {
    return Condition(topic_count);
  }

  constexpr std::int32_t value() const { return value_; }
  constexpr bool is_null(std::int32_t topic_count) const {
    return value_ == topic_count;
  }

  constexpr bool operator==(const Condition&) const = default;

 private:
  explicit constexpr Condition(std::int32_t v) : value_(v) {}
  std::int32_t value_ = 0;
};

/// Uniform member of item.topics, or the null token for a topic-less item.
/// Consumes exactly one draw from `rng` when the item has two or more topics.
Condition extract_condition(const Item& item, std::int32_t topic_count, Rng& rng);

/// Supplies the training condition of every train event, one epoch at a time.
/// With resample_per_epoch the conditions are redrawn each epoch; otherwise
/// the epoch-0 draw is reused for the whole run.
class ConditionSampler {
 public:
  ConditionSampler(const Dataset& dataset, std::vector<TrainPair> pairs,
                   bool resample_per_epoch, std::uint64_t seed);

  /// Conditions indexed by TrainPair::train_index.
  const std::vector<Condition>& for_epoch(int epoch);

 private:
  const Dataset& dataset_;
  std::vector<TrainPair> pairs_;
  bool resample_per_epoch_;
  std::uint64_t seed_;
  int drawn_epoch_ = -1;
  std::vector<Condition> conditions_;
};

}  // namespace condret
