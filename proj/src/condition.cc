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

namespace condret {

namespace {
constexpr std::uint64_t kConditionStream = 0xc0d1;
}

Condition extract_condition(const Item& item, std::int32_t topic_count, Rng& rng) {
  if (item.topics.empty()) return Condition::null(topic_count);
  if (item.topics.size() == 1) return Condition::topic(item.topics.front());
  return Condition::topic(item.topics[uniform_index(rng, item.topics.size())]);
}

ConditionSampler::ConditionSampler(const Dataset& dataset,
                                   std::vector<TrainPair> pairs,
                                   bool resample_per_epoch, std::uint64_t seed)
    : dataset_(dataset),
      pairs_(std::move(pairs)),
      resample_per_epoch_(resample_per_epoch),
      seed_(seed) {}

const std::vector<Condition>& ConditionSampler::for_epoch(int epoch) {
  const int stream_epoch = resample_per_epoch_ ? epoch : 0;
  if (stream_epoch == drawn_epoch_) return conditions_;
  Rng rng(derive_seed(seed_, {kConditionStream,
                              static_cast<std::uint64_t>(stream_epoch)}));
  conditions_.resize(pairs_.size());
  for (const auto& p : pairs_) {
    conditions_[p.train_index] =
        extract_condition(dataset_.items[p.item_id], dataset_.topic_count, rng);
  }
  drawn_epoch_ = stream_epoch;
  return conditions_;
}

}  // namespace condret
