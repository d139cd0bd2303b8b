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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "condret/dataset.h"
#include "condret/retrieval.h"
#include "condret/tower.h"

namespace condret {

/// INDEX: topic -> items by popularity. LR: plain two tower. CR: conditional
/// two tower.
enum class Method { kIndex, kLR, kCR };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);

struct EvalConfig {
  std::int32_t k = 100;
  std::vector<Method> methods{Method::kIndex, Method::kLR, Method::kCR};
  std::vector<FilterMode> modes{FilterMode::kNone, FilterMode::kStreaming};
  std::int32_t stream_batch_size = 32;
  // Streaming scan budget; <= 0 means the whole corpus.
  std::int64_t budget = 0;
  std::int32_t overfetch_factor = 10;
  // Base-layer beam width for unfiltered and streaming search; <= 0 uses
  // max(efSearch, k).
  std::int32_t beam_width = 0;
  // Cap on evaluation queries (0 = all).
  std::int32_t max_queries = 0;
  std::uint64_t seed = 1;
};

/// Fraction of returned items that carry the query condition, pooled over
/// all results. Throws kUndefinedMetric when nothing was returned.
double topic_match_rate(std::span<const RetrievalResult> results);

/// |result ∩ heldout| / min(k, |heldout|). nullopt (skip the query) when the
/// heldout set is empty.
std::optional<double> recall_at_k(const RetrievalResult& result,
                                  std::span<const ItemId> heldout, std::int32_t k);

struct EvalQuery {
  UserId user = 0;
  TopicId topic = 0;
};

/// Distinct (user, topic) pairs: one per heldout event whose item has
/// topics, with the topic drawn uniformly from the item's topic set.
std::vector<EvalQuery> make_eval_queries(const Dataset& dataset,
                                         std::uint64_t seed,
                                         std::int32_t max_queries = 0);

struct EvalRow {
  Method method = Method::kIndex;
  // nullopt for INDEX, which has no filter stage.
  std::optional<FilterMode> mode;
  double topic_match_rate = 0.0;
  double recall = 0.0;
  double mean_scanned = 0.0;
  double mean_result_size = 0.0;
  std::size_t queries = 0;
  std::size_t truncated = 0;

  std::string label() const;
};

struct EvalReport {
  EvalConfig config;
  std::size_t num_queries = 0;
  std::vector<EvalRow> rows;

  const EvalRow* find(Method method, std::optional<FilterMode> mode) const;
  std::string to_tsv() const;
  std::string to_table() const;
};

/// A trained model with its materialized (graph-backed) item index.
struct RetrievalModel {
  Checkpoint checkpoint;
  ItemIndex index;
};

RetrievalModel prepare_model(Checkpoint checkpoint, const Dataset& dataset,
                             const AnnConfig& ann);

/// Runs every requested method (LR and CR once per filter mode, INDEX once)
/// over the evaluation queries and aggregates the metrics. Throws
/// kInvalidConfig when a requested learned method has no model.
EvalReport run_experiment(const Dataset& dataset, const RetrievalModel* lr,
                          const RetrievalModel* cr, const EvalConfig& config);

}  // namespace condret
