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

// Serving side: a frozen matrix of item embeddings with topic sets and
// popularity, an optional layered proximity graph for approximate
// maximum-inner-product search, and the filtered search strategies built on
// top of it. All rankings order by score descending, then item id ascending.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "condret/dataset.h"
#include "condret/matrix.h"
#include "condret/tower.h"

namespace condret {

struct AnnConfig {
  std::int32_t max_degree = 16;         // M
  std::int32_t build_beam_width = 100;  // efConstruction
  std::int32_t query_beam_width = 64;   // efSearch
  // Level assignment: floor(-ln(U) * level_multiplier); <= 0 selects 1/ln(M).
  double level_multiplier = 0.0;
  std::uint64_t seed = 1;

  double effective_level_multiplier() const {
    return level_multiplier > 0.0 ? level_multiplier
                                  : 1.0 / std::log(static_cast<double>(max_degree));
  }

  bool operator==(const AnnConfig&) const = default;
};

void validate(const AnnConfig& config);

/// Layered proximity graph. neighbors[node][level] lists out-edges; a node
/// has levels[node] + 1 lists.
struct AnnGraph {
  std::int32_t entry_point = -1;
  std::int32_t max_level = -1;
  std::vector<std::int32_t> levels;
  std::vector<std::vector<std::vector<std::int32_t>>> neighbors;

  bool operator==(const AnnGraph&) const = default;
};

struct ItemIndex {
  std::int32_t topic_count = 0;
  std::vector<ItemId> item_ids;
  Matrix<float> embeddings;  // row r is item_ids[r]
  std::vector<std::vector<TopicId>> topics;
  std::vector<std::int64_t> popularity;
  AnnConfig ann_config;
  std::optional<AnnGraph> graph;

  std::size_t size() const { return item_ids.size(); }
  std::size_t dim() const { return embeddings.cols; }
  bool has_topic(std::size_t row, TopicId topic) const;

  bool operator==(const ItemIndex&) const = default;
};

/// Row-major embedding matrix plus metadata; no graph. Row i is item i.
ItemIndex make_index(Matrix<float> embeddings, const Dataset& dataset);

/// Materializes item tower outputs for every item of the dataset.
ItemIndex build_index(const Checkpoint& checkpoint, const Dataset& dataset);

enum class FilterMode { kNone, kStreaming, kPostfilter };

std::string_view to_string(FilterMode m);
FilterMode parse_filter_mode(std::string_view s);

struct RetrievalQuery {
  EmbeddingVec user_embedding;
  std::optional<TopicId> condition;
  std::int32_t k = 10;
  FilterMode filter_mode = FilterMode::kNone;
  std::int64_t budget = 0;         // streaming: max candidates scanned
  std::int32_t batch_size = 32;    // streaming mini-batch
  std::int32_t beam_width = 0;     // 0 uses the index's efSearch
  std::int32_t overfetch_factor = 10;
};

struct ScoredItem {
  ItemId item_id = 0;
  float score = 0.0f;
  bool matched = false;  // item carries the query condition

  bool operator==(const ScoredItem&) const = default;
};

struct RetrievalResult {
  std::vector<ScoredItem> items;
  std::int64_t scanned_count = 0;
  bool truncated = false;

  std::vector<ItemId> ids() const;
  std::size_t matched_count() const;
};

using ItemPredicate = std::function<bool(std::size_t row)>;

/// Brute-force top-k over rows accepted by `predicate` (all rows when
/// empty). scanned_count is the index size. Match flags refer to
/// `condition`, when given.
RetrievalResult exact_topk(const ItemIndex& index, std::span<const float> query,
                           std::int32_t k, const ItemPredicate& predicate = {},
                           std::optional<TopicId> condition = std::nullopt);

/// Predicate accepting rows that carry `topic`.
ItemPredicate topic_predicate(const ItemIndex& index, TopicId topic);

/// Inserts every row, in row order, into a fresh layered graph.
void build_ann(ItemIndex& index, const AnnConfig& config);

/// Greedy descent through the upper layers, then a beam search of width
/// `beam_width` on the base layer. scanned_count counts score evaluations.
RetrievalResult ann_search(const ItemIndex& index, std::span<const float> query,
                           std::int32_t k, std::int32_t beam_width,
                           std::optional<TopicId> condition = std::nullopt);

/// Resumable beam search over the base layer. Each call to next_batch
/// continues the search until it has converged for a beam of
/// max(beam_width, emitted + n) entries, then hands out the n best
/// discovered-but-unemitted rows. The frontier and evicted beam entries are
/// retained, so a later call resumes where the previous one stopped.
class AnnStream {
 public:
  AnnStream(const ItemIndex& index, std::span<const float> query,
            std::int32_t beam_width);

  /// Up to n rows; fewer only once the reachable graph is exhausted.
  std::vector<std::size_t> next_batch(std::size_t n);

  /// Scores of every row emitted so far, in emission order.
  const std::vector<float>& emitted_scores() const { return last_scores_; }
  std::int64_t score_evaluations() const { return evaluations_; }

 private:
  struct Entry {
    float score;
    std::int32_t row;
  };
  void refill(std::size_t target);
  float evaluate(std::int32_t row);

  const ItemIndex& index_;
  std::vector<float> query_;
  std::size_t beam_width_;
  std::int64_t evaluations_ = 0;
  std::size_t emitted_ = 0;
  std::vector<std::uint8_t> visited_;
  std::vector<Entry> frontier_;  // unexpanded, best on top
  std::vector<Entry> pending_;   // unemitted, best on top
  std::vector<Entry> beam_;      // current beam, worst on top
  std::vector<Entry> overflow_;  // evicted from the beam, best on top
  std::vector<float> last_scores_;
};

/// Draws `batch_size` candidates at a time from an AnnStream and keeps those
/// carrying `condition`, until k matches or `budget` candidates scanned.
RetrievalResult streaming_filtered_search(const ItemIndex& index,
                                          std::span<const float> query,
                                          TopicId condition, std::int32_t k,
                                          std::int32_t batch_size,
                                          std::int64_t budget,
                                          std::int32_t beam_width);

/// Exact unfiltered top (k * overfetch_factor), filtered, truncated to k.
RetrievalResult postfilter_oracle(const ItemIndex& index,
                                  std::span<const float> query, TopicId condition,
                                  std::int32_t k, std::int32_t overfetch_factor);

/// Items carrying `topic` by popularity descending, ties by id ascending.
/// Scores are the popularity counts.
RetrievalResult popularity_index_retrieve(const ItemIndex& index, TopicId topic,
                                          std::int32_t k);
RetrievalResult popularity_index_retrieve(const Dataset& dataset, TopicId topic,
                                          std::int32_t k);

/// Dispatches on query.filter_mode. kNone uses ann_search when a graph is
/// present and exact_topk otherwise.
RetrievalResult retrieve(const ItemIndex& index, const RetrievalQuery& query);

std::string serialize_index(const ItemIndex& index);
ItemIndex parse_index(std::string_view bytes);
void save_index(const ItemIndex& index, const std::string& path);
ItemIndex load_index(const std::string& path);

}  // namespace condret
