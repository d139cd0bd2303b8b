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
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "condret/config.h"
#include "condret/error.h"
#include "condret/file_io.h"

namespace condret {
namespace {

constexpr std::string_view kIndexMagic = "CONDRET-INDEX\x01";

struct Scored {
  float score;
  std::int32_t row;
};

// Total order used for every ranking: higher score first, then lower id.
inline bool better(const Scored& a, const Scored& b) {
  return a.score > b.score || (a.score == b.score && a.row < b.row);
}

// Heap comparators for std::push_heap/pop_heap.
struct BestOnTop {
  bool operator()(const Scored& a, const Scored& b) const { return better(b, a); }
};
struct WorstOnTop {
  bool operator()(const Scored& a, const Scored& b) const { return better(a, b); }
};

RetrievalResult to_result(const ItemIndex& index, std::vector<Scored> hits,
                          std::optional<TopicId> condition) {
  std::sort(hits.begin(), hits.end(), better);
  RetrievalResult out;
  out.items.reserve(hits.size());
  for (const auto& h : hits) {
    out.items.push_back({index.item_ids[h.row], h.score,
                         condition ? index.has_topic(h.row, *condition) : false});
  }
  return out;
}

// ---- graph construction ----------------------------------------------------

class GraphBuilder {
 public:
  GraphBuilder(const ItemIndex& index, const AnnConfig& config)
      : index_(index),
        config_(config),
        tags_(index.size(), 0),
        lift_(index.size(), 0.0f) {
    // Build-time geometry: each row gets an extra coordinate
    // sqrt(max_norm^2 - |x|^2) so all rows share one norm. Inner product on
    // the lifted rows then ranks like euclidean distance, which keeps short
    // rows from being starved of edges. Queries carry a zero there, so search
    // scores are untouched.
    std::vector<double> sq(index.size());
    double top = 0.0;
    for (std::size_t i = 0; i < index.size(); ++i) {
      for (float x : index.embeddings.row(i)) sq[i] += double(x) * x;
      top = std::max(top, sq[i]);
    }
    for (std::size_t i = 0; i < index.size(); ++i) {
      lift_[i] = static_cast<float>(std::sqrt(top - sq[i]));
    }
  }

  AnnGraph build() {
    const std::size_t n = index_.size();
    graph_.levels.resize(n);
    graph_.neighbors.resize(n);
    Rng rng(config_.seed);
    const double ml = config_.effective_level_multiplier();
    for (std::size_t i = 0; i < n; ++i) {
      const double u = 1.0 - uniform_unit(rng);  // (0, 1]
      graph_.levels[i] = static_cast<std::int32_t>(std::floor(-std::log(u) * ml));
    }
    for (std::size_t i = 0; i < n; ++i) insert(static_cast<std::int32_t>(i));
    repair_connectivity();
    return std::move(graph_);
  }

 private:
  float sim(std::int32_t a, std::int32_t b) const {
    return score(index_.embeddings.row(a), index_.embeddings.row(b)) + lift_[a] * lift_[b];
  }

  std::int32_t greedy(std::int32_t q, std::int32_t cur, std::int32_t level) const {
    Scored best{sim(q, cur), cur};
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::int32_t nb : graph_.neighbors[best.row][level]) {
        const Scored s{sim(q, nb), nb};
        if (better(s, best)) {
          best = s;
          changed = true;
        }
      }
    }
    return best.row;
  }

  // Beam search on one layer; returns the beam sorted best-first.
  std::vector<Scored> search_layer(std::int32_t q, std::int32_t entry,
                                   std::int32_t level, std::size_t ef) {
    ++tag_;
    std::vector<Scored> frontier;  // best on top
    std::vector<Scored> beam;      // worst on top
    const Scored e{sim(q, entry), entry};
    tags_[entry] = tag_;
    frontier.push_back(e);
    beam.push_back(e);
    while (!frontier.empty()) {
      std::pop_heap(frontier.begin(), frontier.end(), BestOnTop{});
      const Scored c = frontier.back();
      frontier.pop_back();
      if (beam.size() >= ef && better(beam.front(), c)) break;
      for (std::int32_t nb : graph_.neighbors[c.row][level]) {
        if (tags_[nb] == tag_) continue;
        tags_[nb] = tag_;
        const Scored s{sim(q, nb), nb};
        if (beam.size() < ef || better(s, beam.front())) {
          frontier.push_back(s);
          std::push_heap(frontier.begin(), frontier.end(), BestOnTop{});
          beam.push_back(s);
          std::push_heap(beam.begin(), beam.end(), WorstOnTop{});
          if (beam.size() > ef) {
            std::pop_heap(beam.begin(), beam.end(), WorstOnTop{});
            beam.pop_back();
          }
        }
      }
    }
    std::sort(beam.begin(), beam.end(), better);
    return beam;
  }

  // Keeps a candidate only if it is closer to the base than to every
  // neighbor already kept; leftover slots are filled with the best pruned
  // candidates so inner-product graphs stay well connected.
  std::vector<std::int32_t> select(const std::vector<Scored>& sorted,
                                   std::size_t m) const {
    std::vector<std::int32_t> kept;
    std::vector<std::int32_t> pruned;
    for (const auto& c : sorted) {
      if (kept.size() >= m) break;
      bool good = true;
      for (std::int32_t s : kept) {
        if (sim(c.row, s) > c.score) {
          good = false;
          break;
        }
      }
      (good ? kept : pruned).push_back(c.row);
    }
    for (std::size_t i = 0; i < pruned.size() && kept.size() < m; ++i) {
      kept.push_back(pruned[i]);
    }
    return kept;
  }

  void insert(std::int32_t q) {
    const std::int32_t level = graph_.levels[q];
    graph_.neighbors[q].resize(level + 1);
    if (graph_.entry_point < 0) {
      graph_.entry_point = q;
      graph_.max_level = level;
      return;
    }
    std::int32_t cur = graph_.entry_point;
    for (std::int32_t l = graph_.max_level; l > level; --l) cur = greedy(q, cur, l);
    const auto m = static_cast<std::size_t>(config_.max_degree);
    for (std::int32_t l = std::min(level, graph_.max_level); l >= 0; --l) {
      const auto beam = search_layer(q, cur, l, config_.build_beam_width);
      auto chosen = select(beam, m);
      graph_.neighbors[q][l] = chosen;
      for (std::int32_t nb : chosen) {
        auto& list = graph_.neighbors[nb][l];
        list.push_back(q);
        if (list.size() > m) {
          std::vector<Scored> cands;
          cands.reserve(list.size());
          for (std::int32_t x : list) cands.push_back({sim(nb, x), x});
          std::sort(cands.begin(), cands.end(), better);
          list = select(cands, m);
        }
      }
      cur = beam.front().row;
    }
    if (level > graph_.max_level) {
      graph_.max_level = level;
      graph_.entry_point = q;
    }
  }

  // Links every base-layer node unreachable from the entry point into the
  // reachable part. A similar reachable node with a free slot hosts directly.
  // Otherwise the best host's weakest edge h->y is spliced into h->x->y.
  // Edges leaving x never carried reachability, so x may drop its own weakest
  // edge to make room, and the degree cap holds throughout.
  void repair_connectivity() {
    const std::size_t n = index_.size();
    const auto m = static_cast<std::size_t>(config_.max_degree);
    std::vector<std::uint8_t> reached(n, 0);
    auto flood = [&](std::int32_t start) {
      if (reached[start]) return;
      std::vector<std::int32_t> stack{start};
      reached[start] = 1;
      while (!stack.empty()) {
        const auto v = stack.back();
        stack.pop_back();
        for (std::int32_t nb : graph_.neighbors[v][0]) {
          if (!reached[nb]) {
            reached[nb] = 1;
            stack.push_back(nb);
          }
        }
      }
    };
    auto weakest = [&](std::int32_t h) {
      const auto& list = graph_.neighbors[h][0];
      std::size_t w = 0;
      for (std::size_t j = 1; j < list.size(); ++j) {
        if (better({sim(h, list[w]), list[w]}, {sim(h, list[j]), list[j]})) w = j;
      }
      return w;
    };
    flood(graph_.entry_point);
    constexpr std::size_t kHostTries = 8;
    for (std::size_t x = 0; x < n; ++x) {
      if (reached[x]) continue;
      const auto xi = static_cast<std::int32_t>(x);
      std::vector<Scored> hosts;
      for (std::size_t y = 0; y < n; ++y) {
        if (reached[y]) hosts.push_back({sim(xi, static_cast<std::int32_t>(y)),
                                         static_cast<std::int32_t>(y)});
      }
      const auto top = std::min(kHostTries, hosts.size());
      std::partial_sort(hosts.begin(), hosts.begin() + top, hosts.end(), better);
      bool linked = false;
      for (std::size_t t = 0; t < top && !linked; ++t) {
        auto& list = graph_.neighbors[hosts[t].row][0];
        if (list.size() < m) {
          list.push_back(xi);
          linked = true;
        }
      }
      if (!linked) {
        const auto h = hosts.front().row;
        auto& list = graph_.neighbors[h][0];
        const auto j = weakest(h);
        const std::int32_t y = list[j];
        list[j] = xi;
        auto& own = graph_.neighbors[xi][0];
        if (std::find(own.begin(), own.end(), y) == own.end()) {
          if (own.size() < m) {
            own.push_back(y);
          } else {
            own[weakest(xi)] = y;
          }
        }
      }
      // Reached only grows, so flooding from x extends it in place.
      flood(xi);
    }
  }

  const ItemIndex& index_;
  const AnnConfig& config_;
  AnnGraph graph_;
  std::vector<std::uint32_t> tags_;
  std::uint32_t tag_ = 0;
  std::vector<float> lift_;
};

void write_graph(ByteWriter& w, const AnnGraph& g) {
  w.put<std::int32_t>(g.entry_point);
  w.put<std::int32_t>(g.max_level);
  w.put_array(g.levels);
  for (const auto& per_node : g.neighbors) {
    for (const auto& list : per_node) w.put_array(list);
  }
}

AnnGraph read_graph(ByteReader& r, std::size_t n) {
  AnnGraph g;
  g.entry_point = r.get<std::int32_t>();
  g.max_level = r.get<std::int32_t>();
  g.levels = r.get_array<std::int32_t>();
  check(g.levels.size() == n, ErrorKind::kParse, "graph level count mismatch");
  g.neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    check(g.levels[i] >= 0 && g.levels[i] <= g.max_level, ErrorKind::kParse,
          "graph level out of range");
    g.neighbors[i].resize(g.levels[i] + 1);
    for (auto& list : g.neighbors[i]) {
      list = r.get_array<std::int32_t>();
      for (auto nb : list) {
        check(nb >= 0 && static_cast<std::size_t>(nb) < n, ErrorKind::kParse,
              "graph neighbor id out of range");
      }
    }
  }
  check(n == 0 || (g.entry_point >= 0 && static_cast<std::size_t>(g.entry_point) < n),
        ErrorKind::kParse, "graph entry point out of range");
  return g;
}

}  // namespace

void validate(const AnnConfig& c) {
  check(c.max_degree >= 2, ErrorKind::kInvalidConfig, "max_degree must be >= 2");
  check(c.build_beam_width >= c.max_degree, ErrorKind::kInvalidConfig,
        "build_beam_width must be >= max_degree");
  check(c.query_beam_width >= 1, ErrorKind::kInvalidConfig,
        "query_beam_width must be >= 1");
  check(std::isfinite(c.level_multiplier), ErrorKind::kInvalidConfig,
        "level_multiplier must be finite");
}

bool ItemIndex::has_topic(std::size_t row, TopicId topic) const {
  const auto& t = topics[row];
  return std::binary_search(t.begin(), t.end(), topic);
}

std::vector<ItemId> RetrievalResult::ids() const {
  std::vector<ItemId> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.item_id);
  return out;
}

std::size_t RetrievalResult::matched_count() const {
  return static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [](const auto& it) { return it.matched; }));
}

ItemIndex make_index(Matrix<float> embeddings, const Dataset& dataset) {
  check(embeddings.rows == dataset.num_items(), ErrorKind::kInvalidConfig,
        fmt::format("{} embedding rows for {} items", embeddings.rows,
                    dataset.num_items()));
  ItemIndex index;
  index.topic_count = dataset.topic_count;
  index.embeddings = std::move(embeddings);
  index.popularity = item_popularity(dataset);
  for (const auto& item : dataset.items) {
    index.item_ids.push_back(item.id);
    index.topics.push_back(item.topics);
  }
  return index;
}

ItemIndex build_index(const Checkpoint& checkpoint, const Dataset& dataset) {
  const auto& c = checkpoint.config;
  check(c.num_items == static_cast<std::int32_t>(dataset.num_items()) &&
            c.num_users == static_cast<std::int32_t>(dataset.num_users()) &&
            c.num_topics == dataset.topic_count,
        ErrorKind::kInvalidConfig,
        fmt::format("checkpoint vocab (users={}, items={}, topics={}) does not "
                    "match dataset (users={}, items={}, topics={})",
                    c.num_users, c.num_items, c.num_topics, dataset.num_users(),
                    dataset.num_items(), dataset.topic_count));
  std::vector<std::int32_t> features;
  features.reserve(dataset.num_items());
  for (const auto& item : dataset.items) features.push_back(item.feature_id);
  auto trace = item_tower_forward<float>(checkpoint.params, c, features);
  return make_index(std::move(trace.post.back()), dataset);
}

std::string_view to_string(FilterMode m) {
  switch (m) {
    case FilterMode::kNone: return "none";
    case FilterMode::kStreaming: return "streaming";
    case FilterMode::kPostfilter: return "postfilter";
  }
  return "none";
}

FilterMode parse_filter_mode(std::string_view s) {
  if (s == "none") return FilterMode::kNone;
  if (s == "streaming") return FilterMode::kStreaming;
  if (s == "postfilter" || s == "postfilter_oracle") return FilterMode::kPostfilter;
  fail(ErrorKind::kInvalidArgument, fmt::format("unknown filter mode '{}'", s));
}

RetrievalResult exact_topk(const ItemIndex& index, std::span<const float> query,
                           std::int32_t k, const ItemPredicate& predicate,
                           std::optional<TopicId> condition) {
  check(k >= 1, ErrorKind::kInvalidArgument, "k must be >= 1");
  check(query.size() == index.dim(), ErrorKind::kDimensionMismatch,
        fmt::format("query has dim {}, index has {}", query.size(), index.dim()));
  std::vector<Scored> hits;
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (predicate && !predicate(r)) continue;
    hits.push_back({score(query, index.embeddings.row(r)), static_cast<std::int32_t>(r)});
  }
  const auto keep = std::min<std::size_t>(hits.size(), k);
  std::partial_sort(hits.begin(), hits.begin() + keep, hits.end(), better);
  hits.resize(keep);
  auto out = to_result(index, std::move(hits), condition);
  out.scanned_count = static_cast<std::int64_t>(index.size());
  return out;
}

ItemPredicate topic_predicate(const ItemIndex& index, TopicId topic) {
  return [&index, topic](std::size_t row) { return index.has_topic(row, topic); };
}

void build_ann(ItemIndex& index, const AnnConfig& config) {
  validate(config);
  check(index.size() > 0, ErrorKind::kInvalidArgument,
        "cannot build a graph over an empty index");
  index.ann_config = config;
  index.graph = GraphBuilder(index, config).build();
}

AnnStream::AnnStream(const ItemIndex& index, std::span<const float> query,
                     std::int32_t beam_width)
    : index_(index),
      query_(query.begin(), query.end()),
      beam_width_(beam_width),
      visited_(index.size(), 0) {
  check(index.graph.has_value(), ErrorKind::kInvalidArgument,
        "index has no graph; call build_ann first");
  check(query.size() == index.dim(), ErrorKind::kDimensionMismatch,
        fmt::format("query has dim {}, index has {}", query.size(), index.dim()));
  check(beam_width >= 1, ErrorKind::kInvalidArgument, "beam width must be >= 1");
  const AnnGraph& g = *index.graph;
  Scored cur{evaluate(g.entry_point), g.entry_point};
  for (std::int32_t level = g.max_level; level > 0; --level) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::int32_t nb : g.neighbors[cur.row][level]) {
        const Scored s{evaluate(nb), nb};
        if (better(s, cur)) {
          cur = s;
          changed = true;
        }
      }
    }
  }
  visited_[cur.row] = 1;
  frontier_.push_back({cur.score, cur.row});
  pending_.push_back({cur.score, cur.row});
  beam_.push_back({cur.score, cur.row});
}

float AnnStream::evaluate(std::int32_t row) {
  ++evaluations_;
  return score(query_, index_.embeddings.row(row));
}

void AnnStream::refill(std::size_t target) {
  auto as_scored = [](const Entry& e) { return Scored{e.score, e.row}; };
  auto best_on_top = [&](const Entry& a, const Entry& b) {
    return better(as_scored(b), as_scored(a));
  };
  auto worst_on_top = [&](const Entry& a, const Entry& b) {
    return better(as_scored(a), as_scored(b));
  };
  // Widen the beam back to `target` from entries evicted earlier.
  while (beam_.size() < target && !overflow_.empty()) {
    std::pop_heap(overflow_.begin(), overflow_.end(), best_on_top);
    beam_.push_back(overflow_.back());
    overflow_.pop_back();
    std::push_heap(beam_.begin(), beam_.end(), worst_on_top);
  }
  const AnnGraph& g = *index_.graph;
  while (!frontier_.empty()) {
    const Entry c = frontier_.front();
    if (beam_.size() >= target && better(as_scored(beam_.front()), as_scored(c))) {
      break;
    }
    std::pop_heap(frontier_.begin(), frontier_.end(), best_on_top);
    frontier_.pop_back();
    for (std::int32_t nb : g.neighbors[c.row][0]) {
      if (visited_[nb]) continue;
      visited_[nb] = 1;
      const Entry e{evaluate(nb), nb};
      frontier_.push_back(e);
      std::push_heap(frontier_.begin(), frontier_.end(), best_on_top);
      pending_.push_back(e);
      std::push_heap(pending_.begin(), pending_.end(), best_on_top);
      beam_.push_back(e);
      std::push_heap(beam_.begin(), beam_.end(), worst_on_top);
      if (beam_.size() > target) {
        std::pop_heap(beam_.begin(), beam_.end(), worst_on_top);
        overflow_.push_back(beam_.back());
        beam_.pop_back();
        std::push_heap(overflow_.begin(), overflow_.end(), best_on_top);
      }
    }
  }
}

std::vector<std::size_t> AnnStream::next_batch(std::size_t n) {
  refill(std::max<std::size_t>(beam_width_, emitted_ + n));
  auto best_on_top = [](const Entry& a, const Entry& b) {
    return better(Scored{b.score, b.row}, Scored{a.score, a.row});
  };
  std::vector<std::size_t> out;
  while (out.size() < n && !pending_.empty()) {
    std::pop_heap(pending_.begin(), pending_.end(), best_on_top);
    out.push_back(static_cast<std::size_t>(pending_.back().row));
    last_scores_.push_back(pending_.back().score);
    pending_.pop_back();
  }
  emitted_ += out.size();
  return out;
}

RetrievalResult ann_search(const ItemIndex& index, std::span<const float> query,
                           std::int32_t k, std::int32_t beam_width,
                           std::optional<TopicId> condition) {
  check(k >= 1, ErrorKind::kInvalidArgument, "k must be >= 1");
  check(beam_width >= k, ErrorKind::kInvalidArgument,
        fmt::format("beam width {} must be >= k {}", beam_width, k));
  AnnStream stream(index, query, beam_width);
  const auto rows = stream.next_batch(static_cast<std::size_t>(k));
  std::vector<Scored> hits;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    hits.push_back({stream.emitted_scores()[i], static_cast<std::int32_t>(rows[i])});
  }
  auto out = to_result(index, std::move(hits), condition);
  out.scanned_count = stream.score_evaluations();
  return out;
}

RetrievalResult streaming_filtered_search(const ItemIndex& index,
                                          std::span<const float> query,
                                          TopicId condition, std::int32_t k,
                                          std::int32_t batch_size,
                                          std::int64_t budget,
                                          std::int32_t beam_width) {
  check(k >= 1, ErrorKind::kInvalidArgument, "k must be >= 1");
  check(batch_size >= 1, ErrorKind::kInvalidArgument, "batch_size must be >= 1");
  check(budget >= 1, ErrorKind::kInvalidArgument,
        fmt::format("budget {} must be >= 1", budget));
  AnnStream stream(index, query, beam_width);
  std::vector<Scored> hits;
  std::int64_t scanned = 0;
  bool exhausted = false;
  while (static_cast<std::int32_t>(hits.size()) < k && scanned < budget) {
    const auto want = std::min<std::int64_t>(batch_size, budget - scanned);
    const std::size_t first = stream.emitted_scores().size();
    const auto rows = stream.next_batch(static_cast<std::size_t>(want));
    scanned += static_cast<std::int64_t>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (index.has_topic(rows[i], condition)) {
        hits.push_back({stream.emitted_scores()[first + i],
                        static_cast<std::int32_t>(rows[i])});
      }
    }
    if (static_cast<std::int64_t>(rows.size()) < want) {
      exhausted = true;
      break;
    }
  }
  // A final batch may overshoot k; the best k matches are kept.
  std::sort(hits.begin(), hits.end(), better);
  const bool found_all = static_cast<std::int32_t>(hits.size()) >= k;
  if (found_all) hits.resize(k);
  auto out = to_result(index, std::move(hits), condition);
  out.scanned_count = scanned;
  out.truncated = !found_all && !exhausted;
  return out;
}

RetrievalResult postfilter_oracle(const ItemIndex& index,
                                  std::span<const float> query, TopicId condition,
                                  std::int32_t k, std::int32_t overfetch_factor) {
  check(k >= 1, ErrorKind::kInvalidArgument, "k must be >= 1");
  check(overfetch_factor >= 1, ErrorKind::kInvalidArgument,
        "overfetch_factor must be >= 1");
  const auto fetch = static_cast<std::int64_t>(k) * overfetch_factor;
  const auto capped = static_cast<std::int32_t>(
      std::min<std::int64_t>(fetch, std::max<std::size_t>(index.size(), 1)));
  auto all = exact_topk(index, query, capped, {}, condition);
  RetrievalResult out;
  out.scanned_count = all.scanned_count;
  for (const auto& it : all.items) {
    if (it.matched && static_cast<std::int32_t>(out.items.size()) < k) {
      out.items.push_back(it);
    }
  }
  out.truncated = static_cast<std::int32_t>(out.items.size()) < k &&
                  fetch < static_cast<std::int64_t>(index.size());
  return out;
}

RetrievalResult popularity_index_retrieve(const ItemIndex& index, TopicId topic,
                                          std::int32_t k) {
  check(k >= 1, ErrorKind::kInvalidArgument, "k must be >= 1");
  check(topic >= 0 && topic < index.topic_count, ErrorKind::kIndexOutOfRange,
        fmt::format("topic {} out of range [0, {})", topic, index.topic_count));
  std::vector<std::int32_t> rows;
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index.has_topic(r, topic)) rows.push_back(static_cast<std::int32_t>(r));
  }
  auto by_popularity = [&](std::int32_t a, std::int32_t b) {
    if (index.popularity[a] != index.popularity[b]) {
      return index.popularity[a] > index.popularity[b];
    }
    return index.item_ids[a] < index.item_ids[b];
  };
  const auto keep = std::min<std::size_t>(rows.size(), k);
  std::partial_sort(rows.begin(), rows.begin() + keep, rows.end(), by_popularity);
  RetrievalResult out;
  out.scanned_count = static_cast<std::int64_t>(rows.size());
  for (std::size_t i = 0; i < keep; ++i) {
    out.items.push_back({index.item_ids[rows[i]],
                         static_cast<float>(index.popularity[rows[i]]), true});
  }
  return out;
}

RetrievalResult popularity_index_retrieve(const Dataset& dataset, TopicId topic,
                                          std::int32_t k) {
  return popularity_index_retrieve(
      make_index(Matrix<float>(dataset.num_items(), 0), dataset), topic, k);
}

RetrievalResult retrieve(const ItemIndex& index, const RetrievalQuery& q) {
  const std::int32_t beam =
      q.beam_width > 0 ? q.beam_width : index.ann_config.query_beam_width;
  switch (q.filter_mode) {
    case FilterMode::kNone:
      if (index.graph) {
        return ann_search(index, q.user_embedding, q.k, std::max(beam, q.k),
                          q.condition);
      }
      return exact_topk(index, q.user_embedding, q.k, {}, q.condition);
    case FilterMode::kStreaming:
      check(q.condition.has_value(), ErrorKind::kInvalidArgument,
            "streaming filter needs a condition");
      return streaming_filtered_search(index, q.user_embedding, *q.condition, q.k,
                                       q.batch_size, q.budget, beam);
    case FilterMode::kPostfilter:
      check(q.condition.has_value(), ErrorKind::kInvalidArgument,
            "post-filter needs a condition");
      return postfilter_oracle(index, q.user_embedding, *q.condition, q.k,
                               q.overfetch_factor);
  }
  fail(ErrorKind::kInvalidArgument, "unknown filter mode");
}

std::string serialize_index(const ItemIndex& index) {
  nlohmann::json header;
  header["count"] = index.size();
  header["dim"] = index.dim();
  header["topic_count"] = index.topic_count;
  header["ann"] = index.ann_config;
  header["has_graph"] = index.graph.has_value();
  ByteWriter w;
  w.put_raw(kIndexMagic);
  w.put_string(header.dump());
  w.put_array(index.item_ids);
  w.put_array(index.embeddings.data);
  for (const auto& t : index.topics) w.put_array(t);
  w.put_array(index.popularity);
  if (index.graph) write_graph(w, *index.graph);
  return w.bytes();
}

ItemIndex parse_index(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_raw(kIndexMagic);
  ItemIndex index;
  std::size_t count = 0;
  std::size_t dim = 0;
  bool has_graph = false;
  try {
    const auto header = nlohmann::json::parse(r.get_string());
    count = header.at("count").get<std::size_t>();
    dim = header.at("dim").get<std::size_t>();
    index.topic_count = header.at("topic_count").get<std::int32_t>();
    index.ann_config = header.at("ann").get<AnnConfig>();
    has_graph = header.at("has_graph").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, fmt::format("index header: {}", e.what()));
  }
  index.item_ids = r.get_array<ItemId>();
  check(index.item_ids.size() == count, ErrorKind::kParse, "item id count mismatch");
  index.embeddings.rows = count;
  index.embeddings.cols = dim;
  index.embeddings.data = r.get_array<float>();
  check(index.embeddings.data.size() == count * dim, ErrorKind::kParse,
        "embedding payload size mismatch");
  index.topics.resize(count);
  for (auto& t : index.topics) {
    t = r.get_array<TopicId>();
    for (TopicId x : t) {
      check(x >= 0 && x < index.topic_count, ErrorKind::kParse, "topic out of range");
    }
  }
  index.popularity = r.get_array<std::int64_t>();
  check(index.popularity.size() == count, ErrorKind::kParse, "popularity count mismatch");
  if (has_graph) index.graph = read_graph(r, count);
  check(r.at_end(), ErrorKind::kParse, "trailing bytes after index payload");
  return index;
}

void save_index(const ItemIndex& index, const std::string& path) {
  write_file_atomic(path, serialize_index(index));
}

ItemIndex load_index(const std::string& path) { return parse_index(read_file(path)); }

}  // namespace condret
