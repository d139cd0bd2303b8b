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
#include "condret/eval.h"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "condret/condition.h"
#include "condret/error.h"
#include "condret/random.h"

namespace condret {
namespace {

constexpr std::uint64_t kQueryStream = 0xe7a1;

struct Accumulator {
  std::size_t returned = 0;
  std::size_t matched = 0;
  double recall_sum = 0.0;
  std::size_t recall_queries = 0;
  double scanned_sum = 0.0;
  std::size_t queries = 0;
  std::size_t truncated = 0;

  void add(const RetrievalResult& r, std::span<const ItemId> heldout,
           std::int32_t k) {
    returned += r.items.size();
    matched += r.matched_count();
    scanned_sum += static_cast<double>(r.scanned_count);
    truncated += r.truncated ? 1 : 0;
    ++queries;
    if (auto rec = recall_at_k(r, heldout, k)) {
      recall_sum += *rec;
      ++recall_queries;
    }
  }

  EvalRow finish(Method method, std::optional<FilterMode> mode) const {
    if (returned == 0) {
      fail(ErrorKind::kUndefinedMetric,
           fmt::format("{} returned no items over {} queries",
                       EvalRow{method, mode}.label(), queries));
    }
    EvalRow row;
    row.method = method;
    row.mode = mode;
    row.topic_match_rate = static_cast<double>(matched) / returned;
    row.recall = recall_queries ? recall_sum / recall_queries : 0.0;
    row.mean_scanned = queries ? scanned_sum / queries : 0.0;
    row.mean_result_size = queries ? static_cast<double>(returned) / queries : 0.0;
    row.queries = queries;
    row.truncated = truncated;
    return row;
  }
};

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kIndex: return "INDEX";
    case Method::kLR: return "LR";
    case Method::kCR: return "CR";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "INDEX" || s == "index") return Method::kIndex;
  if (s == "LR" || s == "lr") return Method::kLR;
  if (s == "CR" || s == "cr") return Method::kCR;
  fail(ErrorKind::kInvalidArgument, fmt::format("unknown method '{}'", s));
}

double topic_match_rate(std::span<const RetrievalResult> results) {
  std::size_t returned = 0;
  std::size_t matched = 0;
  for (const auto& r : results) {
    returned += r.items.size();
    matched += r.matched_count();
  }
  check(returned > 0, ErrorKind::kUndefinedMetric,
        "topic match rate is undefined when no items were returned");
  return static_cast<double>(matched) / static_cast<double>(returned);
}

std::optional<double> recall_at_k(const RetrievalResult& result,
                                  std::span<const ItemId> heldout, std::int32_t k) {
  const std::set<ItemId> truth(heldout.begin(), heldout.end());
  if (truth.empty()) return std::nullopt;
  std::set<ItemId> seen;
  std::size_t hits = 0;
  for (const auto& it : result.items) {
    if (truth.count(it.item_id) && seen.insert(it.item_id).second) ++hits;
  }
  return static_cast<double>(hits) /
         static_cast<double>(std::min<std::size_t>(k, truth.size()));
}

std::vector<EvalQuery> make_eval_queries(const Dataset& dataset,
                                         std::uint64_t seed,
                                         std::int32_t max_queries) {
  Rng rng(derive_seed(seed, {kQueryStream}));
  std::set<std::pair<UserId, TopicId>> seen;
  std::vector<EvalQuery> out;
  for (const auto& ev : dataset.engagements) {
    if (ev.split != Split::kHeldout) continue;
    const Item& item = dataset.items[ev.item_id];
    if (item.topics.empty()) continue;
    const auto c = extract_condition(item, dataset.topic_count, rng);
    if (seen.insert({ev.user_id, c.value()}).second) {
      out.push_back({ev.user_id, c.value()});
    }
  }
  if (max_queries > 0 && out.size() > static_cast<std::size_t>(max_queries)) {
    shuffle(out, rng);
    out.resize(max_queries);
    std::sort(out.begin(), out.end(), [](const EvalQuery& a, const EvalQuery& b) {
      return std::pair(a.user, a.topic) < std::pair(b.user, b.topic);
    });
  }
  return out;
}

std::string EvalRow::label() const {
  return fmt::format("{}/{}", to_string(method), mode ? to_string(*mode) : "-");
}

const EvalRow* EvalReport::find(Method method, std::optional<FilterMode> mode) const {
  for (const auto& r : rows) {
    if (r.method == method && r.mode == mode) return &r;
  }
  return nullptr;
}

std::string EvalReport::to_tsv() const {
  std::string out = fmt::format(
      "# engagement proxy: recall@{} on heldout events (no online CTR/WAU); "
      "queries={}\n",
      config.k, num_queries);
  out += "method\tfilter\ttopic_match_rate\trecall_at_k\tmean_scanned\t"
         "mean_result_size\tqueries\ttruncated\n";
  for (const auto& r : rows) {
    out += fmt::format("{}\t{}\t{:.6f}\t{:.6f}\t{:.3f}\t{:.3f}\t{}\t{}\n",
                       to_string(r.method), r.mode ? to_string(*r.mode) : "-",
                       r.topic_match_rate, r.recall, r.mean_scanned,
                       r.mean_result_size, r.queries, r.truncated);
  }
  return out;
}

std::string EvalReport::to_table() const {
  std::string out = fmt::format("{:<8}{:<12}{:>12}{:>12}{:>14}{:>12}\n", "method",
                                "filter", "match_rate",
                                fmt::format("recall@{}", config.k), "mean_scanned",
                                "mean_size");
  for (const auto& r : rows) {
    out += fmt::format("{:<8}{:<12}{:>12.4f}{:>12.4f}{:>14.1f}{:>12.1f}\n",
                       to_string(r.method), r.mode ? to_string(*r.mode) : "-",
                       r.topic_match_rate, r.recall, r.mean_scanned,
                       r.mean_result_size);
  }
  return out;
}

RetrievalModel prepare_model(Checkpoint checkpoint, const Dataset& dataset,
                             const AnnConfig& ann) {
  RetrievalModel model;
  model.index = build_index(checkpoint, dataset);
  build_ann(model.index, ann);
  model.checkpoint = std::move(checkpoint);
  return model;
}

EvalReport run_experiment(const Dataset& dataset, const RetrievalModel* lr,
                          const RetrievalModel* cr, const EvalConfig& config) {
  check(config.k >= 1, ErrorKind::kInvalidConfig, "k must be >= 1");
  check(!config.methods.empty(), ErrorKind::kInvalidConfig, "no methods requested");
  for (Method m : config.methods) {
    check(m != Method::kLR || lr, ErrorKind::kInvalidConfig,
          "LR requested but no LR checkpoint given");
    check(m != Method::kCR || cr, ErrorKind::kInvalidConfig,
          "CR requested but no CR checkpoint given");
  }
  for (Method m : config.methods) {
    if (m != Method::kIndex) {
      check(!config.modes.empty(), ErrorKind::kInvalidConfig,
            "learned methods need at least one filter mode");
    }
  }

  const auto queries = make_eval_queries(dataset, config.seed, config.max_queries);
  std::vector<std::vector<ItemId>> heldout(dataset.num_users());
  for (const auto& ev : dataset.engagements) {
    if (ev.split == Split::kHeldout) heldout[ev.user_id].push_back(ev.item_id);
  }
  for (auto& h : heldout) {
    std::sort(h.begin(), h.end());
    h.erase(std::unique(h.begin(), h.end()), h.end());
  }

  EvalReport report;
  report.config = config;
  report.num_queries = queries.size();
  for (Method method : config.methods) {
    if (method == Method::kIndex) {
      const ItemIndex index = make_index(Matrix<float>(dataset.num_items(), 0), dataset);
      Accumulator acc;
      for (const auto& q : queries) {
        acc.add(popularity_index_retrieve(index, q.topic, config.k),
                heldout[q.user], config.k);
      }
      report.rows.push_back(acc.finish(method, std::nullopt));
      continue;
    }
    const RetrievalModel& model = method == Method::kLR ? *lr : *cr;
    const std::int32_t beam =
        config.beam_width > 0
            ? config.beam_width
            : std::max(model.index.ann_config.query_beam_width, config.k);
    const std::int64_t budget =
        config.budget > 0 ? config.budget : static_cast<std::int64_t>(model.index.size());
    for (FilterMode mode : config.modes) {
      Accumulator acc;
      for (const auto& q : queries) {
        RetrievalQuery rq;
        rq.user_embedding =
            user_embedding(model.checkpoint.params, model.checkpoint.config,
                           dataset.users[q.user].feature_id, Condition::topic(q.topic));
        rq.condition = q.topic;
        rq.k = config.k;
        rq.filter_mode = mode;
        rq.budget = std::max<std::int64_t>(budget, config.k);
        rq.batch_size = config.stream_batch_size;
        rq.beam_width = beam;
        rq.overfetch_factor = config.overfetch_factor;
        acc.add(retrieve(model.index, rq), heldout[q.user], config.k);
      }
      report.rows.push_back(acc.finish(method, mode));
    }
  }
  return report;
}

}  // namespace condret
