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
#include "condret/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "condret/error.h"

namespace condret {
namespace {

enum StreamTag : std::uint64_t {
  kInitStream = 11,
  kBatchStream = 12,
  kHardNegativeStream = 13,
  kConditionSeed = 14,
  kGradCheckStream = 15,
};

template <typename T>
double dot(std::span<const T> a, std::span<const T> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

template <typename T>
void axpy(double alpha, std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += static_cast<T>(alpha * x[i]);
}

}  // namespace

std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  fail(ErrorKind::kInvalidConfig, fmt::format("unknown optimizer '{}'", s));
}

void validate(const TrainConfig& c, const TowerConfig& tower) {
  check(c.batch_size >= 2, ErrorKind::kInvalidConfig,
        "batch_size must be >= 2 for in-batch negatives");
  check(c.epochs >= 0, ErrorKind::kInvalidConfig, "epochs must be nonnegative");
  check(std::isfinite(c.learning_rate) && c.learning_rate >= 0.0,
        ErrorKind::kInvalidConfig, "learning_rate must be finite and >= 0");
  check(c.hard_negatives >= 0, ErrorKind::kInvalidConfig,
        "hard_negatives must be >= 0");
  check(std::isfinite(c.alignment_weight) && c.alignment_weight >= 0.0,
        ErrorKind::kInvalidConfig, "alignment_weight must be finite and >= 0");
  check(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0 && c.adam_beta2 >= 0.0 &&
            c.adam_beta2 < 1.0 && c.adam_epsilon > 0.0,
        ErrorKind::kInvalidConfig, "adam hyperparameters out of range");
  if (c.alignment_weight > 0.0) {
    check(tower.conditional, ErrorKind::kInvalidConfig,
          "alignment loss requires a conditional user tower");
    check(tower.embed_dim_condition == tower.output_dim, ErrorKind::kInvalidConfig,
          fmt::format("alignment loss requires embed_dim_condition ({}) == "
                      "output_dim ({})",
                      tower.embed_dim_condition, tower.output_dim));
  }
}

template <typename T>
SoftmaxLoss<T> sampled_softmax_loss(const Matrix<T>& users,
                                    const Matrix<T>& items,
                                    std::span<const double> item_corrections,
                                    const Matrix<T>& extra_items,
                                    std::span<const double> extra_corrections,
                                    std::size_t per_row) {
  const std::size_t batch = users.rows;
  check(batch >= 1, ErrorKind::kDimensionMismatch, "empty batch");
  check(items.rows == batch && items.cols == users.cols,
        ErrorKind::kDimensionMismatch,
        fmt::format("users are {}x{} but items are {}x{}", users.rows, users.cols,
                    items.rows, items.cols));
  check(item_corrections.empty() || item_corrections.size() == batch,
        ErrorKind::kDimensionMismatch, "one correction per batch item required");
  if (per_row > 0) {
    check(extra_items.rows == batch * per_row && extra_items.cols == users.cols,
          ErrorKind::kDimensionMismatch, "extra items must be batch*per_row rows");
    check(extra_corrections.empty() || extra_corrections.size() == extra_items.rows,
          ErrorKind::kDimensionMismatch, "one correction per extra item required");
  }

  SoftmaxLoss<T> out;
  out.grad_users = Matrix<T>(batch, users.cols);
  out.grad_items = Matrix<T>(batch, users.cols);
  out.grad_extra = Matrix<T>(batch * per_row, users.cols);

  const std::size_t width = batch + per_row;
  std::vector<double> logits(width);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto u = users.row(i);
    for (std::size_t j = 0; j < batch; ++j) {
      logits[j] = dot<T>(u, items.row(j)) -
                  (item_corrections.empty() ? 0.0 : item_corrections[j]);
    }
    for (std::size_t h = 0; h < per_row; ++h) {
      const std::size_t e = i * per_row + h;
      logits[batch + h] = dot<T>(u, extra_items.row(e)) -
                          (extra_corrections.empty() ? 0.0 : extra_corrections[e]);
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j) {
      if (!std::isfinite(logits[j])) {
        fail(ErrorKind::kNumerical,
             fmt::format("non-finite logit at row {}, column {}", i, j));
      }
      max_logit = std::max(max_logit, logits[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      logits[j] = std::exp(logits[j] - max_logit);
      sum += logits[j];
    }
    // logits now hold unnormalized probabilities.
    total += std::log(sum) - std::log(logits[i]);

    auto gu = out.grad_users.row(i);
    for (std::size_t j = 0; j < width; ++j) {
      const double g = (logits[j] / sum - (j == i ? 1.0 : 0.0)) * inv_batch;
      if (g == 0.0) continue;
      if (j < batch) {
        axpy<T>(g, items.row(j), gu);
        axpy<T>(g, u, out.grad_items.row(j));
      } else {
        const std::size_t e = i * per_row + (j - batch);
        axpy<T>(g, extra_items.row(e), gu);
        axpy<T>(g, u, out.grad_extra.row(e));
      }
    }
  }
  out.loss = total * inv_batch;
  return out;
}

template <typename T>
SoftmaxLoss<T> inbatch_softmax_loss(const Matrix<T>& users,
                                    const Matrix<T>& items,
                                    std::span<const double> corrections) {
  return sampled_softmax_loss<T>(users, items, corrections, Matrix<T>(), {}, 0);
}

std::vector<double> logq_corrections(std::span<const std::int64_t> popularity,
                                     std::span<const ItemId> batch_items) {
  const double total =
      static_cast<double>(std::accumulate(popularity.begin(), popularity.end(),
                                          std::int64_t{0})) +
      static_cast<double>(popularity.size());
  std::vector<double> out;
  out.reserve(batch_items.size());
  for (ItemId item : batch_items) {
    check(item >= 0 && static_cast<std::size_t>(item) < popularity.size(),
          ErrorKind::kIndexOutOfRange, fmt::format("item {} has no popularity", item));
    out.push_back(std::log((static_cast<double>(popularity[item]) + 1.0) / total));
  }
  return out;
}

HardNegativeSampler::HardNegativeSampler(const Dataset& dataset)
    : topic_count_(dataset.topic_count),
      num_items_(dataset.num_items()),
      by_topic_(items_by_topic(dataset)) {}

ItemId HardNegativeSampler::corpus_draw(ItemId positive, Rng& rng) const {
  if (num_items_ == 1) return positive;
  // Uniform over the corpus minus the positive.
  auto pick = static_cast<ItemId>(uniform_index(rng, num_items_ - 1));
  return pick >= positive ? pick + 1 : pick;
}

std::vector<ItemId> HardNegativeSampler::sample(
    std::span<const ItemId> positives, std::span<const Condition> conditions,
    std::size_t per_row, Rng& rng) const {
  check(positives.size() == conditions.size(), ErrorKind::kDimensionMismatch,
        "one condition per positive required");
  std::vector<ItemId> out;
  out.reserve(positives.size() * per_row);
  for (std::size_t r = 0; r < positives.size(); ++r) {
    const ItemId pos = positives[r];
    const Condition c = conditions[r];
    const std::vector<ItemId>* pool =
        c.is_null(topic_count_) ? nullptr : &by_topic_[c.value()];
    // Items other than the positive in the pool.
    const bool pos_in_pool =
        pool && std::binary_search(pool->begin(), pool->end(), pos);
    const std::size_t available = pool ? pool->size() - (pos_in_pool ? 1 : 0) : 0;
    for (std::size_t h = 0; h < per_row; ++h) {
      if (available == 0) {
        out.push_back(corpus_draw(pos, rng));
        continue;
      }
      auto k = static_cast<std::size_t>(uniform_index(rng, available));
      if (pos_in_pool) {
        const auto pos_at = static_cast<std::size_t>(
            std::lower_bound(pool->begin(), pool->end(), pos) - pool->begin());
        if (k >= pos_at) ++k;
      }
      out.push_back((*pool)[k]);
    }
  }
  return out;
}

std::vector<ItemId> sample_hard_negatives(const Batch& batch,
                                          std::span<const Condition> conditions,
                                          const Dataset& dataset,
                                          std::size_t per_row, Rng& rng) {
  std::vector<ItemId> positives;
  for (const auto& p : batch) positives.push_back(p.item_id);
  return HardNegativeSampler(dataset).sample(positives, conditions, per_row, rng);
}

template <typename T>
AlignmentLoss<T> alignment_loss(const Matrix<T>& users,
                                const Matrix<T>& conditions, double weight) {
  check(users.rows == conditions.rows && users.cols == conditions.cols,
        ErrorKind::kDimensionMismatch,
        fmt::format("alignment needs equal shapes, got {}x{} and {}x{}",
                    users.rows, users.cols, conditions.rows, conditions.cols));
  AlignmentLoss<T> out;
  out.grad_users = Matrix<T>(users.rows, users.cols);
  out.grad_conditions = Matrix<T>(users.rows, users.cols);
  if (weight == 0.0 || users.rows == 0) return out;
  const double scale = weight / static_cast<double>(users.rows);
  double total = 0.0;
  for (std::size_t k = 0; k < users.data.size(); ++k) {
    const double diff = static_cast<double>(users.data[k]) - conditions.data[k];
    total += diff * diff;
    out.grad_users.data[k] = static_cast<T>(2.0 * scale * diff);
    out.grad_conditions.data[k] = static_cast<T>(-2.0 * scale * diff);
  }
  out.loss = scale * total;
  return out;
}

template <typename T>
StepResult<T> compute_step(const TowerParams<T>& params, const TowerConfig& config,
                           const BatchInputs& in, bool with_grads) {
  const std::size_t batch = in.users.size();
  check(in.items.size() == batch, ErrorKind::kDimensionMismatch,
        "one item per user required");
  check(in.hard_items.size() == batch * in.hard_per_row,
        ErrorKind::kDimensionMismatch, "hard_items must be batch*hard_per_row");

  StepResult<T> out;
  const auto user_trace =
      user_tower_forward<T>(params, config, in.users, in.conditions);
  std::vector<std::int32_t> all_items = in.items;
  all_items.insert(all_items.end(), in.hard_items.begin(), in.hard_items.end());
  const auto item_trace = item_tower_forward<T>(params, config, all_items);

  const std::size_t d = config.output_dim;
  const auto& item_out = item_trace.output();
  Matrix<T> positives(batch, d);
  Matrix<T> extras(in.hard_items.size(), d);
  std::copy(item_out.data.begin(), item_out.data.begin() + batch * d,
            positives.data.begin());
  std::copy(item_out.data.begin() + batch * d, item_out.data.end(),
            extras.data.begin());

  auto sm = sampled_softmax_loss<T>(user_trace.output(), positives,
                                    in.item_corrections, extras,
                                    in.hard_corrections, in.hard_per_row);
  out.softmax_loss = sm.loss;

  Matrix<T> grad_user_out = std::move(sm.grad_users);
  Matrix<T> grad_cond_rows;
  if (in.alignment_weight > 0.0) {
    Matrix<T> cond_rows(batch, config.embed_dim_condition);
    for (std::size_t r = 0; r < batch; ++r) {
      const auto row = params.condition_table.row(user_trace.conditions[r]);
      std::copy(row.begin(), row.end(), cond_rows.row(r).begin());
    }
    auto al = alignment_loss<T>(user_trace.output(), cond_rows, in.alignment_weight);
    out.alignment_loss = al.loss;
    for (std::size_t k = 0; k < grad_user_out.data.size(); ++k) {
      grad_user_out.data[k] += al.grad_users.data[k];
    }
    grad_cond_rows = std::move(al.grad_conditions);
  }
  out.loss = out.softmax_loss + out.alignment_loss;

  if (config.activation == Activation::kRelu) {
    for (const auto* trace : {&user_trace, &item_trace}) {
      for (std::size_t l = 0; l + 1 < trace->pre.size(); ++l) {
        for (T v : trace->pre[l].data) out.relu_pattern.push_back(v > T(0));
      }
    }
  }

  if (!with_grads) return out;
  out.grads = zero_grads<T>(config);
  tower_backward<T>(params, config, user_trace, grad_user_out, out.grads);
  Matrix<T> grad_item_out(all_items.size(), d);
  std::copy(sm.grad_items.data.begin(), sm.grad_items.data.end(),
            grad_item_out.data.begin());
  std::copy(sm.grad_extra.data.begin(), sm.grad_extra.data.end(),
            grad_item_out.data.begin() + batch * d);
  tower_backward<T>(params, config, item_trace, grad_item_out, out.grads);
  if (grad_cond_rows.rows > 0) {
    for (std::size_t r = 0; r < batch; ++r) {
      auto g = out.grads.condition_table.row(user_trace.conditions[r]);
      const auto src = grad_cond_rows.row(r);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
    }
  }
  return out;
}

Optimizer::Optimizer(const TowerConfig& tower, const TrainConfig& train)
    : config_(train) {
  if (config_.optimizer == OptimizerKind::kAdam) {
    m_ = zero_params(tower);
    v_ = zero_params(tower);
  }
}

void Optimizer::step(ModelParams& params, const TowerGrads<float>& grads) {
  ++t_;
  const double lr = config_.learning_rate;
  const bool adam = config_.optimizer == OptimizerKind::kAdam;
  const double b1 = config_.adam_beta1;
  const double b2 = config_.adam_beta2;
  const double eps = config_.adam_epsilon;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));

  auto update = [&](std::span<float> p, std::span<const float> g,
                    std::span<float> m, std::span<float> v) {
    if (!adam) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = static_cast<float>(p[i] - lr * g[i]);
      }
      return;
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double mi = b1 * m[i] + (1.0 - b1) * g[i];
      const double vi = b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i];
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  };

  auto sparse = [&](Matrix<float>& table, const SparseRowGrad<float>& g,
                    Matrix<float>& m, Matrix<float>& v) {
    const auto& rows = g.touched_rows();
    for (std::size_t s = 0; s < rows.size(); ++s) {
      const auto r = static_cast<std::size_t>(rows[s]);
      update(table.row(r), g.values_at(s), adam ? m.row(r) : std::span<float>(),
             adam ? v.row(r) : std::span<float>());
    }
  };
  sparse(params.user_table, grads.user_table, m_.user_table, v_.user_table);
  sparse(params.item_table, grads.item_table, m_.item_table, v_.item_table);
  sparse(params.condition_table, grads.condition_table, m_.condition_table,
         v_.condition_table);

  auto dense = [&](std::vector<DenseLayer<float>>& layers,
                   const std::vector<DenseLayer<float>>& g,
                   std::vector<DenseLayer<float>>& m,
                   std::vector<DenseLayer<float>>& v) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].weight.data, g[l].weight.data,
             adam ? std::span<float>(m[l].weight.data) : std::span<float>(),
             adam ? std::span<float>(v[l].weight.data) : std::span<float>());
      update(layers[l].bias, g[l].bias,
             adam ? std::span<float>(m[l].bias) : std::span<float>(),
             adam ? std::span<float>(v[l].bias) : std::span<float>());
    }
  };
  dense(params.user_layers, grads.user_layers, m_.user_layers, v_.user_layers);
  dense(params.item_layers, grads.item_layers, m_.item_layers, v_.item_layers);
}

TowerConfig fit_to(TowerConfig tower, const Dataset& dataset) {
  tower.num_users = static_cast<std::int32_t>(dataset.num_users());
  tower.num_items = static_cast<std::int32_t>(dataset.num_items());
  tower.num_topics = dataset.topic_count;
  return tower;
}

TrainReport train(const Dataset& dataset, const TowerConfig& tower,
                  const TrainConfig& config) {
  validate(tower);
  validate(config, tower);
  check(tower.num_users == static_cast<std::int32_t>(dataset.num_users()) &&
            tower.num_items == static_cast<std::int32_t>(dataset.num_items()) &&
            tower.num_topics == dataset.topic_count,
        ErrorKind::kInvalidConfig, "tower vocabulary does not match the dataset");
  const auto start = std::chrono::steady_clock::now();

  const auto pairs = train_pairs(dataset);
  check(pairs.size() >= static_cast<std::size_t>(config.batch_size),
        ErrorKind::kInvalidConfig,
        fmt::format("dataset has {} train events, fewer than batch_size {}",
                    pairs.size(), config.batch_size));
  const auto popularity = item_popularity(dataset);
  ConditionSampler conditions(dataset, pairs, config.resample_per_epoch,
                              derive_seed(config.seed, {kConditionSeed}));
  const HardNegativeSampler hard_sampler(dataset);

  TrainReport report;
  report.checkpoint.config = tower;
  report.checkpoint.seed = config.seed;
  ModelParams& params = report.checkpoint.params;
  params = init_params(tower, derive_seed(config.seed, {kInitStream}));
  Optimizer optimizer(tower, config);

  for (std::int32_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto& epoch_conditions = conditions.for_epoch(epoch);
    const auto batches = make_batches(
        pairs, config.batch_size,
        derive_seed(config.seed, {kBatchStream, static_cast<std::uint64_t>(epoch)}));
    Rng hard_rng(derive_seed(config.seed, {kHardNegativeStream,
                                           static_cast<std::uint64_t>(epoch)}));
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      BatchInputs in;
      in.alignment_weight = config.alignment_weight;
      for (const auto& p : batches[b]) {
        in.users.push_back(dataset.users[p.user_id].feature_id);
        in.items.push_back(dataset.items[p.item_id].feature_id);
        in.conditions.push_back(epoch_conditions[p.train_index]);
      }
      std::vector<ItemId> positives;
      for (const auto& p : batches[b]) positives.push_back(p.item_id);
      if (config.hard_negatives > 0) {
        in.hard_per_row = config.hard_negatives;
        const auto hard =
            hard_sampler.sample(positives, in.conditions, in.hard_per_row, hard_rng);
        for (ItemId h : hard) in.hard_items.push_back(dataset.items[h].feature_id);
        if (config.logq_correction) in.hard_corrections = logq_corrections(popularity, hard);
      }
      if (config.logq_correction) in.item_corrections = logq_corrections(popularity, positives);

      StepResult<float> step;
      try {
        step = compute_step<float>(params, tower, in, true);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNumerical) throw;
        fail(ErrorKind::kNumerical,
             fmt::format("diverged at epoch {} batch {}: {}", epoch, b, e.what()));
      }
      if (!std::isfinite(step.loss)) {
        fail(ErrorKind::kNumerical,
             fmt::format("non-finite loss at epoch {} batch {}", epoch, b));
      }
      optimizer.step(params, step.grads);
      report.batch_loss.push_back(step.loss);
      epoch_total += step.loss;
    }
    const double mean = batches.empty() ? 0.0 : epoch_total / batches.size();
    report.epoch_mean_loss.push_back(mean);
    spdlog::debug("epoch {} mean loss {:.6f} ({} batches)", epoch, mean,
                  batches.size());
  }
  report.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  return report;
}

GradCheckResult grad_check(const TowerConfig& tower_in, const TrainConfig& train_cfg,
                           std::size_t probe_count, double epsilon) {
  validate(tower_in);
  validate(train_cfg, tower_in);
  const TowerConfig& tower = tower_in;
  Rng rng(derive_seed(train_cfg.seed, {kGradCheckStream}));

  GenConfig gen;
  gen.num_users = tower.num_users;
  gen.num_items = tower.num_items;
  gen.num_topics = tower.num_topics;
  gen.min_topics_per_item = std::min(1, tower.num_topics);
  gen.max_topics_per_item = std::min(3, tower.num_topics);
  gen.events_per_user = train_cfg.batch_size / tower.num_users + 2;
  gen.heldout_fraction = 0.0;
  gen.seed = train_cfg.seed;
  const Dataset dataset = generate_synthetic(gen);
  const auto pairs = train_pairs(dataset);
  const auto batch = make_batches(pairs, train_cfg.batch_size, rng()).front();

  BatchInputs in;
  in.alignment_weight = train_cfg.alignment_weight;
  std::vector<ItemId> positives;
  for (const auto& p : batch) {
    in.users.push_back(p.user_id);
    in.items.push_back(p.item_id);
    positives.push_back(p.item_id);
    in.conditions.push_back(
        extract_condition(dataset.items[p.item_id], dataset.topic_count, rng));
  }
  const auto popularity = item_popularity(dataset);
  if (train_cfg.hard_negatives > 0) {
    in.hard_per_row = train_cfg.hard_negatives;
    const auto hard = HardNegativeSampler(dataset).sample(positives, in.conditions,
                                                          in.hard_per_row, rng);
    in.hard_items.assign(hard.begin(), hard.end());
    if (train_cfg.logq_correction) in.hard_corrections = logq_corrections(popularity, hard);
  }
  if (train_cfg.logq_correction) in.item_corrections = logq_corrections(popularity, positives);

  // O(1)-scale parameters keep gradients well away from round-off.
  TowerParams<double> params = convert_params<double>(zero_params(tower));
  auto fill = [&](std::vector<double>& v, double scale) {
    for (auto& x : v) x = uniform_real(rng, -scale, scale);
  };
  fill(params.user_table.data, 1.0);
  fill(params.item_table.data, 1.0);
  fill(params.condition_table.data, 1.0);
  for (auto* layers : {&params.user_layers, &params.item_layers}) {
    for (auto& layer : *layers) {
      fill(layer.weight.data, 1.5 / std::sqrt(static_cast<double>(layer.weight.cols)));
      fill(layer.bias, 0.1);
    }
  }

  const auto base = compute_step<double>(params, tower, in, true);

  // Probe pool: every dense parameter plus every touched embedding entry.
  struct Probe {
    double* value;
    double analytic;
  };
  std::vector<Probe> pool;
  auto add_table = [&](Matrix<double>& table, const SparseRowGrad<double>& g) {
    for (std::size_t s = 0; s < g.touched_rows().size(); ++s) {
      auto row = table.row(g.touched_rows()[s]);
      const auto grad = g.values_at(s);
      for (std::size_t i = 0; i < row.size(); ++i) pool.push_back({&row[i], grad[i]});
    }
  };
  add_table(params.user_table, base.grads.user_table);
  add_table(params.item_table, base.grads.item_table);
  add_table(params.condition_table, base.grads.condition_table);
  auto add_layers = [&](std::vector<DenseLayer<double>>& layers,
                        const std::vector<DenseLayer<double>>& g) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t i = 0; i < layers[l].weight.data.size(); ++i) {
        pool.push_back({&layers[l].weight.data[i], g[l].weight.data[i]});
      }
      for (std::size_t i = 0; i < layers[l].bias.size(); ++i) {
        pool.push_back({&layers[l].bias[i], g[l].bias[i]});
      }
    }
  };
  add_layers(params.user_layers, base.grads.user_layers);
  add_layers(params.item_layers, base.grads.item_layers);

  GradCheckResult result;
  const std::size_t max_attempts = 50 * probe_count + 100;
  for (std::size_t attempt = 0;
       result.probes < probe_count && attempt < max_attempts; ++attempt) {
    const Probe& probe = pool[uniform_index(rng, pool.size())];
    const double saved = *probe.value;
    *probe.value = saved + epsilon;
    const auto plus = compute_step<double>(params, tower, in, false);
    *probe.value = saved - epsilon;
    const auto minus = compute_step<double>(params, tower, in, false);
    *probe.value = saved;
    if (plus.relu_pattern != base.relu_pattern ||
        minus.relu_pattern != base.relu_pattern) {
      ++result.kink_skips;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * epsilon);
    const double denom =
        std::max({std::abs(numeric), std::abs(probe.analytic), 1e-8});
    result.max_relative_error = std::max(
        result.max_relative_error, std::abs(numeric - probe.analytic) / denom);
    ++result.probes;
  }
  return result;
}

#define CONDRET_INSTANTIATE_TRAINER(T)                                          \
  template SoftmaxLoss<T> sampled_softmax_loss<T>(                              \
      const Matrix<T>&, const Matrix<T>&, std::span<const double>,              \
      const Matrix<T>&, std::span<const double>, std::size_t);                  \
  template SoftmaxLoss<T> inbatch_softmax_loss<T>(                              \
      const Matrix<T>&, const Matrix<T>&, std::span<const double>);             \
  template AlignmentLoss<T> alignment_loss<T>(const Matrix<T>&,                 \
                                              const Matrix<T>&, double);        \
  template StepResult<T> compute_step<T>(const TowerParams<T>&,                 \
                                         const TowerConfig&, const BatchInputs&, \
                                         bool);

CONDRET_INSTANTIATE_TRAINER(float)
CONDRET_INSTANTIATE_TRAINER(double)
#undef CONDRET_INSTANTIATE_TRAINER

}  // namespace condret
