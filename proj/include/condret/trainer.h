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
#include <span>
#include <string_view>
#include <vector>

#include "condret/condition.h"
#include "condret/dataset.h"
#include "condret/matrix.h"
#include "condret/random.h"
#include "condret/tower.h"

namespace condret {

enum class OptimizerKind { kSgd, kAdam };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  std::int32_t batch_size = 256;
  std::int32_t epochs = 10;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool logq_correction = false;
  // Same-condition negatives appended per row (0 disables).
  std::int32_t hard_negatives = 0;
  // Weight of the squared distance between the conditional user embedding
  // and its condition embedding row (0 disables).
  double alignment_weight = 0.0;
  bool resample_per_epoch = true;
  std::uint64_t seed = 1;
};

/// Throws kInvalidConfig. Alignment needs a conditional tower whose
/// condition embedding width equals the output width.
void validate(const TrainConfig& train, const TowerConfig& tower);

template <typename T>
struct SoftmaxLoss {
  double loss = 0.0;
  Matrix<T> grad_users;
  Matrix<T> grad_items;
  Matrix<T> grad_extra;
};

/// Softmax cross-entropy where row i's positive is item i, the other batch
/// items are shared negatives and `per_row` extra items (rows
/// i*per_row .. i*per_row+per_row-1 of `extra_items`) are private to row i.
/// Logit = user . item - correction. Loss is the mean over rows; gradients
/// are exact. Throws kNumerical naming the first non-finite logit.
template <typename T>
SoftmaxLoss<T> sampled_softmax_loss(const Matrix<T>& users,
                                    const Matrix<T>& items,
                                    std::span<const double> item_corrections,
                                    const Matrix<T>& extra_items,
                                    std::span<const double> extra_corrections,
                                    std::size_t per_row);

/// In-batch negatives only. Empty `corrections` means no correction.
template <typename T>
SoftmaxLoss<T> inbatch_softmax_loss(const Matrix<T>& users,
                                    const Matrix<T>& items,
                                    std::span<const double> corrections = {});

/// log((count + 1) / (total_train_events + num_items)) for each batch item.
std::vector<double> logq_corrections(std::span<const std::int64_t> popularity,
                                     std::span<const ItemId> batch_items);

/// Draws negatives that share a row's condition topic.
class HardNegativeSampler {
 public:
  explicit HardNegativeSampler(const Dataset& dataset);

  /// `per_row` items for each (positive, condition) row, uniform with
  /// replacement over the topic's items minus the positive. Null conditions
  /// and exhausted topics fall back to corpus-uniform draws.
  std::vector<ItemId> sample(std::span<const ItemId> positives,
                             std::span<const Condition> conditions,
                             std::size_t per_row, Rng& rng) const;

 private:
  ItemId corpus_draw(ItemId positive, Rng& rng) const;

  std::int32_t topic_count_;
  std::size_t num_items_;
  std::vector<std::vector<ItemId>> by_topic_;
};

std::vector<ItemId> sample_hard_negatives(const Batch& batch,
                                          std::span<const Condition> conditions,
                                          const Dataset& dataset,
                                          std::size_t per_row, Rng& rng);

template <typename T>
struct AlignmentLoss {
  double loss = 0.0;
  Matrix<T> grad_users;
  Matrix<T> grad_conditions;
};

/// weight * mean_i ||users_i - conditions_i||^2 with exact gradients.
template <typename T>
AlignmentLoss<T> alignment_loss(const Matrix<T>& users,
                                const Matrix<T>& conditions, double weight);

/// Everything a training step consumes besides the parameters.
struct BatchInputs {
  std::vector<std::int32_t> users;
  std::vector<std::int32_t> items;
  std::vector<Condition> conditions;
  std::vector<std::int32_t> hard_items;  // users.size() * hard_per_row
  std::size_t hard_per_row = 0;
  std::vector<double> item_corrections;  // empty when logQ is off
  std::vector<double> hard_corrections;
  double alignment_weight = 0.0;
};

template <typename T>
struct StepResult {
  double loss = 0.0;
  double softmax_loss = 0.0;
  double alignment_loss = 0.0;
  TowerGrads<T> grads;
  // Sign pattern of every hidden pre-activation, for kink detection.
  std::vector<std::uint8_t> relu_pattern;
};

/// Forward both towers, assemble the loss and backpropagate.
template <typename T>
StepResult<T> compute_step(const TowerParams<T>& params, const TowerConfig& config,
                           const BatchInputs& inputs, bool with_grads);

/// Adam keeps dense moments for every tensor but only updates embedding rows
/// present in the gradient (lazy Adam); dense layers update fully.
class Optimizer {
 public:
  Optimizer(const TowerConfig& tower, const TrainConfig& train);
  void step(ModelParams& params, const TowerGrads<float>& grads);

 private:
  TrainConfig config_;
  std::int64_t t_ = 0;
  ModelParams m_;
  ModelParams v_;
};

struct TrainReport {
  std::vector<double> epoch_mean_loss;
  std::vector<double> batch_loss;
  Checkpoint checkpoint;
  double wall_seconds = 0.0;
};

TrainReport train(const Dataset& dataset, const TowerConfig& tower,
                  const TrainConfig& config);

/// Tower config sized to a dataset's vocabularies.
TowerConfig fit_to(TowerConfig tower, const Dataset& dataset);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
  std::size_t kink_skips = 0;
};

/// Compares the analytic gradient of the full training loss (softmax with
/// the configured extras) against central differences on `probe_count`
/// randomly chosen parameters, in double precision. Relu probes whose
/// perturbation flips any hidden unit are redrawn.
GradCheckResult grad_check(const TowerConfig& tower, const TrainConfig& train,
                           std::size_t probe_count, double epsilon = 1e-3);

}  // namespace condret
