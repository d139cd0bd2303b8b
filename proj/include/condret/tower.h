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

// Two-tower network: an ID embedding per tower followed by a stack of dense
// feature-crossing layers. The conditional variant concatenates a condition
// embedding to the user embedding before the first dense layer.
//
// Forward/backward are templates over the scalar type. Training and serving
// use float; gradient checking instantiates the identical code in double.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "condret/condition.h"
#include "condret/matrix.h"

namespace condret {

enum class Activation { kRelu, kTanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

struct TowerConfig {
  // Vocabulary sizes. The condition table has num_topics + 1 rows.
  std::int32_t num_users = 0;
  std::int32_t num_items = 0;
  std::int32_t num_topics = 0;

  std::int32_t embed_dim_user = 32;
  std::int32_t embed_dim_item = 32;
  std::int32_t embed_dim_condition = 32;
  std::vector<std::int32_t> hidden_sizes{64};
  std::int32_t output_dim = 32;
  Activation activation = Activation::kRelu;
  // false: plain two tower (LR). true: conditional user tower (CR).
  bool conditional = true;

  bool operator==(const TowerConfig&) const = default;
};

void validate(const TowerConfig& config);

/// Width of the user tower's first dense-layer input.
std::int32_t user_input_dim(const TowerConfig& config);

/// Total number of trainable scalars.
std::size_t param_count(const TowerConfig& config);

template <typename T>
struct DenseLayer {
  Matrix<T> weight;  // out x in
  std::vector<T> bias;

  bool operator==(const DenseLayer&) const = default;
};

template <typename T>
struct TowerParams {
  Matrix<T> user_table;       // num_users x embed_dim_user
  Matrix<T> item_table;       // num_items x embed_dim_item
  Matrix<T> condition_table;  // (num_topics + 1) x embed_dim_condition; empty for LR
  std::vector<DenseLayer<T>> user_layers;
  std::vector<DenseLayer<T>> item_layers;

  bool operator==(const TowerParams&) const = default;
};

using ModelParams = TowerParams<float>;

/// Embeddings uniform in [-0.05, 0.05]; dense weights uniform in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases zero.
ModelParams init_params(const TowerConfig& config, std::uint64_t seed);
ModelParams zero_params(const TowerConfig& config);

template <typename To, typename From>
TowerParams<To> convert_params(const TowerParams<From>& p);

/// Calls fn(std::span<T>) on every parameter tensor in a fixed order.
template <typename T, typename Fn>
void for_each_tensor(TowerParams<T>& p, Fn&& fn) {
  fn(std::span<T>(p.user_table.data));
  fn(std::span<T>(p.item_table.data));
  fn(std::span<T>(p.condition_table.data));
  for (auto* layers : {&p.user_layers, &p.item_layers}) {
    for (auto& layer : *layers) {
      fn(std::span<T>(layer.weight.data));
      fn(std::span<T>(layer.bias));
    }
  }
}

enum class TowerSide { kUser, kItem };

/// Activations kept by a forward pass for the matching backward pass.
template <typename T>
struct TowerTrace {
  TowerSide side = TowerSide::kUser;
  std::vector<std::int32_t> rows;        // embedding-table rows, one per example
  std::vector<std::int32_t> conditions;  // condition-table rows (CR user tower)
  Matrix<T> input;                       // concatenated embeddings
  std::vector<Matrix<T>> pre;            // per-layer pre-activation
  std::vector<Matrix<T>> post;           // per-layer output; post.back() is the embedding

  const Matrix<T>& output() const { return post.back(); }
};

/// Batched user tower. `conditions` is ignored when config.conditional is
/// false and may then be empty.
template <typename T>
TowerTrace<T> user_tower_forward(const TowerParams<T>& params,
                                 const TowerConfig& config,
                                 std::span<const std::int32_t> users,
                                 std::span<const Condition> conditions);

template <typename T>
TowerTrace<T> item_tower_forward(const TowerParams<T>& params,
                                 const TowerConfig& config,
                                 std::span<const std::int32_t> items);

/// Embedding-table gradient touching only referenced rows. Rows are kept in
/// first-touch order so accumulation order is deterministic.
template <typename T>
class SparseRowGrad {
 public:
  SparseRowGrad() = default;
  explicit SparseRowGrad(std::size_t cols) : cols_(cols) {}

  std::span<T> row(std::int32_t r);
  /// Empty span when the row was never touched.
  std::span<const T> find(std::int32_t r) const;

  std::size_t cols() const { return cols_; }
  const std::vector<std::int32_t>& touched_rows() const { return rows_; }
  std::span<const T> values_at(std::size_t slot) const {
    return {values_.data() + slot * cols_, cols_};
  }

 private:
  std::size_t cols_ = 0;
  std::vector<std::int32_t> rows_;
  std::vector<T> values_;
  std::unordered_map<std::int32_t, std::size_t> slot_;
};

template <typename T>
struct TowerGrads {
  SparseRowGrad<T> user_table;
  SparseRowGrad<T> item_table;
  SparseRowGrad<T> condition_table;
  std::vector<DenseLayer<T>> user_layers;
  std::vector<DenseLayer<T>> item_layers;
};

template <typename T>
TowerGrads<T> zero_grads(const TowerConfig& config);

/// Accumulates d(sum(upstream . output))/d(params) into `grads`.
template <typename T>
void tower_backward(const TowerParams<T>& params, const TowerConfig& config,
                    const TowerTrace<T>& trace, const Matrix<T>& upstream,
                    TowerGrads<T>& grads);

using EmbeddingVec = std::vector<float>;

EmbeddingVec user_embedding(const ModelParams& params, const TowerConfig& config,
                            UserId user, Condition condition);
EmbeddingVec item_embedding(const ModelParams& params, const TowerConfig& config,
                            ItemId item);

/// Dot product with double accumulation. Throws kDimensionMismatch.
float score(std::span<const float> u, std::span<const float> v);

struct Checkpoint {
  TowerConfig config;
  ModelParams params;
  std::uint64_t seed = 0;

  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace condret
