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
#include "condret/tower.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "condret/config.h"
#include "condret/error.h"
#include "condret/file_io.h"
#include "condret/random.h"

namespace condret {
namespace {

constexpr std::string_view kCheckpointMagic = "CONDRET-CKPT\x01";

template <typename T>
T activate(Activation a, T x) {
  if (a == Activation::kRelu) return x > T(0) ? x : T(0);
  return std::tanh(x);
}

// Derivative expressed through the pre-activation and the output.
template <typename T>
T activate_grad(Activation a, T pre, T post) {
  if (a == Activation::kRelu) return pre > T(0) ? T(1) : T(0);
  return T(1) - post * post;
}

std::vector<std::int32_t> layer_widths(const TowerConfig& c) {
  std::vector<std::int32_t> widths = c.hidden_sizes;
  widths.push_back(c.output_dim);
  return widths;
}

template <typename T>
std::vector<DenseLayer<T>> make_layers(std::int32_t input_dim,
                                       const TowerConfig& c) {
  std::vector<DenseLayer<T>> layers;
  std::int32_t in = input_dim;
  for (std::int32_t out : layer_widths(c)) {
    DenseLayer<T> layer;
    layer.weight = Matrix<T>(out, in);
    layer.bias.assign(out, T(0));
    layers.push_back(std::move(layer));
    in = out;
  }
  return layers;
}

template <typename T>
void check_row(std::int32_t row, std::size_t limit, std::string_view what) {
  check(row >= 0 && static_cast<std::size_t>(row) < limit,
        ErrorKind::kIndexOutOfRange,
        fmt::format("{} {} out of range [0, {})", what, row, limit));
}

template <typename T>
void run_layers(const std::vector<DenseLayer<T>>& layers, Activation act,
                TowerTrace<T>& trace) {
  const std::size_t batch = trace.input.rows;
  const Matrix<T>* x = &trace.input;
  trace.pre.reserve(layers.size());
  trace.post.reserve(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const bool hidden = l + 1 < layers.size();
    Matrix<T> pre(batch, layer.weight.rows);
    for (std::size_t r = 0; r < batch; ++r) {
      const auto xr = x->row(r);
      for (std::size_t o = 0; o < layer.weight.rows; ++o) {
        const auto w = layer.weight.row(o);
        T acc = layer.bias[o];
        for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * xr[i];
        pre(r, o) = acc;
      }
    }
    Matrix<T> post = pre;
    if (hidden) {
      for (auto& v : post.data) v = activate(act, v);
    }
    trace.pre.push_back(std::move(pre));
    trace.post.push_back(std::move(post));
    x = &trace.post.back();
  }
}

// Backpropagates through the dense stack; returns d(loss)/d(input).
template <typename T>
Matrix<T> backprop_layers(const std::vector<DenseLayer<T>>& layers,
                          Activation act, const TowerTrace<T>& trace,
                          const Matrix<T>& upstream,
                          std::vector<DenseLayer<T>>& grads) {
  Matrix<T> delta = upstream;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    auto& g = grads[l];
    const bool hidden = l + 1 < layers.size();
    if (hidden) {
      const auto& pre = trace.pre[l];
      const auto& post = trace.post[l];
      for (std::size_t k = 0; k < delta.data.size(); ++k) {
        delta.data[k] *= activate_grad(act, pre.data[k], post.data[k]);
      }
    }
    const Matrix<T>& x = l == 0 ? trace.input : trace.post[l - 1];
    Matrix<T> dx(x.rows, x.cols);
    for (std::size_t r = 0; r < delta.rows; ++r) {
      const auto xr = x.row(r);
      auto dxr = dx.row(r);
      for (std::size_t o = 0; o < layer.weight.rows; ++o) {
        const T d = delta(r, o);
        if (d == T(0)) continue;
        g.bias[o] += d;
        auto gw = g.weight.row(o);
        const auto w = layer.weight.row(o);
        for (std::size_t i = 0; i < xr.size(); ++i) {
          gw[i] += d * xr[i];
          dxr[i] += d * w[i];
        }
      }
    }
    delta = std::move(dx);
  }
  return delta;
}

template <typename T>
void write_matrix(ByteWriter& w, const Matrix<T>& m) {
  w.put<std::uint64_t>(m.rows);
  w.put<std::uint64_t>(m.cols);
  w.put_array(m.data);
}

template <typename T>
Matrix<T> read_matrix(ByteReader& r, std::size_t rows, std::size_t cols,
                      std::string_view what) {
  Matrix<T> m;
  m.rows = r.get<std::uint64_t>();
  m.cols = r.get<std::uint64_t>();
  check(m.rows == rows && m.cols == cols, ErrorKind::kParse,
        fmt::format("{} has shape {}x{}, config requires {}x{}", what, m.rows,
                    m.cols, rows, cols));
  m.data = r.get_array<T>();
  check(m.data.size() == rows * cols, ErrorKind::kParse,
        fmt::format("{} payload size mismatch", what));
  return m;
}

}  // namespace

std::string_view to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  fail(ErrorKind::kInvalidConfig, fmt::format("unknown activation '{}'", s));
}

void validate(const TowerConfig& c) {
  check(c.num_users > 0 && c.num_items > 0 && c.num_topics > 0,
        ErrorKind::kInvalidConfig, "tower vocabulary sizes must be positive");
  check(c.embed_dim_user > 0 && c.embed_dim_item > 0 && c.embed_dim_condition > 0,
        ErrorKind::kInvalidConfig, "embedding dims must be positive");
  check(c.output_dim > 0, ErrorKind::kInvalidConfig, "output_dim must be positive");
  for (auto h : c.hidden_sizes) {
    check(h > 0, ErrorKind::kInvalidConfig, "hidden sizes must be positive");
  }
}

std::int32_t user_input_dim(const TowerConfig& c) {
  return c.embed_dim_user + (c.conditional ? c.embed_dim_condition : 0);
}

std::size_t param_count(const TowerConfig& c) {
  auto mlp = [&](std::size_t in) {
    std::size_t n = 0;
    for (std::int32_t out : layer_widths(c)) {
      n += static_cast<std::size_t>(out) * in + out;
      in = out;
    }
    return n;
  };
  std::size_t n = static_cast<std::size_t>(c.num_users) * c.embed_dim_user +
                  static_cast<std::size_t>(c.num_items) * c.embed_dim_item;
  if (c.conditional) {
    n += static_cast<std::size_t>(c.num_topics + 1) * c.embed_dim_condition;
  }
  return n + mlp(user_input_dim(c)) + mlp(c.embed_dim_item);
}

ModelParams zero_params(const TowerConfig& c) {
  validate(c);
  ModelParams p;
  p.user_table = Matrix<float>(c.num_users, c.embed_dim_user);
  p.item_table = Matrix<float>(c.num_items, c.embed_dim_item);
  if (c.conditional) {
    p.condition_table = Matrix<float>(c.num_topics + 1, c.embed_dim_condition);
  }
  p.user_layers = make_layers<float>(user_input_dim(c), c);
  p.item_layers = make_layers<float>(c.embed_dim_item, c);
  return p;
}

ModelParams init_params(const TowerConfig& c, std::uint64_t seed) {
  ModelParams p = zero_params(c);
  Rng rng(seed);
  auto fill = [&](std::vector<float>& v, double scale) {
    for (auto& x : v) x = static_cast<float>(uniform_real(rng, -scale, scale));
  };
  fill(p.user_table.data, 0.05);
  fill(p.item_table.data, 0.05);
  fill(p.condition_table.data, 0.05);
  for (auto* layers : {&p.user_layers, &p.item_layers}) {
    for (auto& layer : *layers) {
      fill(layer.weight.data, 1.0 / std::sqrt(static_cast<double>(layer.weight.cols)));
    }
  }
  return p;
}

template <typename To, typename From>
TowerParams<To> convert_params(const TowerParams<From>& p) {
  TowerParams<To> out;
  out.user_table = matrix_cast<To>(p.user_table);
  out.item_table = matrix_cast<To>(p.item_table);
  out.condition_table = matrix_cast<To>(p.condition_table);
  auto convert_layers = [](const std::vector<DenseLayer<From>>& layers) {
    std::vector<DenseLayer<To>> res;
    for (const auto& l : layers) {
      res.push_back({matrix_cast<To>(l.weight),
                     std::vector<To>(l.bias.begin(), l.bias.end())});
    }
    return res;
  };
  out.user_layers = convert_layers(p.user_layers);
  out.item_layers = convert_layers(p.item_layers);
  return out;
}

template <typename T>
TowerTrace<T> user_tower_forward(const TowerParams<T>& params,
                                 const TowerConfig& config,
                                 std::span<const std::int32_t> users,
                                 std::span<const Condition> conditions) {
  TowerTrace<T> trace;
  trace.side = TowerSide::kUser;
  trace.rows.assign(users.begin(), users.end());
  const std::size_t eu = config.embed_dim_user;
  const std::size_t ec = config.conditional ? config.embed_dim_condition : 0;
  if (config.conditional) {
    check(conditions.size() == users.size(), ErrorKind::kDimensionMismatch,
          "conditional user tower needs one condition per user");
  }
  trace.input = Matrix<T>(users.size(), eu + ec);
  for (std::size_t r = 0; r < users.size(); ++r) {
    check_row<T>(users[r], params.user_table.rows, "user");
    auto in = trace.input.row(r);
    const auto emb = params.user_table.row(users[r]);
    std::copy(emb.begin(), emb.end(), in.begin());
    if (config.conditional) {
      const std::int32_t c = conditions[r].value();
      check_row<T>(c, params.condition_table.rows, "condition");
      trace.conditions.push_back(c);
      const auto cemb = params.condition_table.row(c);
      std::copy(cemb.begin(), cemb.end(), in.begin() + eu);
    }
  }
  run_layers(params.user_layers, config.activation, trace);
  return trace;
}

template <typename T>
TowerTrace<T> item_tower_forward(const TowerParams<T>& params,
                                 const TowerConfig& config,
                                 std::span<const std::int32_t> items) {
  TowerTrace<T> trace;
  trace.side = TowerSide::kItem;
  trace.rows.assign(items.begin(), items.end());
  trace.input = Matrix<T>(items.size(), config.embed_dim_item);
  for (std::size_t r = 0; r < items.size(); ++r) {
    check_row<T>(items[r], params.item_table.rows, "item");
    const auto emb = params.item_table.row(items[r]);
    std::copy(emb.begin(), emb.end(), trace.input.row(r).begin());
  }
  run_layers(params.item_layers, config.activation, trace);
  return trace;
}

template <typename T>
std::span<T> SparseRowGrad<T>::row(std::int32_t r) {
  auto [it, inserted] = slot_.try_emplace(r, rows_.size());
  if (inserted) {
    rows_.push_back(r);
    values_.resize(values_.size() + cols_, T(0));
  }
  return {values_.data() + it->second * cols_, cols_};
}

template <typename T>
std::span<const T> SparseRowGrad<T>::find(std::int32_t r) const {
  auto it = slot_.find(r);
  if (it == slot_.end()) return {};
  return {values_.data() + it->second * cols_, cols_};
}

template <typename T>
TowerGrads<T> zero_grads(const TowerConfig& c) {
  TowerGrads<T> g;
  g.user_table = SparseRowGrad<T>(c.embed_dim_user);
  g.item_table = SparseRowGrad<T>(c.embed_dim_item);
  g.condition_table = SparseRowGrad<T>(c.conditional ? c.embed_dim_condition : 0);
  g.user_layers = make_layers<T>(user_input_dim(c), c);
  g.item_layers = make_layers<T>(c.embed_dim_item, c);
  return g;
}

template <typename T>
void tower_backward(const TowerParams<T>& params, const TowerConfig& config,
                    const TowerTrace<T>& trace, const Matrix<T>& upstream,
                    TowerGrads<T>& grads) {
  const bool user_side = trace.side == TowerSide::kUser;
  const auto& layers = user_side ? params.user_layers : params.item_layers;
  check(!trace.post.empty() && trace.post.size() == layers.size(),
        ErrorKind::kContractViolation, "trace does not match the tower's layers");
  check(upstream.rows == trace.output().rows && upstream.cols == trace.output().cols,
        ErrorKind::kContractViolation,
        fmt::format("upstream gradient is {}x{}, tower output is {}x{}",
                    upstream.rows, upstream.cols, trace.output().rows,
                    trace.output().cols));
  check(trace.input.cols == layers.front().weight.cols,
        ErrorKind::kContractViolation, "trace input width does not match params");

  auto& layer_grads = user_side ? grads.user_layers : grads.item_layers;
  const Matrix<T> dinput =
      backprop_layers(layers, config.activation, trace, upstream, layer_grads);

  auto& table_grad = user_side ? grads.user_table : grads.item_table;
  const std::size_t e = user_side ? config.embed_dim_user : config.embed_dim_item;
  for (std::size_t r = 0; r < trace.rows.size(); ++r) {
    const auto d = dinput.row(r);
    bool any = false;
    for (std::size_t i = 0; i < e && !any; ++i) any = d[i] != T(0);
    if (any) {
      auto g = table_grad.row(trace.rows[r]);
      for (std::size_t i = 0; i < e; ++i) g[i] += d[i];
    }
    if (user_side && config.conditional) {
      const std::size_t ec = config.embed_dim_condition;
      bool cany = false;
      for (std::size_t i = 0; i < ec && !cany; ++i) cany = d[e + i] != T(0);
      if (cany) {
        auto g = grads.condition_table.row(trace.conditions[r]);
        for (std::size_t i = 0; i < ec; ++i) g[i] += d[e + i];
      }
    }
  }
}

EmbeddingVec user_embedding(const ModelParams& params, const TowerConfig& config,
                            UserId user, Condition condition) {
  const std::int32_t u = user;
  const auto trace = user_tower_forward<float>(params, config, {&u, 1},
                                               {&condition, 1});
  const auto out = trace.output().row(0);
  return {out.begin(), out.end()};
}

EmbeddingVec item_embedding(const ModelParams& params, const TowerConfig& config,
                            ItemId item) {
  const std::int32_t i = item;
  const auto trace = item_tower_forward<float>(params, config, {&i, 1});
  const auto out = trace.output().row(0);
  return {out.begin(), out.end()};
}

float score(std::span<const float> u, std::span<const float> v) {
  check(u.size() == v.size(), ErrorKind::kDimensionMismatch,
        fmt::format("score of vectors with lengths {} and {}", u.size(), v.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    acc += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  }
  return static_cast<float>(acc);
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["tower"] = ck.config;
  header["seed"] = ck.seed;
  ByteWriter w;
  w.put_raw(kCheckpointMagic);
  w.put_string(header.dump());
  write_matrix(w, ck.params.user_table);
  write_matrix(w, ck.params.item_table);
  write_matrix(w, ck.params.condition_table);
  for (const auto* layers : {&ck.params.user_layers, &ck.params.item_layers}) {
    w.put<std::uint64_t>(layers->size());
    for (const auto& layer : *layers) {
      write_matrix(w, layer.weight);
      w.put_array(layer.bias);
    }
  }
  return w.bytes();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_raw(kCheckpointMagic);
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(r.get_string());
    ck.config = header.at("tower").get<TowerConfig>();
    ck.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, fmt::format("checkpoint header: {}", e.what()));
  }
  validate(ck.config);
  const auto& c = ck.config;
  const ModelParams shape = zero_params(c);
  ck.params.user_table = read_matrix<float>(r, c.num_users, c.embed_dim_user, "user table");
  ck.params.item_table = read_matrix<float>(r, c.num_items, c.embed_dim_item, "item table");
  ck.params.condition_table = read_matrix<float>(
      r, shape.condition_table.rows, shape.condition_table.cols, "condition table");
  for (auto [dst, ref] : {std::pair{&ck.params.user_layers, &shape.user_layers},
                          std::pair{&ck.params.item_layers, &shape.item_layers}}) {
    const auto n = r.get<std::uint64_t>();
    check(n == ref->size(), ErrorKind::kParse, "layer count mismatch");
    for (const auto& ref_layer : *ref) {
      DenseLayer<float> layer;
      layer.weight = read_matrix<float>(r, ref_layer.weight.rows,
                                        ref_layer.weight.cols, "dense weight");
      layer.bias = r.get_array<float>();
      check(layer.bias.size() == ref_layer.bias.size(), ErrorKind::kParse,
            "bias length mismatch");
      dst->push_back(std::move(layer));
    }
  }
  check(r.at_end(), ErrorKind::kParse, "trailing bytes after checkpoint payload");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

#define CONDRET_INSTANTIATE_TOWER(T)                                           \
  template TowerTrace<T> user_tower_forward<T>(                                \
      const TowerParams<T>&, const TowerConfig&, std::span<const std::int32_t>, \
      std::span<const Condition>);                                             \
  template TowerTrace<T> item_tower_forward<T>(                                \
      const TowerParams<T>&, const TowerConfig&, std::span<const std::int32_t>); \
  template class SparseRowGrad<T>;                                             \
  template TowerGrads<T> zero_grads<T>(const TowerConfig&);                    \
  template void tower_backward<T>(const TowerParams<T>&, const TowerConfig&,   \
                                  const TowerTrace<T>&, const Matrix<T>&,      \
                                  TowerGrads<T>&);

CONDRET_INSTANTIATE_TOWER(float)
CONDRET_INSTANTIATE_TOWER(double)
#undef CONDRET_INSTANTIATE_TOWER

template TowerParams<double> convert_params<double, float>(const TowerParams<float>&);
template TowerParams<float> convert_params<float, double>(const TowerParams<double>&);
template TowerParams<float> convert_params<float, float>(const TowerParams<float>&);

}  // namespace condret
