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
#include "condret/config.h"

#include <initializer_list>

#include <fmt/format.h>

#include "condret/error.h"
#include "condret/file_io.h"

namespace condret {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::string_view section,
                    std::initializer_list<std::string_view> known) {
  if (!j.is_object()) {
    fail(ErrorKind::kInvalidConfig, fmt::format("'{}' must be an object", section));
  }
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) {
      fail(ErrorKind::kInvalidConfig,
           fmt::format("unknown key '{}' in '{}'", key, section));
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(json& j, const GenConfig& c) {
  j = json{{"num_users", c.num_users},
           {"num_items", c.num_items},
           {"num_topics", c.num_topics},
           {"topics_per_item_range", {c.min_topics_per_item, c.max_topics_per_item}},
           {"events_per_user", c.events_per_user},
           {"affinity_concentration", c.affinity_concentration},
           {"noise_rate", c.noise_rate},
           {"heldout_fraction", c.heldout_fraction},
           {"seed", c.seed}};
}

void from_json(const json& j, GenConfig& c) {
  reject_unknown(j, "gen",
                 {"num_users", "num_items", "num_topics", "topics_per_item_range",
                  "events_per_user", "affinity_concentration", "noise_rate",
                  "heldout_fraction", "seed"});
  read(j, "num_users", c.num_users);
  read(j, "num_items", c.num_items);
  read(j, "num_topics", c.num_topics);
  if (j.contains("topics_per_item_range")) {
    const auto& r = j.at("topics_per_item_range");
    if (!r.is_array() || r.size() != 2) {
      fail(ErrorKind::kInvalidConfig, "topics_per_item_range must be [min, max]");
    }
    r.at(0).get_to(c.min_topics_per_item);
    r.at(1).get_to(c.max_topics_per_item);
  }
  read(j, "events_per_user", c.events_per_user);
  read(j, "affinity_concentration", c.affinity_concentration);
  read(j, "noise_rate", c.noise_rate);
  read(j, "heldout_fraction", c.heldout_fraction);
  read(j, "seed", c.seed);
}

void to_json(json& j, const TowerConfig& c) {
  j = json{{"num_users", c.num_users},
           {"num_items", c.num_items},
           {"num_topics", c.num_topics},
           {"embed_dim_user", c.embed_dim_user},
           {"embed_dim_item", c.embed_dim_item},
           {"embed_dim_condition", c.embed_dim_condition},
           {"hidden_sizes", c.hidden_sizes},
           {"output_dim", c.output_dim},
           {"activation", std::string(to_string(c.activation))},
           {"conditional", c.conditional}};
}

void from_json(const json& j, TowerConfig& c) {
  reject_unknown(j, "tower",
                 {"num_users", "num_items", "num_topics", "embed_dim_user",
                  "embed_dim_item", "embed_dim_condition", "hidden_sizes",
                  "output_dim", "activation", "conditional"});
  read(j, "num_users", c.num_users);
  read(j, "num_items", c.num_items);
  read(j, "num_topics", c.num_topics);
  read(j, "embed_dim_user", c.embed_dim_user);
  read(j, "embed_dim_item", c.embed_dim_item);
  read(j, "embed_dim_condition", c.embed_dim_condition);
  read(j, "hidden_sizes", c.hidden_sizes);
  read(j, "output_dim", c.output_dim);
  if (j.contains("activation")) {
    c.activation = parse_activation(j.at("activation").get<std::string>());
  }
  read(j, "conditional", c.conditional);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"learning_rate", c.learning_rate},
           {"optimizer", std::string(to_string(c.optimizer))},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_epsilon", c.adam_epsilon},
           {"logq_correction", c.logq_correction},
           {"hard_negatives", c.hard_negatives},
           {"alignment_weight", c.alignment_weight},
           {"resample_per_epoch", c.resample_per_epoch},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j, "train",
                 {"batch_size", "epochs", "learning_rate", "optimizer", "adam_beta1",
                  "adam_beta2", "adam_epsilon", "logq_correction", "hard_negatives",
                  "alignment_weight", "resample_per_epoch", "seed"});
  read(j, "batch_size", c.batch_size);
  read(j, "epochs", c.epochs);
  read(j, "learning_rate", c.learning_rate);
  if (j.contains("optimizer")) {
    c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  }
  read(j, "adam_beta1", c.adam_beta1);
  read(j, "adam_beta2", c.adam_beta2);
  read(j, "adam_epsilon", c.adam_epsilon);
  read(j, "logq_correction", c.logq_correction);
  read(j, "hard_negatives", c.hard_negatives);
  read(j, "alignment_weight", c.alignment_weight);
  read(j, "resample_per_epoch", c.resample_per_epoch);
  read(j, "seed", c.seed);
}

void to_json(json& j, const AnnConfig& c) {
  j = json{{"max_degree", c.max_degree},
           {"build_beam_width", c.build_beam_width},
           {"query_beam_width", c.query_beam_width},
           {"level_multiplier", c.level_multiplier},
           {"seed", c.seed}};
}

void from_json(const json& j, AnnConfig& c) {
  reject_unknown(j, "ann",
                 {"max_degree", "build_beam_width", "query_beam_width",
                  "level_multiplier", "seed"});
  read(j, "max_degree", c.max_degree);
  read(j, "build_beam_width", c.build_beam_width);
  read(j, "query_beam_width", c.query_beam_width);
  read(j, "level_multiplier", c.level_multiplier);
  read(j, "seed", c.seed);
}

void to_json(json& j, const EvalConfig& c) {
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.emplace_back(to_string(m));
  std::vector<std::string> modes;
  for (auto m : c.modes) modes.emplace_back(to_string(m));
  j = json{{"k", c.k},
           {"methods", methods},
           {"modes", modes},
           {"stream_batch_size", c.stream_batch_size},
           {"budget", c.budget},
           {"overfetch_factor", c.overfetch_factor},
           {"beam_width", c.beam_width},
           {"max_queries", c.max_queries},
           {"seed", c.seed}};
}

void from_json(const json& j, EvalConfig& c) {
  reject_unknown(j, "eval",
                 {"k", "methods", "modes", "stream_batch_size", "budget",
                  "overfetch_factor", "beam_width", "max_queries", "seed"});
  read(j, "k", c.k);
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  }
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : j.at("modes")) c.modes.push_back(parse_filter_mode(m.get<std::string>()));
  }
  read(j, "stream_batch_size", c.stream_batch_size);
  read(j, "budget", c.budget);
  read(j, "overfetch_factor", c.overfetch_factor);
  read(j, "beam_width", c.beam_width);
  read(j, "max_queries", c.max_queries);
  read(j, "seed", c.seed);
}

void to_json(json& j, const PathConfig& c) {
  j = json{{"dataset", c.dataset},       {"checkpoint", c.checkpoint},
           {"checkpoint_lr", c.checkpoint_lr}, {"checkpoint_cr", c.checkpoint_cr},
           {"index", c.index},           {"report", c.report},
           {"loss_curve", c.loss_curve}};
}

void from_json(const json& j, PathConfig& c) {
  reject_unknown(j, "paths",
                 {"dataset", "checkpoint", "checkpoint_lr", "checkpoint_cr", "index",
                  "report", "loss_curve"});
  read(j, "dataset", c.dataset);
  read(j, "checkpoint", c.checkpoint);
  read(j, "checkpoint_lr", c.checkpoint_lr);
  read(j, "checkpoint_cr", c.checkpoint_cr);
  read(j, "index", c.index);
  read(j, "report", c.report);
  read(j, "loss_curve", c.loss_curve);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"gen", c.gen},     {"tower", c.tower}, {"train", c.train},
           {"ann", c.ann},     {"eval", c.eval},   {"paths", c.paths}};
}

void from_json(const json& j, RunConfig& c) {
  reject_unknown(j, "root", {"gen", "tower", "train", "ann", "eval", "paths"});
  read(j, "gen", c.gen);
  read(j, "tower", c.tower);
  read(j, "train", c.train);
  read(j, "ann", c.ann);
  read(j, "eval", c.eval);
  read(j, "paths", c.paths);
}

RunConfig parse_run_config(std::string_view text) {
  try {
    return json::parse(text).get<RunConfig>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidConfig, fmt::format("config: {}", e.what()));
  }
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file(path));
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("override '{}' must look like section.key=value", assignment));
  }
  const std::string section(assignment.substr(0, dot));
  const std::string key(assignment.substr(dot + 1, eq - dot - 1));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  try {
    json j = config;
    if (!j.contains(section)) {
      fail(ErrorKind::kInvalidConfig, fmt::format("unknown section '{}'", section));
    }
    j[section][key] = value;
    config = j.get<RunConfig>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidConfig,
         fmt::format("override '{}': {}", assignment, e.what()));
  }
}

}  // namespace condret
