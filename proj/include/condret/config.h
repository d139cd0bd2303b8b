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

// One JSON schema shared by every subcommand. Unknown keys are rejected.

#include <string>
#include <string_view>

#include "json.hpp"

#include "condret/dataset.h"
#include "condret/eval.h"
#include "condret/retrieval.h"
#include "condret/tower.h"
#include "condret/trainer.h"

namespace condret {

struct PathConfig {
  std::string dataset = "dataset.tsv";
  std::string checkpoint = "model.ckpt";
  std::string checkpoint_lr = "lr.ckpt";
  std::string checkpoint_cr = "cr.ckpt";
  std::string index = "items.idx";
  std::string report = "report.tsv";
  std::string loss_curve = "loss.tsv";

  bool operator==(const PathConfig&) const = default;
};

struct RunConfig {
  GenConfig gen;
  TowerConfig tower;
  TrainConfig train;
  AnnConfig ann;
  EvalConfig eval;
  PathConfig paths;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);
void to_json(nlohmann::json& j, const TowerConfig& c);
void from_json(const nlohmann::json& j, TowerConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AnnConfig& c);
void from_json(const nlohmann::json& j, AnnConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const PathConfig& c);
void from_json(const nlohmann::json& j, PathConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Missing sections and keys keep their defaults. Throws kInvalidConfig on
/// unknown keys or wrong types, kMissingFile when the file is absent.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::string& path);

/// Applies "section.key=value". The value is parsed as JSON when possible
/// and taken as a string otherwise.
void apply_override(RunConfig& config, std::string_view assignment);

}  // namespace condret
