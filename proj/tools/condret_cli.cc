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

// condret: generate data, train, index, retrieve and evaluate.
//
// Exit codes:
//   0  success
//   1  internal error
//   2  invalid configuration or argument (including unknown flags)
//   3  missing input file
//   4  malformed input file or referential-integrity failure
//   5  numerical failure during training

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "condret/config.h"
#include "condret/dataset.h"
#include "condret/error.h"
#include "condret/eval.h"
#include "condret/file_io.h"
#include "condret/retrieval.h"
#include "condret/tower.h"
#include "condret/trainer.h"

namespace condret {
namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidConfig:
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kIndexOutOfRange:
    case ErrorKind::kDimensionMismatch:
      return 2;
    case ErrorKind::kMissingFile:
      return 3;
    case ErrorKind::kParse:
    case ErrorKind::kReferentialIntegrity:
      return 4;
    case ErrorKind::kNumerical:
      return 5;
    default:
      return 1;
  }
}

template <typename T>
void apply(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;

  // gen-data
  std::optional<std::string> gen_out;
  std::optional<std::uint64_t> gen_seed;

  // train
  std::optional<std::string> train_dataset;
  std::optional<std::string> model;
  std::optional<std::string> train_out;
  std::optional<std::string> loss_out;
  std::optional<std::int32_t> epochs;
  std::optional<std::uint64_t> train_seed;

  // build-index
  std::optional<std::string> index_dataset;
  std::optional<std::string> index_checkpoint;
  std::optional<std::string> index_out;

  // retrieve
  std::optional<std::string> ret_index;
  std::optional<std::string> ret_checkpoint;
  std::int64_t user = -1;
  std::optional<std::int32_t> topic;
  std::int32_t k = 10;
  std::string mode = "none";
  std::optional<std::int64_t> budget;
  std::int32_t batch_size = 32;
  std::optional<std::int32_t> beam;
  std::int32_t overfetch = 10;

  // eval
  std::optional<std::string> eval_dataset;
  std::optional<std::string> ckpt_lr;
  std::optional<std::string> ckpt_cr;
  std::optional<std::string> methods;
  std::optional<std::int32_t> eval_k;
  std::optional<std::string> modes;
  std::optional<std::string> eval_out;
  std::optional<std::int32_t> max_queries;
};

RunConfig load_config(const Options& o) {
  RunConfig config = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  for (const auto& s : o.overrides) apply_override(config, s);
  return config;
}

int cmd_gen(const Options& o) {
  auto config = load_config(o);
  apply(o.gen_out, config.paths.dataset);
  apply(o.gen_seed, config.gen.seed);
  const auto dataset = generate_synthetic(config.gen);
  save_dataset(dataset, config.paths.dataset);
  fmt::print("wrote {}: {} users, {} items, {} topics, {} events\n",
             config.paths.dataset, dataset.num_users(), dataset.num_items(),
             dataset.topic_count, dataset.engagements.size());
  return 0;
}

int cmd_train(const Options& o) {
  auto config = load_config(o);
  apply(o.train_dataset, config.paths.dataset);
  apply(o.epochs, config.train.epochs);
  apply(o.train_seed, config.train.seed);
  std::string out = config.paths.checkpoint;
  if (o.model) {
    if (*o.model == "lr") {
      config.tower.conditional = false;
      out = config.paths.checkpoint_lr;
    } else if (*o.model == "cr") {
      config.tower.conditional = true;
      out = config.paths.checkpoint_cr;
    } else {
      fail(ErrorKind::kInvalidArgument, fmt::format("--model must be lr or cr, got '{}'", *o.model));
    }
  }
  apply(o.train_out, out);
  apply(o.loss_out, config.paths.loss_curve);

  const auto dataset = load_dataset(config.paths.dataset);
  const auto tower = fit_to(config.tower, dataset);
  const auto report = train(dataset, tower, config.train);
  save_checkpoint(report.checkpoint, out);

  std::string curve = "epoch\tmean_loss\n";
  for (std::size_t e = 0; e < report.epoch_mean_loss.size(); ++e) {
    curve += fmt::format("{}\t{:.6f}\n", e, report.epoch_mean_loss[e]);
  }
  write_file_atomic(config.paths.loss_curve, curve);
  fmt::print("{}", curve);
  fmt::print("wrote {} ({} model, {} params, {:.1f}s)\n", out,
             tower.conditional ? "CR" : "LR", param_count(tower), report.wall_seconds);
  return 0;
}

int cmd_index(const Options& o) {
  auto config = load_config(o);
  apply(o.index_dataset, config.paths.dataset);
  apply(o.index_checkpoint, config.paths.checkpoint);
  apply(o.index_out, config.paths.index);
  const auto dataset = load_dataset(config.paths.dataset);
  const auto checkpoint = load_checkpoint(config.paths.checkpoint);
  auto index = build_index(checkpoint, dataset);
  build_ann(index, config.ann);
  save_index(index, config.paths.index);
  fmt::print("wrote {}: {} items, dim {}, max level {}\n", config.paths.index,
             index.size(), index.dim(), index.graph->max_level);
  return 0;
}

int cmd_retrieve(const Options& o) {
  auto config = load_config(o);
  apply(o.ret_index, config.paths.index);
  apply(o.ret_checkpoint, config.paths.checkpoint);
  const auto checkpoint = load_checkpoint(config.paths.checkpoint);
  const auto index = load_index(config.paths.index);

  if (o.user < 0 || o.user >= checkpoint.config.num_users) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("--user {} out of range [0, {})", o.user, checkpoint.config.num_users));
  }
  const auto mode = parse_filter_mode(o.mode);
  if (mode != FilterMode::kNone && !o.topic) {
    fail(ErrorKind::kInvalidArgument, fmt::format("--mode {} needs --topic", o.mode));
  }
  if (o.topic && (*o.topic < 0 || *o.topic >= checkpoint.config.num_topics)) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("--topic {} out of range [0, {})", *o.topic, checkpoint.config.num_topics));
  }
  check(o.k >= 1, ErrorKind::kInvalidArgument, "--k must be >= 1");

  const auto condition = o.topic ? Condition::topic(*o.topic)
                                 : Condition::null(checkpoint.config.num_topics);
  RetrievalQuery q;
  q.user_embedding = user_embedding(checkpoint.params, checkpoint.config,
                                    static_cast<UserId>(o.user), condition);
  if (o.topic) q.condition = *o.topic;
  q.k = o.k;
  q.filter_mode = mode;
  q.budget = o.budget ? *o.budget : static_cast<std::int64_t>(index.size());
  q.batch_size = o.batch_size;
  q.beam_width = o.beam ? *o.beam : std::max(index.ann_config.query_beam_width, o.k);
  q.overfetch_factor = o.overfetch;
  const auto result = retrieve(index, q);

  fmt::print("rank\titem\tscore\tmatched\n");
  for (std::size_t r = 0; r < result.items.size(); ++r) {
    const auto& it = result.items[r];
    fmt::print("{}\t{}\t{:.6f}\t{}\n", r + 1, it.item_id, it.score,
               o.topic ? (it.matched ? "yes" : "no") : "-");
  }
  fmt::print("# returned={} scanned={} truncated={}\n", result.items.size(),
             result.scanned_count, result.truncated ? "true" : "false");
  return 0;
}

int cmd_eval(const Options& o) {
  auto config = load_config(o);
  apply(o.eval_dataset, config.paths.dataset);
  apply(o.ckpt_lr, config.paths.checkpoint_lr);
  apply(o.ckpt_cr, config.paths.checkpoint_cr);
  apply(o.eval_k, config.eval.k);
  apply(o.eval_out, config.paths.report);
  apply(o.max_queries, config.eval.max_queries);
  if (o.methods) {
    config.eval.methods.clear();
    for (const auto& m : split_list(*o.methods)) config.eval.methods.push_back(parse_method(m));
  }
  if (o.modes) {
    config.eval.modes.clear();
    for (const auto& m : split_list(*o.modes)) config.eval.modes.push_back(parse_filter_mode(m));
  }

  const auto dataset = load_dataset(config.paths.dataset);
  std::optional<RetrievalModel> lr, cr;
  for (Method m : config.eval.methods) {
    if (m == Method::kLR && !lr) {
      lr = prepare_model(load_checkpoint(config.paths.checkpoint_lr), dataset, config.ann);
    }
    if (m == Method::kCR && !cr) {
      cr = prepare_model(load_checkpoint(config.paths.checkpoint_cr), dataset, config.ann);
    }
  }
  const auto report = run_experiment(dataset, lr ? &*lr : nullptr, cr ? &*cr : nullptr,
                                     config.eval);
  write_file_atomic(config.paths.report, report.to_tsv());
  fmt::print("{}", report.to_table());
  fmt::print("wrote {} ({} queries)\n", config.paths.report, report.num_queries);
  return 0;
}

int cmd_show_config(const Options& o) {
  fmt::print("{}\n", nlohmann::json(load_config(o)).dump(2));
  return 0;
}

}  // namespace
}  // namespace condret

int main(int argc, char** argv) {
  using namespace condret;
  spdlog::set_level(spdlog::level::info);
  spdlog::cfg::load_env_levels();  // SPDLOG_LEVEL=debug etc.

  Options o;
  CLI::App app{"Conditional two-tower retrieval on synthetic topic data"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.add_option("-c,--config", o.config_path, "JSON run config");
  app.add_option("--set", o.overrides,
                 "Override a config field, e.g. --set train.epochs=3 (repeatable)");
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--out", o.gen_out, "Dataset path (paths.dataset)");
  gen->add_option("--seed", o.gen_seed, "Generator seed (gen.seed)");

  auto* tr = app.add_subcommand("train", "Train an LR or CR two-tower model");
  tr->add_option("--dataset", o.train_dataset, "Dataset path");
  tr->add_option("--model", o.model, "lr (plain towers) or cr (conditional user tower)")
      ->check(CLI::IsMember({"lr", "cr"}));
  tr->add_option("--out", o.train_out, "Checkpoint path");
  tr->add_option("--loss-out", o.loss_out, "Loss curve TSV path");
  tr->add_option("--epochs", o.epochs, "train.epochs");
  tr->add_option("--seed", o.train_seed, "train.seed");

  auto* bi = app.add_subcommand("build-index", "Materialize item embeddings and the ANN graph");
  bi->add_option("--dataset", o.index_dataset, "Dataset path");
  bi->add_option("--checkpoint", o.index_checkpoint, "Checkpoint path");
  bi->add_option("--out", o.index_out, "Index path");

  auto* rt = app.add_subcommand("retrieve", "Retrieve items for one user and topic");
  rt->add_option("--index", o.ret_index, "Index path");
  rt->add_option("--checkpoint", o.ret_checkpoint, "Checkpoint path");
  rt->add_option("--user", o.user, "User id")->required();
  rt->add_option("--topic", o.topic, "Condition topic id");
  rt->add_option("--k", o.k, "Result size");
  rt->add_option("--mode", o.mode, "Filter mode")
      ->check(CLI::IsMember({"none", "streaming", "postfilter"}));
  rt->add_option("--budget", o.budget, "Streaming scan budget (default: all items)");
  rt->add_option("--batch-size", o.batch_size, "Streaming mini-batch size");
  rt->add_option("--beam", o.beam, "Base-layer beam width (default: max(efSearch, k))");
  rt->add_option("--overfetch", o.overfetch, "Post-filter over-fetch factor");

  auto* ev = app.add_subcommand("eval", "Compare INDEX, LR and CR");
  ev->add_option("--dataset", o.eval_dataset, "Dataset path");
  ev->add_option("--checkpoint-lr", o.ckpt_lr, "LR checkpoint path");
  ev->add_option("--checkpoint-cr", o.ckpt_cr, "CR checkpoint path");
  ev->add_option("--methods", o.methods, "Comma list of INDEX,LR,CR");
  ev->add_option("--k", o.eval_k, "Retrieval depth");
  ev->add_option("--modes", o.modes, "Comma list of none,streaming,postfilter");
  ev->add_option("--max-queries", o.max_queries, "Cap on evaluation queries");
  ev->add_option("--out", o.eval_out, "Report TSV path");

  auto* sc = app.add_subcommand("show-config", "Print the effective config as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*tr) return cmd_train(o);
    if (*bi) return cmd_index(o);
    if (*rt) return cmd_retrieve(o);
    if (*ev) return cmd_eval(o);
    if (*sc) return cmd_show_config(o);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 1;
}
