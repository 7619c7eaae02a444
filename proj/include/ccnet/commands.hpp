#pragma once

// Experiment commands behind the CLI: config resolution with echo,
// gradient-check suite, training, evaluation, modality-missing runs, and
// hyper-parameter sweeps.

#include "ccnet/evaluation.hpp"
#include "ccnet/model.hpp"
#include "ccnet/training.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace ccnet {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // data: a manifest path wins over the synthetic generator
  std::optional<std::string> manifest_path;
  SynthConfig synth;

  // model (input_dim and class_count are derived from the data)
  InputKind input_kind = InputKind::Vector;
  int hidden_dim = 32;
  int conv_channels = 4;
  int map_h = 8, map_w = 8, map_c = 1;
  int feature_dim = 32;

  TrainConfig train;

  // eval
  std::vector<ProtocolKind> protocols = {ProtocolKind::TimeLabel};
  std::vector<std::string> subsets = {"R", "N", "T", "R+N", "R+T", "N+T", "R+N+T"};
  std::string repr = "concat";  // or "center"
  std::optional<std::string> checkpoint_path;
  std::optional<std::string> embeddings_path;

  MissingConfig missing;
  bool missing_seed_set = false;

  std::vector<double> sweep_lambdas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> sweep_alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  bool inject_gradient_error = false;  // gradcheck negative-control hook
};

// Strict parse: unknown keys are config errors.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// {R,N,T} subset notation <-> modality indices.
std::vector<int> parse_subset(const std::string& s);
std::string subset_to_string(const std::vector<int>& subset);

// Per-modality post-neck features for the query/gallery splits.
EvalData extract_eval_data(const DatasetManifest& manifest, const ModelParams& model);

// Embedding rows follow manifest order over non-train samples, one row per
// (sample, modality); rows for absent modalities are ignored.
EvalData eval_data_from_embeddings(const DatasetManifest& manifest,
                                   const std::vector<VectorXd>& rows);

DatasetManifest resolve_dataset(const RunConfig& cfg);

// Exit codes: 0 ok, 1 check/assertion failure, 2 config error, 3 I/O error.
int cmd_gradcheck(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_missing(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg);

// Maps thrown errors onto the exit-code contract and prints the message.
int run_command(const std::string& name, const RunConfig& cfg);

}  // namespace ccnet
