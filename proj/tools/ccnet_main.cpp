// Command-line front end. A JSON config file provides defaults; flags
// override individual keys. The resolved config is echoed into the output
// directory so any run can be reproduced from it.

#include "ccnet/commands.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

using nlohmann::json;

namespace {

struct Flags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string manifest;
  std::string checkpoint;
  std::string embeddings;
  std::string loss;
  std::string norm;
  std::string protocol;
  std::string repr;
  std::vector<std::string> subsets;
  int epochs = 0;
  int p = 0, k = 0;
  double lr = 0.0;
  double lambda = 0.0, alpha = 0.0;
  int trials = 0;
  std::vector<double> ratios;
  int synth_ids = 0, synth_samples = 0, synth_dim = 0;
  double distortion = 0.0;
  std::uint64_t synth_seed = 0;
  bool inject_gradient_error = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config_path, "JSON config file");
  sub->add_option("--out", f.out_dir, "output directory");
  sub->add_option("--seed", f.seed, "run seed (falls back to CCNET_SEED)");
}

void add_data(CLI::App* sub, Flags& f) {
  sub->add_option("--manifest", f.manifest, "JSONL dataset manifest");
  sub->add_option("--synth-ids", f.synth_ids, "synthetic identity count");
  sub->add_option("--synth-samples", f.synth_samples, "synthetic samples per identity");
  sub->add_option("--synth-dim", f.synth_dim, "synthetic feature dim");
  sub->add_option("--synth-seed", f.synth_seed, "synthetic data seed");
  sub->add_option("--distortion", f.distortion, "synthetic bad-case rate");
}

void add_train(CLI::App* sub, Flags& f) {
  sub->add_option("--epochs", f.epochs, "training epochs");
  sub->add_option("--lr", f.lr, "initial learning rate");
  sub->add_option("--P", f.p, "identities per batch");
  sub->add_option("--K", f.k, "samples per identity");
  sub->add_option("--lambda", f.lambda, "total-loss weight");
  sub->add_option("--alpha", f.alpha, "modality-term weight");
  sub->add_option("--loss", f.loss, "ce_only|center|hc|cdc_s|cdc_m|cdc");
  sub->add_option("--norm", f.norm, "none|in|ln|alnu");
}

void add_eval(CLI::App* sub, Flags& f) {
  sub->add_option("--checkpoint", f.checkpoint, "model checkpoint (.ccnl)");
  sub->add_option("--embeddings", f.embeddings, "embedding block (.ccnf)");
  sub->add_option("--protocol", f.protocol, "none|time_label|camera|viewpoint");
  sub->add_option("--repr", f.repr, "concat|center");
  sub->add_option("--subset", f.subsets, "modality subset, e.g. R+N+T (repeatable)");
}

bool passed(const CLI::App* sub, const std::string& name) {
  const CLI::Option* opt = sub->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

json apply_flags(const json& base, const CLI::App* sub, const Flags& f) {
  json j = base;
  if (passed(sub, "--seed")) j["seed"] = f.seed;
  if (passed(sub, "--out")) j["out_dir"] = f.out_dir;
  if (passed(sub, "--manifest")) j["data"]["manifest"] = f.manifest;
  if (passed(sub, "--synth-ids")) j["data"]["synth"]["id_count"] = f.synth_ids;
  if (passed(sub, "--synth-samples")) j["data"]["synth"]["samples_per_id"] = f.synth_samples;
  if (passed(sub, "--synth-dim")) j["data"]["synth"]["dim"] = f.synth_dim;
  if (passed(sub, "--synth-seed")) j["data"]["synth"]["seed"] = f.synth_seed;
  if (passed(sub, "--distortion")) j["data"]["synth"]["distortion_rate"] = f.distortion;
  if (passed(sub, "--epochs")) j["train"]["epochs"] = f.epochs;
  if (passed(sub, "--lr")) j["train"]["lr_initial"] = f.lr;
  if (passed(sub, "--P")) j["train"]["P"] = f.p;
  if (passed(sub, "--K")) j["train"]["K"] = f.k;
  if (passed(sub, "--lambda")) j["train"]["lambda"] = f.lambda;
  if (passed(sub, "--alpha")) j["train"]["alpha"] = f.alpha;
  if (passed(sub, "--loss")) j["train"]["loss"] = f.loss;
  if (passed(sub, "--norm")) j["train"]["norm"] = f.norm;
  if (passed(sub, "--checkpoint")) j["eval"]["checkpoint"] = f.checkpoint;
  if (passed(sub, "--embeddings")) j["eval"]["embeddings"] = f.embeddings;
  if (passed(sub, "--protocol")) j["eval"]["protocols"] = {f.protocol};
  if (passed(sub, "--repr")) j["eval"]["repr"] = f.repr;
  if (passed(sub, "--subset")) j["eval"]["subsets"] = f.subsets;
  if (passed(sub, "--trials")) j["missing"]["trials"] = f.trials;
  if (passed(sub, "--ratios")) j["missing"]["ratios"] = f.ratios;
  if (passed(sub, "--inject-gradient-error")) j["inject_gradient_error"] = true;
  if (!j.contains("seed")) {
    if (const char* env = std::getenv("CCNET_SEED")) {
      j["seed"] = std::strtoull(env, nullptr, 10);
    }
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"small-scale multi-spectral re-identification laboratory"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gradcheck, f);
  gradcheck->add_flag("--inject-gradient-error", f.inject_gradient_error,
                      "negative control: perturb one analytic gradient");

  CLI::App* train = app.add_subcommand("train", "train a model, write checkpoint + log");
  add_common(train, f);
  add_data(train, f);
  add_train(train, f);

  CLI::App* eval = app.add_subcommand("eval", "protocol/subset retrieval evaluation");
  add_common(eval, f);
  add_data(eval, f);
  add_eval(eval, f);

  CLI::App* missing = app.add_subcommand("missing", "random modality-missing experiment");
  add_common(missing, f);
  add_data(missing, f);
  add_eval(missing, f);
  missing->add_option("--trials", f.trials, "trials per ratio");
  missing->add_option("--ratios", f.ratios, "missing ratios");

  CLI::App* sweep = app.add_subcommand("sweep", "lambda/alpha grid");
  add_common(sweep, f);
  add_data(sweep, f);
  add_train(sweep, f);
  sweep->add_option("--protocol", f.protocol, "evaluation protocol");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad flags are config errors
  }
  CLI::App* sub = app.get_subcommands().front();

  json file_json = json::object();
  if (passed(sub, "--config")) {
    std::ifstream is(f.config_path);
    if (!is) {
      std::cerr << "I/O error: cannot open config " << f.config_path << "\n";
      return 3;
    }
    try {
      is >> file_json;
    } catch (const json::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
  }

  try {
    const json resolved = apply_flags(file_json, sub, f);
    const ccnet::RunConfig cfg = ccnet::parse_run_config(resolved);
    return ccnet::run_command(sub->get_name(), cfg);
  } catch (const ccnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}
