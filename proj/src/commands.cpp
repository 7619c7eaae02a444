#include "ccnet/commands.hpp"

#include "ccnet/report.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

namespace ccnet {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
  }
}

std::vector<double> to_doubles(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw ConfigError("config: " + where + " must be an array");
  std::vector<double> out;
  for (const auto& v : arr) {
    if (!v.is_number()) throw ConfigError("config: " + where + " must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  check_keys(j, {"seed", "out_dir", "data", "model", "train", "eval", "missing", "sweep",
                 "inject_gradient_error"},
             "top level");
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("inject_gradient_error")) {
    cfg.inject_gradient_error = j.at("inject_gradient_error").get<bool>();
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"manifest", "synth"}, "data");
    if (d.contains("manifest")) cfg.manifest_path = d.at("manifest").get<std::string>();
    if (d.contains("synth")) {
      const json& s = d.at("synth");
      check_keys(s,
                 {"id_count", "samples_per_id", "dim", "modality_offset_scale",
                  "sample_noise_scale", "distortion_rate", "seed"},
                 "data.synth");
      if (s.contains("id_count")) cfg.synth.id_count = s.at("id_count").get<int>();
      if (s.contains("samples_per_id")) cfg.synth.samples_per_id = s.at("samples_per_id").get<int>();
      if (s.contains("dim")) cfg.synth.dim = s.at("dim").get<int>();
      if (s.contains("modality_offset_scale")) {
        cfg.synth.modality_offset_scale = s.at("modality_offset_scale").get<double>();
      }
      if (s.contains("sample_noise_scale")) {
        cfg.synth.sample_noise_scale = s.at("sample_noise_scale").get<double>();
      }
      if (s.contains("distortion_rate")) {
        cfg.synth.distortion_rate = s.at("distortion_rate").get<double>();
      }
      if (s.contains("seed")) cfg.synth.seed = s.at("seed").get<std::uint64_t>();
    }
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, {"input_kind", "hidden_dim", "conv_channels", "map_h", "map_w", "map_c",
                   "feature_dim"},
               "model");
    if (m.contains("input_kind")) {
      cfg.input_kind = input_kind_from_string(m.at("input_kind").get<std::string>());
    }
    if (m.contains("hidden_dim")) cfg.hidden_dim = m.at("hidden_dim").get<int>();
    if (m.contains("conv_channels")) cfg.conv_channels = m.at("conv_channels").get<int>();
    if (m.contains("map_h")) cfg.map_h = m.at("map_h").get<int>();
    if (m.contains("map_w")) cfg.map_w = m.at("map_w").get<int>();
    if (m.contains("map_c")) cfg.map_c = m.at("map_c").get<int>();
    if (m.contains("feature_dim")) cfg.feature_dim = m.at("feature_dim").get<int>();
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"epochs", "lr_initial", "decay_epochs", "decay_factor", "P", "K", "lambda",
                "alpha", "loss", "norm"},
               "train");
    if (t.contains("epochs")) cfg.train.epochs = t.at("epochs").get<int>();
    if (t.contains("lr_initial")) cfg.train.lr_initial = t.at("lr_initial").get<double>();
    if (t.contains("decay_epochs")) {
      const auto v = t.at("decay_epochs");
      if (!v.is_array() || v.size() != 2) {
        throw ConfigError("config: train.decay_epochs must be a pair");
      }
      cfg.train.decay_epochs = {v[0].get<int>(), v[1].get<int>()};
    }
    if (t.contains("decay_factor")) cfg.train.decay_factor = t.at("decay_factor").get<double>();
    if (t.contains("P")) cfg.train.p = t.at("P").get<int>();
    if (t.contains("K")) cfg.train.k = t.at("K").get<int>();
    if (t.contains("lambda")) cfg.train.lambda = t.at("lambda").get<double>();
    if (t.contains("alpha")) cfg.train.alpha = t.at("alpha").get<double>();
    if (t.contains("loss")) {
      cfg.train.loss_variant = loss_variant_from_string(t.at("loss").get<std::string>());
    }
    if (t.contains("norm")) {
      cfg.train.norm_variant = norm_variant_from_string(t.at("norm").get<std::string>());
    }
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"protocols", "subsets", "repr", "checkpoint", "embeddings"}, "eval");
    if (e.contains("protocols")) {
      cfg.protocols.clear();
      for (const auto& p : e.at("protocols")) {
        cfg.protocols.push_back(protocol_from_string(p.get<std::string>()));
      }
      if (cfg.protocols.empty()) throw ConfigError("config: eval.protocols is empty");
    }
    if (e.contains("subsets")) {
      cfg.subsets.clear();
      for (const auto& s : e.at("subsets")) {
        parse_subset(s.get<std::string>());  // validate now
        cfg.subsets.push_back(s.get<std::string>());
      }
      if (cfg.subsets.empty()) throw ConfigError("config: eval.subsets is empty");
    }
    if (e.contains("repr")) {
      cfg.repr = e.at("repr").get<std::string>();
      if (cfg.repr != "concat" && cfg.repr != "center") {
        throw ConfigError("config: eval.repr must be 'concat' or 'center'");
      }
    }
    if (e.contains("checkpoint")) cfg.checkpoint_path = e.at("checkpoint").get<std::string>();
    if (e.contains("embeddings")) cfg.embeddings_path = e.at("embeddings").get<std::string>();
  }

  if (j.contains("missing")) {
    const json& m = j.at("missing");
    check_keys(m, {"ratios", "trials", "seed"}, "missing");
    if (m.contains("ratios")) cfg.missing.ratios = to_doubles(m.at("ratios"), "missing.ratios");
    if (m.contains("trials")) cfg.missing.trials = m.at("trials").get<int>();
    if (m.contains("seed")) {
      cfg.missing.seed = m.at("seed").get<std::uint64_t>();
      cfg.missing_seed_set = true;
    }
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    check_keys(s, {"lambdas", "alphas"}, "sweep");
    if (s.contains("lambdas")) cfg.sweep_lambdas = to_doubles(s.at("lambdas"), "sweep.lambdas");
    if (s.contains("alphas")) cfg.sweep_alphas = to_doubles(s.at("alphas"), "sweep.alphas");
  }

  cfg.synth.validate();
  cfg.train.validate();
  cfg.missing.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  json data;
  if (cfg.manifest_path) data["manifest"] = *cfg.manifest_path;
  data["synth"] = {{"id_count", cfg.synth.id_count},
                   {"samples_per_id", cfg.synth.samples_per_id},
                   {"dim", cfg.synth.dim},
                   {"modality_offset_scale", cfg.synth.modality_offset_scale},
                   {"sample_noise_scale", cfg.synth.sample_noise_scale},
                   {"distortion_rate", cfg.synth.distortion_rate},
                   {"seed", cfg.synth.seed}};
  j["data"] = data;
  j["model"] = {{"input_kind", to_string(cfg.input_kind)},
                {"hidden_dim", cfg.hidden_dim},
                {"conv_channels", cfg.conv_channels},
                {"map_h", cfg.map_h},
                {"map_w", cfg.map_w},
                {"map_c", cfg.map_c},
                {"feature_dim", cfg.feature_dim}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr_initial", cfg.train.lr_initial},
                {"decay_epochs", {cfg.train.decay_epochs.first, cfg.train.decay_epochs.second}},
                {"decay_factor", cfg.train.decay_factor},
                {"P", cfg.train.p},
                {"K", cfg.train.k},
                {"lambda", cfg.train.lambda},
                {"alpha", cfg.train.alpha},
                {"loss", to_string(cfg.train.loss_variant)},
                {"norm", to_string(cfg.train.norm_variant)}};
  json eval;
  json protocols = json::array();
  for (auto p : cfg.protocols) protocols.push_back(to_string(p));
  eval["protocols"] = protocols;
  eval["subsets"] = cfg.subsets;
  eval["repr"] = cfg.repr;
  if (cfg.checkpoint_path) eval["checkpoint"] = *cfg.checkpoint_path;
  if (cfg.embeddings_path) eval["embeddings"] = *cfg.embeddings_path;
  j["eval"] = eval;
  json missing;
  missing["ratios"] = cfg.missing.ratios;
  missing["trials"] = cfg.missing.trials;
  if (cfg.missing_seed_set) missing["seed"] = cfg.missing.seed;
  j["missing"] = missing;
  j["sweep"] = {{"lambdas", cfg.sweep_lambdas}, {"alphas", cfg.sweep_alphas}};
  if (cfg.inject_gradient_error) j["inject_gradient_error"] = true;
  return j;
}

std::vector<int> parse_subset(const std::string& s) {
  std::vector<int> subset;
  std::string token;
  auto flush = [&]() {
    if (token.empty()) throw ConfigError("subset '" + s + "': empty component");
    int m;
    if (token == "R" || token == "r") m = 0;
    else if (token == "N" || token == "n") m = 1;
    else if (token == "T" || token == "t") m = 2;
    else throw ConfigError("subset '" + s + "': unknown modality '" + token + "'");
    for (int seen : subset) {
      if (seen == m) throw ConfigError("subset '" + s + "': duplicate modality");
    }
    subset.push_back(m);
    token.clear();
  };
  for (char c : s) {
    if (c == '+') {
      flush();
    } else if (c != ' ') {
      token += c;
    }
  }
  flush();
  return subset;
}

std::string subset_to_string(const std::vector<int>& subset) {
  static const char* names[] = {"R", "N", "T"};
  std::string out;
  for (size_t i = 0; i < subset.size(); ++i) {
    if (i) out += "+";
    out += names[subset[i]];
  }
  return out;
}

DatasetManifest resolve_dataset(const RunConfig& cfg) {
  if (cfg.manifest_path) return load_manifest(*cfg.manifest_path);
  return generate_synthetic(cfg.synth);
}

// ---------------------------------------------------------------------------

namespace {

ModelConfig model_config_for(const RunConfig& cfg, const DatasetManifest& manifest) {
  ModelConfig mc;
  mc.input_kind = cfg.input_kind;
  mc.input_dim = static_cast<int>(manifest.input_dim());
  mc.map_h = cfg.map_h;
  mc.map_w = cfg.map_w;
  mc.map_c = cfg.map_c;
  mc.hidden_dim = cfg.hidden_dim;
  mc.conv_channels = cfg.conv_channels;
  mc.feature_dim = cfg.feature_dim;
  mc.class_count = static_cast<int>(train_label_map(manifest).size());
  mc.modalities = kModalityCount;
  mc.norm = cfg.train.norm_variant;
  mc.validate();
  return mc;
}

std::vector<int> eval_sample_indices(const DatasetManifest& manifest) {
  std::vector<int> idx;
  for (size_t i = 0; i < manifest.samples.size(); ++i) {
    if (manifest.samples[i].split != Split::Train) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

void echo_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_text_file(cfg.out_dir + "/config.json", run_config_to_json(cfg).dump(2) + "\n");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

EvalData extract_eval_data(const DatasetManifest& manifest, const ModelParams& model) {
  if (manifest.input_dim() != model.config.input_dim) {
    throw ConfigError("eval: manifest dim " + std::to_string(manifest.input_dim()) +
                      " != model input dim " + std::to_string(model.config.input_dim));
  }
  EvalData data;
  for (int i : eval_sample_indices(manifest)) {
    const Sample& s = manifest.samples[static_cast<size_t>(i)];
    ModalityFeatures& side = s.split == Split::Query ? data.queries : data.gallery;
    std::vector<VectorXd> feats(kModalityCount);
    for (int m = 0; m < kModalityCount; ++m) {
      if (s.mask[m]) {
        feats[m] = encoder_forward(model.branches[m], model.config, *s.modality_inputs[m])
                       .neck_feature;
      }
    }
    side.features.push_back(std::move(feats));
    side.masks.push_back(s.mask);
    side.meta.push_back(meta_of(s));
  }
  return data;
}

EvalData eval_data_from_embeddings(const DatasetManifest& manifest,
                                   const std::vector<VectorXd>& rows) {
  const auto idx = eval_sample_indices(manifest);
  if (rows.size() != idx.size() * kModalityCount) {
    throw FormatError("embeddings: expected " + std::to_string(idx.size() * kModalityCount) +
                      " rows (eval samples x modalities), got " + std::to_string(rows.size()));
  }
  EvalData data;
  for (size_t pos = 0; pos < idx.size(); ++pos) {
    const Sample& s = manifest.samples[static_cast<size_t>(idx[pos])];
    ModalityFeatures& side = s.split == Split::Query ? data.queries : data.gallery;
    std::vector<VectorXd> feats(kModalityCount);
    for (int m = 0; m < kModalityCount; ++m) {
      if (s.mask[m]) feats[m] = rows[pos * kModalityCount + static_cast<size_t>(m)];
    }
    side.features.push_back(std::move(feats));
    side.masks.push_back(s.mask);
    side.meta.push_back(meta_of(s));
  }
  return data;
}

namespace {

EvalData resolve_eval_data(const RunConfig& cfg, const DatasetManifest& manifest) {
  if (cfg.embeddings_path) {
    return eval_data_from_embeddings(manifest, load_embeddings(*cfg.embeddings_path));
  }
  if (cfg.checkpoint_path) {
    const ModelParams model = load_checkpoint(*cfg.checkpoint_path);
    return extract_eval_data(manifest, model);
  }
  throw ConfigError("eval: need either a checkpoint or an embeddings file");
}

}  // namespace

// ---------------------------------------------------------------------------
// gradcheck

namespace {

struct Check {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_err < tolerance; }
};

VectorXd flatten_batch(const BatchFeatures& bf) {
  const Eigen::Index d = bf.dim();
  VectorXd flat(static_cast<Eigen::Index>(bf.group_count()) * bf.samples_per_id() *
                bf.modality_count() * d);
  Eigen::Index at = 0;
  for (const auto& group : bf.features)
    for (const auto& sample : group)
      for (const auto& f : sample) {
        flat.segment(at, d) = f;
        at += d;
      }
  return flat;
}

void unflatten_batch(const VectorXd& flat, BatchFeatures& bf) {
  const Eigen::Index d = bf.dim();
  Eigen::Index at = 0;
  for (auto& group : bf.features)
    for (auto& sample : group)
      for (auto& f : sample) {
        f = flat.segment(at, d);
        at += d;
      }
}

BatchFeatures random_batch(int p, int k, int m, int dim, Rng& rng) {
  BatchFeatures bf;
  bf.features.resize(p);
  for (int i = 0; i < p; ++i) {
    bf.labels.push_back(i);
    bf.features[i].resize(k);
    for (int j = 0; j < k; ++j) {
      for (int mm = 0; mm < m; ++mm) {
        VectorXd f(dim);
        for (int x = 0; x < dim; ++x) f[x] = rng.normal();
        bf.features[i][j].push_back(std::move(f));
      }
    }
  }
  return bf;
}

Check check_cdc_gradient(bool inject_error) {
  Check c{"cdc_gradient", 0.0, 1e-6};
  Rng rng(101);
  const double alpha = 0.6;
  for (int rep = 0; rep < 5; ++rep) {
    BatchFeatures bf = random_batch(4, 3, 3, 8, rng);
    const VectorXd x0 = flatten_batch(bf);
    auto objective = [&bf](const VectorXd& x) {
      BatchFeatures probe = bf;
      unflatten_batch(x, probe);
      return cdc_loss(probe, 0.6);
    };
    const VectorXd numeric = finite_diff_grad(objective, x0);
    BatchGrads grads = cdc_gradient(bf, alpha);
    BatchFeatures holder = bf;
    holder.features = grads;
    VectorXd analytic = flatten_batch(holder);
    if (inject_error) analytic *= 1.001;  // negative-control hook
    c.max_rel_err = std::max(c.max_rel_err, gradient_rel_error(analytic, numeric));
  }
  return c;
}

Check check_alnu(bool with_alb_only) {
  Check c{with_alb_only ? "alb_weights" : "alnu_full", 0.0, 1e-5};
  Rng rng(202);
  FeatureMap input(4, 4, 8);
  for (Eigen::Index i = 0; i < input.data.size(); ++i) input.data[i] = rng.normal();
  AlnuParams params = init_alnu_params(input.c, rng);
  // Give the final linear maps nonzero weights so their inputs get gradients.
  for (Eigen::Index i = 0; i < params.gamma_block.w3.size(); ++i) {
    params.gamma_block.w3[i] = rng.uniform(-0.5, 0.5);
    params.beta_block.w3[i] = rng.uniform(-0.5, 0.5);
  }

  if (with_alb_only) {
    const AlbParams& alb = params.gamma_block;
    const VectorXd p0 = flatten(alb);
    auto objective = [&](const VectorXd& p) {
      AlbParams probe = alb;
      unflatten(p, probe);
      return alb_forward(probe, input);
    };
    const VectorXd numeric = finite_diff_grad(objective, p0);
    AlbCache cache;
    alb_forward(alb, input, &cache);
    AlbParams grads = zero_like(alb);
    alb_backward(alb, cache, 1.0, grads);
    c.max_rel_err = gradient_rel_error(flatten(grads), numeric);
    return c;
  }

  // Random linear readout makes every output entry matter.
  VectorXd readout(input.data.size());
  for (Eigen::Index i = 0; i < readout.size(); ++i) readout[i] = rng.uniform(-1.0, 1.0);

  const VectorXd p0 = flatten(params);
  VectorXd x0(p0.size() + input.data.size());
  x0 << p0, input.data;
  auto objective = [&](const VectorXd& x) {
    AlnuParams probe = params;
    unflatten(x.head(p0.size()), probe);
    FeatureMap fm = input;
    fm.data = x.tail(input.data.size());
    return readout.dot(alnu_forward(probe, fm).data);
  };
  const VectorXd numeric = finite_diff_grad(objective, x0);

  AlnuCache cache;
  alnu_forward(params, input, &cache);
  AlnuParams grads = zero_like(params);
  FeatureMap d_out = zero_like(input);
  d_out.data = readout;
  FeatureMap d_input = alnu_backward(params, cache, d_out, grads);
  VectorXd analytic(x0.size());
  analytic << flatten(grads), d_input.data;
  c.max_rel_err = gradient_rel_error(analytic, numeric);
  return c;
}

Check check_encoder(InputKind kind) {
  Check c{kind == InputKind::Vector ? "encoder_vector" : "encoder_map", 0.0, 1e-5};
  ModelConfig mc;
  mc.input_kind = kind;
  if (kind == InputKind::Vector) {
    mc.input_dim = 6;
    mc.hidden_dim = 8;
  } else {
    mc.map_h = 4;
    mc.map_w = 4;
    mc.map_c = 2;
    mc.input_dim = 4 * 4 * 2;
    mc.conv_channels = 4;
  }
  mc.feature_dim = 8;
  mc.class_count = 3;
  mc.modalities = 1;
  mc.norm = NormVariant::ALNU;
  ModelParams model = init_params(303, mc);

  Rng rng(404);
  VectorXd input(mc.input_dim);
  for (int i = 0; i < mc.input_dim; ++i) input[i] = rng.normal();
  VectorXd w_feat(mc.feature_dim), w_logit(mc.class_count);
  for (int i = 0; i < mc.feature_dim; ++i) w_feat[i] = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < mc.class_count; ++i) w_logit[i] = rng.uniform(-1.0, 1.0);

  const VectorXd p0 = flatten_params(model);
  auto objective = [&](const VectorXd& p) {
    ModelParams probe = model;
    unflatten_params(p, probe);
    EncoderOut out = encoder_forward(probe.branches[0], probe.config, input);
    return w_feat.dot(out.feature) + w_logit.dot(out.logits);
  };
  const VectorXd numeric = finite_diff_grad(objective, p0);

  EncoderCache cache;
  encoder_forward(model.branches[0], model.config, input, &cache);
  ModelParams grads = zero_like(model);
  encoder_backward(model.branches[0], model.config, cache, w_feat, w_logit, grads.branches[0]);
  c.max_rel_err = gradient_rel_error(flatten_params(grads), numeric);
  return c;
}

Check check_composite(LossVariant variant) {
  Check c{std::string("composite_") + to_string(variant), 0.0, 1e-5};
  SynthConfig sc;
  sc.id_count = 4;
  sc.samples_per_id = 4;
  sc.dim = 6;
  sc.seed = 7;
  const DatasetManifest manifest = generate_synthetic(sc);

  ModelConfig mc;
  mc.input_dim = sc.dim;
  mc.hidden_dim = 8;
  mc.feature_dim = 8;
  mc.class_count = 2;
  mc.norm = NormVariant::ALNU;
  ModelParams model = init_params(505, mc);

  TrainConfig tc;
  tc.loss_variant = variant;
  tc.norm_variant = NormVariant::ALNU;
  tc.p = 2;
  tc.k = 2;
  const auto label_map = train_label_map(manifest);

  std::map<int, VectorXd> centers;
  if (variant == LossVariant::Center) {
    Rng crng(606);
    for (const auto& [id, cls] : label_map) {
      VectorXd v(mc.feature_dim);
      for (int i = 0; i < mc.feature_dim; ++i) v[i] = crng.normal();
      centers.emplace(id, std::move(v));
    }
  }

  Rng rng(707);
  MiniBatch batch = pk_sample(manifest, tc.p, tc.k, rng);

  const VectorXd p0 = flatten_params(model);
  auto objective = [&](const VectorXd& p) {
    ModelParams probe = model;
    unflatten_params(p, probe);
    return batch_loss_and_grads(manifest, batch, probe, tc, label_map,
                                centers.empty() ? nullptr : &centers, nullptr, nullptr)
        .total;
  };
  const VectorXd numeric = finite_diff_grad(objective, p0);

  GradTape<ModelParams> tape(model);
  std::map<int, VectorXd> center_grads;
  batch_loss_and_grads(manifest, batch, model, tc, label_map,
                       centers.empty() ? nullptr : &centers, &tape.grads,
                       centers.empty() ? nullptr : &center_grads);
  c.max_rel_err = gradient_rel_error(flatten_params(tape.grads), numeric);
  return c;
}

}  // namespace

int cmd_gradcheck(const RunConfig& cfg) {
  echo_config(cfg);
  std::vector<Check> checks;
  checks.push_back(check_cdc_gradient(cfg.inject_gradient_error));
  checks.push_back(check_alnu(true));
  checks.push_back(check_alnu(false));
  checks.push_back(check_encoder(InputKind::Vector));
  checks.push_back(check_encoder(InputKind::Map));
  checks.push_back(check_composite(LossVariant::Cdc));
  checks.push_back(check_composite(LossVariant::Center));
  checks.push_back(check_composite(LossVariant::Hc));

  std::string csv = "check,max_rel_err,tolerance,status\n";
  bool all_pass = true;
  const Check* worst = nullptr;
  for (const auto& c : checks) {
    csv += c.name + "," + fmt(c.max_rel_err) + "," + fmt(c.tolerance) + "," +
           (c.pass() ? "pass" : "fail") + "\n";
    std::cout << (c.pass() ? "[pass] " : "[FAIL] ") << c.name
              << "  max_rel_err=" << fmt(c.max_rel_err) << "  tol=" << fmt(c.tolerance) << "\n";
    if (!c.pass()) {
      all_pass = false;
      if (!worst || c.max_rel_err / c.tolerance > worst->max_rel_err / worst->tolerance) {
        worst = &c;
      }
    }
  }
  write_text_file(cfg.out_dir + "/gradcheck.csv", csv);
  if (!all_pass) {
    std::cout << "gradcheck failed; worst offender: " << worst->name
              << " (max_rel_err=" << fmt(worst->max_rel_err) << ")\n";
    return 1;
  }
  std::cout << "gradcheck: all " << checks.size() << " checks passed\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg) {
  const DatasetManifest manifest = resolve_dataset(cfg);
  const ModelConfig mc = model_config_for(cfg, manifest);
  ModelParams model = init_params(cfg.seed, mc);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const FitResult result = fit(manifest, model, tc);

  echo_config(cfg);
  save_checkpoint(model, cfg.out_dir + "/model.ccnl");

  std::string log = metrics_csv_header() + "\n";
  for (const auto& row : result.log) log += metrics_csv_row(row) + "\n";
  write_text_file(cfg.out_dir + "/train_log.csv", log);

  // Post-neck features of the eval split, one row per (sample, modality).
  const auto idx = eval_sample_indices(manifest);
  if (!idx.empty()) {
    std::vector<VectorXd> rows;
    rows.reserve(idx.size() * kModalityCount);
    for (int i : idx) {
      const Sample& s = manifest.samples[static_cast<size_t>(i)];
      for (int m = 0; m < kModalityCount; ++m) {
        if (s.mask[m]) {
          rows.push_back(encoder_forward(model.branches[m], model.config, *s.modality_inputs[m])
                             .neck_feature);
        } else {
          rows.push_back(VectorXd::Zero(mc.feature_dim));
        }
      }
    }
    save_embeddings(cfg.out_dir + "/embeddings.ccnf", rows);
  }

  const auto& last = result.log.back();
  std::cout << "train: " << result.log.size() << " epochs, final L_total=" << fmt(last.l_total)
            << " L_ce=" << fmt(last.l_ce) << " intra_modality_dist="
            << fmt(last.intra_modality_dist) << "\n";
  std::cout << "wrote " << cfg.out_dir << "/model.ccnl, train_log.csv, embeddings.ccnf\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const DatasetManifest manifest = resolve_dataset(cfg);
  const EvalData data = resolve_eval_data(cfg, manifest);

  std::vector<MetricRow> rows;
  for (ProtocolKind protocol : cfg.protocols) {
    if (cfg.repr == "center") {
      MetricRow row;
      row.protocol = to_string(protocol);
      row.subset = "center";
      row.metrics = masked_center_eval(data, protocol);
      rows.push_back(row);
    } else {
      for (const auto& subset_str : cfg.subsets) {
        MetricRow row;
        row.protocol = to_string(protocol);
        row.subset = subset_str;
        row.metrics = modality_subset_eval(data, parse_subset(subset_str), protocol);
        rows.push_back(row);
      }
    }
  }

  echo_config(cfg);
  emit_report(rows, cfg.out_dir + "/metrics.csv", cfg.out_dir + "/metrics.svg");
  for (const auto& r : rows) {
    std::cout << r.protocol << " " << r.subset << ": mAP=" << fmt(r.metrics.map)
              << " rank1=" << fmt(r.metrics.rank1) << " rank5=" << fmt(r.metrics.rank5)
              << " rank10=" << fmt(r.metrics.rank10) << "\n";
  }
  return 0;
}

int cmd_missing(const RunConfig& cfg) {
  const DatasetManifest manifest = resolve_dataset(cfg);
  const EvalData data = resolve_eval_data(cfg, manifest);

  MissingConfig mc = cfg.missing;
  if (!cfg.missing_seed_set) mc.seed = cfg.seed;
  const ProtocolKind protocol = cfg.protocols.front();
  const auto table = missing_experiment(data, mc, protocol);

  std::vector<MetricRow> rows;
  for (const auto& row : table) {
    MetricRow r;
    r.protocol = to_string(protocol);
    r.subset = "center";
    r.ratio = row.ratio;
    r.metrics = row.mean;
    rows.push_back(r);
  }

  echo_config(cfg);
  emit_report(rows, cfg.out_dir + "/missing.csv", cfg.out_dir + "/missing.svg");
  for (const auto& r : rows) {
    std::cout << "ratio " << fmt(r.ratio) << ": mAP=" << fmt(r.metrics.map)
              << " rank1=" << fmt(r.metrics.rank1) << "\n";
  }
  return 0;
}

int cmd_sweep(const RunConfig& cfg) {
  const DatasetManifest manifest = resolve_dataset(cfg);
  const ModelConfig mc = model_config_for(cfg, manifest);
  const ProtocolKind protocol = cfg.protocols.front();
  const std::vector<int> full_subset = {0, 1, 2};

  auto run_cell = [&](double lambda, double alpha) {
    ModelParams model = init_params(cfg.seed, mc);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.lambda = lambda;
    tc.alpha = alpha;
    fit(manifest, model, tc);
    const EvalData data = extract_eval_data(manifest, model);
    return modality_subset_eval(data, full_subset, protocol);
  };

  std::string csv = "param,value,mAP,rank1,rank5,rank10\n";
  int done = 0;
  const int total = static_cast<int>(cfg.sweep_lambdas.size() + cfg.sweep_alphas.size());
  for (double lambda : cfg.sweep_lambdas) {
    const Metrics m = run_cell(lambda, cfg.train.alpha);
    csv += "lambda," + fmt(lambda) + "," + fmt(m.map) + "," + fmt(m.rank1) + "," + fmt(m.rank5) +
           "," + fmt(m.rank10) + "\n";
    std::cout << "sweep " << ++done << "/" << total << " lambda=" << fmt(lambda)
              << " mAP=" << fmt(m.map) << "\n";
  }
  for (double alpha : cfg.sweep_alphas) {
    const Metrics m = run_cell(cfg.train.lambda, alpha);
    csv += "alpha," + fmt(alpha) + "," + fmt(m.map) + "," + fmt(m.rank1) + "," + fmt(m.rank5) +
           "," + fmt(m.rank10) + "\n";
    std::cout << "sweep " << ++done << "/" << total << " alpha=" << fmt(alpha)
              << " mAP=" << fmt(m.map) << "\n";
  }

  echo_config(cfg);
  write_text_file(cfg.out_dir + "/sweep.csv", csv);
  return 0;
}

int run_command(const std::string& name, const RunConfig& cfg) {
  try {
    if (name == "gradcheck") return cmd_gradcheck(cfg);
    if (name == "train") return cmd_train(cfg);
    if (name == "eval") return cmd_eval(cfg);
    if (name == "missing") return cmd_missing(cfg);
    if (name == "sweep") return cmd_sweep(cfg);
    std::cerr << "error: unknown command '" << name << "'\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ccnet
