#include "ccnet/model.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>

using namespace ccnet;

namespace {

ModelConfig toy_config(InputKind kind = InputKind::Vector, NormVariant norm = NormVariant::ALNU) {
  ModelConfig mc;
  mc.input_kind = kind;
  if (kind == InputKind::Vector) {
    mc.input_dim = 6;
    mc.hidden_dim = 8;
  } else {
    mc.map_h = 4;
    mc.map_w = 4;
    mc.map_c = 2;
    mc.input_dim = 32;
    mc.conv_channels = 4;
  }
  mc.feature_dim = 8;
  mc.class_count = 3;
  mc.modalities = 3;
  mc.norm = norm;
  return mc;
}

VectorXd random_input(int dim, Rng& rng) {
  VectorXd x(dim);
  for (int i = 0; i < dim; ++i) x[i] = rng.normal();
  return x;
}

std::string temp_path(const char* stem) {
  return std::string("/tmp/ccnet_test_") + stem + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("encoder output dims and concatenated representation") {
  const ModelConfig mc = toy_config();
  const ModelParams model = init_params(1, mc);
  Rng rng(2);
  const VectorXd x = random_input(mc.input_dim, rng);
  const EncoderOut out = encoder_forward(model.branches[0], mc, x);
  CHECK(out.feature.size() == mc.feature_dim);
  CHECK(out.neck_feature.size() == mc.feature_dim);
  CHECK(out.logits.size() == mc.class_count);

  std::vector<std::optional<VectorXd>> inputs(3, x);
  const SampleForwardOut s = sample_forward(model, inputs);
  CHECK(s.concatenated.size() == 3 * mc.feature_dim);
  CHECK(s.features.size() == 3);
}

TEST_CASE("zero weights annihilate the feature") {
  const ModelConfig mc = toy_config();
  ModelParams model = zero_like(init_params(1, mc));
  model.config = mc;
  for (auto& b : model.branches) b.neck_var = VectorXd::Ones(mc.feature_dim);
  Rng rng(3);
  const VectorXd x = random_input(mc.input_dim, rng);
  const EncoderOut out = encoder_forward(model.branches[0], mc, x);
  CHECK(out.feature.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.logits.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward is deterministic") {
  const ModelConfig mc = toy_config();
  const ModelParams model = init_params(5, mc);
  Rng rng(6);
  const VectorXd x = random_input(mc.input_dim, rng);
  const EncoderOut a = encoder_forward(model.branches[1], mc, x);
  const EncoderOut b = encoder_forward(model.branches[1], mc, x);
  CHECK((a.feature - b.feature).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init_params determinism and seed sensitivity") {
  const ModelConfig mc = toy_config();
  const VectorXd a = flatten_params(init_params(42, mc));
  const VectorXd b = flatten_params(init_params(42, mc));
  const VectorXd c = flatten_params(init_params(43, mc));
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("fresh adaptive unit applies 0.5 * normalized + 0.5") {
  Rng rng(7);
  AlnuParams p = init_alnu_params(4, rng);
  FeatureMap in(2, 2, 4);
  for (Eigen::Index i = 0; i < in.data.size(); ++i) in.data[i] = rng.normal();
  const LayerStats s = layer_stats(in);
  const FeatureMap expected = normalize(in, s.mu, s.sigma, p.epsilon);
  const FeatureMap out = alnu_forward(p, in);
  CHECK((out.data - (0.5 * expected.data).eval() - VectorXd::Constant(in.data.size(), 0.5))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("no parameter sharing across branches") {
  const ModelConfig mc = toy_config();
  ModelParams model = init_params(8, mc);
  Rng rng(9);
  const VectorXd x = random_input(mc.input_dim, rng);
  const EncoderOut before1 = encoder_forward(model.branches[1], mc, x);
  const EncoderOut before2 = encoder_forward(model.branches[2], mc, x);
  model.branches[0].p1a.weights.setConstant(7.0);
  model.branches[0].p2b.bias.setConstant(-2.0);
  const EncoderOut after1 = encoder_forward(model.branches[1], mc, x);
  const EncoderOut after2 = encoder_forward(model.branches[2], mc, x);
  CHECK((before1.feature - after1.feature).cwiseAbs().maxCoeff() == 0.0);
  CHECK((before2.feature - after2.feature).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identical branches and inputs give identical blocks; permutation maps blocks") {
  const ModelConfig mc = toy_config();
  ModelParams model = init_params(10, mc);
  model.branches[1] = model.branches[0];
  model.branches[2] = model.branches[0];
  Rng rng(11);
  const VectorXd x = random_input(mc.input_dim, rng);
  std::vector<std::optional<VectorXd>> inputs(3, x);
  const SampleForwardOut out = sample_forward(model, inputs);
  CHECK((out.neck_features[0] - out.neck_features[1]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.neck_features[0] - out.neck_features[2]).cwiseAbs().maxCoeff() == 0.0);

  // Distinct inputs through identical branches: permuting inputs permutes blocks.
  std::vector<std::optional<VectorXd>> distinct(3);
  for (int m = 0; m < 3; ++m) distinct[static_cast<size_t>(m)] = random_input(mc.input_dim, rng);
  const SampleForwardOut a = sample_forward(model, distinct);
  std::swap(distinct[0], distinct[2]);
  const SampleForwardOut b = sample_forward(model, distinct);
  CHECK((a.neck_features[0] - b.neck_features[2]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.neck_features[2] - b.neck_features[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sample_forward rejects missing modalities in the training path") {
  const ModelConfig mc = toy_config();
  const ModelParams model = init_params(12, mc);
  Rng rng(13);
  std::vector<std::optional<VectorXd>> inputs(3, random_input(mc.input_dim, rng));
  inputs[1].reset();
  CHECK_THROWS_AS(sample_forward(model, inputs), InputError);
}

TEST_CASE("full-model gradient on a two-identity toy batch matches finite differences") {
  for (const InputKind kind : {InputKind::Vector, InputKind::Map}) {
    const ModelConfig mc = toy_config(kind);
    ModelParams model = init_params(14, mc);
    Rng rng(15);
    // two identities x two samples x three modalities
    std::vector<VectorXd> inputs;
    std::vector<VectorXd> readouts;
    for (int s = 0; s < 4; ++s) {
      inputs.push_back(random_input(mc.input_dim, rng));
      VectorXd w(mc.feature_dim);
      for (int i = 0; i < mc.feature_dim; ++i) w[i] = rng.uniform(-1.0, 1.0);
      readouts.push_back(std::move(w));
    }
    auto value = [&](const ModelParams& m) {
      double total = 0.0;
      for (size_t s = 0; s < inputs.size(); ++s) {
        for (int mod = 0; mod < 3; ++mod) {
          total += readouts[s].dot(
              encoder_forward(m.branches[static_cast<size_t>(mod)], m.config, inputs[s]).feature);
        }
      }
      return total;
    };
    auto obj = [&](const VectorXd& p) {
      ModelParams probe = model;
      unflatten_params(p, probe);
      return value(probe);
    };
    const VectorXd numeric = finite_diff_grad(obj, flatten_params(model));

    ModelParams grads = zero_like(model);
    const VectorXd zero_logits = VectorXd::Zero(mc.class_count);
    for (size_t s = 0; s < inputs.size(); ++s) {
      for (int mod = 0; mod < 3; ++mod) {
        EncoderCache cache;
        encoder_forward(model.branches[static_cast<size_t>(mod)], mc, inputs[s], &cache);
        encoder_backward(model.branches[static_cast<size_t>(mod)], mc, cache, readouts[s],
                         zero_logits, grads.branches[static_cast<size_t>(mod)]);
      }
    }
    CHECK(gradient_rel_error(flatten_params(grads), numeric) < 1e-5);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact for every variant") {
  for (const InputKind kind : {InputKind::Vector, InputKind::Map}) {
    for (const NormVariant norm :
         {NormVariant::ALNU, NormVariant::LN, NormVariant::IN, NormVariant::None}) {
      ModelParams model = init_params(20, toy_config(kind, norm));
      // Buffers should round-trip too.
      for (auto& b : model.branches) {
        b.neck_mu.setConstant(0.25);
        b.neck_var.setConstant(1.5);
      }
      const std::string path = temp_path("ckpt");
      save_checkpoint(model, path);
      const ModelParams loaded = load_checkpoint(path);
      CHECK(loaded.config.input_kind == model.config.input_kind);
      CHECK(loaded.config.norm == model.config.norm);
      CHECK((flatten_params(loaded) - flatten_params(model)).cwiseAbs().maxCoeff() == 0.0);
      for (size_t b = 0; b < model.branches.size(); ++b) {
        CHECK((loaded.branches[b].neck_mu - model.branches[b].neck_mu).cwiseAbs().maxCoeff() ==
              0.0);
        CHECK((loaded.branches[b].neck_var - model.branches[b].neck_var).cwiseAbs().maxCoeff() ==
              0.0);
      }
      std::remove(path.c_str());
    }
  }
}

TEST_CASE("checkpoint format errors") {
  const std::string path = temp_path("badckpt");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  // Truncated payload.
  ModelParams model = init_params(21, toy_config());
  save_checkpoint(model, path);
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/model.ccnl"), IoError);
}

TEST_CASE("model config validation") {
  ModelConfig mc = toy_config(InputKind::Map);
  mc.input_dim = 13;  // != map_h*map_w*map_c
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  ModelConfig bad = toy_config();
  bad.feature_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
