#include "ccnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace ccnet {

namespace {
constexpr double kNeckEpsilon = 1e-5;
}

const char* to_string(InputKind k) { return k == InputKind::Vector ? "vector" : "map"; }

const char* to_string(NormVariant v) {
  switch (v) {
    case NormVariant::None: return "none";
    case NormVariant::IN: return "in";
    case NormVariant::LN: return "ln";
    case NormVariant::ALNU: return "alnu";
  }
  return "?";
}

InputKind input_kind_from_string(const std::string& s) {
  if (s == "vector") return InputKind::Vector;
  if (s == "map") return InputKind::Map;
  throw ConfigError("unknown input kind '" + s + "'");
}

NormVariant norm_variant_from_string(const std::string& s) {
  if (s == "none") return NormVariant::None;
  if (s == "in") return NormVariant::IN;
  if (s == "ln") return NormVariant::LN;
  if (s == "alnu") return NormVariant::ALNU;
  throw ConfigError("unknown norm variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || feature_dim < 1 || class_count < 1) {
    throw ConfigError("model config: dims must be positive");
  }
  if (modalities < 1) throw ConfigError("model config: modalities must be >= 1");
  if (input_kind == InputKind::Map) {
    if (map_h < 1 || map_w < 1 || map_c < 1 || conv_channels < 1) {
      throw ConfigError("model config: map dims must be positive");
    }
    if (input_dim != map_h * map_w * map_c) {
      throw ConfigError("model config: input_dim must equal map_h*map_w*map_c");
    }
  }
}

int ModelConfig::mid_channels() const {
  return input_kind == InputKind::Vector ? hidden_dim : conv_channels;
}

int ModelConfig::part2_input_dim() const {
  return input_kind == InputKind::Vector ? hidden_dim : map_h * map_w * conv_channels;
}

AffineLayer zero_like(const AffineLayer& l) {
  return {MatrixXd::Zero(l.weights.rows(), l.weights.cols()), VectorXd::Zero(l.bias.size())};
}

BranchParams zero_like(const BranchParams& b) {
  BranchParams z;
  z.p1a = zero_like(b.p1a);
  z.p1b = zero_like(b.p1b);
  z.conv1 = zero_like(b.conv1);
  z.conv1_bias = VectorXd::Zero(b.conv1_bias.size());
  z.alnu = zero_like(b.alnu);
  z.ln = zero_like(b.ln);
  z.in_unit = zero_like(b.in_unit);
  z.p2a = zero_like(b.p2a);
  z.p2b = zero_like(b.p2b);
  z.neck_scale = VectorXd::Zero(b.neck_scale.size());
  z.neck_mu = VectorXd::Zero(b.neck_mu.size());
  z.neck_var = VectorXd::Zero(b.neck_var.size());
  z.head = zero_like(b.head);
  return z;
}

ModelParams zero_like(const ModelParams& m) {
  ModelParams z;
  z.config = m.config;
  z.branches.reserve(m.branches.size());
  for (const auto& b : m.branches) z.branches.push_back(zero_like(b));
  return z;
}

ModelParams init_params(std::uint64_t seed, const ModelConfig& config) {
  config.validate();
  Rng rng(seed);
  ModelParams m;
  m.config = config;
  m.branches.resize(config.modalities);
  for (auto& b : m.branches) {
    if (config.input_kind == InputKind::Vector) {
      b.p1a = {uniform_fan_in_matrix(config.hidden_dim, config.input_dim, rng),
               VectorXd::Zero(config.hidden_dim)};
      b.p1b = {uniform_fan_in_matrix(config.hidden_dim, config.hidden_dim, rng),
               VectorXd::Zero(config.hidden_dim)};
    } else {
      b.conv1 = uniform_fan_in_kernel(3, 3, config.map_c, config.conv_channels, rng);
      b.conv1_bias = VectorXd::Zero(config.conv_channels);
    }
    switch (config.norm) {
      case NormVariant::ALNU: b.alnu = init_alnu_params(config.mid_channels(), rng); break;
      case NormVariant::IN: b.in_unit = init_in_unit_params(config.mid_channels()); break;
      case NormVariant::LN:
      case NormVariant::None: break;
    }
    b.p2a = {uniform_fan_in_matrix(config.feature_dim, config.part2_input_dim(), rng),
             VectorXd::Zero(config.feature_dim)};
    b.p2b = {uniform_fan_in_matrix(config.feature_dim, config.feature_dim, rng),
             VectorXd::Zero(config.feature_dim)};
    b.neck_scale = VectorXd::Ones(config.feature_dim);
    b.neck_mu = VectorXd::Zero(config.feature_dim);
    b.neck_var = VectorXd::Ones(config.feature_dim);
    b.head = {uniform_fan_in_matrix(config.class_count, config.feature_dim, rng),
              VectorXd::Zero(config.class_count)};
  }
  return m;
}

// ---------------------------------------------------------------------------

EncoderOut encoder_forward(const BranchParams& branch, const ModelConfig& config,
                           const VectorXd& input, EncoderCache* cache) {
  if (input.size() != config.input_dim) {
    throw ShapeError("encoder_forward: input dim " + std::to_string(input.size()) +
                     " != " + std::to_string(config.input_dim));
  }
  EncoderCache local;
  EncoderCache& cc = cache ? *cache : local;
  cc.input = input;

  // part1; the norm unit consumes the pre-activation so its input statistics
  // stay clear of the epsilon-dominated regime
  if (config.input_kind == InputKind::Vector) {
    cc.pre1a = affine_map(branch.p1a.weights, branch.p1a.bias, input);
    cc.act1a = relu(cc.pre1a);
    cc.mid = FeatureMap(1, 1, config.hidden_dim);
    cc.mid.data = affine_map(branch.p1b.weights, branch.p1b.bias, cc.act1a);
  } else {
    FeatureMap xmap(config.map_h, config.map_w, config.map_c);
    xmap.data = input;
    cc.mid = conv2d(xmap, branch.conv1, 1, 1);
    add_channel_bias(cc.mid, branch.conv1_bias);
  }

  // norm unit
  switch (config.norm) {
    case NormVariant::None: cc.normed = cc.mid; break;
    case NormVariant::ALNU: cc.normed = alnu_forward(branch.alnu, cc.mid, &cc.alnu_cache); break;
    case NormVariant::LN: cc.normed = ln_unit_forward(branch.ln, cc.mid, &cc.ln_cache); break;
    case NormVariant::IN: cc.normed = in_unit_forward(branch.in_unit, cc.mid, &cc.in_cache); break;
  }

  // part2
  cc.part2_in = cc.normed.data;
  cc.pre2a = affine_map(branch.p2a.weights, branch.p2a.bias, cc.part2_in);
  cc.act2a = relu(cc.pre2a);
  cc.pre2b = affine_map(branch.p2b.weights, branch.p2b.bias, cc.act2a);
  cc.feature = relu(cc.pre2b);

  // neck + head
  const VectorXd inv_std = (branch.neck_var.array() + kNeckEpsilon).sqrt().inverse();
  cc.neck_feature =
      (branch.neck_scale.array() * (cc.feature - branch.neck_mu).array() * inv_std.array());
  cc.logits = affine_map(branch.head.weights, branch.head.bias, cc.neck_feature);

  return {cc.feature, cc.neck_feature, cc.logits};
}

VectorXd encoder_backward(const BranchParams& branch, const ModelConfig& config,
                          const EncoderCache& cache, const VectorXd& d_feature,
                          const VectorXd& d_logits, BranchParams& grads) {
  // head
  AffineGrads hg = affine_map_backward(branch.head.weights, cache.neck_feature, d_logits);
  grads.head.weights += hg.d_weights;
  grads.head.bias += hg.d_bias;

  // neck (running stats are constants here)
  const VectorXd inv_std = (branch.neck_var.array() + kNeckEpsilon).sqrt().inverse();
  const VectorXd standardized = (cache.feature - branch.neck_mu).cwiseProduct(inv_std);
  grads.neck_scale += hg.d_input.cwiseProduct(standardized);
  VectorXd d_feat = d_feature + hg.d_input.cwiseProduct(branch.neck_scale).cwiseProduct(inv_std);

  // part2
  const VectorXd d_pre2b = relu_backward(cache.pre2b, d_feat);
  AffineGrads g2b = affine_map_backward(branch.p2b.weights, cache.act2a, d_pre2b);
  grads.p2b.weights += g2b.d_weights;
  grads.p2b.bias += g2b.d_bias;
  const VectorXd d_pre2a = relu_backward(cache.pre2a, g2b.d_input);
  AffineGrads g2a = affine_map_backward(branch.p2a.weights, cache.part2_in, d_pre2a);
  grads.p2a.weights += g2a.d_weights;
  grads.p2a.bias += g2a.d_bias;

  FeatureMap d_normed = zero_like(cache.normed);
  d_normed.data = g2a.d_input;

  // norm unit
  FeatureMap d_mid;
  switch (config.norm) {
    case NormVariant::None: d_mid = d_normed; break;
    case NormVariant::ALNU:
      d_mid = alnu_backward(branch.alnu, cache.alnu_cache, d_normed, grads.alnu);
      break;
    case NormVariant::LN:
      d_mid = ln_unit_backward(branch.ln, cache.ln_cache, d_normed, grads.ln);
      break;
    case NormVariant::IN:
      d_mid = in_unit_backward(branch.in_unit, cache.in_cache, d_normed, grads.in_unit);
      break;
  }

  // part1
  if (config.input_kind == InputKind::Vector) {
    AffineGrads g1b = affine_map_backward(branch.p1b.weights, cache.act1a, d_mid.data);
    grads.p1b.weights += g1b.d_weights;
    grads.p1b.bias += g1b.d_bias;
    const VectorXd d_pre1a = relu_backward(cache.pre1a, g1b.d_input);
    AffineGrads g1a = affine_map_backward(branch.p1a.weights, cache.input, d_pre1a);
    grads.p1a.weights += g1a.d_weights;
    grads.p1a.bias += g1a.d_bias;
    return g1a.d_input;
  }
  grads.conv1_bias += channel_bias_grad(d_mid);
  FeatureMap xmap(config.map_h, config.map_w, config.map_c);
  xmap.data = cache.input;
  Conv2dGrads cg = conv2d_backward(xmap, branch.conv1, 1, 1, d_mid);
  grads.conv1.data += cg.d_kernel.data;
  return cg.d_input.data;
}

SampleForwardOut sample_forward(const ModelParams& params,
                                const std::vector<std::optional<VectorXd>>& modality_inputs,
                                std::vector<EncoderCache>* caches) {
  if (static_cast<int>(modality_inputs.size()) != params.config.modalities) {
    throw InputError("sample_forward: expected " + std::to_string(params.config.modalities) +
                     " modality inputs");
  }
  SampleForwardOut out;
  if (caches) caches->resize(modality_inputs.size());
  for (size_t m = 0; m < modality_inputs.size(); ++m) {
    if (!modality_inputs[m].has_value()) {
      throw InputError("sample_forward: modality " + std::to_string(m) +
                       " missing in the training path");
    }
    EncoderOut eo = encoder_forward(params.branches[m], params.config, *modality_inputs[m],
                                    caches ? &(*caches)[m] : nullptr);
    out.features.push_back(std::move(eo.feature));
    out.neck_features.push_back(std::move(eo.neck_feature));
    out.logits.push_back(std::move(eo.logits));
  }
  out.concatenated = VectorXd(params.config.feature_dim * params.config.modalities);
  for (size_t m = 0; m < out.neck_features.size(); ++m) {
    out.concatenated.segment(m * params.config.feature_dim, params.config.feature_dim) =
        out.neck_features[m];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Named parameter blocks drive the flat views and the checkpoint format.

namespace {

struct BlockRef {
  std::string name;
  std::vector<std::uint32_t> dims;
  double* data;
  Eigen::Index size;
  bool trainable;
};

void add_vec(std::vector<BlockRef>& out, const std::string& name, VectorXd& v,
             bool trainable = true) {
  out.push_back({name, {static_cast<std::uint32_t>(v.size())}, v.data(), v.size(), trainable});
}

void add_mat(std::vector<BlockRef>& out, const std::string& name, MatrixXd& m) {
  out.push_back({name,
                 {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                 m.data(),
                 m.size(),
                 true});
}

void add_scalar(std::vector<BlockRef>& out, const std::string& name, double& v) {
  out.push_back({name, {1}, &v, 1, true});
}

void add_kernel(std::vector<BlockRef>& out, const std::string& name, Conv2dKernel& k) {
  out.push_back({name,
                 {static_cast<std::uint32_t>(k.kh), static_cast<std::uint32_t>(k.kw),
                  static_cast<std::uint32_t>(k.c_in), static_cast<std::uint32_t>(k.c_out)},
                 k.data.data(),
                 k.data.size(),
                 true});
}

void add_alb(std::vector<BlockRef>& out, const std::string& prefix, AlbParams& p) {
  add_kernel(out, prefix + ".conv1", p.conv1);
  add_vec(out, prefix + ".bias1", p.bias1);
  add_kernel(out, prefix + ".conv2", p.conv2);
  add_vec(out, prefix + ".bias2", p.bias2);
  add_vec(out, prefix + ".w3", p.w3);
  add_scalar(out, prefix + ".b3", p.b3);
}

std::vector<BlockRef> named_blocks(ModelParams& m) {
  std::vector<BlockRef> out;
  for (size_t b = 0; b < m.branches.size(); ++b) {
    const std::string p = "branch" + std::to_string(b);
    BranchParams& br = m.branches[b];
    if (m.config.input_kind == InputKind::Vector) {
      add_mat(out, p + ".part1.a.weights", br.p1a.weights);
      add_vec(out, p + ".part1.a.bias", br.p1a.bias);
      add_mat(out, p + ".part1.b.weights", br.p1b.weights);
      add_vec(out, p + ".part1.b.bias", br.p1b.bias);
    } else {
      add_kernel(out, p + ".part1.conv", br.conv1);
      add_vec(out, p + ".part1.conv_bias", br.conv1_bias);
    }
    switch (m.config.norm) {
      case NormVariant::ALNU:
        add_alb(out, p + ".alnu.gamma", br.alnu.gamma_block);
        add_alb(out, p + ".alnu.beta", br.alnu.beta_block);
        break;
      case NormVariant::LN:
        add_scalar(out, p + ".ln.gamma", br.ln.gamma);
        add_scalar(out, p + ".ln.beta", br.ln.beta);
        break;
      case NormVariant::IN:
        add_vec(out, p + ".in.gamma", br.in_unit.gamma);
        add_vec(out, p + ".in.beta", br.in_unit.beta);
        break;
      case NormVariant::None: break;
    }
    add_mat(out, p + ".part2.a.weights", br.p2a.weights);
    add_vec(out, p + ".part2.a.bias", br.p2a.bias);
    add_mat(out, p + ".part2.b.weights", br.p2b.weights);
    add_vec(out, p + ".part2.b.bias", br.p2b.bias);
    add_vec(out, p + ".neck.scale", br.neck_scale);
    add_vec(out, p + ".neck.mu", br.neck_mu, false);
    add_vec(out, p + ".neck.var", br.neck_var, false);
    add_mat(out, p + ".head.weights", br.head.weights);
    add_vec(out, p + ".head.bias", br.head.bias);
  }
  return out;
}

}  // namespace

Eigen::Index param_count(const ModelParams& m) {
  Eigen::Index n = 0;
  auto blocks = named_blocks(const_cast<ModelParams&>(m));
  for (const auto& b : blocks)
    if (b.trainable) n += b.size;
  return n;
}

VectorXd flatten_params(const ModelParams& m) {
  VectorXd flat(param_count(m));
  Eigen::Index at = 0;
  auto blocks = named_blocks(const_cast<ModelParams&>(m));
  for (const auto& b : blocks) {
    if (!b.trainable) continue;
    std::memcpy(flat.data() + at, b.data, sizeof(double) * b.size);
    at += b.size;
  }
  return flat;
}

void unflatten_params(const VectorXd& flat, ModelParams& m) {
  if (flat.size() != param_count(m)) throw ShapeError("unflatten_params: size mismatch");
  Eigen::Index at = 0;
  for (auto& b : named_blocks(m)) {
    if (!b.trainable) continue;
    std::memcpy(b.data, flat.data() + at, sizeof(double) * b.size);
    at += b.size;
  }
}

// ---------------------------------------------------------------------------
// Checkpoint IO.

namespace {

constexpr char kMagic[4] = {'C', 'C', 'N', 'L'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("checkpoint: truncated u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& os, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, data + i, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

void read_f64(std::istream& is, double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw FormatError("checkpoint: truncated payload");
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    std::memcpy(data + i, &bits, 8);
  }
}

void write_block(std::ostream& os, const std::string& name,
                 const std::vector<std::uint32_t>& dims, const double* data, Eigen::Index n) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) write_u32(os, d);
  write_f64(os, data, n);
}

std::vector<double> config_to_meta(const ModelConfig& c) {
  return {static_cast<double>(c.input_kind == InputKind::Map ? 1 : 0),
          static_cast<double>(c.input_dim),
          static_cast<double>(c.map_h),
          static_cast<double>(c.map_w),
          static_cast<double>(c.map_c),
          static_cast<double>(c.hidden_dim),
          static_cast<double>(c.conv_channels),
          static_cast<double>(c.feature_dim),
          static_cast<double>(c.class_count),
          static_cast<double>(c.modalities),
          static_cast<double>(static_cast<int>(c.norm))};
}

ModelConfig config_from_meta(const std::vector<double>& v) {
  if (v.size() != 11) throw FormatError("checkpoint: bad meta block size");
  if (v[10] < 0.0 || v[10] > 3.0) throw FormatError("checkpoint: bad norm variant");
  ModelConfig c;
  c.input_kind = v[0] != 0.0 ? InputKind::Map : InputKind::Vector;
  c.input_dim = static_cast<int>(v[1]);
  c.map_h = static_cast<int>(v[2]);
  c.map_w = static_cast<int>(v[3]);
  c.map_c = static_cast<int>(v[4]);
  c.hidden_dim = static_cast<int>(v[5]);
  c.conv_channels = static_cast<int>(v[6]);
  c.feature_dim = static_cast<int>(v[7]);
  c.class_count = static_cast<int>(v[8]);
  c.modalities = static_cast<int>(v[9]);
  c.norm = static_cast<NormVariant>(static_cast<int>(v[10]));
  return c;
}

}  // namespace

void save_checkpoint(const ModelParams& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);

  const auto meta = config_to_meta(m.config);
  write_block(os, "meta.config", {static_cast<std::uint32_t>(meta.size())}, meta.data(),
              static_cast<Eigen::Index>(meta.size()));

  auto blocks = named_blocks(const_cast<ModelParams&>(m));
  for (const auto& b : blocks) write_block(os, b.name, b.dims, b.data, b.size);
  if (!os) throw IoError("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }

  struct RawBlock {
    std::vector<std::uint32_t> dims;
    std::vector<double> values;
  };
  std::map<std::string, RawBlock> raw;
  bool first = true;
  ModelConfig config;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const std::uint32_t name_len = read_u32(is);
    if (name_len > (1u << 16)) throw FormatError("checkpoint: implausible block name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("checkpoint: truncated block name");
    const std::uint32_t rank = read_u32(is);
    if (rank > 8) throw FormatError("checkpoint: implausible block rank");
    RawBlock blk;
    blk.dims.resize(rank);
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      blk.dims[i] = read_u32(is);
      count *= blk.dims[i];
      if (count > (1u << 28)) throw FormatError("checkpoint: implausible block size");
    }
    blk.values.resize(count);
    read_f64(is, blk.values.data(), static_cast<Eigen::Index>(count));
    if (first) {
      if (name != "meta.config") throw FormatError("checkpoint: missing meta block");
      config = config_from_meta(blk.values);
      first = false;
    } else {
      raw.emplace(std::move(name), std::move(blk));
    }
  }
  if (first) throw FormatError("checkpoint: empty file");

  ModelParams m = zero_like(init_params(0, config));
  m.config = config;
  for (auto& b : named_blocks(m)) {
    auto it = raw.find(b.name);
    if (it == raw.end()) throw FormatError("checkpoint: missing block " + b.name);
    if (it->second.dims != b.dims) throw FormatError("checkpoint: shape mismatch in " + b.name);
    std::memcpy(b.data, it->second.values.data(), sizeof(double) * b.size);
    raw.erase(it);
  }
  if (!raw.empty()) {
    throw FormatError("checkpoint: unknown block " + raw.begin()->first);
  }
  return m;
}

}  // namespace ccnet
