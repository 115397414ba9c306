#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvitime/nn/autodiff.hpp"
#include "mvitime/rng.hpp"

namespace mvitime::nn {

struct BlockDesc {
  enum class Kind { MV2, MViT };
  Kind kind = Kind::MV2;
  int channels = 0;
  // MV2
  int stride = 1;
  int expansion = 4;
  // MViT
  int patch_size = 2;
  int transformer_dim = 64;
  int n_heads = 4;
  int depth = 2;

  bool operator==(const BlockDesc&) const = default;
};

struct ModelConfig {
  int input_length = 3000;
  int stem_channels = 16;
  std::vector<BlockDesc> blocks;
  int projection_dim = 128;
  int n_classes = 5;

  static ModelConfig default_xs();
  // Small config for tests and toy runs.
  static ModelConfig tiny(int input_length = 32);

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

inline ModelConfig ModelConfig::default_xs() {
  ModelConfig c;
  c.input_length = 3000;
  c.stem_channels = 16;
  auto mv2 = [](int ch, int s) {
    BlockDesc b;
    b.kind = BlockDesc::Kind::MV2;
    b.channels = ch;
    b.stride = s;
    b.expansion = 4;
    return b;
  };
  auto mvit = [](int ch, int dim, int depth) {
    BlockDesc b;
    b.kind = BlockDesc::Kind::MViT;
    b.channels = ch;
    b.transformer_dim = dim;
    b.n_heads = 4;
    b.depth = depth;
    b.patch_size = 2;
    return b;
  };
  c.blocks = {mv2(24, 1), mv2(48, 2), mv2(64, 2), mvit(64, 96, 2),
              mv2(80, 2), mvit(80, 120, 4), mv2(96, 2), mvit(96, 144, 3)};
  c.projection_dim = 128;
  return c;
}

inline ModelConfig ModelConfig::tiny(int input_length) {
  ModelConfig c;
  c.input_length = input_length;
  c.stem_channels = 4;
  BlockDesc m;
  m.kind = BlockDesc::Kind::MV2;
  m.channels = 6;
  m.stride = 2;
  m.expansion = 2;
  BlockDesc t;
  t.kind = BlockDesc::Kind::MViT;
  t.channels = 6;
  t.transformer_dim = 8;
  t.n_heads = 2;
  t.depth = 1;
  t.patch_size = 2;
  c.blocks = {m, t};
  c.projection_dim = 8;
  return c;
}

inline nlohmann::json ModelConfig::to_json() const {
  nlohmann::json jb = nlohmann::json::array();
  for (const auto& b : blocks) {
    if (b.kind == BlockDesc::Kind::MV2) {
      jb.push_back({{"kind", "mv2"},
                    {"channels", b.channels},
                    {"stride", b.stride},
                    {"expansion", b.expansion}});
    } else {
      jb.push_back({{"kind", "mvit"},
                    {"channels", b.channels},
                    {"patch_size", b.patch_size},
                    {"transformer_dim", b.transformer_dim},
                    {"n_heads", b.n_heads},
                    {"depth", b.depth}});
    }
  }
  return {{"input_length", input_length}, {"stem_channels", stem_channels},
          {"blocks", jb},                 {"projection_dim", projection_dim},
          {"n_classes", n_classes}};
}

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_length = j.at("input_length");
  c.stem_channels = j.at("stem_channels");
  c.projection_dim = j.at("projection_dim");
  c.n_classes = j.at("n_classes");
  for (const auto& jb : j.at("blocks")) {
    BlockDesc b;
    b.channels = jb.at("channels");
    if (jb.at("kind") == "mv2") {
      b.kind = BlockDesc::Kind::MV2;
      b.stride = jb.at("stride");
      b.expansion = jb.at("expansion");
    } else {
      b.kind = BlockDesc::Kind::MViT;
      b.patch_size = jb.at("patch_size");
      b.transformer_dim = jb.at("transformer_dim");
      b.n_heads = jb.at("n_heads");
      b.depth = jb.at("depth");
    }
    c.blocks.push_back(b);
  }
  return c;
}

inline int conv_out_len(int n, int kernel, int stride, int pad) {
  return (n + 2 * pad - kernel) / stride + 1;
}

// Named parameter shapes fully determined by the config: feature-map
// lengths (and so positional-encoding sizes) follow from input_length.
inline std::map<std::string, std::vector<int>> parameter_shapes(const ModelConfig& cfg) {
  std::map<std::string, std::vector<int>> shapes;
  shapes["stem.w"] = {cfg.stem_channels, 1, 3};
  shapes["stem.b"] = {cfg.stem_channels};
  int ch = cfg.stem_channels;
  int len = conv_out_len(cfg.input_length, 3, 2, 1);
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const BlockDesc& b = cfg.blocks[i];
    const std::string p = "b" + std::to_string(i) + ".";
    if (b.kind == BlockDesc::Kind::MV2) {
      const int ce = ch * b.expansion;
      if (b.expansion != 1) {
        shapes[p + "expand.w"] = {ce, ch, 1};
        shapes[p + "expand.b"] = {ce};
      }
      shapes[p + "dw.w"] = {ce, 1, 3};
      shapes[p + "dw.b"] = {ce};
      shapes[p + "proj.w"] = {b.channels, ce, 1};
      shapes[p + "proj.b"] = {b.channels};
      ch = b.channels;
      len = conv_out_len(len, 3, b.stride, 1);
    } else {
      const int d = b.transformer_dim;
      shapes[p + "local.w"] = {ch, ch, 3};
      shapes[p + "local.b"] = {ch};
      shapes[p + "in.w"] = {d, ch, 1};
      shapes[p + "in.b"] = {d};
      const int padded = (len + b.patch_size - 1) / b.patch_size * b.patch_size;
      shapes[p + "pe"] = {padded / b.patch_size, d};
      for (int l = 0; l < b.depth; ++l) {
        const std::string q = p + "t" + std::to_string(l) + ".";
        shapes[q + "ln1.gamma"] = {d};
        shapes[q + "ln1.beta"] = {d};
        shapes[q + "wq"] = {d, d};
        shapes[q + "bq"] = {d};
        shapes[q + "wk"] = {d, d};
        shapes[q + "bk"] = {d};
        shapes[q + "wv"] = {d, d};
        shapes[q + "bv"] = {d};
        shapes[q + "wo"] = {d, d};
        shapes[q + "bo"] = {d};
        shapes[q + "ln2.gamma"] = {d};
        shapes[q + "ln2.beta"] = {d};
        shapes[q + "ffn1.w"] = {2 * d, d};
        shapes[q + "ffn1.b"] = {2 * d};
        shapes[q + "ffn2.w"] = {d, 2 * d};
        shapes[q + "ffn2.b"] = {d};
      }
      shapes[p + "lnout.gamma"] = {d};
      shapes[p + "lnout.beta"] = {d};
      shapes[p + "out.w"] = {ch, d, 1};
      shapes[p + "out.b"] = {ch};
      shapes[p + "fuse.w"] = {ch, 2 * ch, 3};
      shapes[p + "fuse.b"] = {ch};
    }
  }
  shapes["proj.w1"] = {ch, ch};
  shapes["proj.b1"] = {ch};
  shapes["proj.w2"] = {cfg.projection_dim, ch};
  shapes["proj.b2"] = {cfg.projection_dim};
  shapes["cls.w"] = {cfg.n_classes, ch};
  shapes["cls.b"] = {cfg.n_classes};
  return shapes;
}

inline long parameter_count(const ModelConfig& cfg) {
  long total = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) total += Tensor<float>::count(shape);
  return total;
}

template <typename T>
class MViTime {
 public:
  ModelConfig cfg;
  std::map<std::string, Tensor<T>> params;

  MViTime() = default;
  explicit MViTime(ModelConfig c, std::uint64_t seed = 0) : cfg(std::move(c)) { init(seed); }

  void init(std::uint64_t seed) {
    Rng rng = Rng(seed).substream("init");
    params.clear();
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
      Tensor<T> t(shape);
      const bool is_gamma = name.ends_with("gamma");
      const bool is_weight = name.ends_with(".w") || name.ends_with("w1") || name.ends_with("w2") ||
                             name.ends_with("wq") || name.ends_with("wk") ||
                             name.ends_with("wv") || name.ends_with("wo");
      if (is_gamma) {
        for (auto& x : t.v) x = T(1);
      } else if (is_weight) {
        long fan_in = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
        const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
        for (auto& x : t.v) x = static_cast<T>((2.0 * rng.uniform_real() - 1.0) * bound);
      }
      // biases, betas and the positional encoding start at zero
      params[name] = std::move(t);
    }
  }

  // One forward pass: a fresh graph over leaves wrapping the parameters.
  struct Pass {
    std::map<std::string, Var<T>> leaves;
    Var<T> input;
    Var<T> features;   // [B, F]
    Var<T> embedding;  // [B, projection_dim], L2-normalized
    Var<T> logits;     // [B, n_classes]
  };

  Pass forward(const Tensor<T>& x, bool want_embedding, bool want_logits,
               bool input_grad = false) const {
    if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != cfg.input_length) {
      throw ShapeMismatch("forward: expected [B, 1, input_length]");
    }
    Pass pass;
    pass.input = make_leaf(x, input_grad);
    auto P = [&](const std::string& name) -> Var<T> {
      auto it = pass.leaves.find(name);
      if (it != pass.leaves.end()) return it->second;
      auto leaf = make_leaf(params.at(name));
      pass.leaves.emplace(name, leaf);
      return leaf;
    };

    const int B = x.dim(0);
    Var<T> h = silu(add_bias_channels(conv1d(pass.input, P("stem.w"), 2, 1), P("stem.b")));
    int ch = cfg.stem_channels;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
      const BlockDesc& b = cfg.blocks[i];
      const std::string p = "b" + std::to_string(i) + ".";
      if (b.kind == BlockDesc::Kind::MV2) {
        Var<T> y = h;
        const int ce = ch * b.expansion;
        if (b.expansion != 1) {
          y = silu(add_bias_channels(conv1d(y, P(p + "expand.w"), 1, 0), P(p + "expand.b")));
        }
        y = silu(add_bias_channels(conv1d(y, P(p + "dw.w"), b.stride, 1, ce), P(p + "dw.b")));
        y = add_bias_channels(conv1d(y, P(p + "proj.w"), 1, 0), P(p + "proj.b"));
        h = (b.stride == 1 && ch == b.channels) ? add(h, y) : y;
        ch = b.channels;
      } else {
        if (b.channels != ch) throw ShapeMismatch("MViT block channel mismatch");
        Var<T> local = silu(add_bias_channels(conv1d(h, P(p + "local.w"), 1, 1), P(p + "local.b")));
        Var<T> t = add_bias_channels(conv1d(local, P(p + "in.w"), 1, 0), P(p + "in.b"));
        const int n = t->val.dim(2);
        const int padded = (n + b.patch_size - 1) / b.patch_size * b.patch_size;
        t = pad_length(t, padded);
        Var<T> tok = unfold_1d(t, b.patch_size);
        tok = add_positional(tok, P(p + "pe"));
        for (int l = 0; l < b.depth; ++l) {
          tok = transformer_layer(P, p + "t" + std::to_string(l) + ".", tok, b.n_heads);
        }
        tok = layernorm(tok, P(p + "lnout.gamma"), P(p + "lnout.beta"));
        Var<T> folded = slice_length(fold_1d(tok, b.patch_size, B), n);
        Var<T> back = silu(add_bias_channels(conv1d(folded, P(p + "out.w"), 1, 0), P(p + "out.b")));
        h = silu(add_bias_channels(conv1d(concat_channels(h, back), P(p + "fuse.w"), 1, 1),
                                   P(p + "fuse.b")));
      }
    }
    pass.features = mean_length(h);
    if (want_embedding) {
      Var<T> e = silu(add_bias_last(linear(pass.features, P("proj.w1")), P("proj.b1")));
      e = add_bias_last(linear(e, P("proj.w2")), P("proj.b2"));
      pass.embedding = l2_normalize_rows(e);
    }
    if (want_logits) {
      pass.logits = add_bias_last(linear(pass.features, P("cls.w")), P("cls.b"));
    }
    return pass;
  }

  // pre-norm MHSA + SiLU feed-forward, residual around both
  template <typename ParamFn>
  static Var<T> transformer_layer(ParamFn&& P, const std::string& q, Var<T> tok, int heads) {
    const int d = tok->val.dim(2);
    Var<T> h = layernorm(tok, P(q + "ln1.gamma"), P(q + "ln1.beta"));
    Var<T> qq = split_heads(add_bias_last(linear(h, P(q + "wq")), P(q + "bq")), heads);
    Var<T> kk = split_heads(add_bias_last(linear(h, P(q + "wk")), P(q + "bk")), heads);
    Var<T> vv = split_heads(add_bias_last(linear(h, P(q + "wv")), P(q + "bv")), heads);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(d / heads));
    Var<T> attn = softmax_last(scale(matmul(qq, transpose_last2(kk)), inv_sqrt));
    Var<T> mix = merge_heads(matmul(attn, vv), heads);
    tok = add(tok, add_bias_last(linear(mix, P(q + "wo")), P(q + "bo")));
    Var<T> f = layernorm(tok, P(q + "ln2.gamma"), P(q + "ln2.beta"));
    f = silu(add_bias_last(linear(f, P(q + "ffn1.w")), P(q + "ffn1.b")));
    f = add_bias_last(linear(f, P(q + "ffn2.w")), P(q + "ffn2.b"));
    return add(tok, f);
  }

  int feature_dim() const {
    int ch = cfg.stem_channels;
    for (const auto& b : cfg.blocks) {
      if (b.kind == BlockDesc::Kind::MV2) ch = b.channels;
    }
    return ch;
  }
};

// ---- checkpoint container: JSON header + named little-endian f32 arrays ----

inline constexpr char kCheckpointMagic[8] = {'M', 'V', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  long step = 0;
  std::uint64_t seed = 0;
  std::string loss_digest;  // short summary of the training curve
  std::string config_digest;
};

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor<float>> parameters;
  CheckpointMeta meta;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
Checkpoint to_checkpoint(const MViTime<T>& model, CheckpointMeta meta = {}) {
  Checkpoint c;
  c.config = model.cfg;
  c.meta = std::move(meta);
  for (const auto& [name, t] : model.params) c.parameters[name] = t.template cast<float>();
  return c;
}

template <typename T>
MViTime<T> from_checkpoint(const Checkpoint& ckpt) {
  MViTime<T> m;
  m.cfg = ckpt.config;
  const auto shapes = parameter_shapes(m.cfg);
  for (const auto& [name, shape] : shapes) {
    auto it = ckpt.parameters.find(name);
    if (it == ckpt.parameters.end()) throw CheckpointError("missing parameter " + name);
    if (it->second.shape != shape) throw CheckpointError("shape mismatch for " + name);
    m.params[name] = it->second.template cast<T>();
  }
  return m;
}

}  // namespace mvitime::nn
