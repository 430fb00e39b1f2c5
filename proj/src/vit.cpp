#include "ftz/vit.hpp"

#include <cmath>

namespace ftz {

namespace {

Tensor init_linear(Rng& rng, int fan_in, int fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(static_cast<size_t>(fan_in) * fan_out);
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor::from_data({fan_in, fan_out}, std::move(values));
}

Tensor init_normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(values));
}

}  // namespace

void ViTConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw ConfigurationError("vit: image_size " + std::to_string(image_size) +
                             " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (dim <= 0 || heads <= 0 || dim % heads != 0) {
    throw ConfigurationError("vit: dim " + std::to_string(dim) + " not divisible by heads " +
                             std::to_string(heads));
  }
  if (depth < 1) throw ConfigurationError("vit: depth must be >= 1");
  if (channels != 3) throw ConfigurationError("vit: only 3-channel input supported");
}

Tensor preprocess(const Image& image, const ViTConfig& cfg) {
  const int s = cfg.image_size;
  if (image.height != s || image.width != s) {
    throw InputError("preprocess: raster is " + std::to_string(image.width) + "x" +
                     std::to_string(image.height) + ", encoder expects " + std::to_string(s) + "x" +
                     std::to_string(s));
  }
  if (image.pixels.size() != static_cast<size_t>(s) * s * 3) {
    throw InputError("preprocess: raster byte count does not match dimensions");
  }
  std::vector<double> values(static_cast<size_t>(3) * s * s);
  for (int c = 0; c < 3; ++c) {
    const double mean = cfg.norm_mean[static_cast<size_t>(c)];
    const double inv_std = 1.0 / cfg.norm_std[static_cast<size_t>(c)];
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double v = image.pixels[(static_cast<size_t>(y) * s + x) * 3 + c] / 255.0;
        values[(static_cast<size_t>(c) * s + y) * s + x] = (v - mean) * inv_std;
      }
    }
  }
  return Tensor::from_data({3, s, s}, std::move(values));
}

void init_vit_params(ParameterStore& store, const std::string& prefix, const ViTConfig& cfg,
                     Rng& rng, bool frozen) {
  cfg.validate();
  const bool trainable = !frozen;
  auto put = [&](const std::string& name, Tensor t) {
    t.set_requires_grad(trainable);
    store.add(prefix + "." + name, std::move(t), frozen);
  };
  put("patch.w", init_linear(rng, cfg.patch_dim(), cfg.dim));
  put("patch.b", Tensor::zeros({cfg.dim}));
  put("cls", init_normal(rng, {1, cfg.dim}, 0.02));
  put("pos", init_normal(rng, {cfg.tokens(), cfg.dim}, 0.02));
  const int hidden = cfg.mlp_hidden();
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string bp = "blocks." + std::to_string(b) + ".";
    put(bp + "ln1.g", Tensor::full({cfg.dim}, 1.0));
    put(bp + "ln1.b", Tensor::zeros({cfg.dim}));
    put(bp + "attn.wqkv", init_linear(rng, cfg.dim, 3 * cfg.dim));
    put(bp + "attn.bqkv", Tensor::zeros({3 * cfg.dim}));
    put(bp + "attn.wo", init_linear(rng, cfg.dim, cfg.dim));
    put(bp + "attn.bo", Tensor::zeros({cfg.dim}));
    put(bp + "ln2.g", Tensor::full({cfg.dim}, 1.0));
    put(bp + "ln2.b", Tensor::zeros({cfg.dim}));
    put(bp + "mlp.w1", init_linear(rng, cfg.dim, hidden));
    put(bp + "mlp.b1", Tensor::zeros({hidden}));
    put(bp + "mlp.w2", init_linear(rng, hidden, cfg.dim));
    put(bp + "mlp.b2", Tensor::zeros({cfg.dim}));
  }
}

Tensor patch_embed(const Tensor& x, const ParameterStore& store, const std::string& prefix,
                   const ViTConfig& cfg) {
  Tensor patches = extract_patches(x, cfg.patch_size);
  Tensor projected = add_rowvec(matmul(patches, store.get(prefix + ".patch.w")),
                                store.get(prefix + ".patch.b"));
  Tensor tokens = concat_rows({store.get(prefix + ".cls"), projected});
  return add(tokens, store.get(prefix + ".pos"));
}

Tensor block_forward(const Tensor& h, const ParameterStore& store,
                     const std::string& block_prefix, const ViTConfig& cfg) {
  const int d = cfg.dim;
  Tensor x = layer_norm(h, store.get(block_prefix + "ln1.g"), store.get(block_prefix + "ln1.b"));
  Tensor qkv = add_rowvec(matmul(x, store.get(block_prefix + "attn.wqkv")),
                          store.get(block_prefix + "attn.bqkv"));
  Tensor q = slice_cols(qkv, 0, d);
  Tensor k = slice_cols(qkv, d, d);
  Tensor v = slice_cols(qkv, 2 * d, d);
  Tensor attn = multihead_attention(q, k, v, cfg.heads);
  attn = add_rowvec(matmul(attn, store.get(block_prefix + "attn.wo")),
                    store.get(block_prefix + "attn.bo"));
  Tensor res = add(h, attn);
  Tensor y = layer_norm(res, store.get(block_prefix + "ln2.g"), store.get(block_prefix + "ln2.b"));
  y = add_rowvec(matmul(y, store.get(block_prefix + "mlp.w1")), store.get(block_prefix + "mlp.b1"));
  y = gelu(y);
  y = add_rowvec(matmul(y, store.get(block_prefix + "mlp.w2")), store.get(block_prefix + "mlp.b2"));
  return add(res, y);
}

EncoderActivations encode(const Image& image, const ViTConfig& cfg, const ParameterStore& store,
                          const std::string& prefix) {
  cfg.validate();
  Tensor h = patch_embed(preprocess(image, cfg), store, prefix, cfg);
  EncoderActivations acts;
  acts.tokens = cfg.tokens();
  acts.per_layer.reserve(static_cast<size_t>(cfg.depth));
  for (int b = 0; b < cfg.depth; ++b) {
    h = block_forward(h, store, prefix + ".blocks." + std::to_string(b) + ".", cfg);
    acts.per_layer.push_back(h);
  }
  return acts;
}

}  // namespace ftz
