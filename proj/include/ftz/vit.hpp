#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ftz/ops.hpp"
#include "ftz/param_store.hpp"
#include "ftz/rng.hpp"
#include "ftz/tensor.hpp"

namespace ftz {

// 8-bit RGB raster, row-major, channels interleaved (y, x, c).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;
};

struct ViTConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int depth = 8;
  int dim = 64;
  int heads = 4;
  double mlp_ratio = 4.0;
  // Per-encoder preprocessing constants (the encoder's "image processor").
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.5, 0.5, 0.5};

  int grid() const { return image_size / patch_size; }
  int tokens() const { return 1 + grid() * grid(); }
  int patch_dim() const { return channels * patch_size * patch_size; }
  int mlp_hidden() const { return static_cast<int>(dim * mlp_ratio); }
  void validate() const;
};

// Output of every transformer block, each [tokens x dim].
struct EncoderActivations {
  std::vector<Tensor> per_layer;
  int tokens = 0;
};

// Scale bytes to [0,1], then (x - mean) / std per channel -> [3,S,S].
Tensor preprocess(const Image& image, const ViTConfig& cfg);

// Creates all encoder weights under `prefix.` with a fixed draw order.
void init_vit_params(ParameterStore& store, const std::string& prefix, const ViTConfig& cfg,
                     Rng& rng, bool frozen);

// Patch flattening, linear projection, class token at row 0, positional
// embedding added -> [tokens x dim].
Tensor patch_embed(const Tensor& x, const ParameterStore& store, const std::string& prefix,
                   const ViTConfig& cfg);

// Pre-norm block: LN -> MHSA -> residual -> LN -> MLP -> residual.
Tensor block_forward(const Tensor& h, const ParameterStore& store,
                     const std::string& block_prefix, const ViTConfig& cfg);

EncoderActivations encode(const Image& image, const ViTConfig& cfg, const ParameterStore& store,
                          const std::string& prefix);

}  // namespace ftz
