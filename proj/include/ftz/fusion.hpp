#pragma once

#include <string>
#include <vector>

#include "ftz/vit.hpp"

namespace ftz {

// One cross-attention insertion site: anchor block i fused with augmenting
// block j, both 1-based.
struct FusionPoint {
  int anchor_layer = 0;
  int augment_layer = 0;
  bool operator==(const FusionPoint&) const = default;
};

// Trainable weights of one fusion insertion. No weight sharing across
// points; no biases. w_o starts at zero so the residual path reproduces the
// anchor exactly until training moves it.
struct FusionModule {
  Tensor w_proj;  // [d_aug, d_anchor]
  Tensor w_q, w_k, w_v, w_o;  // [d_anchor, d_anchor]
  int heads = 1;
};

enum class TowerMode { ftz, anchor_only, interleaved_mof };

std::string mode_name(TowerMode mode);
TowerMode mode_from_name(const std::string& name);

struct ComposedEncoderConfig {
  ViTConfig anchor;
  ViTConfig augment;
  TowerMode mode = TowerMode::ftz;
  int num_fusion_points = 4;  // K, ftz mode only
  int fusion_heads = 4;
  void validate() const;
};

// Relative-depth alignment. Anchor picks K uniformly spaced blocks,
// i_k = round(k * L_anchor / K) half-up, deduplicated; each maps to the
// augmenting block with the closest relative depth, ties toward smaller j.
std::vector<FusionPoint> map_layers(int anchor_depth, int augment_depth, int k);

void init_fusion_params(ParameterStore& store, const ComposedEncoderConfig& cfg, Rng& rng);
FusionModule load_fusion_module(const ParameterStore& store, int point_index, int heads);

// H'_aug = H_aug * W_proj (no bias).
Tensor project_augment(const Tensor& h_aug, const Tensor& w_proj);

// Q from the anchor stream, K/V from the projected augmenting stream,
// per-head scaled dot-product, concatenated heads through w_o. Query and
// key/value lengths may differ.
Tensor mhca(const Tensor& h_anchor, const Tensor& h_proj, const FusionModule& module);

// Eq-style residual integration; the result feeds the next anchor block.
Tensor fuse_residual(const Tensor& h_anchor, const Tensor& h_cross);

// Alternates anchor and (projected) augmenting final tokens row by row.
Tensor interleave_mof(const Tensor& anchor_final, const Tensor& augment_final,
                      const Tensor& w_proj_mof);

struct ComposedTrace {
  Tensor output;                      // final token sequence [N_out, d_anchor]
  std::vector<Tensor> anchor_layers;  // post-block (post-fusion) anchor states
  EncoderActivations augment;         // empty in anchor_only mode
  std::vector<FusionPoint> points;    // empty unless ftz mode
};

ComposedTrace composed_encode_trace(const Image& image, const ComposedEncoderConfig& cfg,
                                    const ParameterStore& store);
Tensor composed_encode(const Image& image, const ComposedEncoderConfig& cfg,
                       const ParameterStore& store);

}  // namespace ftz
