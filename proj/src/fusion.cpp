#include "ftz/fusion.hpp"

#include <cmath>
#include <cstdlib>

namespace ftz {

namespace {

Tensor init_linear(Rng& rng, int fan_in, int fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(static_cast<size_t>(fan_in) * fan_out);
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor::from_data({fan_in, fan_out}, std::move(values));
}

std::string point_prefix(int index) { return "fusion.p" + std::to_string(index) + "."; }

}  // namespace

std::string mode_name(TowerMode mode) {
  switch (mode) {
    case TowerMode::ftz: return "ftz";
    case TowerMode::anchor_only: return "anchor_only";
    case TowerMode::interleaved_mof: return "interleaved_mof";
  }
  return "?";
}

TowerMode mode_from_name(const std::string& name) {
  if (name == "ftz") return TowerMode::ftz;
  if (name == "anchor_only") return TowerMode::anchor_only;
  if (name == "interleaved_mof") return TowerMode::interleaved_mof;
  throw ConfigurationError("unknown tower mode: " + name);
}

void ComposedEncoderConfig::validate() const {
  anchor.validate();
  augment.validate();
  if (mode == TowerMode::ftz) {
    if (num_fusion_points < 1 || num_fusion_points > anchor.depth) {
      throw ConfigurationError("fusion: K=" + std::to_string(num_fusion_points) +
                               " must be in [1," + std::to_string(anchor.depth) + "]");
    }
    if (fusion_heads < 1 || anchor.dim % fusion_heads != 0) {
      throw ConfigurationError("fusion: anchor dim " + std::to_string(anchor.dim) +
                               " not divisible by " + std::to_string(fusion_heads) + " heads");
    }
  }
}

std::vector<FusionPoint> map_layers(int anchor_depth, int augment_depth, int k) {
  if (anchor_depth < 1 || augment_depth < 1) {
    throw ConfigurationError("map_layers: depths must be >= 1");
  }
  if (k < 1 || k > anchor_depth) {
    throw ConfigurationError("map_layers: K=" + std::to_string(k) + " must be in [1," +
                             std::to_string(anchor_depth) + "]");
  }
  std::vector<FusionPoint> points;
  for (int step = 1; step <= k; ++step) {
    // round-half-up of step * anchor_depth / k, in exact integer arithmetic
    const int i = (2 * step * anchor_depth + k) / (2 * k);
    if (!points.empty() && points.back().anchor_layer == i) continue;
    // closest relative depth: argmin_j |i/L_a - j/L_g|, scaled by L_a*L_g
    int best_j = 1;
    long best_dist = std::labs(static_cast<long>(i) * augment_depth - static_cast<long>(anchor_depth));
    for (int j = 2; j <= augment_depth; ++j) {
      const long dist =
          std::labs(static_cast<long>(i) * augment_depth - static_cast<long>(j) * anchor_depth);
      if (dist < best_dist) {
        best_dist = dist;
        best_j = j;
      }
    }
    points.push_back(FusionPoint{i, best_j});
  }
  return points;
}

void init_fusion_params(ParameterStore& store, const ComposedEncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.anchor.dim;
  const int d_aug = cfg.augment.dim;
  auto put = [&](const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    store.add(name, std::move(t), false);
  };
  if (cfg.mode == TowerMode::ftz) {
    const auto points = map_layers(cfg.anchor.depth, cfg.augment.depth, cfg.num_fusion_points);
    for (size_t idx = 0; idx < points.size(); ++idx) {
      const std::string p = point_prefix(static_cast<int>(idx));
      put(p + "w_proj", init_linear(rng, d_aug, d));
      put(p + "w_q", init_linear(rng, d, d));
      put(p + "w_k", init_linear(rng, d, d));
      put(p + "w_v", init_linear(rng, d, d));
      put(p + "w_o", Tensor::zeros({d, d}));
    }
  } else if (cfg.mode == TowerMode::interleaved_mof) {
    put("fusion.mof.w_proj", init_linear(rng, d_aug, d));
  }
}

FusionModule load_fusion_module(const ParameterStore& store, int point_index, int heads) {
  const std::string p = point_prefix(point_index);
  FusionModule module;
  module.w_proj = store.get(p + "w_proj");
  module.w_q = store.get(p + "w_q");
  module.w_k = store.get(p + "w_k");
  module.w_v = store.get(p + "w_v");
  module.w_o = store.get(p + "w_o");
  module.heads = heads;
  return module;
}

Tensor project_augment(const Tensor& h_aug, const Tensor& w_proj) {
  return matmul(h_aug, w_proj);
}

Tensor mhca(const Tensor& h_anchor, const Tensor& h_proj, const FusionModule& module) {
  Tensor q = matmul(h_anchor, module.w_q);
  Tensor k = matmul(h_proj, module.w_k);
  Tensor v = matmul(h_proj, module.w_v);
  Tensor context = multihead_attention(q, k, v, module.heads);
  return matmul(context, module.w_o);
}

Tensor fuse_residual(const Tensor& h_anchor, const Tensor& h_cross) {
  return add(h_anchor, h_cross);
}

Tensor interleave_mof(const Tensor& anchor_final, const Tensor& augment_final,
                      const Tensor& w_proj_mof) {
  if (anchor_final.dim(0) != augment_final.dim(0)) {
    throw ConfigurationError("MoF baseline requires matching grids: anchor has " +
                             std::to_string(anchor_final.dim(0)) + " tokens, augment has " +
                             std::to_string(augment_final.dim(0)));
  }
  Tensor projected = matmul(augment_final, w_proj_mof);
  return interleave_rows(anchor_final, projected);
}

ComposedTrace composed_encode_trace(const Image& image, const ComposedEncoderConfig& cfg,
                                    const ParameterStore& store) {
  cfg.validate();
  ComposedTrace trace;
  if (cfg.mode != TowerMode::anchor_only) {
    trace.augment = encode(image, cfg.augment, store, "augment");
  }
  if (cfg.mode == TowerMode::ftz) {
    trace.points = map_layers(cfg.anchor.depth, cfg.augment.depth, cfg.num_fusion_points);
  }

  Tensor h = patch_embed(preprocess(image, cfg.anchor), store, "anchor", cfg.anchor);
  trace.anchor_layers.reserve(static_cast<size_t>(cfg.anchor.depth));
  size_t next_point = 0;
  for (int b = 0; b < cfg.anchor.depth; ++b) {
    h = block_forward(h, store, "anchor.blocks." + std::to_string(b) + ".", cfg.anchor);
    if (next_point < trace.points.size() && trace.points[next_point].anchor_layer == b + 1) {
      const FusionPoint& point = trace.points[next_point];
      const FusionModule module =
          load_fusion_module(store, static_cast<int>(next_point), cfg.fusion_heads);
      Tensor projected =
          project_augment(trace.augment.per_layer[static_cast<size_t>(point.augment_layer - 1)],
                          module.w_proj);
      Tensor cross = mhca(h, projected, module);
      h = fuse_residual(h, cross);
      ++next_point;
    }
    trace.anchor_layers.push_back(h);
  }

  if (cfg.mode == TowerMode::interleaved_mof) {
    trace.output = interleave_mof(h, trace.augment.per_layer.back(), store.get("fusion.mof.w_proj"));
  } else {
    trace.output = h;
  }
  return trace;
}

Tensor composed_encode(const Image& image, const ComposedEncoderConfig& cfg,
                       const ParameterStore& store) {
  return composed_encode_trace(image, cfg, store).output;
}

}  // namespace ftz
