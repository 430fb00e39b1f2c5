#include "ftz/mllm.hpp"

#include <cmath>

namespace ftz {

namespace {

// The LM is a frozen random stand-in for a pretrained model during stage 1,
// so its init is tuned for prefix programmability rather than trainability:
// token identity has to survive the blocks, query/key projections are sharp
// enough that trainable visual slots can win or lose attention by direction
// alone (layer norm caps their magnitude), the value path carries the
// injected signal at roughly the embedding scale, and the output head is
// wide enough that aligned hidden states can express confident logits.
constexpr double kEmbedStd = 0.2;
constexpr double kPosStd = 0.2;
constexpr double kQkInitScale = 3.0;
constexpr double kValueInitScale = 2.0;
constexpr double kHeadInitScale = 4.0;

Tensor init_linear(Rng& rng, int fan_in, int fan_out, double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(static_cast<size_t>(fan_in) * fan_out);
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor::from_data({fan_in, fan_out}, std::move(values));
}

// qkv packed [d, 3d] with separate gains for the q/k and v column groups.
Tensor init_qkv(Rng& rng, int d, double qk_gain, double v_gain) {
  std::vector<double> values(static_cast<size_t>(d) * 3 * d);
  for (int row = 0; row < d; ++row) {
    for (int col = 0; col < 3 * d; ++col) {
      const double gain = col < 2 * d ? qk_gain : v_gain;
      values[static_cast<size_t>(row) * 3 * d + col] =
          rng.uniform(-gain / std::sqrt(static_cast<double>(d)), gain / std::sqrt(static_cast<double>(d)));
    }
  }
  return Tensor::from_data({d, 3 * d}, std::move(values));
}

Tensor init_normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(values));
}

// Pre-norm causal block, same structure as the ViT block.
Tensor lm_block_forward(const Tensor& h, const ParameterStore& store, const std::string& bp,
                        const LMConfig& cfg) {
  const int d = cfg.dim;
  Tensor x = layer_norm(h, store.get(bp + "ln1.g"), store.get(bp + "ln1.b"));
  Tensor qkv = add_rowvec(matmul(x, store.get(bp + "attn.wqkv")), store.get(bp + "attn.bqkv"));
  Tensor q = slice_cols(qkv, 0, d);
  Tensor k = slice_cols(qkv, d, d);
  Tensor v = slice_cols(qkv, 2 * d, d);
  Tensor attn = multihead_attention(q, k, v, cfg.heads, /*causal=*/true);
  attn = add_rowvec(matmul(attn, store.get(bp + "attn.wo")), store.get(bp + "attn.bo"));
  Tensor res = add(h, attn);
  Tensor y = layer_norm(res, store.get(bp + "ln2.g"), store.get(bp + "ln2.b"));
  y = add_rowvec(matmul(y, store.get(bp + "mlp.w1")), store.get(bp + "mlp.b1"));
  y = gelu(y);
  y = add_rowvec(matmul(y, store.get(bp + "mlp.w2")), store.get(bp + "mlp.b2"));
  return add(res, y);
}

int leading_class_rows(const ModelConfig& cfg) {
  if (cfg.use_class_token) return 0;
  // Interleaved rows 0 and 1 are the two class tokens.
  return cfg.vision.mode == TowerMode::interleaved_mof ? 2 : 1;
}

}  // namespace

void LMConfig::validate() const {
  if (vocab_size < 1) throw ConfigurationError("lm: vocab_size must be >= 1");
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw ConfigurationError("lm: dim " + std::to_string(dim) + " not divisible by heads " +
                             std::to_string(heads));
  }
  if (depth < 1) throw ConfigurationError("lm: depth must be >= 1");
  if (max_seq_len < 2) throw ConfigurationError("lm: max_seq_len must be >= 2");
}

void init_connector_params(ParameterStore& store, const ConnectorConfig& cfg, Rng& rng) {
  auto put = [&](const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    store.add(name, std::move(t), false);
  };
  put("connector.fc1.w", init_linear(rng, cfg.in_dim, cfg.hidden_dim));
  put("connector.fc1.b", Tensor::zeros({cfg.hidden_dim}));
  put("connector.fc2.w", init_linear(rng, cfg.hidden_dim, cfg.out_dim));
  put("connector.fc2.b", Tensor::zeros({cfg.out_dim}));
}

void init_lm_params(ParameterStore& store, const LMConfig& cfg, Rng& rng) {
  cfg.validate();
  auto put = [&](const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    store.add(name, std::move(t), false);
  };
  put("lm.tok_emb", init_normal(rng, {cfg.vocab_size, cfg.dim}, kEmbedStd));
  put("lm.pos_emb", init_normal(rng, {cfg.max_seq_len, cfg.dim}, kPosStd));
  const int hidden = 4 * cfg.dim;
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string bp = "lm.blocks." + std::to_string(b) + ".";
    put(bp + "ln1.g", Tensor::full({cfg.dim}, 1.0));
    put(bp + "ln1.b", Tensor::zeros({cfg.dim}));
    put(bp + "attn.wqkv", init_qkv(rng, cfg.dim, kQkInitScale, kValueInitScale));
    put(bp + "attn.bqkv", Tensor::zeros({3 * cfg.dim}));
    put(bp + "attn.wo", init_linear(rng, cfg.dim, cfg.dim, kValueInitScale));
    put(bp + "attn.bo", Tensor::zeros({cfg.dim}));
    put(bp + "ln2.g", Tensor::full({cfg.dim}, 1.0));
    put(bp + "ln2.b", Tensor::zeros({cfg.dim}));
    put(bp + "mlp.w1", init_linear(rng, cfg.dim, hidden));
    put(bp + "mlp.b1", Tensor::zeros({hidden}));
    put(bp + "mlp.w2", init_linear(rng, hidden, cfg.dim));
    put(bp + "mlp.b2", Tensor::zeros({cfg.dim}));
  }
  put("lm.ln_f.g", Tensor::full({cfg.dim}, 1.0));
  put("lm.ln_f.b", Tensor::zeros({cfg.dim}));
  put("lm.head.w", init_linear(rng, cfg.dim, cfg.vocab_size, kHeadInitScale));
}

Tensor connector_forward(const Tensor& visual_tokens, const ParameterStore& store,
                         const ConnectorConfig& cfg) {
  if (visual_tokens.rank() != 2 || visual_tokens.dim(1) != cfg.in_dim) {
    throw DimensionError("connector: expected [N," + std::to_string(cfg.in_dim) + "], got " +
                         shape_str(visual_tokens.shape()));
  }
  Tensor h = add_rowvec(matmul(visual_tokens, store.get("connector.fc1.w")),
                        store.get("connector.fc1.b"));
  h = gelu(h);
  return add_rowvec(matmul(h, store.get("connector.fc2.w")), store.get("connector.fc2.b"));
}

AssembledSample assemble(const Tensor& visual_embeds, const std::vector<int>& text_ids,
                         const ParameterStore& store, const LMConfig& cfg) {
  const int n_visual = visual_embeds.defined() ? visual_embeds.dim(0) : 0;
  const int n_text = static_cast<int>(text_ids.size());
  if (n_text < 1) throw LengthError("assemble: empty text sequence");
  const int total = n_visual + n_text;
  if (total > cfg.max_seq_len) {
    throw LengthError("assemble: sequence length " + std::to_string(total) + " exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }
  Tensor text_embeds = embedding_lookup(store.get("lm.tok_emb"), text_ids);
  AssembledSample sample;
  sample.n_visual = n_visual;
  sample.embeds =
      visual_embeds.defined() ? concat_rows({visual_embeds, text_embeds}) : text_embeds;
  sample.labels.assign(static_cast<size_t>(total), kIgnoreId);
  // Position p predicts token p+1; the last visual position predicts the
  // first text token, earlier visual positions stay unsupervised.
  for (int p = std::max(0, n_visual - 1); p < total - 1; ++p) {
    const int next = text_ids[static_cast<size_t>(p - n_visual + 1)];
    sample.labels[static_cast<size_t>(p)] = next == 0 ? kIgnoreId : next;  // 0 = <pad>
  }
  return sample;
}

Tensor lm_forward_logits(const Tensor& embeds, const ParameterStore& store, const LMConfig& cfg) {
  const int total = embeds.dim(0);
  if (total > cfg.max_seq_len) {
    throw LengthError("lm_forward: sequence length " + std::to_string(total) +
                      " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  Tensor h = add(embeds, slice_rows(store.get("lm.pos_emb"), 0, total));
  for (int b = 0; b < cfg.depth; ++b) {
    h = lm_block_forward(h, store, "lm.blocks." + std::to_string(b) + ".", cfg);
  }
  h = layer_norm(h, store.get("lm.ln_f.g"), store.get("lm.ln_f.b"));
  return matmul(h, store.get("lm.head.w"));
}

Tensor lm_loss(const AssembledSample& sample, const ParameterStore& store, const LMConfig& cfg,
               bool* all_ignored) {
  Tensor logits = lm_forward_logits(sample.embeds, store, cfg);
  return cross_entropy_logits(logits, sample.labels, all_ignored);
}

ModelConfig ModelConfig::toy_defaults() {
  ModelConfig cfg;
  cfg.vision.anchor = ViTConfig{};
  cfg.vision.anchor.dim = 64;
  cfg.vision.anchor.heads = 4;
  cfg.vision.anchor.depth = 8;
  cfg.vision.anchor.norm_mean = {0.48145466, 0.4578275, 0.40821073};
  cfg.vision.anchor.norm_std = {0.26862954, 0.26130258, 0.27577711};
  cfg.vision.augment = ViTConfig{};
  cfg.vision.augment.dim = 48;
  cfg.vision.augment.heads = 4;
  cfg.vision.augment.depth = 4;
  cfg.vision.augment.norm_mean = {0.485, 0.456, 0.406};
  cfg.vision.augment.norm_std = {0.229, 0.224, 0.225};
  cfg.vision.mode = TowerMode::ftz;
  cfg.vision.num_fusion_points = 4;
  cfg.vision.fusion_heads = 4;
  cfg.connector = ConnectorConfig{64, 128, 64};
  cfg.lm = LMConfig{};
  return cfg;
}

void ModelConfig::validate() const {
  vision.validate();
  lm.validate();
  if (connector.in_dim != vision.anchor.dim) {
    throw ConfigurationError("connector in_dim " + std::to_string(connector.in_dim) +
                             " must equal anchor dim " + std::to_string(vision.anchor.dim));
  }
  if (connector.out_dim != lm.dim) {
    throw ConfigurationError("connector out_dim " + std::to_string(connector.out_dim) +
                             " must equal lm dim " + std::to_string(lm.dim));
  }
}

Model build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model model;
  model.cfg = cfg;
  model.tokenizer = Tokenizer::canonical();
  Rng anchor_rng(derive_seed(cfg.encoder_seed, "anchor"));
  init_vit_params(model.params, "anchor", cfg.vision.anchor, anchor_rng, /*frozen=*/true);
  Rng augment_rng(derive_seed(cfg.encoder_seed, "augment"));
  init_vit_params(model.params, "augment", cfg.vision.augment, augment_rng, /*frozen=*/true);
  Rng fusion_rng(derive_seed(seed, "fusion"));
  init_fusion_params(model.params, cfg.vision, fusion_rng);
  Rng connector_rng(derive_seed(seed, "connector"));
  init_connector_params(model.params, cfg.connector, connector_rng);
  Rng lm_rng(derive_seed(seed, "lm"));
  init_lm_params(model.params, cfg.lm, lm_rng);
  return model;
}

Tensor vision_to_lm_tokens(const Model& model, const Image& image) {
  Tensor tokens = composed_encode(image, model.cfg.vision, model.params);
  const int drop = leading_class_rows(model.cfg);
  if (drop > 0) tokens = slice_rows(tokens, drop, tokens.dim(0) - drop);
  return connector_forward(tokens, model.params, model.cfg.connector);
}

std::vector<int> training_text(const Model& model, const std::vector<int>& question_ids,
                               const std::vector<int>& answer_ids) {
  std::vector<int> text;
  text.reserve(question_ids.size() + answer_ids.size() + 2);
  text.push_back(model.tokenizer.bos_id());
  text.insert(text.end(), question_ids.begin(), question_ids.end());
  text.insert(text.end(), answer_ids.begin(), answer_ids.end());
  text.push_back(model.tokenizer.eos_id());
  return text;
}

Tensor sample_loss(const Model& model, const Image& image, const std::vector<int>& text_ids) {
  Tensor visual = vision_to_lm_tokens(model, image);
  AssembledSample sample = assemble(visual, text_ids, model.params, model.cfg.lm);
  return lm_loss(sample, model.params, model.cfg.lm);
}

std::vector<int> greedy_decode(const Model& model, const Image& image,
                               const std::vector<int>& question_ids, int max_new) {
  GradPause pause;
  Tensor visual = vision_to_lm_tokens(model, image);
  std::vector<int> context;
  context.reserve(question_ids.size() + static_cast<size_t>(std::max(max_new, 0)) + 1);
  context.push_back(model.tokenizer.bos_id());
  context.insert(context.end(), question_ids.begin(), question_ids.end());
  std::vector<int> generated;
  for (int step = 0; step < max_new; ++step) {
    Tensor text_embeds = embedding_lookup(model.params.get("lm.tok_emb"), context);
    Tensor embeds = concat_rows({visual, text_embeds});
    Tensor logits = lm_forward_logits(embeds, model.params, model.cfg.lm);
    const int last = logits.dim(0) - 1;
    const int vocab = logits.dim(1);
    int best = 0;
    double best_value = logits.at2(last, 0);
    for (int j = 1; j < vocab; ++j) {
      const double v = logits.at2(last, j);
      if (v > best_value) {
        best_value = v;
        best = j;
      }
    }
    if (best == model.tokenizer.eos_id()) break;
    generated.push_back(best);
    context.push_back(best);
  }
  return generated;
}

}  // namespace ftz
