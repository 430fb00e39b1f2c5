#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ftz/fusion.hpp"
#include "ftz/tokenizer.hpp"

namespace ftz {

// Trainable projector: linear -> GELU -> linear, both layers biased.
struct ConnectorConfig {
  int in_dim = 64;      // vision output width
  int hidden_dim = 128;
  int out_dim = 64;     // LM width
};

struct LMConfig {
  int vocab_size = 64;
  int dim = 64;
  int depth = 4;
  int heads = 4;
  int max_seq_len = 64;
  void validate() const;
};

void init_connector_params(ParameterStore& store, const ConnectorConfig& cfg, Rng& rng);
void init_lm_params(ParameterStore& store, const LMConfig& cfg, Rng& rng);

Tensor connector_forward(const Tensor& visual_tokens, const ParameterStore& store,
                         const ConnectorConfig& cfg);

// One multimodal training sequence: visual embeddings prepended to embedded
// text, with next-token labels. Positions whose target would be a visual
// embedding carry kIgnoreId; the last visual position predicts the first
// text token.
struct AssembledSample {
  Tensor embeds;            // [n_visual + n_text, lm_dim]
  std::vector<int> labels;  // same length; kIgnoreId where unsupervised
  int n_visual = 0;
};

// visual_embeds may be undefined for the text-only ablation.
AssembledSample assemble(const Tensor& visual_embeds, const std::vector<int>& text_ids,
                         const ParameterStore& store, const LMConfig& cfg);

// Causal transformer over the assembled sequence -> logits [S, vocab].
Tensor lm_forward_logits(const Tensor& embeds, const ParameterStore& store, const LMConfig& cfg);

Tensor lm_loss(const AssembledSample& sample, const ParameterStore& store, const LMConfig& cfg,
               bool* all_ignored = nullptr);

// ---- full pipeline bundle ----------------------------------------------

struct ModelConfig {
  ComposedEncoderConfig vision;
  ConnectorConfig connector;
  LMConfig lm;
  bool use_class_token = false;  // when false, class rows are dropped before the connector
  uint64_t encoder_seed = 7;     // fixed-seed stand-in for pretrained encoder checkpoints

  static ModelConfig toy_defaults();
  void validate() const;
};

struct Model {
  ModelConfig cfg;
  ParameterStore params;
  Tokenizer tokenizer;
};

// Initializes all parameter groups. Encoders draw from encoder_seed only;
// fusion/connector/lm draw from per-group streams derived from `seed`, so
// connector and LM initialization are identical across tower modes.
Model build_model(const ModelConfig& cfg, uint64_t seed);

// Composed encoder -> optional class-token drop -> connector.
Tensor vision_to_lm_tokens(const Model& model, const Image& image);

// Full text sequence for training: <bos> question answer <eos>.
std::vector<int> training_text(const Model& model, const std::vector<int>& question_ids,
                               const std::vector<int>& answer_ids);

Tensor sample_loss(const Model& model, const Image& image, const std::vector<int>& text_ids);

// Iteratively appends the argmax token (ties toward the lowest id) until
// <eos> or max_new tokens; returns generated ids without <eos>.
std::vector<int> greedy_decode(const Model& model, const Image& image,
                               const std::vector<int>& question_ids, int max_new);

}  // namespace ftz
