#include <cmath>

#include "doctest.h"
#include "ftz/data.hpp"
#include "ftz/gradcheck.hpp"
#include "ftz/mllm.hpp"

using namespace ftz;

namespace {

struct PrecisionGuard {
  Precision saved = precision();
  explicit PrecisionGuard(Precision p) { set_precision(p); }
  ~PrecisionGuard() { set_precision(saved); }
};

ModelConfig tiny_model_config(TowerMode mode = TowerMode::ftz) {
  ModelConfig cfg;
  cfg.vision.anchor.image_size = 8;
  cfg.vision.anchor.patch_size = 4;
  cfg.vision.anchor.dim = 8;
  cfg.vision.anchor.heads = 2;
  cfg.vision.anchor.depth = 2;
  cfg.vision.anchor.mlp_ratio = 2.0;
  cfg.vision.augment = cfg.vision.anchor;
  cfg.vision.augment.dim = 6;
  cfg.vision.mode = mode;
  cfg.vision.num_fusion_points = 1;
  cfg.vision.fusion_heads = 2;
  cfg.connector = ConnectorConfig{8, 12, 16};
  cfg.lm.vocab_size = 32;
  cfg.lm.dim = 16;
  cfg.lm.depth = 2;
  cfg.lm.heads = 2;
  cfg.lm.max_seq_len = 32;
  return cfg;
}

Image random_image(uint64_t seed, int side) {
  Rng rng(seed);
  Image image;
  image.height = image.width = side;
  image.pixels.resize(static_cast<size_t>(side) * side * 3);
  for (uint8_t& b : image.pixels) b = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return image;
}

}  // namespace

TEST_CASE("connector collapse and shape preservation") {
  ConnectorConfig cfg{6, 10, 4};
  ParameterStore store;
  Rng rng(51);
  init_connector_params(store, cfg, rng);
  // fill biases with recognizable values, zero the first weight matrix
  Tensor b1 = store.get("connector.fc1.b");
  Tensor b2 = store.get("connector.fc2.b");
  for (int j = 0; j < 10; ++j) b1.vec()[static_cast<size_t>(j)] = 0.125 * (j + 1);
  for (int j = 0; j < 4; ++j) b2.vec()[static_cast<size_t>(j)] = -0.25 * (j + 1);
  for (double& v : store.get("connector.fc1.w").vec()) v = 0.0;

  Rng data_rng(52);
  std::vector<double> values(5 * 6);
  for (double& v : values) v = data_rng.uniform(-1, 1);
  Tensor x = Tensor::from_data({5, 6}, std::move(values));

  // W1 = 0: every row equals b2 + gelu(b1) W2, a constant
  Tensor expected_row = add_rowvec(matmul(gelu(Tensor::from_data({1, 10}, b1.vec())),
                                          store.get("connector.fc2.w")),
                                   b2);
  Tensor out = connector_forward(x, store, cfg);
  CHECK(out.shape() == Shape{5, 4});
  for (int t = 0; t < 5; ++t) {
    for (int j = 0; j < 4; ++j) {
      CHECK(out.at2(t, j) == doctest::Approx(expected_row.at2(0, j)).epsilon(1e-9));
    }
  }

  // all weights zero: rows collapse to b2 exactly
  for (double& v : store.get("connector.fc2.w").vec()) v = 0.0;
  Tensor collapsed = connector_forward(x, store, cfg);
  for (int t = 0; t < 5; ++t) {
    for (int j = 0; j < 4; ++j) CHECK(collapsed.at2(t, j) == b2.vec()[static_cast<size_t>(j)]);
  }

  // per-token map: 17 in, 17 out
  std::vector<double> wide(17 * 6, 0.25);
  CHECK(connector_forward(Tensor::from_data({17, 6}, std::move(wide)), store, cfg).dim(0) == 17);
}

TEST_CASE("connector gradcheck") {
  PrecisionGuard guard(Precision::f64);
  ConnectorConfig cfg{6, 10, 4};
  ParameterStore store;
  Rng rng(53);
  init_connector_params(store, cfg, rng);
  std::vector<double> values(5 * 6);
  for (double& v : values) v = rng.uniform(-1, 1);
  Tensor x = Tensor::from_data({5, 6}, std::move(values));
  std::vector<double> wv(5 * 4);
  for (double& v : wv) v = rng.uniform(-1, 1);
  Tensor c = Tensor::from_data({5, 4}, std::move(wv));
  auto f = [&]() { return sum_all(mul(connector_forward(x, store, cfg), c)); };
  for (const char* name : {"connector.fc1.w", "connector.fc1.b", "connector.fc2.w",
                           "connector.fc2.b"}) {
    CHECK(gradcheck(f, store.get(name)) <= 1e-4);
  }
}

TEST_CASE("assemble layout and label shift") {
  ModelConfig cfg = tiny_model_config();
  Model model = build_model(cfg, 61);
  Rng rng(62);
  std::vector<double> values(17 * 16);
  for (double& v : values) v = rng.uniform(-1, 1);
  Tensor visual = Tensor::from_data({17, 16}, std::move(values));
  const std::vector<int> text = {1, 10, 13, 7, 3};  // T = 5
  AssembledSample sample = assemble(visual, text, model.params, cfg.lm);

  CHECK(sample.embeds.dim(0) == 22);  // 17 + 5
  CHECK(sample.labels.size() == 22);

  // exactly T supervised positions, predicting tokens 1..T from N_v-1+t
  int supervised = 0;
  for (int p = 0; p < 22; ++p) {
    if (sample.labels[static_cast<size_t>(p)] != kIgnoreId) ++supervised;
  }
  CHECK(supervised == 5);
  for (int p = 0; p < 16; ++p) CHECK(sample.labels[static_cast<size_t>(p)] == kIgnoreId);
  for (int t = 0; t < 5; ++t) CHECK(sample.labels[static_cast<size_t>(16 + t)] == text[static_cast<size_t>(t)]);
  CHECK(sample.labels[21] == kIgnoreId);  // last position predicts nothing

  // text-only ablation behaves as a plain LM batch
  AssembledSample text_only = assemble(Tensor(), text, model.params, cfg.lm);
  CHECK(text_only.embeds.dim(0) == 5);
  CHECK(text_only.labels[0] == text[1]);
  CHECK(text_only.labels[4] == kIgnoreId);

  // padding ids are never supervised
  AssembledSample padded = assemble(visual, {1, 10, 0, 0, 2}, model.params, cfg.lm);
  int pad_supervised = 0;
  for (int p = 0; p < 22; ++p) {
    if (padded.labels[static_cast<size_t>(p)] == 0) ++pad_supervised;
  }
  CHECK(pad_supervised == 0);

  // sequence overflow
  std::vector<int> long_text(40, 3);
  CHECK_THROWS_AS(assemble(visual, long_text, model.params, cfg.lm), LengthError);
}

TEST_CASE("zero output head forces uniform logits and ln(vocab) loss") {
  ModelConfig cfg = tiny_model_config();
  Model model = build_model(cfg, 63);
  for (double& v : model.params.get("lm.head.w").vec()) v = 0.0;
  const double expected = std::log(static_cast<double>(cfg.lm.vocab_size));
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const Image image = random_image(seed, 8);
    Tensor loss = sample_loss(model, image, {1, 10, 13, 7, 3, 2});
    CHECK(std::abs(loss.value() - expected) <= 1e-5);  // image content is irrelevant
  }
}

TEST_CASE("lm loss is finite and positive on random batches") {
  ModelConfig cfg = tiny_model_config();
  Model model = build_model(cfg, 64);
  Rng rng(65);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> text = {1};
    const int t = rng.uniform_int(2, 8);
    for (int i = 0; i < t; ++i) text.push_back(rng.uniform_int(3, 30));
    text.push_back(2);
    Tensor loss = sample_loss(model, random_image(static_cast<uint64_t>(trial), 8), text);
    CHECK(std::isfinite(loss.value()));
    CHECK(loss.value() > 0.0);
  }
}

TEST_CASE("causal masking localizes token perturbations") {
  ModelConfig cfg = tiny_model_config();
  Model model = build_model(cfg, 66);
  GradPause pause;
  std::vector<int> text = {1, 10, 13, 7, 3, 28, 2};
  Tensor embeds = embedding_lookup(model.params.get("lm.tok_emb"), text);
  Tensor base = lm_forward_logits(embeds, model.params, cfg.lm);

  const int t = 3;  // perturb the 4th token
  std::vector<int> perturbed_text = text;
  perturbed_text[t] = 21;
  Tensor perturbed = lm_forward_logits(embedding_lookup(model.params.get("lm.tok_emb"), perturbed_text),
                                       model.params, cfg.lm);
  for (int p = 0; p < t; ++p) {
    for (int j = 0; j < cfg.lm.vocab_size; ++j) {
      CHECK(base.at2(p, j) == perturbed.at2(p, j));  // bitwise upstream
    }
  }
  bool downstream_changed = false;
  for (int p = t; p < base.dim(0); ++p) {
    for (int j = 0; j < cfg.lm.vocab_size; ++j) {
      if (base.at2(p, j) != perturbed.at2(p, j)) downstream_changed = true;
    }
  }
  CHECK(downstream_changed);
}

TEST_CASE("visual label positions cannot reach the loss") {
  ModelConfig cfg = tiny_model_config();
  Model model = build_model(cfg, 67);
  const Image image = random_image(42, 8);
  Tensor visual = vision_to_lm_tokens(model, image);
  AssembledSample sample = assemble(visual, {1, 10, 13, 2}, model.params, cfg.lm);
  Tensor base_loss = lm_loss(sample, model.params, cfg.lm);

  // overwriting ignored labels with arbitrary ids changes nothing because
  // cross entropy skips them; supervised span is the text shift only
  AssembledSample tampered = sample;
  for (int p = 0; p + 1 < sample.n_visual; ++p) tampered.labels[static_cast<size_t>(p)] = kIgnoreId;
  Tensor same_loss = lm_loss(tampered, model.params, cfg.lm);
  CHECK(base_loss.value() == same_loss.value());
}

TEST_CASE("greedy decode determinism and budget") {
  ModelConfig cfg = tiny_model_config();
  Model model = build_model(cfg, 68);
  const Image image = random_image(9, 8);
  const std::vector<int> question = {10, 13, 7, 3};

  CHECK(greedy_decode(model, image, question, 0).empty());

  const std::vector<int> a = greedy_decode(model, image, question, 4);
  const std::vector<int> b = greedy_decode(model, image, question, 4);
  CHECK(a == b);
  CHECK(a.size() <= 4);
}

TEST_CASE("tokenizer round trip and manifest") {
  const Tokenizer tok = Tokenizer::canonical();
  CHECK(tok.size() == 31);
  CHECK(tok.pad_id() == 0);
  CHECK(tok.bos_id() == 1);
  CHECK(tok.eos_id() == 2);
  const std::vector<int> ids = tok.encode("how many circle ?");
  CHECK(tok.decode(ids) == "how many circle ?");
  CHECK_THROWS_AS(tok.encode("how many dogs ?"), InputError);
  CHECK_THROWS_AS(tok.word(500), IndexError);

  const std::string path = "/tmp/ftz_test_vocab.txt";
  tok.save_manifest(path);
  const Tokenizer loaded = Tokenizer::load_manifest(path);
  CHECK(loaded.size() == tok.size());
  CHECK(loaded.fingerprint() == tok.fingerprint());
  CHECK(loaded.encode("yes")[0] == tok.encode("yes")[0]);
  std::remove(path.c_str());
}

TEST_CASE("model builder keeps non-vision groups mode-invariant") {
  ModelConfig ftz_cfg = tiny_model_config(TowerMode::ftz);
  ModelConfig anchor_cfg = tiny_model_config(TowerMode::anchor_only);
  ModelConfig mof_cfg = tiny_model_config(TowerMode::interleaved_mof);
  Model a = build_model(ftz_cfg, 77);
  Model b = build_model(anchor_cfg, 77);
  Model c = build_model(mof_cfg, 77);
  const std::string ha = sha256_of_params(a.params, {"lm.", "connector."});
  CHECK(ha == sha256_of_params(b.params, {"lm.", "connector."}));
  CHECK(ha == sha256_of_params(c.params, {"lm.", "connector."}));
  // encoders come from the encoder seed, not the run seed
  Model d = build_model(ftz_cfg, 78);
  CHECK(sha256_of_params(a.params, {"anchor.", "augment."}) ==
        sha256_of_params(d.params, {"anchor.", "augment."}));
  CHECK(ha != sha256_of_params(d.params, {"lm.", "connector."}));
}

TEST_CASE("vision token count by mode and class-token flag") {
  ModelConfig cfg = tiny_model_config(TowerMode::ftz);
  Model model = build_model(cfg, 79);
  const Image image = random_image(3, 8);
  CHECK(vision_to_lm_tokens(model, image).dim(0) == 4);  // 5 tokens minus class

  ModelConfig with_cls = tiny_model_config(TowerMode::ftz);
  with_cls.use_class_token = true;
  Model model2 = build_model(with_cls, 79);
  CHECK(vision_to_lm_tokens(model2, image).dim(0) == 5);

  ModelConfig mof = tiny_model_config(TowerMode::interleaved_mof);
  Model model3 = build_model(mof, 79);
  CHECK(vision_to_lm_tokens(model3, image).dim(0) == 8);  // 2x5 minus both class rows
}
