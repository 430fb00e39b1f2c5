#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ftz/gradcheck.hpp"
#include "ftz/vit.hpp"

using namespace ftz;

namespace {

struct PrecisionGuard {
  Precision saved = precision();
  explicit PrecisionGuard(Precision p) { set_precision(p); }
  ~PrecisionGuard() { set_precision(saved); }
};

ViTConfig tiny_config() {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.depth = 2;
  cfg.mlp_ratio = 2.0;
  return cfg;
}

Image flat_image(int side, uint8_t value) {
  Image image;
  image.height = image.width = side;
  image.pixels.assign(static_cast<size_t>(side) * side * 3, value);
  return image;
}

Image pattern_image(int side) {
  Image image;
  image.height = image.width = side;
  image.pixels.resize(static_cast<size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.pixels[(static_cast<size_t>(y) * side + x) * 3 + c] =
            static_cast<uint8_t>((x * 7 + y * 13 + c * 29) % 256);
      }
    }
  }
  return image;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("preprocess scaling and normalization") {
  ViTConfig cfg = tiny_config();
  cfg.norm_mean = {0.0, 0.0, 0.0};
  cfg.norm_std = {1.0, 1.0, 1.0};
  Tensor zero = preprocess(flat_image(8, 0), cfg);
  CHECK(zero.shape() == Shape{3, 8, 8});
  for (double v : zero.vec()) CHECK(v == 0.0);

  cfg.norm_mean = {0.5, 0.5, 0.5};
  cfg.norm_std = {0.5, 0.5, 0.5};
  Tensor ones = preprocess(flat_image(8, 255), cfg);
  for (double v : ones.vec()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(preprocess(flat_image(16, 0), cfg), InputError);
}

TEST_CASE("preprocess golden values with CLIP-like constants") {
  PrecisionGuard guard(Precision::f64);
  ViTConfig cfg = tiny_config();
  cfg.norm_mean = {0.48145466, 0.4578275, 0.40821073};
  cfg.norm_std = {0.26862954, 0.26130258, 0.27577711};
  const Image image = pattern_image(8);
  Tensor out = preprocess(image, cfg);
  // independent scalar computation over the raster layout
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const double byte = image.pixels[(static_cast<size_t>(y) * 8 + x) * 3 + c];
        const double expected =
            (byte / 255.0 - cfg.norm_mean[static_cast<size_t>(c)]) / cfg.norm_std[static_cast<size_t>(c)];
        const double got = out.vec()[(static_cast<size_t>(c) * 8 + y) * 8 + x];
        CHECK(got == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("patch embedding geometry") {
  // token count formula across legal configurations
  for (int size : {8, 16, 32}) {
    for (int patch : {4, 8}) {
      if (size % patch != 0) continue;
      ViTConfig cfg = tiny_config();
      cfg.image_size = size;
      cfg.patch_size = patch;
      CHECK(cfg.tokens() == 1 + (size / patch) * (size / patch));
    }
  }
  ViTConfig big = tiny_config();
  big.image_size = 32;
  big.patch_size = 8;
  CHECK(big.tokens() == 17);

  // zero image, zero positional embedding: every patch token equals the bias
  ViTConfig cfg = tiny_config();
  ParameterStore store;
  Rng rng(1);
  init_vit_params(store, "enc", cfg, rng, true);
  for (double& v : store.get("enc.pos").vec()) v = 0.0;
  cfg.norm_mean = {0.0, 0.0, 0.0};
  cfg.norm_std = {1.0, 1.0, 1.0};
  Tensor tokens = patch_embed(preprocess(flat_image(8, 0), cfg), store, "enc", cfg);
  CHECK(tokens.shape() == Shape{5, 8});
  const Tensor bias = store.get("enc.patch.b");
  for (int t = 1; t < 5; ++t) {
    for (int j = 0; j < 8; ++j) CHECK(tokens.at2(t, j) == bias.vec()[static_cast<size_t>(j)]);
  }
}

TEST_CASE("patch embedding projection gradient") {
  PrecisionGuard guard(Precision::f64);
  ViTConfig cfg = tiny_config();
  ParameterStore store;
  Rng rng(2);
  init_vit_params(store, "enc", cfg, rng, false);
  const Image image = pattern_image(8);
  Tensor w = store.get("enc.patch.w");
  std::vector<double> weights(static_cast<size_t>(cfg.tokens()) * cfg.dim);
  for (double& v : weights) v = rng.uniform(-1, 1);
  Tensor c = Tensor::from_data({cfg.tokens(), cfg.dim}, std::move(weights));
  auto f = [&]() { return sum_all(mul(patch_embed(preprocess(image, cfg), store, "enc", cfg), c)); };
  CHECK(gradcheck(f, w) <= 1e-4);
}

TEST_CASE("block with zeroed output projections is the identity") {
  ViTConfig cfg = tiny_config();
  ParameterStore store;
  Rng rng(3);
  init_vit_params(store, "enc", cfg, rng, true);
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string bp = "enc.blocks." + std::to_string(b) + ".";
    for (const char* name : {"attn.wo", "attn.bo", "mlp.w2", "mlp.b2"}) {
      for (double& v : store.get(bp + name).vec()) v = 0.0;
    }
  }
  Rng data_rng(4);
  std::vector<double> values(static_cast<size_t>(cfg.tokens()) * cfg.dim);
  for (double& v : values) v = data_rng.uniform(-1, 1);
  Tensor h = Tensor::from_data({cfg.tokens(), cfg.dim}, values);
  Tensor out = block_forward(h, store, "enc.blocks.0.", cfg);
  CHECK(out.vec() == h.vec());

  // residual path integrity through the whole encoder: the last layer
  // equals the patch embedding exactly
  const Image image = pattern_image(8);
  EncoderActivations acts = encode(image, cfg, store, "enc");
  Tensor embedded = patch_embed(preprocess(image, cfg), store, "enc", cfg);
  CHECK(acts.per_layer.back().vec() == embedded.vec());
}

TEST_CASE("block gradcheck in 64-bit mode") {
  PrecisionGuard guard(Precision::f64);
  ViTConfig cfg = tiny_config();
  ParameterStore store;
  Rng rng(5);
  init_vit_params(store, "enc", cfg, rng, false);
  std::vector<double> values(static_cast<size_t>(4) * cfg.dim);
  for (double& v : values) v = rng.uniform(-1, 1);
  Tensor h = Tensor::from_data({4, cfg.dim}, std::move(values));
  std::vector<double> wv(static_cast<size_t>(4) * cfg.dim);
  for (double& v : wv) v = rng.uniform(-1, 1);
  Tensor c = Tensor::from_data({4, cfg.dim}, std::move(wv));
  auto f = [&]() { return sum_all(mul(block_forward(h, store, "enc.blocks.0.", cfg), c)); };
  CHECK(gradcheck(f, h) <= 1e-4);
  CHECK(gradcheck(f, store.get("enc.blocks.0.attn.wqkv")) <= 1e-4);
  CHECK(gradcheck(f, store.get("enc.blocks.0.mlp.w1")) <= 1e-4);
}

TEST_CASE("encode determinism and shapes") {
  ViTConfig cfg = tiny_config();
  cfg.depth = 1;
  {
    ParameterStore store;
    Rng rng(6);
    init_vit_params(store, "enc", cfg, rng, true);
    EncoderActivations acts = encode(pattern_image(8), cfg, store, "enc");
    CHECK(acts.per_layer.size() == 1);
  }

  ViTConfig toy = tiny_config();
  toy.image_size = 32;
  toy.patch_size = 8;
  toy.dim = 16;
  toy.heads = 2;
  toy.depth = 2;
  ParameterStore a, b;
  Rng ra(7), rb(7);
  init_vit_params(a, "enc", toy, ra, true);
  init_vit_params(b, "enc", toy, rb, true);
  const Image image = pattern_image(32);
  EncoderActivations first = encode(image, toy, a, "enc");
  EncoderActivations second = encode(image, toy, b, "enc");
  REQUIRE(first.per_layer.size() == second.per_layer.size());
  for (size_t i = 0; i < first.per_layer.size(); ++i) {
    CHECK(first.per_layer[i].shape() == Shape{17, 16});
    CHECK(first.per_layer[i].vec() == second.per_layer[i].vec());  // byte-identical
  }

  ParameterStore incomplete;
  Rng rc(7);
  init_vit_params(incomplete, "other", toy, rc, true);
  CHECK_THROWS_AS(encode(image, toy, incomplete, "enc"), CheckpointError);
}

TEST_CASE("checkpoint round trip is byte exact") {
  ViTConfig cfg = tiny_config();
  ParameterStore store;
  Rng rng(8);
  init_vit_params(store, "enc", cfg, rng, true);
  const std::string path = temp_path("ftz_test_ckpt.ftz");
  store.save(path);
  ParameterStore loaded = ParameterStore::load(path);
  CHECK(loaded.size() == store.size());
  for (const std::string& name : store.names()) {
    CHECK(loaded.get(name).vec() == store.get(name).vec());
    CHECK(loaded.get(name).shape() == store.get(name).shape());
    CHECK(loaded.frozen(name) == store.frozen(name));
  }
  // second save of the loaded store reproduces the file bit for bit
  const std::string path2 = temp_path("ftz_test_ckpt2.ftz");
  loaded.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string bytes1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string bytes2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(bytes1 == bytes2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("empty store round trips") {
  ParameterStore store;
  const std::string path = temp_path("ftz_test_empty.ftz");
  store.save(path);
  ParameterStore loaded = ParameterStore::load(path);
  CHECK(loaded.size() == 0);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption handling") {
  ParameterStore store;
  store.add("w", Tensor::from_data({2, 2}, {1, 2, 3, 4}), false);
  const std::string path = temp_path("ftz_test_corrupt.ftz");
  store.save(path);

  // bad magic -> explicit format error
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(ParameterStore::load(path), CheckpointError);

  // truncation -> explicit format error
  store.save(path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<long>(bytes.size() - 5));
  out.close();
  CHECK_THROWS_AS(ParameterStore::load(path), CheckpointError);

  // a flipped data byte loads fine (no checksum) but changes the tensor
  store.save(path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-2, std::ios::end);
    char b;
    f.seekg(-2, std::ios::end);
    f.read(&b, 1);
    f.seekp(-2, std::ios::end);
    b = static_cast<char>(b ^ 0x40);
    f.write(&b, 1);
  }
  ParameterStore tampered = ParameterStore::load(path);
  CHECK(tampered.get("w").vec() != store.get("w").vec());

  CHECK_THROWS_AS(
      [&]() {
        ParameterStore dup;
        dup.add("w", Tensor::zeros({1}), false);
        dup.add("w", Tensor::zeros({1}), false);
      }(),
      CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("frozen tensors stay byte-identical under hashing") {
  ViTConfig cfg = tiny_config();
  ParameterStore store;
  Rng rng(9);
  init_vit_params(store, "anchor", cfg, rng, true);
  const std::string before = sha256_of_params(store, {"anchor."});
  // touching unrelated tensors does not change the digest
  store.add("connector.w", Tensor::from_data({2}, {1, 2}), false);
  for (double& v : store.get("connector.w").vec()) v += 1.0;
  CHECK(sha256_of_params(store, {"anchor."}) == before);
}
