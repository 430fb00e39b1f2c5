#include "ftz/gradcheck_battery.hpp"

#include <algorithm>
#include <functional>

#include "ftz/mllm.hpp"

namespace ftz {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-scale, scale);
  return Tensor::from_data(std::move(shape), std::move(values));
}

// Contracts a tensor-valued forward against fixed random weights so the
// checked gradient is non-degenerate.
Tensor contract(const Tensor& y, const Tensor& weights) { return sum_all(mul(y, weights)); }

struct Battery {
  Rng rng;
  int instances;
  std::vector<GradCheckCase> results;

  Battery(uint64_t seed, int n) : rng(seed), instances(n) {}

  // builder(rng) -> (forward, checked tensor)
  void run(const std::string& name,
           const std::function<std::pair<std::function<Tensor()>, Tensor>(Rng&)>& builder,
           double threshold = 1e-4) {
    GradCheckCase result;
    result.name = name;
    result.threshold = threshold;
    result.instances = instances;
    for (int i = 0; i < instances; ++i) {
      auto [forward, x] = builder(rng);
      result.max_rel_err = std::max(result.max_rel_err, gradcheck(forward, x));
    }
    results.push_back(std::move(result));
  }
};

Image random_image(Rng& rng, int side) {
  Image image;
  image.height = image.width = side;
  image.pixels.resize(static_cast<size_t>(side) * side * 3);
  for (uint8_t& b : image.pixels) b = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return image;
}

ComposedEncoderConfig tiny_fusion_config() {
  ComposedEncoderConfig cfg;
  cfg.anchor = ViTConfig{};
  cfg.anchor.image_size = 8;
  cfg.anchor.patch_size = 4;
  cfg.anchor.dim = 8;
  cfg.anchor.heads = 2;
  cfg.anchor.depth = 2;
  cfg.anchor.mlp_ratio = 2.0;
  cfg.augment = cfg.anchor;
  cfg.augment.dim = 6;
  cfg.augment.heads = 2;
  cfg.mode = TowerMode::ftz;
  cfg.num_fusion_points = 2;
  cfg.fusion_heads = 2;
  return cfg;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_battery(int instances, uint64_t seed) {
  const Precision saved = precision();
  set_precision(Precision::f64);
  Battery battery(seed, instances);

  battery.run("sum_all (linear)", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 5});
    return std::make_pair(std::function<Tensor()>([x]() { return sum_all(x); }), x);
  }, 1e-10);

  battery.run("matmul wrt A", [](Rng& rng) {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    Tensor c = random_tensor(rng, {3, 2});
    auto f = [a, b, c]() { return contract(matmul(a, b), c); };
    return std::make_pair(std::function<Tensor()>(f), a);
  });
  battery.run("matmul wrt B", [](Rng& rng) {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    Tensor c = random_tensor(rng, {3, 2});
    auto f = [a, b, c]() { return contract(matmul(a, b), c); };
    return std::make_pair(std::function<Tensor()>(f), b);
  });

  battery.run("transpose2d", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 4});
    Tensor c = random_tensor(rng, {4, 3});
    auto f = [x, c]() { return contract(transpose2d(x), c); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });

  battery.run("add", [](Rng& rng) {
    Tensor a = random_tensor(rng, {2, 6});
    Tensor b = random_tensor(rng, {2, 6});
    Tensor c = random_tensor(rng, {2, 6});
    auto f = [a, b, c]() { return contract(add(a, b), c); };
    return std::make_pair(std::function<Tensor()>(f), a);
  });

  battery.run("mul", [](Rng& rng) {
    Tensor a = random_tensor(rng, {2, 6});
    Tensor b = random_tensor(rng, {2, 6});
    Tensor c = random_tensor(rng, {2, 6});
    auto f = [a, b, c]() { return contract(mul(a, b), c); };
    return std::make_pair(std::function<Tensor()>(f), a);
  });

  battery.run("scale", [](Rng& rng) {
    Tensor x = random_tensor(rng, {7});
    Tensor c = random_tensor(rng, {7});
    auto f = [x, c]() { return contract(scale(x, 1.7), c); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });

  battery.run("add_rowvec wrt bias", [](Rng& rng) {
    Tensor x = random_tensor(rng, {4, 5});
    Tensor b = random_tensor(rng, {5});
    Tensor c = random_tensor(rng, {4, 5});
    auto f = [x, b, c]() { return contract(add_rowvec(x, b), c); };
    return std::make_pair(std::function<Tensor()>(f), b);
  });

  battery.run("softmax_lastdim", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 6}, 2.0);
    Tensor c = random_tensor(rng, {3, 6});
    auto f = [x, c]() { return contract(softmax_lastdim(x), c); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });

  battery.run("layer_norm wrt x", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 8}, 2.0);
    Tensor g = random_tensor(rng, {8});
    Tensor b = random_tensor(rng, {8});
    Tensor c = random_tensor(rng, {3, 8});
    auto f = [x, g, b, c]() { return contract(layer_norm(x, g, b), c); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });
  battery.run("layer_norm wrt gamma", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 8}, 2.0);
    Tensor g = random_tensor(rng, {8});
    Tensor b = random_tensor(rng, {8});
    Tensor c = random_tensor(rng, {3, 8});
    auto f = [x, g, b, c]() { return contract(layer_norm(x, g, b), c); };
    return std::make_pair(std::function<Tensor()>(f), g);
  });
  battery.run("layer_norm wrt beta", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 8}, 2.0);
    Tensor g = random_tensor(rng, {8});
    Tensor b = random_tensor(rng, {8});
    Tensor c = random_tensor(rng, {3, 8});
    auto f = [x, g, b, c]() { return contract(layer_norm(x, g, b), c); };
    return std::make_pair(std::function<Tensor()>(f), b);
  });

  battery.run("gelu", [](Rng& rng) {
    Tensor x = random_tensor(rng, {11}, 3.0);
    Tensor c = random_tensor(rng, {11});
    auto f = [x, c]() { return contract(gelu(x), c); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });
  battery.run("gelu(sum) composite", [](Rng& rng) {
    Tensor x = random_tensor(rng, {9}, 2.0);
    auto f = [x]() { return sum_all(gelu(x)); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });

  battery.run("cross_entropy_logits", [](Rng& rng) {
    Tensor logits = random_tensor(rng, {5, 7}, 2.0);
    auto targets = std::make_shared<std::vector<int>>();
    for (int i = 0; i < 5; ++i) {
      targets->push_back(i == 2 ? kIgnoreId : rng.uniform_int(0, 6));
    }
    auto f = [logits, targets]() { return cross_entropy_logits(logits, *targets); };
    return std::make_pair(std::function<Tensor()>(f), logits);
  });

  battery.run("embedding_lookup", [](Rng& rng) {
    Tensor table = random_tensor(rng, {6, 4});
    auto ids = std::make_shared<std::vector<int>>();
    for (int i = 0; i < 5; ++i) ids->push_back(rng.uniform_int(0, 5));
    Tensor c = random_tensor(rng, {5, 4});
    auto f = [table, ids, c]() { return contract(embedding_lookup(table, *ids), c); };
    return std::make_pair(std::function<Tensor()>(f), table);
  });

  battery.run("slice_rows", [](Rng& rng) {
    Tensor x = random_tensor(rng, {6, 3});
    Tensor c = random_tensor(rng, {3, 3});
    auto f = [x, c]() { return contract(slice_rows(x, 2, 3), c); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });
  battery.run("slice_cols", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 6});
    Tensor c = random_tensor(rng, {3, 2});
    auto f = [x, c]() { return contract(slice_cols(x, 1, 2), c); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });
  battery.run("concat_rows", [](Rng& rng) {
    Tensor a = random_tensor(rng, {2, 4});
    Tensor b = random_tensor(rng, {3, 4});
    Tensor c = random_tensor(rng, {5, 4});
    auto f = [a, b, c]() { return contract(concat_rows({a, b}), c); };
    return std::make_pair(std::function<Tensor()>(f), a);
  });
  battery.run("concat_cols", [](Rng& rng) {
    Tensor a = random_tensor(rng, {3, 2});
    Tensor b = random_tensor(rng, {3, 4});
    Tensor c = random_tensor(rng, {3, 6});
    auto f = [a, b, c]() { return contract(concat_cols({a, b}), c); };
    return std::make_pair(std::function<Tensor()>(f), b);
  });
  battery.run("interleave_rows", [](Rng& rng) {
    Tensor a = random_tensor(rng, {4, 3});
    Tensor b = random_tensor(rng, {4, 3});
    Tensor c = random_tensor(rng, {8, 3});
    auto f = [a, b, c]() { return contract(interleave_rows(a, b), c); };
    return std::make_pair(std::function<Tensor()>(f), a);
  });

  battery.run("extract_patches", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 4, 4});
    Tensor c = random_tensor(rng, {4, 12});
    auto f = [x, c]() { return contract(extract_patches(x, 2), c); };
    return std::make_pair(std::function<Tensor()>(f), x);
  });

  for (const char* target : {"q", "k", "v"}) {
    const std::string name = std::string("attention wrt ") + target;
    const std::string t = target;
    battery.run(name, [t](Rng& rng) {
      Tensor q = random_tensor(rng, {5, 6});
      Tensor k = random_tensor(rng, {4, 6});
      Tensor v = random_tensor(rng, {4, 6});
      Tensor c = random_tensor(rng, {5, 6});
      auto f = [q, k, v, c]() { return contract(multihead_attention(q, k, v, 2), c); };
      Tensor x = t == "q" ? q : (t == "k" ? k : v);
      return std::make_pair(std::function<Tensor()>(f), x);
    });
  }
  battery.run("causal attention", [](Rng& rng) {
    Tensor q = random_tensor(rng, {5, 6});
    Tensor k = random_tensor(rng, {5, 6});
    Tensor v = random_tensor(rng, {5, 6});
    Tensor c = random_tensor(rng, {5, 6});
    auto f = [q, k, v, c]() { return contract(multihead_attention(q, k, v, 3, true), c); };
    return std::make_pair(std::function<Tensor()>(f), q);
  });

  battery.run("mlp composite", [](Rng& rng) {
    Tensor x = random_tensor(rng, {3, 4});
    Tensor w1 = random_tensor(rng, {4, 6});
    Tensor b1 = random_tensor(rng, {6});
    Tensor w2 = random_tensor(rng, {6, 2});
    Tensor b2 = random_tensor(rng, {2});
    std::vector<int> targets = {rng.uniform_int(0, 1), kIgnoreId, rng.uniform_int(0, 1)};
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto f = [x, w1, b1, w2, b2, tg]() {
      Tensor h = gelu(add_rowvec(matmul(x, w1), b1));
      return cross_entropy_logits(add_rowvec(matmul(h, w2), b2), *tg);
    };
    return std::make_pair(std::function<Tensor()>(f), w1);
  });

  // Full fusion block: gradients of every fusion-module weight through the
  // composed encoder. w_o is re-randomized so its zero init does not null
  // the upstream gradients.
  for (const char* which : {"w_proj", "w_q", "w_k", "w_v", "w_o"}) {
    const std::string param = which;
    battery.run("fusion block wrt " + param, [param](Rng& rng) {
      const ComposedEncoderConfig cfg = tiny_fusion_config();
      auto store = std::make_shared<ParameterStore>();
      Rng init(rng.next_u64());
      init_vit_params(*store, "anchor", cfg.anchor, init, true);
      init_vit_params(*store, "augment", cfg.augment, init, true);
      init_fusion_params(*store, cfg, init);
      for (const std::string& name : store->names_with_prefix("fusion.")) {
        if (name.size() >= 3 && name.substr(name.size() - 3) == "w_o") {
          Tensor w_o = store->get(name);
          for (double& v : w_o.vec()) v = init.uniform(-0.3, 0.3);
        }
      }
      auto image = std::make_shared<Image>(random_image(init, cfg.anchor.image_size));
      Tensor c = random_tensor(init, {cfg.anchor.tokens(), cfg.anchor.dim});
      auto f = [cfg, store, image, c]() {
        return contract(composed_encode(*image, cfg, *store), c);
      };
      return std::make_pair(std::function<Tensor()>(f), store->get("fusion.p0." + param));
    });
  }

  battery.run("connector wrt fc1.w", [](Rng& rng) {
    ConnectorConfig cfg{6, 10, 4};
    auto store = std::make_shared<ParameterStore>();
    Rng init(rng.next_u64());
    init_connector_params(*store, cfg, init);
    Tensor x = random_tensor(init, {5, 6});
    Tensor c = random_tensor(init, {5, 4});
    auto f = [cfg, store, x, c]() { return contract(connector_forward(x, *store, cfg), c); };
    return std::make_pair(std::function<Tensor()>(f), store->get("connector.fc1.w"));
  });
  battery.run("connector wrt fc2.w", [](Rng& rng) {
    ConnectorConfig cfg{6, 10, 4};
    auto store = std::make_shared<ParameterStore>();
    Rng init(rng.next_u64());
    init_connector_params(*store, cfg, init);
    Tensor x = random_tensor(init, {5, 6});
    Tensor c = random_tensor(init, {5, 4});
    auto f = [cfg, store, x, c]() { return contract(connector_forward(x, *store, cfg), c); };
    return std::make_pair(std::function<Tensor()>(f), store->get("connector.fc2.w"));
  });
  battery.run("connector wrt biases", [](Rng& rng) {
    ConnectorConfig cfg{6, 10, 4};
    auto store = std::make_shared<ParameterStore>();
    Rng init(rng.next_u64());
    init_connector_params(*store, cfg, init);
    Tensor x = random_tensor(init, {5, 6});
    Tensor c = random_tensor(init, {5, 4});
    auto f = [cfg, store, x, c]() { return contract(connector_forward(x, *store, cfg), c); };
    return std::make_pair(std::function<Tensor()>(f), store->get("connector.fc1.b"));
  });

  set_precision(saved);
  return battery.results;
}

}  // namespace ftz
