#include "ftz/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace ftz {

namespace {

std::string trim(const std::string& s) {
  size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigurationError("config key " + key + ": expected integer, got '" + value + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigurationError("config key " + key + ": expected unsigned integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigurationError("config key " + key + ": expected real, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigurationError("config key " + key + ": expected bool, got '" + value + "'");
}

LrSchedule parse_schedule(const std::string& key, const std::string& value) {
  if (value == "constant") return LrSchedule::constant;
  if (value == "cosine") return LrSchedule::cosine_warmup;
  throw ConfigurationError("config key " + key + ": expected constant|cosine, got '" + value + "'");
}

// "caption,count,exist" integer weights, e.g. "6,1,1"
TaskMix parse_mix(const std::string& key, const std::string& value) {
  int parts[3];
  size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    size_t comma = value.find(',', pos);
    if (comma == std::string::npos) comma = value.size();
    if (i < 2 && comma == value.size()) {
      throw ConfigurationError("config key " + key + ": expected three comma-separated weights");
    }
    parts[i] = parse_int(key, value.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return TaskMix{parts[0], parts[1], parts[2]};
}

bool apply_vit_key(ViTConfig& cfg, const std::string& field, const std::string& key,
                   const std::string& value) {
  if (field == "image_size") cfg.image_size = parse_int(key, value);
  else if (field == "patch_size") cfg.patch_size = parse_int(key, value);
  else if (field == "dim") cfg.dim = parse_int(key, value);
  else if (field == "heads") cfg.heads = parse_int(key, value);
  else if (field == "depth") cfg.depth = parse_int(key, value);
  else if (field == "mlp_ratio") cfg.mlp_ratio = parse_real(key, value);
  else return false;
  return true;
}

bool apply_stage_key(StageConfig& cfg, const std::string& field, const std::string& key,
                     const std::string& value) {
  if (field == "learning_rate") cfg.learning_rate = parse_real(key, value);
  else if (field == "batch_size") cfg.batch_size = parse_int(key, value);
  else if (field == "steps") cfg.steps = parse_int(key, value);
  else if (field == "schedule") cfg.schedule = parse_schedule(key, value);
  else if (field == "warmup_fraction") cfg.warmup_fraction = parse_real(key, value);
  else if (field == "clip_norm") cfg.clip_norm = parse_real(key, value);
  else if (field == "weight_decay") cfg.weight_decay = parse_real(key, value);
  else if (field == "checkpoint_every") cfg.checkpoint_every = parse_int(key, value);
  else return false;
  return true;
}

}  // namespace

void RunConfig::apply_line(const std::string& key, const std::string& value) {
  auto starts = [&](const char* prefix) { return key.rfind(prefix, 0) == 0; };
  if (key == "seed") {
    seed = parse_u64(key, value);
    return;
  }
  if (key == "model.mode") {
    model.vision.mode = mode_from_name(value);
    return;
  }
  if (key == "model.fusion_points") {
    model.vision.num_fusion_points = parse_int(key, value);
    return;
  }
  if (key == "model.fusion_heads") {
    model.vision.fusion_heads = parse_int(key, value);
    return;
  }
  if (key == "model.encoder_seed") {
    model.encoder_seed = parse_u64(key, value);
    return;
  }
  if (key == "model.use_class_token") {
    model.use_class_token = parse_bool(key, value);
    return;
  }
  if (key == "model.connector.hidden_dim") {
    model.connector.hidden_dim = parse_int(key, value);
    return;
  }
  if (starts("model.anchor.")) {
    if (apply_vit_key(model.vision.anchor, key.substr(13), key, value)) return;
  }
  if (starts("model.augment.")) {
    if (apply_vit_key(model.vision.augment, key.substr(14), key, value)) return;
  }
  if (starts("model.lm.")) {
    const std::string field = key.substr(9);
    if (field == "vocab_size") { model.lm.vocab_size = parse_int(key, value); return; }
    if (field == "dim") { model.lm.dim = parse_int(key, value); return; }
    if (field == "depth") { model.lm.depth = parse_int(key, value); return; }
    if (field == "heads") { model.lm.heads = parse_int(key, value); return; }
    if (field == "max_seq_len") { model.lm.max_seq_len = parse_int(key, value); return; }
  }
  if (starts("stage1.")) {
    if (apply_stage_key(stage1, key.substr(7), key, value)) return;
  }
  if (starts("stage2.")) {
    if (apply_stage_key(stage2, key.substr(7), key, value)) return;
  }
  if (starts("data.")) {
    const std::string field = key.substr(5);
    if (field == "seed") { data.seed = parse_u64(key, value); return; }
    if (field == "stage1_n") { data.stage1_n = parse_int(key, value); return; }
    if (field == "stage2_n") { data.stage2_n = parse_int(key, value); return; }
    if (field == "eval_n") { data.eval_n = parse_int(key, value); return; }
    if (field == "stage1_mix") { data.stage1_mix = parse_mix(key, value); return; }
    if (field == "stage2_mix") { data.stage2_mix = parse_mix(key, value); return; }
  }
  throw ConfigurationError("unknown config key: " + key);
}

void RunConfig::finalize() {
  // Widths are tied: the connector bridges the anchor stream and the LM.
  model.connector.in_dim = model.vision.anchor.dim;
  model.connector.out_dim = model.lm.dim;
  stage1.seed = seed;
  stage2.seed = seed;
  model.validate();
}

std::vector<SyntheticSample> stage_dataset(const DataConfig& data, int stage,
                                           const Tokenizer& tokenizer) {
  if (stage != 1 && stage != 2) throw ConfigurationError("stage must be 1 or 2");
  const uint64_t seed = derive_seed(data.seed, stage == 1 ? "stage1" : "stage2");
  const int n = stage == 1 ? data.stage1_n : data.stage2_n;
  const TaskMix mix = stage == 1 ? data.stage1_mix : data.stage2_mix;
  return generate_mixed_dataset(seed, n, mix, tokenizer);
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigurationError(path + ":" + std::to_string(line_number) +
                               ": expected 'key = value', got '" + line + "'");
    }
    cfg.apply_line(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.finalize();
  return cfg;
}

}  // namespace ftz
