#include "ftz/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace ftz {

namespace {

const std::vector<std::string> kKnownGroups = {"anchor", "augment", "fusion", "connector", "lm"};

std::string group_of(const std::string& name) {
  const size_t dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

StageConfig StageConfig::for_stage(int stage_number) {
  StageConfig cfg;
  cfg.stage = stage_number;
  if (stage_number == 1) {
    cfg.trainable_groups = {"fusion", "connector"};
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 16;
    cfg.steps = 300;
  } else if (stage_number == 2) {
    cfg.trainable_groups = {"fusion", "connector", "lm"};
    cfg.learning_rate = 2e-5;
    cfg.batch_size = 8;
    cfg.steps = 100;
  } else {
    throw ConfigurationError("stage must be 1 or 2, got " + std::to_string(stage_number));
  }
  return cfg;
}

std::pair<std::vector<std::string>, std::vector<std::string>> partition_parameters(
    ParameterStore& store, const StageConfig& cfg) {
  for (const std::string& group : cfg.trainable_groups) {
    if (group == "anchor" || group == "augment") {
      throw ConfigurationError("encoders are frozen and cannot be made trainable: " + group);
    }
    if (std::find(kKnownGroups.begin(), kKnownGroups.end(), group) == kKnownGroups.end()) {
      throw ConfigurationError("unknown parameter group: " + group);
    }
  }
  std::vector<std::string> trainable, frozen;
  for (const std::string& name : store.names()) {
    const std::string group = group_of(name);
    if (std::find(kKnownGroups.begin(), kKnownGroups.end(), group) == kKnownGroups.end()) {
      throw ConfigurationError("unknown namespace prefix in parameter name: " + name);
    }
    const bool is_trainable = std::find(cfg.trainable_groups.begin(), cfg.trainable_groups.end(),
                                        group) != cfg.trainable_groups.end();
    Tensor t = store.get(name);
    t.set_requires_grad(is_trainable);
    t.drop_grad();
    (is_trainable ? trainable : frozen).push_back(name);
  }
  return {std::move(trainable), std::move(frozen)};
}

AdamW::AdamW(ParameterStore& store, const std::vector<std::string>& trainable_names, double beta1,
             double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  slots_.reserve(trainable_names.size());
  for (const std::string& name : trainable_names) {
    Tensor param = store.get(name);
    if (!param.requires_grad()) {
      throw ConfigurationError("optimizer handed non-trainable tensor: " + name);
    }
    Slot slot;
    slot.name = name;
    slot.param = param;
    slot.m.assign(param.numel(), 0.0);
    slot.v.assign(param.numel(), 0.0);
    slots_.push_back(std::move(slot));
  }
}

void AdamW::step(double lr) {
  ++step_count_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (Slot& slot : slots_) {
    if (!slot.param.has_grad()) continue;  // parameter unused in this graph
    const std::vector<double>& g = slot.param.grad_vec();
    double* w = slot.param.data();
    for (size_t i = 0; i < g.size(); ++i) {
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = slot.m[i] / bias1;
      const double v_hat = slot.v[i] / bias2;
      const double update = m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * w[i];
      w[i] = store_round(w[i] - lr * update);
    }
  }
}

void AdamW::zero_grad() {
  for (Slot& slot : slots_) slot.param.drop_grad();
}

double AdamW::global_grad_norm() const {
  double sum_sq = 0.0;
  for (const Slot& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    for (double g : slot.param.grad_vec()) sum_sq += g * g;
  }
  return std::sqrt(sum_sq);
}

double AdamW::max_abs_grad() const {
  double mx = 0.0;
  for (const Slot& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    for (double g : slot.param.grad_vec()) mx = std::max(mx, std::abs(g));
  }
  return mx;
}

void AdamW::clip_grad_norm(double max_norm) {
  const double norm = global_grad_norm();
  if (norm <= max_norm || norm == 0.0) return;
  const double factor = max_norm / norm;
  for (Slot& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    for (double& g : slot.param.grad_vec()) g *= factor;
  }
}

double lr_at(const StageConfig& cfg, int step_index) {
  if (cfg.schedule == LrSchedule::constant) return cfg.learning_rate;
  const double total = std::max(cfg.steps, 1);
  const double warmup = std::max(1.0, std::floor(cfg.warmup_fraction * total));
  const double t = static_cast<double>(step_index);
  if (t < warmup) return cfg.learning_rate * (t + 1.0) / warmup;
  const double progress = (t - warmup) / std::max(1.0, total - warmup);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double train_step(Model& model, const std::vector<const SyntheticSample*>& batch, AdamW& optimizer,
                  double lr, double clip_norm, int step_index) {
  if (batch.empty()) throw ConfigurationError("train_step: empty batch");
  Tape::active().reset();
  optimizer.zero_grad();

  Tensor total;
  for (const SyntheticSample* sample : batch) {
    const std::vector<int> text = training_text(model, sample->question_ids, sample->answer_ids);
    Tensor loss = sample_loss(model, sample->image, text);
    total = total.defined() ? add(total, loss) : loss;
  }
  Tensor batch_loss = scale(total, 1.0 / static_cast<double>(batch.size()));
  const double loss_value = batch_loss.value();
  backward(batch_loss);

  if (!std::isfinite(loss_value)) {
    const double max_grad = optimizer.max_abs_grad();
    Tape::active().reset();
    throw Error("train_step: non-finite loss at step " + std::to_string(step_index) +
                " (max |grad| " + std::to_string(max_grad) + ")");
  }
  if (clip_norm > 0.0) optimizer.clip_grad_norm(clip_norm);
  optimizer.step(lr);
  optimizer.zero_grad();
  Tape::active().reset();
  return loss_value;
}

StageResult run_stage(Model& model, const std::vector<SyntheticSample>& dataset,
                      const StageConfig& cfg, const std::string& out_dir) {
  if (static_cast<int>(dataset.size()) < cfg.batch_size) {
    throw ConfigurationError("run_stage: dataset size " + std::to_string(dataset.size()) +
                             " smaller than batch size " + std::to_string(cfg.batch_size));
  }
  auto [trainable, frozen] = partition_parameters(model.params, cfg);
  AdamW optimizer(model.params, trainable, 0.9, 0.999, 1e-8, cfg.weight_decay);

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::string stage_tag = "stage" + std::to_string(cfg.stage);

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle." + stage_tag));
  std::vector<int> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  auto reshuffle = [&]() {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      const int j = shuffle_rng.uniform_int(0, i);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
  };
  reshuffle();
  size_t cursor = 0;

  StageResult result;
  result.rows.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    if (cursor + static_cast<size_t>(cfg.batch_size) > order.size()) {
      reshuffle();
      cursor = 0;
    }
    std::vector<const SyntheticSample*> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(&dataset[static_cast<size_t>(order[cursor + static_cast<size_t>(b)])]);
    }
    cursor += static_cast<size_t>(cfg.batch_size);

    const double lr = lr_at(cfg, step);
    const double loss = train_step(model, batch, optimizer, lr, cfg.clip_norm, step);
    result.rows.push_back(MetricsRow{step + 1, cfg.stage, loss, lr});

    if (!out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      model.params.save(out_dir + "/" + stage_tag + "_step" + std::to_string(step + 1) + ".ftz");
    }
  }

  if (!out_dir.empty()) {
    result.final_checkpoint = out_dir + "/" + stage_tag + "_final.ftz";
    model.params.save(result.final_checkpoint);
    write_metrics_csv(out_dir + "/" + stage_tag + "_metrics.csv", result.rows);
    model.tokenizer.save_manifest(out_dir + "/vocab.txt");
  }
  return result;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "step,stage,loss,lr\n";
  char line[128];
  for (const MetricsRow& row : rows) {
    std::snprintf(line, sizeof(line), "%d,%d,%.9g,%.9g\n", row.step, row.stage, row.loss, row.lr);
    out << line;
  }
  if (!out) throw IoError("short write: " + path);
}

}  // namespace ftz
