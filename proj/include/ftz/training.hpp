#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ftz/data.hpp"
#include "ftz/mllm.hpp"

namespace ftz {

enum class LrSchedule { constant, cosine_warmup };

struct StageConfig {
  int stage = 1;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int steps = 300;
  std::vector<std::string> trainable_groups;  // namespaces updated this stage
  uint64_t seed = 1;
  LrSchedule schedule = LrSchedule::constant;
  double warmup_fraction = 0.03;
  double clip_norm = 1.0;  // global-norm clip; <= 0 disables
  double weight_decay = 0.0;
  int checkpoint_every = 0;  // 0 = final checkpoint only

  // Stage 1 trains fusion + connector; stage 2 additionally unfreezes the
  // LM. Encoders are never trainable.
  static StageConfig for_stage(int stage_number);
};

// Sets requires_grad across the store from the stage's group list and
// returns (trainable, frozen) name lists. anchor.* and augment.* are always
// frozen; an unknown namespace prefix is a configuration error.
std::pair<std::vector<std::string>, std::vector<std::string>> partition_parameters(
    ParameterStore& store, const StageConfig& cfg);

// Adam with decoupled weight decay. Moment state exists only for the
// tensors handed in, which is itself an invariant worth asserting in tests.
class AdamW {
 public:
  AdamW(ParameterStore& store, const std::vector<std::string>& trainable_names,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);

  void step(double lr);
  void zero_grad();
  size_t state_count() const { return slots_.size(); }
  double global_grad_norm() const;
  double max_abs_grad() const;
  void clip_grad_norm(double max_norm);

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  long step_count_ = 0;
  double beta1_, beta2_, eps_, weight_decay_;
};

double lr_at(const StageConfig& cfg, int step_index);  // 0-based step

// One optimizer step over a batch: forward (mean of per-sample losses),
// backward, clip, update, clear. Returns the batch loss.
double train_step(Model& model, const std::vector<const SyntheticSample*>& batch, AdamW& optimizer,
                  double lr, double clip_norm, int step_index);

struct MetricsRow {
  int step;  // 1-based
  int stage;
  double loss;
  double lr;
};

struct StageResult {
  std::vector<MetricsRow> rows;
  std::string final_checkpoint;  // empty when out_dir was empty
};

// Deterministic shuffling by cfg.seed, per-step metrics, periodic
// checkpoints. Pass an empty out_dir to skip all file output.
StageResult run_stage(Model& model, const std::vector<SyntheticSample>& dataset,
                      const StageConfig& cfg, const std::string& out_dir);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace ftz
