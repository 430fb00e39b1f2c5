#pragma once

#include <string>

#include "ftz/training.hpp"

namespace ftz {

struct DataConfig {
  uint64_t seed = 1234;
  int stage1_n = 2000;
  int stage2_n = 1000;
  int eval_n = 240;
  TaskMix stage1_mix{6, 1, 1};  // caption-heavy alignment stage
  TaskMix stage2_mix{1, 1, 1};
};

// Stage 1 or 2 training data exactly as the trainer consumes it.
std::vector<SyntheticSample> stage_dataset(const DataConfig& data, int stage,
                                           const Tokenizer& tokenizer);

// Full description of one experiment: model, two stages, data sizes, seed.
// Parsed from a plain-text file of dotted `key = value` lines; `#` starts a
// comment. Unknown keys are configuration errors.
struct RunConfig {
  uint64_t seed = 1;
  ModelConfig model = ModelConfig::toy_defaults();
  StageConfig stage1 = StageConfig::for_stage(1);
  StageConfig stage2 = StageConfig::for_stage(2);
  DataConfig data;

  static RunConfig from_file(const std::string& path);
  void apply_line(const std::string& key, const std::string& value);  // parser entry
  void finalize();  // propagates seed into stages, validates
};

}  // namespace ftz
