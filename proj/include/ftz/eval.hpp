#pragma once

#include <map>
#include <string>
#include <vector>

#include "ftz/config.hpp"

namespace ftz {

struct EvalReport {
  struct TaskStat {
    int correct = 0;
    int total = 0;
    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
  };
  std::map<Task, TaskStat> per_task;
  std::string mode_label;
  uint64_t seed = 0;

  int total_samples() const;
  double accuracy(Task task) const;  // unknown task -> 0 totals guarded by caller
};

// Greedy-decodes every sample and scores exact token-sequence match on the
// answer span. Deterministic; order-invariant aggregation.
EvalReport evaluate(const Model& model, const std::vector<SyntheticSample>& dataset,
                    int max_new = 3);

std::string eval_report_csv(const EvalReport& report);

// ---- three-tower comparison --------------------------------------------

struct CompareRow {
  std::string mode;
  uint64_t seed = 0;
  double count_accuracy = 0.0;
  double exist_accuracy = 0.0;
};

struct CompareTable {
  std::vector<CompareRow> rows;  // one per (mode, seed), modes outermost
  struct Mean {
    double count_accuracy = 0.0;
    double exist_accuracy = 0.0;
  };
  std::map<std::string, Mean> means;  // per mode
};

// Trains all three tower modes per seed on identical data and identical
// non-vision factors (the connector/LM init streams depend only on the run
// seed) and evaluates each on the shared eval split.
CompareTable compare_towers(const RunConfig& config, const std::vector<uint64_t>& seeds);

std::string compare_table_csv(const CompareTable& table);

// Verification hook used by tests: digest of the non-vision-tower init.
std::string lm_connector_init_hash(const RunConfig& config, TowerMode mode, uint64_t seed);

}  // namespace ftz
