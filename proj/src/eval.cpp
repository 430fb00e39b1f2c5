#include "ftz/eval.hpp"

#include <cstdio>

namespace ftz {

int EvalReport::total_samples() const {
  int n = 0;
  for (const auto& [task, stat] : per_task) n += stat.total;
  return n;
}

double EvalReport::accuracy(Task task) const {
  auto it = per_task.find(task);
  return it == per_task.end() ? 0.0 : it->second.accuracy();
}

EvalReport evaluate(const Model& model, const std::vector<SyntheticSample>& dataset, int max_new) {
  if (dataset.empty()) throw InputError("evaluate: empty dataset");
  const int vocab = model.tokenizer.size();
  EvalReport report;
  report.mode_label = mode_name(model.cfg.vision.mode);
  for (const SyntheticSample& sample : dataset) {
    for (int id : sample.question_ids) {
      if (id < 0 || id >= vocab) {
        throw ConfigurationError("evaluate: dataset token id " + std::to_string(id) +
                                 " outside model vocabulary");
      }
    }
    for (int id : sample.answer_ids) {
      if (id < 0 || id >= vocab) {
        throw ConfigurationError("evaluate: dataset token id " + std::to_string(id) +
                                 " outside model vocabulary");
      }
    }
    const std::vector<int> decoded = greedy_decode(model, sample.image, sample.question_ids, max_new);
    EvalReport::TaskStat& stat = report.per_task[sample.task];
    ++stat.total;
    if (decoded == sample.answer_ids) ++stat.correct;
  }
  return report;
}

std::string eval_report_csv(const EvalReport& report) {
  std::string out = "mode,seed,task,correct,total,accuracy\n";
  char line[160];
  for (const auto& [task, stat] : report.per_task) {
    std::snprintf(line, sizeof(line), "%s,%llu,%s,%d,%d,%.6f\n", report.mode_label.c_str(),
                  static_cast<unsigned long long>(report.seed), task_name(task).c_str(),
                  stat.correct, stat.total, stat.accuracy());
    out += line;
  }
  return out;
}

CompareTable compare_towers(const RunConfig& config, const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigurationError("compare_towers: no seeds given");
  const Tokenizer tokenizer = Tokenizer::canonical();
  const auto stage1_data = stage_dataset(config.data, 1, tokenizer);
  const auto stage2_data = stage_dataset(config.data, 2, tokenizer);
  const auto eval_data = generate_dataset(derive_seed(config.data.seed, "eval"),
                                          config.data.eval_n, Split::eval, tokenizer);

  const TowerMode modes[] = {TowerMode::ftz, TowerMode::anchor_only, TowerMode::interleaved_mof};
  CompareTable table;
  std::map<std::string, CompareTable::Mean> sums;
  for (TowerMode mode : modes) {
    for (uint64_t seed : seeds) {
      RunConfig run = config;
      run.seed = seed;
      run.model.vision.mode = mode;
      run.finalize();
      Model model = build_model(run.model, seed);
      StageConfig s1 = run.stage1;
      s1.seed = seed;
      run_stage(model, stage1_data, s1, "");
      StageConfig s2 = run.stage2;
      s2.seed = seed;
      run_stage(model, stage2_data, s2, "");
      EvalReport report = evaluate(model, eval_data);
      report.seed = seed;
      CompareRow row;
      row.mode = mode_name(mode);
      row.seed = seed;
      row.count_accuracy = report.accuracy(Task::count);
      row.exist_accuracy = report.accuracy(Task::exist);
      table.rows.push_back(row);
      sums[row.mode].count_accuracy += row.count_accuracy;
      sums[row.mode].exist_accuracy += row.exist_accuracy;
    }
  }
  for (auto& [mode, sum] : sums) {
    table.means[mode] = CompareTable::Mean{sum.count_accuracy / static_cast<double>(seeds.size()),
                                           sum.exist_accuracy / static_cast<double>(seeds.size())};
  }
  return table;
}

std::string compare_table_csv(const CompareTable& table) {
  std::string out = "mode,seed,count_accuracy,exist_accuracy\n";
  char line[160];
  for (const CompareRow& row : table.rows) {
    std::snprintf(line, sizeof(line), "%s,%llu,%.6f,%.6f\n", row.mode.c_str(),
                  static_cast<unsigned long long>(row.seed), row.count_accuracy, row.exist_accuracy);
    out += line;
  }
  for (const auto& [mode, mean] : table.means) {
    std::snprintf(line, sizeof(line), "%s,mean,%.6f,%.6f\n", mode.c_str(), mean.count_accuracy,
                  mean.exist_accuracy);
    out += line;
  }
  return out;
}

std::string lm_connector_init_hash(const RunConfig& config, TowerMode mode, uint64_t seed) {
  RunConfig run = config;
  run.seed = seed;
  run.model.vision.mode = mode;
  run.finalize();
  Model model = build_model(run.model, seed);
  return sha256_of_params(model.params, {"lm.", "connector."});
}

}  // namespace ftz
