#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ftz/eval.hpp"
#include "ftz/gradcheck_battery.hpp"

namespace {

using namespace ftz;

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string token = text.substr(pos, comma - pos);
    if (!token.empty()) seeds.push_back(std::stoull(token));
    pos = comma + 1;
  }
  if (seeds.empty()) throw ConfigurationError("--seeds: expected comma-separated list, got '" + text + "'");
  return seeds;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("short write: " + path);
}

// Replaces freshly initialized parameters with a checkpoint, insisting the
// checkpoint matches the configured architecture.
void adopt_checkpoint(Model& model, const std::string& path) {
  ParameterStore loaded = ParameterStore::load(path);
  for (const std::string& name : model.params.names()) {
    Tensor expected = model.params.get(name);
    Tensor got = loaded.get(name);  // throws CheckpointError when missing
    if (expected.shape() != got.shape()) {
      throw CheckpointError("checkpoint tensor " + name + " has shape " + shape_str(got.shape()) +
                            ", model expects " + shape_str(expected.shape()));
    }
  }
  model.params = std::move(loaded);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"ftz: composed-vision-encoder experiments"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic VQA dataset file");
  uint64_t gen_seed = 0;
  int gen_n = 0;
  std::string gen_split = "train", gen_out;
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--n", gen_n)->required();
  gen->add_option("--split", gen_split)->check(CLI::IsMember({"train", "eval"}));
  gen->add_option("--out", gen_out)->required();

  // train
  auto* train = app.add_subcommand("train", "run one training stage");
  std::string train_config, train_out, train_init, train_data;
  int train_stage = 1;
  train->add_option("--config", train_config)->required();
  train->add_option("--stage", train_stage)->check(CLI::IsMember({1, 2}))->required();
  train->add_option("--out", train_out)->required();
  train->add_option("--init", train_init, "checkpoint to continue from (required for stage 2)");
  train->add_option("--data", train_data, "dataset file; default generates from config data.*");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_config, eval_ckpt, eval_data, eval_out;
  int eval_max_new = 3;
  eval_cmd->add_option("--config", eval_config)->required();
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--out", eval_out, "CSV output path (stdout when omitted)");
  eval_cmd->add_option("--max-new", eval_max_new);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  int gc_instances = 10;
  gc->add_option("--instances", gc_instances);

  // map-layers
  auto* ml = app.add_subcommand("map-layers", "print the fusion point list as CSV");
  int ml_anchor = 0, ml_augment = 0, ml_k = 0;
  ml->add_option("--anchor-depth", ml_anchor)->required();
  ml->add_option("--augment-depth", ml_augment)->required();
  ml->add_option("--k", ml_k)->required();

  // inspect-ckpt
  auto* inspect = app.add_subcommand("inspect-ckpt", "print a checkpoint manifest");
  std::string inspect_path;
  inspect->add_option("--path", inspect_path)->required();

  // compare-towers
  auto* compare = app.add_subcommand("compare-towers", "train and evaluate all three tower modes");
  std::string cmp_config, cmp_seeds = "1,2,3", cmp_out;
  compare->add_option("--config", cmp_config)->required();
  compare->add_option("--seeds", cmp_seeds);
  compare->add_option("--out", cmp_out, "CSV output path (stdout when omitted)");

  // gen-encoders
  auto* genc = app.add_subcommand("gen-encoders",
                                  "write the fixed-seed frozen encoder checkpoint");
  std::string genc_config, genc_out;
  genc->add_option("--config", genc_config)->required();
  genc->add_option("--out", genc_out)->required();

  CLI11_PARSE(app, argc, argv);

  if (*gen) {
    const Tokenizer tokenizer = Tokenizer::canonical();
    const Split split = gen_split == "train" ? Split::train : Split::eval;
    save_dataset(gen_out, generate_dataset(gen_seed, gen_n, split, tokenizer), tokenizer);
    std::printf("wrote %d %s samples to %s\n", gen_n, gen_split.c_str(), gen_out.c_str());
    return 0;
  }

  if (*train) {
    RunConfig cfg = RunConfig::from_file(train_config);
    Model model = build_model(cfg.model, cfg.seed);
    if (train_stage == 2) {
      if (train_init.empty()) {
        throw ConfigurationError("train --stage 2 requires --init with the stage-1 checkpoint");
      }
      adopt_checkpoint(model, train_init);
    } else if (!train_init.empty()) {
      adopt_checkpoint(model, train_init);
    }
    const std::vector<SyntheticSample> dataset =
        train_data.empty() ? stage_dataset(cfg.data, train_stage, model.tokenizer)
                           : load_dataset(train_data, model.tokenizer);
    const StageConfig& stage = train_stage == 1 ? cfg.stage1 : cfg.stage2;
    const StageResult result = run_stage(model, dataset, stage, train_out);
    std::printf("stage %d done: %d steps, final loss %.6f, checkpoint %s\n", train_stage,
                static_cast<int>(result.rows.size()),
                result.rows.empty() ? 0.0 : result.rows.back().loss,
                result.final_checkpoint.c_str());
    return 0;
  }

  if (*eval_cmd) {
    RunConfig cfg = RunConfig::from_file(eval_config);
    Model model = build_model(cfg.model, cfg.seed);
    adopt_checkpoint(model, eval_ckpt);
    const std::vector<SyntheticSample> dataset = load_dataset(eval_data, model.tokenizer);
    EvalReport report = evaluate(model, dataset, eval_max_new);
    report.seed = cfg.seed;
    const std::string csv = eval_report_csv(report);
    if (eval_out.empty()) {
      std::fputs(csv.c_str(), stdout);
    } else {
      write_text_file(eval_out, csv);
      std::printf("wrote %s\n", eval_out.c_str());
    }
    return 0;
  }

  if (*gc) {
    const auto results = run_gradcheck_battery(gc_instances);
    bool all_ok = true;
    for (const GradCheckCase& r : results) {
      std::printf("%-28s max rel err %.3e (threshold %.0e) %s\n", r.name.c_str(), r.max_rel_err,
                  r.threshold, r.passed() ? "ok" : "FAIL");
      all_ok = all_ok && r.passed();
    }
    if (!all_ok) throw Error("gradcheck battery failed");
    return 0;
  }

  if (*ml) {
    for (const FusionPoint& p : map_layers(ml_anchor, ml_augment, ml_k)) {
      std::printf("%d,%d\n", p.anchor_layer, p.augment_layer);
    }
    return 0;
  }

  if (*inspect) {
    const ParameterStore store = ParameterStore::load(inspect_path);
    std::printf("%zu tensors\n", store.size());
    for (const std::string& name : store.names()) {
      const Tensor t = store.get(name);
      std::printf("%-36s f32 %s frozen=%d (%zu scalars)\n", name.c_str(),
                  shape_str(t.shape()).c_str(), store.frozen(name) ? 1 : 0, t.numel());
    }
    return 0;
  }

  if (*compare) {
    RunConfig cfg = RunConfig::from_file(cmp_config);
    const std::vector<uint64_t> seeds = parse_seed_list(cmp_seeds);
    const CompareTable table = compare_towers(cfg, seeds);
    const std::string csv = compare_table_csv(table);
    if (cmp_out.empty()) {
      std::fputs(csv.c_str(), stdout);
    } else {
      write_text_file(cmp_out, csv);
      std::printf("wrote %s\n", cmp_out.c_str());
    }
    return 0;
  }

  if (*genc) {
    RunConfig cfg = RunConfig::from_file(genc_config);
    ParameterStore store;
    Rng anchor_rng(derive_seed(cfg.model.encoder_seed, "anchor"));
    init_vit_params(store, "anchor", cfg.model.vision.anchor, anchor_rng, true);
    Rng augment_rng(derive_seed(cfg.model.encoder_seed, "augment"));
    init_vit_params(store, "augment", cfg.model.vision.augment, augment_rng, true);
    store.save(genc_out);
    std::printf("wrote frozen encoder checkpoint (%zu tensors) to %s\n", store.size(),
                genc_out.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
