#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "voxelformer/checkpoint.hpp"
#include "voxelformer/retrieval.hpp"
#include "voxelformer/trainer.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out;
  std::string checkpoint;
  int64_t pool_size = 50;
  int64_t trials = 30;
};

vxf::TrainConfig resolve_config(const CommonOpts& opts) {
  vxf::TrainConfig cfg;
  if (!opts.config_path.empty()) cfg = vxf::load_config_file(opts.config_path);
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.data.seed = *opts.seed;
  }
  if (!opts.checkpoint.empty()) cfg.checkpoint_path = opts.checkpoint;
  return cfg;
}

int cmd_generate(const CommonOpts& opts) {
  vxf::TrainConfig cfg = resolve_config(opts);
  vxf::require(!opts.out.empty(), "generate: --out directory is required");
  vxf::Dataset ds = vxf::generate_dataset(cfg.data);
  vxf::save_dataset(ds, opts.out);
  std::cout << "wrote dataset to " << opts.out << " (" << ds.subjects.size()
            << " subjects, " << ds.stimulus_count << " stimuli, seed "
            << cfg.data.seed << ")\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  vxf::TrainConfig cfg = resolve_config(opts);
  cfg.validate();
  vxf::Dataset ds = vxf::load_dataset(cfg.dataset_dir);
  cfg.validate_against(ds);
  vxf::VoxelFormer model(cfg.model, cfg.seed);

  const vxf::ParamCount pc = vxf::count_params(model.parameters());
  std::cout << "trainable parameters: " << pc.total << "\n";
  for (const auto& [module, count] : pc.by_module)
    std::cout << "  " << module << ": " << count << "\n";

  const std::string metrics_path =
      opts.out.empty() ? cfg.metrics_path : opts.out;
  std::ofstream metrics(metrics_path);
  vxf::require(metrics.good(), "train: cannot write metrics to " + metrics_path);
  vxf::train(cfg, ds, model, [&](const vxf::EpochMetrics& em) {
    metrics << em.to_json() << "\n";
    metrics.flush();
    std::cout << "epoch " << em.epoch + 1 << "/" << cfg.epochs << " phase="
              << vxf::phase_name(em.phase) << " mse=" << em.mse
              << " contrastive=" << em.contrastive << " total=" << em.total
              << " (" << em.wall_time_s << "s)\n";
  });
  std::cout << "checkpoint written to " << cfg.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts) {
  vxf::require(!opts.checkpoint.empty(), "eval: --checkpoint is required");
  vxf::LoadedCheckpoint ckpt = vxf::load_checkpoint(opts.checkpoint);
  vxf::TrainConfig cfg = ckpt.config;
  if (!opts.config_path.empty()) cfg = vxf::load_config_file(opts.config_path);
  const uint64_t seed = opts.seed.value_or(cfg.seed);
  vxf::Dataset ds = vxf::load_dataset(cfg.dataset_dir);
  const vxf::RetrievalReport report = vxf::evaluate_retrieval(
      *ckpt.model, ds, opts.pool_size, opts.trials, seed);
  std::cout << report.to_json() << "\n";
  if (!opts.out.empty()) {
    std::ofstream csv(opts.out);
    vxf::require(csv.good(), "eval: cannot write CSV to " + opts.out);
    csv << report.to_csv();
  }
  return 0;
}

int cmd_params(const CommonOpts& opts) {
  vxf::TrainConfig cfg = resolve_config(opts);
  cfg.model.validate();
  vxf::VoxelFormer model(cfg.model, cfg.seed);
  const vxf::ParamCount pc = vxf::count_params(model.parameters());
  std::cout << "module,parameters\n";
  for (const auto& [module, count] : pc.by_module)
    std::cout << module << "," << count << "\n";
  std::cout << "total," << pc.total << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fMRI-to-embedding decoder: token-merging encoder, query "
               "distillation, dual-head training, retrieval evaluation"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "key = value config file");
    cmd->add_option("--seed", opts.seed, "master seed for all randomness");
    cmd->add_option("--out", opts.out, "output path");
    cmd->add_option("--checkpoint", opts.checkpoint, "checkpoint path");
    cmd->add_option("--pool-size", opts.pool_size, "retrieval pool size");
    cmd->add_option("--trials", opts.trials, "retrieval trials");
  };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  CLI::App* train = app.add_subcommand("train", "train on a generated dataset");
  CLI::App* eval = app.add_subcommand("eval", "retrieval evaluation of a checkpoint");
  CLI::App* params = app.add_subcommand("params", "parameter count breakdown");
  for (auto* cmd : {generate, train, eval, params}) add_common(cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(generate)) return cmd_generate(opts);
    if (app.got_subcommand(train)) return cmd_train(opts);
    if (app.got_subcommand(eval)) return cmd_eval(opts);
    if (app.got_subcommand(params)) return cmd_params(opts);
    return 1;
  } catch (const vxf::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
