#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "microcnn/cli.hpp"

namespace cli = microcnn::cli;

int main(int argc, char** argv) {
  CLI::App app{"microcnn: train and run the two-block malaria cell classifier"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train the reference network on a two-folder PNG dataset");
  std::string config_path;
  std::vector<std::string> overrides;
  std::string data_root, output_dir;
  int epochs = 0;
  long long seed = -1;
  train->add_option("config", config_path, "key=value config file")->check(CLI::ExistingFile);
  train->add_option("--set", overrides, "Override a config entry, key=value (repeatable)");
  train->add_option("--data-root", data_root, "Dataset directory");
  train->add_option("--output-dir", output_dir, "Output directory");
  train->add_option("--epochs", epochs, "Epoch limit");
  train->add_option("--seed", seed, "Random seed");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split of a dataset");
  std::string eval_ckpt, eval_root, eval_config, eval_split = "test", eval_ratios;
  long long eval_seed = -1;
  evaluate->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required();
  evaluate->add_option("--data-root", eval_root, "Dataset directory");
  evaluate->add_option("--config", eval_config, "Training config to take data_root, seed and split_ratios from");
  evaluate->add_option("--split", eval_split, "train, val, test or all")->capture_default_str();
  evaluate->add_option("--seed", eval_seed, "Split seed");
  evaluate->add_option("--split-ratios", eval_ratios, "train,val,test ratios");

  // predict
  auto* predict = app.add_subcommand("predict", "Classify one PNG image");
  std::string pred_ckpt, pred_image;
  predict->add_option("checkpoint", pred_ckpt, "Checkpoint file")->required();
  predict->add_option("image", pred_image, "PNG image")->required();

  // summary
  auto* summary = app.add_subcommand("summary", "Print the reference network's layer table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigError;
  }

  if (*summary) return cli::cmd_summary(std::cout);
  if (*predict) return cli::cmd_predict(pred_ckpt, pred_image, std::cout, std::cerr);

  try {
    if (*train) {
      microcnn::RunConfig cfg = config_path.empty() ? microcnn::RunConfig{} : microcnn::load_config(config_path);
      for (const auto& o : overrides) microcnn::apply_config_assignment(cfg, o);
      if (!data_root.empty()) cfg.data_root = data_root;
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      if (epochs != 0) cfg.train.epochs = epochs;
      if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
      return cli::cmd_train(cfg, std::cout, std::cerr);
    }
    if (*evaluate) {
      microcnn::RunConfig cfg = eval_config.empty() ? microcnn::RunConfig{} : microcnn::load_config(eval_config);
      if (!eval_ratios.empty()) microcnn::apply_config_value(cfg, "split_ratios", eval_ratios);
      if (eval_seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(eval_seed);
      if (!eval_root.empty()) cfg.data_root = eval_root;
      if (cfg.data_root.empty()) throw microcnn::ConfigError("no data root given (--data-root or --config)");
      cli::SplitSpec spec;
      spec.partition = cli::parse_partition(eval_split);
      spec.ratios = cfg.train.split_ratios;
      spec.seed = cfg.train.seed;
      spec.batch_size = cfg.train.batch_size;
      return cli::cmd_evaluate(eval_ckpt, cfg.data_root, spec, std::cout, std::cerr);
    }
  } catch (const microcnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kConfigError;
  }
  return cli::kConfigError;
}
