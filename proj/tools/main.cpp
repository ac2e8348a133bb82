#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vialign/cli.hpp"
#include "vialign/config.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "experiment config (json, comments allowed)")
      ->required();
  sub->add_option("--out", args.out_dir, "output directory (default: output_dir from the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mean-field variational MLP posteriors: train, align over neuron permutations, "
               "measure predictive barriers"};
  app.require_subcommand(1);

  CommonArgs train_args, align_args, barrier_args, slice_args, profile_args;
  std::uint64_t seed_flag = 0;
  std::string ckpt0, ckpt1, perms_path;
  double tau_flag = -1.0;
  std::string widths_flag = "8,16,32,64";

  CLI::App* train = app.add_subcommand("train", "train two posteriors (one per seed)");
  add_common(train, train_args);
  CLI::Option* seed_opt =
      train->add_option("--seed", seed_flag, "rebase the replica seeds to N and N+1");

  CLI::App* align = app.add_subcommand("align", "align the second checkpoint onto the first");
  add_common(align, align_args);
  align->add_option("ckpt0", ckpt0, "reference checkpoint")->required();
  align->add_option("ckpt1", ckpt1, "checkpoint to align")->required();

  CLI::App* barrier = app.add_subcommand("barrier", "scan the interpolation path likelihood");
  add_common(barrier, barrier_args);
  barrier->add_option("ckpt0", ckpt0, "first checkpoint")->required();
  barrier->add_option("ckpt1", ckpt1, "second checkpoint")->required();
  CLI::Option* perms_opt_b =
      barrier->add_option("--perms", perms_path, "permutation file to apply to ckpt1");

  CLI::App* slice = app.add_subcommand("slice", "2-d log posterior slice through three samples");
  add_common(slice, slice_args);
  slice->add_option("ckpt0", ckpt0, "first checkpoint")->required();
  slice->add_option("ckpt1", ckpt1, "second checkpoint")->required();
  CLI::Option* perms_opt_s =
      slice->add_option("--perms", perms_path, "permutation file to apply to ckpt1");
  CLI::Option* tau_opt =
      slice->add_option("--tau", tau_flag, "path position of the third anchor (default from config)");

  CLI::App* profile = app.add_subcommand("profile", "time alignment across widths");
  add_common(profile, profile_args);
  profile->add_option("--widths", widths_flag, "comma-separated hidden widths (default 8,16,32,64)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) {
      const auto cfg = vialign::load_config(train_args.config_path);
      const std::string out = train_args.out_dir.empty() ? cfg.output_dir : train_args.out_dir;
      std::optional<std::uint64_t> seed;
      if (seed_opt->count() > 0) seed = seed_flag;
      vialign::cmd_train(cfg, out, seed);
    } else if (align->parsed()) {
      const auto cfg = vialign::load_config(align_args.config_path);
      const std::string out = align_args.out_dir.empty() ? cfg.output_dir : align_args.out_dir;
      vialign::cmd_align(cfg, out, ckpt0, ckpt1);
    } else if (barrier->parsed()) {
      const auto cfg = vialign::load_config(barrier_args.config_path);
      const std::string out = barrier_args.out_dir.empty() ? cfg.output_dir : barrier_args.out_dir;
      std::optional<std::string> perms;
      if (perms_opt_b->count() > 0) perms = perms_path;
      vialign::cmd_barrier(cfg, out, ckpt0, ckpt1, perms);
    } else if (slice->parsed()) {
      const auto cfg = vialign::load_config(slice_args.config_path);
      const std::string out = slice_args.out_dir.empty() ? cfg.output_dir : slice_args.out_dir;
      std::optional<std::string> perms;
      if (perms_opt_s->count() > 0) perms = perms_path;
      std::optional<double> tau;
      if (tau_opt->count() > 0) tau = tau_flag;
      vialign::cmd_slice(cfg, out, ckpt0, ckpt1, perms, tau);
    } else if (profile->parsed()) {
      const auto cfg = vialign::load_config(profile_args.config_path);
      const std::string out = profile_args.out_dir.empty() ? cfg.output_dir : profile_args.out_dir;
      std::vector<int> widths;
      std::string tok;
      std::istringstream ws(widths_flag);
      while (std::getline(ws, tok, ',')) {
        try {
          widths.push_back(std::stoi(tok));
        } catch (const std::exception&) {
          throw vialign::ConfigError("--widths: cannot parse \"" + tok + "\"");
        }
      }
      vialign::cmd_profile(cfg, out, widths);
    }
  } catch (const vialign::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
