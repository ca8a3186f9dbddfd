#include "cmsr/commands.hpp"
#include "cmsr/run_config.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <string>

namespace {

// Flags override config-file values, which override defaults.
void add_common_options(CLI::App *cmd, cmsr::RunConfig &cfg,
                        std::string &config_path, long long &seed,
                        double &p_alt, int &max_iters) {
  cmd->add_option("--modality", cfg.modality_path,
                  "LR target-modality image (PNG/PGM/PPM)");
  cmd->add_option("--guide", cfg.guide_path, "HR RGB guide image");
  cmd->add_option("--scale", cfg.scale, "target SR ratio (>= 2)");
  cmd->add_option("--out", cfg.out_path, "output path");
  cmd->add_option("--config", config_path, "key = value config file");
  cmd->add_option("--seed", seed, "RNG seed");
  cmd->add_option("--kernel", cfg.kernel_path,
                  "blur-kernel file (text: rows cols values...)");
  cmd->add_option("--p-alt", p_alt,
                  "probability of the upsampling-based scheme");
  cmd->add_option("--max-iters", max_iters, "iteration cap per stage");
  cmd->add_flag("--debug", cfg.debug, "write warp/residual debug images");
}

void finalize(CLI::App *cmd, cmsr::RunConfig &cfg,
              const std::string &config_path, long long seed, double p_alt,
              int max_iters) {
  if (!config_path.empty())
    cmsr::apply_config_file(cfg, config_path);
  if (cmd->count("--seed"))
    cfg.train.seed = static_cast<uint64_t>(seed);
  if (cmd->count("--p-alt"))
    cfg.train.p_alt = static_cast<float>(p_alt);
  if (cmd->count("--max-iters"))
    cfg.train.max_iters = max_iters;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"CMSR: single-pair cross-modality super-resolution"};
  app.require_subcommand(1);

  cmsr::RunConfig cfg;
  std::string config_path;
  long long seed = 0;
  double p_alt = cfg.train.p_alt;
  int max_iters = cfg.train.max_iters;

  CLI::App *sr = app.add_subcommand(
      "sr", "train on a pair, then super-resolve the modality image");
  add_common_options(sr, cfg, config_path, seed, p_alt, max_iters);

  CLI::App *eval = app.add_subcommand("eval", "PSNR/SSIM against ground truth");
  std::string sr_path, gt_path, report_path;
  eval->add_option("--sr", sr_path, "SR image or directory")->required();
  eval->add_option("--gt", gt_path, "ground-truth image or directory")
      ->required();
  eval->add_option("--out", report_path, "report path (optional)");

  CLI::App *warp = app.add_subcommand(
      "warp-debug", "train and emit before/after alignment overlays");
  add_common_options(warp, cfg, config_path, seed, p_alt, max_iters);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sr->parsed()) {
      finalize(sr, cfg, config_path, seed, p_alt, max_iters);
      return cmsr::cmd_sr(cfg);
    }
    if (eval->parsed())
      return cmsr::cmd_eval(sr_path, gt_path, report_path);
    if (warp->parsed()) {
      finalize(warp, cfg, config_path, seed, p_alt, max_iters);
      return cmsr::cmd_warp_debug(cfg);
    }
  } catch (const std::exception &e) {
    std::cerr << "cmsr: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
