#ifndef CMSR_RUN_CONFIG_HPP
#define CMSR_RUN_CONFIG_HPP

#include "cmsr/inference.hpp"
#include "cmsr/trainer.hpp"

#include <string>

namespace cmsr {

// Everything a CLI run needs: training hyperparameters, inference options,
// and I/O paths. Defaults match the library defaults; a config file
// overrides them and explicit command-line flags override the file.
struct RunConfig {
  TrainConfig train;
  InferenceOptions infer;

  std::string modality_path;
  std::string guide_path;
  std::string out_path;
  std::string kernel_path;
  int scale = 2; // target SR ratio
  bool debug = false;
};

// Applies one key/value setting. Unknown keys throw (fail fast).
void apply_key(RunConfig &cfg, const std::string &key,
               const std::string &value);

// Flat key-value file: one `key = value` per line, '#' comments.
void apply_config_file(RunConfig &cfg, const std::string &path);

// Full echo of the resolved configuration, config-file syntax.
std::string run_config_echo(const RunConfig &cfg);

} // namespace cmsr

#endif
