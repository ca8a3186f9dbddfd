#include "cmsr/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cmsr {

namespace {

int to_int(const std::string &v) { return std::stoi(v); }
float to_float(const std::string &v) { return std::stof(v); }
uint64_t to_u64(const std::string &v) { return std::stoull(v); }

bool to_bool(const std::string &v) {
  if (v == "1" || v == "true" || v == "yes")
    return true;
  if (v == "0" || v == "false" || v == "no")
    return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

std::string trim(const std::string &s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos)
    return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

} // namespace

void apply_key(RunConfig &cfg, const std::string &key,
               const std::string &value) {
  TrainConfig &t = cfg.train;
  InferenceOptions &i = cfg.infer;
  try {
    if (key == "r") t.r = to_int(value);
    else if (key == "patch_size") t.patch_size = to_int(value);
    else if (key == "base_lr") t.base_lr = to_float(value);
    else if (key == "min_lr") t.min_lr = to_float(value);
    else if (key == "lr_factor_affine") t.lr_factor_affine = to_float(value);
    else if (key == "lr_factor_cpab") t.lr_factor_cpab = to_float(value);
    else if (key == "lr_factor_tps") t.lr_factor_tps = to_float(value);
    else if (key == "p_alt") t.p_alt = to_float(value);
    else if (key == "max_iters") t.max_iters = to_int(value);
    else if (key == "plateau_window") t.plateau_window = to_int(value);
    else if (key == "plateau_threshold") t.plateau_threshold = to_float(value);
    else if (key == "aug_scale_min") t.augmentation.scale_min = to_float(value);
    else if (key == "aug_scale_max") t.augmentation.scale_max = to_float(value);
    else if (key == "aug_rotation_max_deg")
      t.augmentation.rotation_max_deg = to_float(value);
    else if (key == "aug_shear_max") t.augmentation.shear_max = to_float(value);
    else if (key == "aug_translation_frac")
      t.augmentation.translation_frac = to_float(value);
    else if (key == "stage_affine_frac") t.stage_affine_frac = to_float(value);
    else if (key == "stage_cpab_frac") t.stage_cpab_frac = to_float(value);
    else if (key == "deform_enabled") t.deform_enabled = to_bool(value);
    else if (key == "cpab_cells") t.cpab_cells = to_int(value);
    else if (key == "cpab_steps") t.cpab_steps = to_int(value);
    else if (key == "tps_points") t.tps_points = to_int(value);
    else if (key == "tps_lambda") t.tps_lambda = to_float(value);
    else if (key == "fe2_layers") t.fe2_layers = to_int(value);
    else if (key == "fe2_channels") t.fe2_channels = to_int(value);
    else if (key == "seed") t.seed = to_u64(value);
    else if (key == "self_ensemble") i.self_ensemble = to_bool(value);
    else if (key == "ensemble_median") i.ensemble_median = to_bool(value);
    else if (key == "ibp_iters") i.ibp_iters = to_int(value);
    else if (key == "ibp_tol") i.ibp_tol = to_float(value);
    else if (key == "per_stage_r") i.per_stage_r = to_int(value);
    else if (key == "scale") cfg.scale = to_int(value);
    else if (key == "debug") cfg.debug = to_bool(value);
    else
      throw std::invalid_argument("unknown config key '" + key + "'");
  } catch (const std::invalid_argument &) {
    throw;
  } catch (const std::exception &) {
    throw std::invalid_argument("bad value '" + value + "' for config key '" +
                                key + "'");
  }
}

void apply_config_file(RunConfig &cfg, const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error(path + ": cannot open config file");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 'key = value'");
    try {
      apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::exception &e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
}

std::string run_config_echo(const RunConfig &cfg) {
  std::ostringstream oss;
  for (const auto &[key, value] : config_entries(cfg.train))
    oss << key << " = " << value << "\n";
  oss << "self_ensemble = " << (cfg.infer.self_ensemble ? 1 : 0) << "\n";
  oss << "ensemble_median = " << (cfg.infer.ensemble_median ? 1 : 0) << "\n";
  oss << "ibp_iters = " << cfg.infer.ibp_iters << "\n";
  oss << "ibp_tol = " << cfg.infer.ibp_tol << "\n";
  oss << "per_stage_r = " << cfg.infer.per_stage_r << "\n";
  oss << "scale = " << cfg.scale << "\n";
  oss << "debug = " << (cfg.debug ? 1 : 0) << "\n";
  return oss.str();
}

} // namespace cmsr
