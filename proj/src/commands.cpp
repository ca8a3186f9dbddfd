#include "cmsr/commands.hpp"

#include "cmsr/metrics.hpp"
#include "cmsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace cmsr {

namespace {

std::string out_base(const std::string &out_path) {
  const auto dot = out_path.rfind('.');
  return dot == std::string::npos ? out_path : out_path.substr(0, dot);
}

void write_text(const std::string &path, const std::string &text) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error(path + ": cannot write report");
  out << text;
}

// Signed residual map exported around mid-gray.
ImageBuffer residual_to_image(const Tensor &residual) {
  Tensor shifted = residual.clone();
  for (int64_t i = 0; i < shifted.numel(); ++i)
    shifted.data()[i] = 0.5f + shifted.data()[i];
  return tensor_to_image(shifted);
}

ImageBuffer load_single_band(const std::string &path) {
  ImageBuffer img = load_image(path);
  if (img.channels == 3) {
    const size_t plane = static_cast<size_t>(img.height) * img.width;
    for (size_t i = 0; i < plane; ++i)
      if (std::fabs(img.data[i] - img.data[plane + i]) > 1e-6f ||
          std::fabs(img.data[i] - img.data[2 * plane + i]) > 1e-6f)
        throw std::runtime_error(path + ": expected a single-band image");
    img.data.resize(plane);
    img.channels = 1;
  }
  return img;
}

} // namespace

int cmd_sr(const RunConfig &cfg) {
  try {
    if (cfg.out_path.empty())
      throw std::invalid_argument("sr: --out is required");
    const ImagePair pair = make_pair(
        cfg.modality_path, cfg.guide_path, cfg.scale,
        cfg.kernel_path.empty() ? std::nullopt
                                : std::optional<std::string>(cfg.kernel_path));
    const PairTensors tensors = pair_to_tensors(pair);
    const SrResult result =
        gradual_sr(tensors, cfg.scale, cfg.train, cfg.infer);
    save_image(result.sr, cfg.out_path, pair.modality_lr.source_bit_depth);

    std::ostringstream report;
    report << "command = sr\n";
    report << "modality = " << cfg.modality_path << "\n";
    report << "guide = " << cfg.guide_path << "\n";
    report << "out = " << cfg.out_path << "\n";
    report << "stages = " << result.stages.size() << "\n";
    report << "ensemble_members = " << result.ensemble_members << "\n";
    for (size_t i = 0; i < result.stages.size(); ++i) {
      const SrStage &st = result.stages[i];
      report << "stage" << i << ".r = " << st.stage_r << "\n";
      report << "stage" << i << ".iterations = " << st.report.iterations
             << "\n";
      report << "stage" << i << ".stop_reason = " << st.report.stop_reason
             << "\n";
      report << "stage" << i << ".wall_seconds = " << st.report.wall_seconds
             << "\n";
      if (!st.report.loss_trace.empty())
        report << "stage" << i << ".loss_last = " << st.report.loss_trace.back()
               << "\n";
      if (!st.ibp_residuals.empty())
        report << "stage" << i
               << ".ibp_residual_last = " << st.ibp_residuals.back() << "\n";
    }
    report << run_config_echo(cfg);
    write_text(out_base(cfg.out_path) + ".report.txt", report.str());

    if (cfg.debug) {
      const std::string base = out_base(cfg.out_path);
      save_image(tensor_to_image(result.warped_guide),
                 base + "_warped_guide.png");
      save_image(rg_overlay(result.warped_guide,
                            result.stages.size() > 1
                                ? result.stages[result.stages.size() - 2].sr
                                : tensors.modality),
                 base + "_overlay.png");
      save_image(residual_to_image(result.fe2_residual),
                 base + "_fe2_residual.png");
    }
    return 0;
  } catch (const std::exception &e) {
    std::cerr << "sr: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const std::string &sr_path, const std::string &gt_path,
             std::string report_path) {
  try {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (fs::is_directory(sr_path) && fs::is_directory(gt_path)) {
      std::vector<std::string> names;
      for (const auto &entry : fs::directory_iterator(sr_path))
        if (entry.is_regular_file())
          names.push_back(entry.path().filename().string());
      std::sort(names.begin(), names.end());
      for (const auto &name : names)
        if (fs::exists(fs::path(gt_path) / name))
          pairs.emplace_back((fs::path(sr_path) / name).string(),
                             (fs::path(gt_path) / name).string());
      if (pairs.empty())
        throw std::runtime_error("eval: no matching file names between " +
                                 sr_path + " and " + gt_path);
      if (report_path.empty())
        report_path = (fs::path(sr_path) / "eval_report.txt").string();
    } else {
      pairs.emplace_back(sr_path, gt_path);
      if (report_path.empty())
        report_path = out_base(sr_path) + ".eval.txt";
    }

    std::ostringstream report;
    report << "command = eval\n";
    double psnr_sum = 0.0, ssim_sum = 0.0;
    size_t finite_psnr = 0;
    for (const auto &[sp, gp] : pairs) {
      const ImageBuffer sr = load_single_band(sp);
      const ImageBuffer gt = load_single_band(gp);
      const QualityReport q = evaluate(sr, gt);
      std::cout << sp << ": psnr_db = " << format_psnr(q.psnr_db)
                << ", ssim = " << q.ssim << "\n";
      report << sp << ".psnr_db = " << format_psnr(q.psnr_db) << "\n";
      report << sp << ".ssim = " << q.ssim << "\n";
      if (std::isfinite(q.psnr_db)) {
        psnr_sum += q.psnr_db;
        ++finite_psnr;
      }
      ssim_sum += q.ssim;
    }
    if (pairs.size() > 1) {
      const double mean_psnr =
          finite_psnr ? psnr_sum / static_cast<double>(finite_psnr)
                      : std::numeric_limits<double>::infinity();
      const double mean_ssim = ssim_sum / static_cast<double>(pairs.size());
      std::cout << "mean: psnr_db = " << format_psnr(mean_psnr)
                << ", ssim = " << mean_ssim << "\n";
      report << "mean.psnr_db = " << format_psnr(mean_psnr) << "\n";
      report << "mean.ssim = " << mean_ssim << "\n";
    }
    write_text(report_path, report.str());
    return 0;
  } catch (const std::exception &e) {
    std::cerr << "eval: " << e.what() << "\n";
    return 1;
  }
}

int cmd_warp_debug(const RunConfig &cfg) {
  int code = 0;
  try {
    if (cfg.out_path.empty())
      throw std::invalid_argument("warp-debug: --out is required");
    const ImagePair pair = make_pair(
        cfg.modality_path, cfg.guide_path, cfg.scale,
        cfg.kernel_path.empty() ? std::nullopt
                                : std::optional<std::string>(cfg.kernel_path));
    const PairTensors tensors = pair_to_tensors(pair);
    const std::string base = out_base(cfg.out_path);

    save_image(rg_overlay(tensors.guide, tensors.modality),
               base + "_overlay_before.png");

    TrainConfig train_cfg = cfg.train;
    train_cfg.r = cfg.scale;
    TrainSession session(tensors, train_cfg);
    std::string note = "ok";
    try {
      while (!session.should_stop())
        session.step();
    } catch (const std::exception &e) {
      // Best-effort contract: emit the current state even on failure.
      std::cerr << "warp-debug: training aborted: " << e.what() << "\n";
      note = e.what();
      code = 1;
    }

    const Tensor warped =
        apply_deformation(session.deform(), tensors.guide).detach();
    save_image(rg_overlay(warped, tensors.modality),
               base + "_overlay_after.png");
    save_image(tensor_to_image(warped), base + "_deformed_guide.png");

    TrainedModel model = session.finish();
    std::ostringstream report;
    report << "command = warp-debug\n";
    report << "status = " << note << "\n";
    report << train_report_text(train_cfg, model.report);
    write_text(base + "_warp_debug.report.txt", report.str());
    return code;
  } catch (const std::exception &e) {
    std::cerr << "warp-debug: " << e.what() << "\n";
    return 1;
  }
}

} // namespace cmsr
