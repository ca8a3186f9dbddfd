#ifndef CMSR_COMMANDS_HPP
#define CMSR_COMMANDS_HPP

#include "cmsr/run_config.hpp"

#include <string>

namespace cmsr {

// Train-and-super-resolve: writes the SR image, a report record
// (<out>.report.txt) and, with debug set, the warped guide, R-G overlay and
// FE2-residual PNGs. Returns 0 on success, 1 with a diagnostic on stderr.
int cmd_sr(const RunConfig &cfg);

// PSNR/SSIM of sr vs ground truth; both may be directories, in which case
// files are matched by name and a mean row is appended. Writes a report
// next to the SR input (or report_path when given).
int cmd_eval(const std::string &sr_path, const std::string &gt_path,
             std::string report_path = "");

// Trains, then writes before/after R-G overlays and the deformed guide.
// Outputs are written even when alignment does not converge.
int cmd_warp_debug(const RunConfig &cfg);

} // namespace cmsr

#endif
