#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "djsr/dataset.hpp"
#include "djsr/inference.hpp"

namespace djsr {

struct MetricRow {
    std::string image;
    double psnr = 0.0;
    double ssim = 0.0;
};

// Per-image scores plus corpus means (arithmetic averages of the rows).
struct MetricReport {
    std::vector<MetricRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

// 10*log10(1 / MSE) with MSE over all channels jointly, peak 1.0; both
// images are clipped to [0,1] first. Identical images give +infinity.
double psnr(const Image& a, const Image& b);

// Standard SSIM: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=1,
// mean over valid window positions, per channel then averaged.
double ssim(const Image& a, const Image& b);

// Tiled full-frame inference on every pair, scored against the ground truth.
MetricReport evaluate(const ModelParams& params, const ModelConfig& config,
                      const std::vector<ImagePair>& pairs, int tile_lr = 128);

// Sequential-baseline counterpart; `sr` maps a Bayer frame to an SR image.
MetricReport evaluate_with(const std::function<Image(const Image&)>& sr,
                           const std::vector<ImagePair>& pairs);

// CSV: image,psnr_db,ssim plus a summary row; with a baseline report the
// rows gain baseline_psnr_db,baseline_ssim columns.
void write_report_csv(std::ostream& out, const MetricReport& report,
                      const MetricReport* baseline = nullptr);

}  // namespace djsr
