#pragma once

#include <string>

#include "djsr/imaging.hpp"

namespace djsr {

// The classic two-stage comparison pipeline: demosaic, then single-image
// upsampling. Output dims are scale x the Bayer dims, 3 channels.
struct SequentialPipeline {
    std::string demosaicer = "bilinear";
    std::string upsampler = "bicubic";
    int scale = 2;
};

// Standard bilinear CFA interpolation for RGGB: known sites copy through,
// missing colors average their nearest available neighbors.
Image bilinear_demosaic(const Image& bayer, const CfaSpec& cfa);

// Catmull-Rom bicubic (a = -0.5), half-pixel centers, integer factor.
// Values may overshoot [0,1]; callers clip at encode/metric time.
Image bicubic_upsample(const Image& img, int r);

Image run_sequential(const Image& bayer, const SequentialPipeline& pipeline);

}  // namespace djsr
