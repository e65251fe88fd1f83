#pragma once

#include "djsr/imaging.hpp"
#include "djsr/model.hpp"

namespace djsr {

// Image <-> tensor bridge. Tensors are float; images are double in [0,1].
Tensor tensor_from_image(const Image& img);
Image image_from_tensor(const Tensor& t, bool clip = true);

// Full-frame inference by overlapping tiles: each tile is padded by the
// model's receptive field (zero-filled outside the frame, matching the conv
// zero padding of an untiled run), forwarded, and center-cropped, so tiled
// and untiled outputs agree bit-exactly. tile_lr is in Bayer pixels and must
// be a positive multiple of the CFA period.
Image infer_image(const ModelParams& params, const ModelConfig& config, const Image& bayer,
                  int tile_lr = 128);

}  // namespace djsr
