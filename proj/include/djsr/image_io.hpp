#pragma once

#include <string>

#include "djsr/imaging.hpp"

namespace djsr {

// PNG, 3-channel, 8- or 16-bit; stored integers map linearly to [0,1].
// Grayscale files load with the channel replicated; alpha is dropped.
// No gamma handling: values pass through as stored.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img, int bit_depth = 16);

// Binary PGM (P5), maxval up to 65535, for single-channel Bayer frames.
Image read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Image& img, int maxval = 65535);

// Dispatch on extension (.png / .pgm).
Image read_image(const std::string& path);

}  // namespace djsr
