#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "djsr/common.hpp"

namespace djsr {

// Planar image, values in [0,1], double precision so metric fixtures hold to
// tight tolerances. Channel-planar, row-major within a channel.
struct Image {
    int channels = 0;  // 1 or 3
    int64_t height = 0;
    int64_t width = 0;
    std::vector<double> data;

    static Image zeros(int channels, int64_t height, int64_t width);

    double at(int c, int64_t y, int64_t x) const { return data[(c * height + y) * width + x]; }
    double& at(int c, int64_t y, int64_t x) { return data[(c * height + y) * width + x]; }
    int64_t pixels() const { return height * width; }
};

// Periodic color filter array; pattern holds channel indices 0=R, 1=G, 2=B.
struct CfaSpec {
    int period = 0;
    std::vector<int> pattern;  // period x period, row-major

    static CfaSpec rggb();    // [[R,G],[G,B]], R at (0,0)
    static CfaSpec xtrans();  // 6x6 Fujifilm layout

    int channel_at(int64_t y, int64_t x) const {
        return pattern[(y % period) * period + (x % period)];
    }
    void validate() const;
};

CfaSpec cfa_by_name(const std::string& name);  // "rggb" | "xtrans"

// Separable Gaussian, kernel radius ceil(3*sigma), symmetric edge reflection;
// sigma 0 is the identity.
Image gaussian_blur(const Image& img, double sigma);

// Area average over factor x factor blocks; dims must divide.
Image downsample(const Image& img, int factor);

// Bilinear resampling with half-pixel-center alignment.
Image resize_bilinear(const Image& img, int64_t out_h, int64_t out_w);

// scale in (0,1]; output dims = round(dim * scale).
Image resize_fractional(const Image& img, double scale);

// Sample one channel per site: out(y,x) = img(pattern[y%s][x%s], y, x).
Image mosaic(const Image& img, const CfaSpec& cfa);

// Full observation model: mosaic(downsample(gaussian_blur(hr, sigma), r)).
// Dataset builds use sigma = 0; the progressive downsizing already
// band-limits the input.
Image form_bayer(const Image& hr, int r, const CfaSpec& cfa, double sigma = 0.0);

}  // namespace djsr
