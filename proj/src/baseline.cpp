#include "djsr/baseline.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace djsr {

namespace {

// Mean of the in-bounds samples among the given (dy,dx) offsets.
template <size_t N>
double neighbor_mean(const Image& bayer, int64_t y, int64_t x,
                     const std::array<std::pair<int, int>, N>& offsets) {
    double acc = 0.0;
    int count = 0;
    for (auto [dy, dx] : offsets) {
        int64_t ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= bayer.height || nx < 0 || nx >= bayer.width) continue;
        acc += bayer.at(0, ny, nx);
        ++count;
    }
    return acc / count;
}

constexpr std::array<std::pair<int, int>, 4> kCross{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
constexpr std::array<std::pair<int, int>, 4> kDiag{{{-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};
constexpr std::array<std::pair<int, int>, 2> kHoriz{{{0, -1}, {0, 1}}};
constexpr std::array<std::pair<int, int>, 2> kVert{{{-1, 0}, {1, 0}}};

}  // namespace

Image bilinear_demosaic(const Image& bayer, const CfaSpec& cfa) {
    if (bayer.channels != 1) throw DimensionError("demosaic expects a single-channel image");
    if (!(cfa.period == 2 && cfa.pattern == CfaSpec::rggb().pattern))
        throw ArgumentError("bilinear_demosaic supports the RGGB CFA only");
    if (bayer.height % 2 != 0 || bayer.width % 2 != 0)
        throw DimensionError("Bayer dims must be even");

    Image out = Image::zeros(3, bayer.height, bayer.width);
    for (int64_t y = 0; y < bayer.height; ++y) {
        for (int64_t x = 0; x < bayer.width; ++x) {
            const bool even_row = (y % 2) == 0;
            const bool even_col = (x % 2) == 0;
            const double v = bayer.at(0, y, x);
            double r, g, b;
            if (even_row && even_col) {  // R site
                r = v;
                g = neighbor_mean(bayer, y, x, kCross);
                b = neighbor_mean(bayer, y, x, kDiag);
            } else if (!even_row && !even_col) {  // B site
                b = v;
                g = neighbor_mean(bayer, y, x, kCross);
                r = neighbor_mean(bayer, y, x, kDiag);
            } else if (even_row) {  // G site on an R row
                g = v;
                r = neighbor_mean(bayer, y, x, kHoriz);
                b = neighbor_mean(bayer, y, x, kVert);
            } else {  // G site on a B row
                g = v;
                r = neighbor_mean(bayer, y, x, kVert);
                b = neighbor_mean(bayer, y, x, kHoriz);
            }
            out.at(0, y, x) = r;
            out.at(1, y, x) = g;
            out.at(2, y, x) = b;
        }
    }
    return out;
}

namespace {

// Catmull-Rom kernel, a = -0.5.
double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

}  // namespace

Image bicubic_upsample(const Image& img, int r) {
    if (r < 1) throw ArgumentError("upsample factor must be positive");
    if (r == 1) return img;
    Image out = Image::zeros(img.channels, img.height * r, img.width * r);
    const double inv = 1.0 / r;
    for (int c = 0; c < img.channels; ++c)
        for (int64_t y = 0; y < out.height; ++y) {
            const double sy = (y + 0.5) * inv - 0.5;
            const int64_t y0 = static_cast<int64_t>(std::floor(sy));
            double wy[4];
            for (int i = 0; i < 4; ++i) wy[i] = cubic_weight(sy - (y0 - 1 + i));
            for (int64_t x = 0; x < out.width; ++x) {
                const double sx = (x + 0.5) * inv - 0.5;
                const int64_t x0 = static_cast<int64_t>(std::floor(sx));
                double acc = 0.0;
                for (int i = 0; i < 4; ++i) {
                    const int64_t yy = std::clamp<int64_t>(y0 - 1 + i, 0, img.height - 1);
                    double rowacc = 0.0;
                    for (int j = 0; j < 4; ++j) {
                        const int64_t xx = std::clamp<int64_t>(x0 - 1 + j, 0, img.width - 1);
                        rowacc += cubic_weight(sx - (x0 - 1 + j)) * img.at(c, yy, xx);
                    }
                    acc += wy[i] * rowacc;
                }
                out.at(c, y, x) = acc;
            }
        }
    return out;
}

Image run_sequential(const Image& bayer, const SequentialPipeline& pipeline) {
    if (pipeline.demosaicer != "bilinear")
        throw ArgumentError("unsupported demosaicer: " + pipeline.demosaicer);
    if (pipeline.upsampler != "bicubic")
        throw ArgumentError("unsupported upsampler: " + pipeline.upsampler);
    return bicubic_upsample(bilinear_demosaic(bayer, CfaSpec::rggb()), pipeline.scale);
}

}  // namespace djsr
