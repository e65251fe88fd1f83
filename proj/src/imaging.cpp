#include "djsr/imaging.hpp"

#include <algorithm>
#include <cmath>

namespace djsr {

Image Image::zeros(int channels, int64_t height, int64_t width) {
    if ((channels != 1 && channels != 3) || height < 1 || width < 1)
        throw DimensionError("invalid image dims " + std::to_string(channels) + "x" +
                             std::to_string(height) + "x" + std::to_string(width));
    return Image{channels, height, width,
                 std::vector<double>(static_cast<size_t>(channels) * height * width, 0.0)};
}

CfaSpec CfaSpec::rggb() {
    return CfaSpec{2, {0, 1, 1, 2}};
}

CfaSpec CfaSpec::xtrans() {
    constexpr int G = 1, R = 0, B = 2;
    return CfaSpec{6,
                   {
                       G, B, G, G, R, G,  //
                       R, G, R, B, G, B,  //
                       G, B, G, G, R, G,  //
                       G, R, G, G, B, G,  //
                       B, G, B, R, G, R,  //
                       G, R, G, G, B, G,  //
                   }};
}

void CfaSpec::validate() const {
    if (period < 1 || pattern.size() != static_cast<size_t>(period) * period)
        throw ConfigError("CFA pattern size does not match its period");
    bool seen[3] = {false, false, false};
    for (int v : pattern) {
        if (v < 0 || v > 2) throw ConfigError("CFA channel index out of range");
        seen[v] = true;
    }
    if (!seen[0] || !seen[1] || !seen[2])
        throw ConfigError("CFA pattern must sample every channel");
}

CfaSpec cfa_by_name(const std::string& name) {
    if (name == "rggb") return CfaSpec::rggb();
    if (name == "xtrans") return CfaSpec::xtrans();
    throw ArgumentError("unknown CFA '" + name + "' (expected rggb or xtrans)");
}

namespace {

// Symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1.
int64_t reflect(int64_t i, int64_t n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
    return i;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double total = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        k[static_cast<size_t>(i + radius)] = v;
        total += v;
    }
    for (double& v : k) v /= total;
    return k;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma < 0.0) throw ArgumentError("blur sigma must be non-negative");
    if (sigma == 0.0) return img;
    const std::vector<double> k = gaussian_kernel(sigma);
    const int64_t radius = static_cast<int64_t>(k.size() / 2);

    Image tmp = Image::zeros(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int64_t y = 0; y < img.height; ++y)
            for (int64_t x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int64_t i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] *
                           img.at(c, y, reflect(x + i, img.width));
                tmp.at(c, y, x) = acc;
            }
    Image out = Image::zeros(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int64_t y = 0; y < img.height; ++y)
            for (int64_t x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int64_t i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] *
                           tmp.at(c, reflect(y + i, img.height), x);
                out.at(c, y, x) = std::clamp(acc, 0.0, 1.0);
            }
    return out;
}

Image downsample(const Image& img, int factor) {
    if (factor < 1) throw ArgumentError("downsample factor must be positive");
    if (factor == 1) return img;
    if (img.height % factor != 0 || img.width % factor != 0)
        throw DimensionError("image dims not divisible by downsample factor " +
                             std::to_string(factor));
    Image out = Image::zeros(img.channels, img.height / factor, img.width / factor);
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int c = 0; c < img.channels; ++c)
        for (int64_t y = 0; y < out.height; ++y)
            for (int64_t x = 0; x < out.width; ++x) {
                double acc = 0.0;
                for (int64_t dy = 0; dy < factor; ++dy)
                    for (int64_t dx = 0; dx < factor; ++dx)
                        acc += img.at(c, y * factor + dy, x * factor + dx);
                out.at(c, y, x) = acc * inv;
            }
    return out;
}

Image resize_bilinear(const Image& img, int64_t out_h, int64_t out_w) {
    if (out_h < 1 || out_w < 1) throw ArgumentError("degenerate resize output size");
    if (out_h == img.height && out_w == img.width) return img;
    Image out = Image::zeros(img.channels, out_h, out_w);
    const double sy_scale = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx_scale = static_cast<double>(img.width) / static_cast<double>(out_w);
    for (int c = 0; c < img.channels; ++c)
        for (int64_t y = 0; y < out_h; ++y) {
            double sy = (static_cast<double>(y) + 0.5) * sy_scale - 0.5;
            int64_t y0 = static_cast<int64_t>(std::floor(sy));
            double fy = sy - static_cast<double>(y0);
            int64_t ya = std::clamp<int64_t>(y0, 0, img.height - 1);
            int64_t yb = std::clamp<int64_t>(y0 + 1, 0, img.height - 1);
            for (int64_t x = 0; x < out_w; ++x) {
                double sx = (static_cast<double>(x) + 0.5) * sx_scale - 0.5;
                int64_t x0 = static_cast<int64_t>(std::floor(sx));
                double fx = sx - static_cast<double>(x0);
                int64_t xa = std::clamp<int64_t>(x0, 0, img.width - 1);
                int64_t xb = std::clamp<int64_t>(x0 + 1, 0, img.width - 1);
                double v = (1.0 - fy) * ((1.0 - fx) * img.at(c, ya, xa) + fx * img.at(c, ya, xb)) +
                           fy * ((1.0 - fx) * img.at(c, yb, xa) + fx * img.at(c, yb, xb));
                out.at(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    return out;
}

Image resize_fractional(const Image& img, double scale) {
    if (!(scale > 0.0) || scale > 1.0)
        throw ArgumentError("resize_fractional expects scale in (0, 1]");
    int64_t out_h = std::llround(static_cast<double>(img.height) * scale);
    int64_t out_w = std::llround(static_cast<double>(img.width) * scale);
    if (out_h < 1 || out_w < 1) throw ArgumentError("degenerate resize output size");
    return resize_bilinear(img, out_h, out_w);
}

Image mosaic(const Image& img, const CfaSpec& cfa) {
    cfa.validate();
    if (img.channels != 3) throw DimensionError("mosaic expects a 3-channel image");
    if (img.height % cfa.period != 0 || img.width % cfa.period != 0)
        throw DimensionError("image dims not divisible by CFA period " +
                             std::to_string(cfa.period));
    Image out = Image::zeros(1, img.height, img.width);
    for (int64_t y = 0; y < img.height; ++y)
        for (int64_t x = 0; x < img.width; ++x)
            out.at(0, y, x) = img.at(cfa.channel_at(y, x), y, x);
    return out;
}

Image form_bayer(const Image& hr, int r, const CfaSpec& cfa, double sigma) {
    cfa.validate();
    if (r < 1) throw ArgumentError("downsample factor must be positive");
    const int64_t block = static_cast<int64_t>(r) * cfa.period;
    if (hr.height % block != 0 || hr.width % block != 0)
        throw DimensionError("image dims not divisible by r * cfa period = " +
                             std::to_string(block));
    return mosaic(downsample(gaussian_blur(hr, sigma), r), cfa);
}

}  // namespace djsr
