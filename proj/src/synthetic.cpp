#include "djsr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace djsr {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

Image gradient_scene(int64_t h, int64_t w, std::mt19937_64& eng) {
    Image img = Image::zeros(3, h, w);
    const double theta = uniform01(eng) * kTwoPi;
    const double cx = std::cos(theta), sy = std::sin(theta);
    const double diag = std::sqrt(static_cast<double>(h * h + w * w));
    for (int c = 0; c < 3; ++c) {
        const double base = 0.15 + 0.3 * uniform01(eng);
        const double span = 0.3 + 0.4 * uniform01(eng);
        const double phase = uniform01(eng);
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double t = (cx * x + sy * y) / diag + phase;
                t -= std::floor(t);
                img.at(c, y, x) = std::clamp(base + span * t, 0.0, 1.0);
            }
    }
    return img;
}

Image zone_plate_scene(int64_t h, int64_t w, std::mt19937_64& eng) {
    Image img = Image::zeros(3, h, w);
    const double cy = h * (0.25 + 0.5 * uniform01(eng));
    const double cx = w * (0.25 + 0.5 * uniform01(eng));
    // chirp rate: instantaneous frequency a*r/pi reaches fmax cycles/px at the
    // largest radius, sweeping through the aliasing-prone band
    const double rmax = std::sqrt(static_cast<double>(h * h + w * w)) * 0.5;
    const double fmax = 0.25 + 0.25 * uniform01(eng);
    const double a = kTwoPi / 2.0 * fmax / rmax;
    const double chroma = 0.2 + 0.5 * uniform01(eng);
    for (int c = 0; c < 3; ++c) {
        const double phase = c * chroma;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double dy = y - cy, dx = x - cx;
                double r2 = dy * dy + dx * dx;
                img.at(c, y, x) = 0.5 + 0.45 * std::sin(a * r2 + phase);
            }
    }
    return img;
}

Image text_edges_scene(int64_t h, int64_t w, std::mt19937_64& eng) {
    Image img = Image::zeros(3, h, w);
    const double bg = 0.75 + 0.2 * uniform01(eng);
    for (double& v : img.data) v = bg;
    const int strokes = 40 + static_cast<int>(uniform_below(eng, 41));
    for (int i = 0; i < strokes; ++i) {
        const bool horizontal = eng() & 1;
        const int64_t thick = 1 + static_cast<int64_t>(uniform_below(eng, 6));
        const int64_t len = 8 + static_cast<int64_t>(uniform_below(eng, static_cast<uint64_t>(w / 2)));
        const int64_t y0 = static_cast<int64_t>(uniform_below(eng, static_cast<uint64_t>(h)));
        const int64_t x0 = static_cast<int64_t>(uniform_below(eng, static_cast<uint64_t>(w)));
        const double ink = 0.05 + 0.25 * uniform01(eng);
        const int64_t hh = horizontal ? thick : len;
        const int64_t ww = horizontal ? len : thick;
        for (int64_t y = y0; y < std::min(h, y0 + hh); ++y)
            for (int64_t x = x0; x < std::min(w, x0 + ww); ++x)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = ink;
    }
    return img;
}

Image smooth_field_scene(int64_t h, int64_t w, std::mt19937_64& eng) {
    Image img = Image::zeros(3, h, w);
    constexpr int waves = 5;
    for (int c = 0; c < 3; ++c) {
        double fy[waves], fx[waves], ph[waves], amp[waves];
        for (int i = 0; i < waves; ++i) {
            fy[i] = (uniform01(eng) - 0.5) * 6.0 / h;
            fx[i] = (uniform01(eng) - 0.5) * 6.0 / w;
            ph[i] = uniform01(eng) * kTwoPi;
            amp[i] = uniform01(eng);
        }
        double lo = 1e9, hi = -1e9;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double v = 0.0;
                for (int i = 0; i < waves; ++i)
                    v += amp[i] * std::sin(kTwoPi * (fy[i] * y + fx[i] * x) + ph[i]);
                img.at(c, y, x) = v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        const double span = hi > lo ? hi - lo : 1.0;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                img.at(c, y, x) = 0.1 + 0.8 * (img.at(c, y, x) - lo) / span;
    }
    return img;
}

}  // namespace

Image synthetic_image(SyntheticKind kind, int64_t h, int64_t w, uint64_t seed) {
    if (h < 8 || w < 8) throw ArgumentError("synthetic image too small");
    std::mt19937_64 eng(seed);
    switch (kind) {
        case SyntheticKind::Gradient: return gradient_scene(h, w, eng);
        case SyntheticKind::ZonePlate: return zone_plate_scene(h, w, eng);
        case SyntheticKind::TextEdges: return text_edges_scene(h, w, eng);
        case SyntheticKind::SmoothField: return smooth_field_scene(h, w, eng);
    }
    throw ArgumentError("unknown synthetic kind");
}

Image synthetic_corpus_image(int64_t index, int64_t h, int64_t w, uint64_t seed) {
    const SyntheticKind kinds[4] = {SyntheticKind::SmoothField, SyntheticKind::ZonePlate,
                                    SyntheticKind::TextEdges, SyntheticKind::Gradient};
    return synthetic_image(kinds[index % 4], h, w, mix_seed(seed, static_cast<uint64_t>(index)));
}

}  // namespace djsr
