#include "djsr/inference.hpp"

#include <algorithm>

namespace djsr {

Tensor tensor_from_image(const Image& img) {
    std::vector<float> data(img.data.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(img.data[i]);
    return Tensor::from_data({1, img.channels, img.height, img.width}, std::move(data));
}

Image image_from_tensor(const Tensor& t, bool clip) {
    const Shape& s = t.shape();
    if (s.n != 1 || (s.c != 1 && s.c != 3))
        throw DimensionError("image_from_tensor expects batch 1 with 1 or 3 channels, got " +
                             to_string(s));
    Image img = Image::zeros(static_cast<int>(s.c), s.h, s.w);
    auto v = t.values();
    for (size_t i = 0; i < v.size(); ++i) {
        double val = static_cast<double>(v[i]);
        img.data[i] = clip ? std::clamp(val, 0.0, 1.0) : val;
    }
    return img;
}

Image infer_image(const ModelParams& params, const ModelConfig& cfg, const Image& bayer,
                  int tile_lr) {
    cfg.validate();
    const int s = cfg.cfa_period;
    const int r = cfg.upscale;
    if (bayer.channels != 1) throw DimensionError("infer expects a single-channel Bayer frame");
    if (bayer.height % s != 0 || bayer.width % s != 0)
        throw DimensionError("Bayer dims must be divisible by the CFA period " +
                             std::to_string(s));
    if (tile_lr < 1 || tile_lr % s != 0)
        throw ArgumentError("tile size must be a positive multiple of the CFA period");

    const int64_t h = bayer.height, w = bayer.width;
    const int64_t margin = receptive_field_lr(cfg);
    Image out = Image::zeros(3, r * h, r * w);

    for (int64_t y0 = 0; y0 < h; y0 += tile_lr) {
        const int64_t core_h = std::min<int64_t>(tile_lr, h - y0);
        for (int64_t x0 = 0; x0 < w; x0 += tile_lr) {
            const int64_t core_w = std::min<int64_t>(tile_lr, w - x0);

            // padded tile, zero outside the frame
            const int64_t th = core_h + 2 * margin, tw = core_w + 2 * margin;
            Tensor tile = Tensor::zeros({1, 1, th, tw});
            auto tv = tile.mutable_values();
            for (int64_t y = 0; y < th; ++y) {
                const int64_t sy = y0 - margin + y;
                if (sy < 0 || sy >= h) continue;
                for (int64_t x = 0; x < tw; ++x) {
                    const int64_t sx = x0 - margin + x;
                    if (sx < 0 || sx >= w) continue;
                    tv[y * tw + x] = static_cast<float>(bayer.at(0, sy, sx));
                }
            }

            Tensor sr = forward(params, cfg, tile);
            auto sv = sr.values();
            const int64_t sr_h = sr.shape().h, sr_w = sr.shape().w;
            for (int c = 0; c < 3; ++c)
                for (int64_t y = 0; y < r * core_h; ++y)
                    for (int64_t x = 0; x < r * core_w; ++x) {
                        double v = sv[(c * sr_h + (y + r * margin)) * sr_w + (x + r * margin)];
                        out.at(c, r * y0 + y, r * x0 + x) = std::clamp(v, 0.0, 1.0);
                    }
        }
    }
    return out;
}

}  // namespace djsr
