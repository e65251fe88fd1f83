#include "djsr/model.hpp"

#include <random>

namespace djsr {

void ModelConfig::validate() const {
    if (c_filters < 1 || n_blocks < 0 || cfa_period < 1 || upscale < 1 || res_kernel < 1)
        throw ConfigError("model config values must be positive");
    if (res_kernel % 2 == 0) throw ConfigError("res_kernel must be odd");
    const int64_t s2 = static_cast<int64_t>(cfa_period) * cfa_period;
    const int64_t r2 = static_cast<int64_t>(upscale) * upscale;
    if (c_filters % s2 != 0)
        throw ConfigError("c_filters must be divisible by cfa_period^2 = " + std::to_string(s2));
    if (c_filters % r2 != 0)
        throw ConfigError("c_filters must be divisible by upscale^2 = " + std::to_string(r2));
    // The color-extraction conv (kernel 2s, stride s) preserves h/s only for
    // symmetric padding s/2.
    if (cfa_period % 2 != 0) throw ConfigError("cfa_period must be even");
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>*>> ModelParamsT<T>::named_tensors() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    out.emplace_back("stage1.conv.w", &stage1_conv.w);
    out.emplace_back("stage1.conv.b", &stage1_conv.b);
    out.emplace_back("stage1.post.w", &stage1_post.w);
    out.emplace_back("stage1.post.b", &stage1_post.b);
    out.emplace_back("stage1.post.alpha", &stage1_alpha);
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        out.emplace_back(p + "conv1.w", &blocks[i].conv1.w);
        out.emplace_back(p + "conv1.b", &blocks[i].conv1.b);
        out.emplace_back(p + "alpha", &blocks[i].alpha);
        out.emplace_back(p + "conv2.w", &blocks[i].conv2.w);
        out.emplace_back(p + "conv2.b", &blocks[i].conv2.b);
    }
    out.emplace_back("stage3.post.w", &stage3_post.w);
    out.emplace_back("stage3.post.b", &stage3_post.b);
    out.emplace_back("stage3.post.alpha", &stage3_alpha);
    out.emplace_back("stage3.out.w", &stage3_out.w);
    out.emplace_back("stage3.out.b", &stage3_out.b);
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const TensorT<T>*>> ModelParamsT<T>::named_tensors() const {
    std::vector<std::pair<std::string, const TensorT<T>*>> out;
    for (auto& [name, t] : const_cast<ModelParamsT*>(this)->named_tensors())
        out.emplace_back(name, t);
    return out;
}

template <typename T>
void ModelParamsT<T>::set_requires_grad(bool v) {
    for (auto& [name, t] : named_tensors()) t->set_requires_grad(v);
}

template <typename T>
ModelParamsT<T> ModelParamsT<T>::clone() const {
    ModelParamsT copy = *this;
    for (auto& [name, t] : copy.named_tensors()) *t = t->clone();
    return copy;
}

namespace {

template <typename T>
TensorT<T> he_normal(const Shape& s, int64_t fan_in, std::mt19937_64& eng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<T> data(static_cast<size_t>(s.numel()));
    for (T& v : data) v = static_cast<T>(normal01(eng) * stddev);
    return TensorT<T>::from_data(s, std::move(data));
}

template <typename T>
ConvParamT<T> init_conv(int64_t co, int64_t ci, int64_t k, std::mt19937_64& eng) {
    return ConvParamT<T>{he_normal<T>(Shape{co, ci, k, k}, ci * k * k, eng),
                         TensorT<T>::zeros(Shape{1, co, 1, 1})};
}

}  // namespace

template <typename T>
ModelParamsT<T> build(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 eng(seed);
    const int64_t C = cfg.c_filters;
    const int64_t s = cfg.cfa_period;
    const int64_t r = cfg.upscale;
    const int64_t k = cfg.res_kernel;

    ModelParamsT<T> p;
    p.stage1_conv = ConvParamT<T>{he_normal<T>(Shape{C, 1, 2 * s, 2 * s}, 4 * s * s, eng),
                                  TensorT<T>::zeros(Shape{1, C, 1, 1})};
    p.stage1_post = init_conv<T>(C, C / (s * s), k, eng);
    p.stage1_alpha = TensorT<T>::full(Shape{1, C, 1, 1}, T(0.25));
    p.blocks.resize(static_cast<size_t>(cfg.n_blocks));
    for (auto& blk : p.blocks) {
        blk.conv1 = init_conv<T>(C, C, k, eng);
        blk.alpha = TensorT<T>::full(Shape{1, C, 1, 1}, T(0.25));
        blk.conv2 = init_conv<T>(C, C, k, eng);
    }
    p.stage3_post = init_conv<T>(C, C / (r * r), k, eng);
    p.stage3_alpha = TensorT<T>::full(Shape{1, C, 1, 1}, T(0.25));
    p.stage3_out = init_conv<T>(3, C, k, eng);
    return p;
}

template <typename T>
TensorT<T> forward(const ModelParamsT<T>& p, const ModelConfig& cfg, const TensorT<T>& bayer,
                   GradTapeT<T>* tape, ShapeTrace* trace) {
    cfg.validate();
    const Shape& is = bayer.shape();
    const int s = cfg.cfa_period;
    const int r = cfg.upscale;
    const int kpad = cfg.res_kernel / 2;
    if (is.c != 1)
        throw DimensionError("forward expects a single-channel Bayer tensor, got " +
                             to_string(is));
    if (is.h % s != 0 || is.w % s != 0)
        throw DimensionError("Bayer dims " + to_string(is) + " not divisible by cfa_period " +
                             std::to_string(s));
    auto rec = [&](const char* name, const TensorT<T>& t) {
        if (trace) trace->emplace_back(name, t.shape());
    };

    // stage 1: color extraction
    TensorT<T> x = conv2d(bayer, p.stage1_conv.w, p.stage1_conv.b, s, s / 2, tape);
    rec("stage1.conv", x);
    x = pixel_shuffle(x, s, tape);
    rec("stage1.shuffle", x);
    x = conv2d(x, p.stage1_post.w, p.stage1_post.b, 1, kpad, tape);
    x = prelu(x, p.stage1_alpha, tape);
    rec("stage1.post", x);

    // stage 2: residual feature extraction, no batch norm, skip past both convs
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        const BlockParamT<T>& blk = p.blocks[i];
        TensorT<T> y = conv2d(x, blk.conv1.w, blk.conv1.b, 1, kpad, tape);
        y = prelu(y, blk.alpha, tape);
        y = conv2d(y, blk.conv2.w, blk.conv2.b, 1, kpad, tape);
        x = add(x, y, tape);
        rec(("block." + std::to_string(i)).c_str(), x);
    }

    // stage 3: reconstruction
    x = pixel_shuffle(x, r, tape);
    rec("stage3.shuffle", x);
    x = conv2d(x, p.stage3_post.w, p.stage3_post.b, 1, kpad, tape);
    x = prelu(x, p.stage3_alpha, tape);
    rec("stage3.post", x);
    x = conv2d(x, p.stage3_out.w, p.stage3_out.b, 1, kpad, tape);
    rec("stage3.out", x);
    return x;
}

int64_t param_count(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t C = cfg.c_filters;
    const int64_t s = cfg.cfa_period;
    const int64_t r = cfg.upscale;
    const int64_t k2 = static_cast<int64_t>(cfg.res_kernel) * cfg.res_kernel;
    int64_t count = C * 4 * s * s + C;                          // stage1.conv
    count += C * (C / (s * s)) * k2 + C + C;                    // stage1.post + alpha
    count += cfg.n_blocks * (2 * (C * C * k2 + C) + C);         // residual blocks
    count += C * (C / (r * r)) * k2 + C + C;                    // stage3.post + alpha
    count += 3 * C * k2 + 3;                                    // stage3.out
    return count;
}

int receptive_field_lr(const ModelConfig& cfg) {
    const int s = cfg.cfa_period;
    const int half_k = cfg.res_kernel / 2;
    int reach = 2 * s;                                // stage-1 kernel extent
    reach += half_k * (1 + 2 * cfg.n_blocks);         // full-resolution convs
    reach += (2 * half_k + cfg.upscale - 1) / cfg.upscale;  // stage-3 convs at r-times res
    return ((reach + s - 1) / s) * s;
}

// ===== explicit instantiations =====

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;
template ModelParamsT<float> build<float>(const ModelConfig&, uint64_t);
template ModelParamsT<double> build<double>(const ModelConfig&, uint64_t);
template TensorT<float> forward<float>(const ModelParamsT<float>&, const ModelConfig&,
                                       const TensorT<float>&, GradTapeT<float>*, ShapeTrace*);
template TensorT<double> forward<double>(const ModelParamsT<double>&, const ModelConfig&,
                                         const TensorT<double>&, GradTapeT<double>*, ShapeTrace*);

}  // namespace djsr
