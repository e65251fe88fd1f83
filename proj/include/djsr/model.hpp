#pragma once

#include <string>
#include <vector>

#include "djsr/tensor.hpp"

namespace djsr {

// Architecture hyperparameters. The paper-fidelity preset is C=256 filters
// with 24 residual blocks; the desk preset is small enough to train on a CPU.
struct ModelConfig {
    int c_filters = 256;  // C
    int n_blocks = 24;    // n_b
    int cfa_period = 2;   // s
    int upscale = 2;      // r
    int res_kernel = 3;   // kernel size inside residual blocks and tail convs

    static ModelConfig paper_preset() { return ModelConfig{256, 24, 2, 2, 3}; }
    static ModelConfig desk_preset() { return ModelConfig{32, 4, 2, 2, 3}; }

    // Throws ConfigError on violated divisibility or range constraints.
    void validate() const;
};

template <typename T>
struct ConvParamT {
    TensorT<T> w, b;
};

template <typename T>
struct BlockParamT {
    ConvParamT<T> conv1;
    TensorT<T> alpha;  // PReLU coefficients between the two convs
    ConvParamT<T> conv2;
};

// Named weight tensors of the three-stage network:
//   stage 1: strided color-extraction conv (C x 1 x 2s x 2s) -> shuffle(s)
//            -> conv+PReLU back to C channels
//   stage 2: n_b residual blocks, conv-PReLU-conv plus identity skip
//   stage 3: shuffle(r) -> conv+PReLU -> conv to 3 channels
template <typename T>
struct ModelParamsT {
    ConvParamT<T> stage1_conv;
    ConvParamT<T> stage1_post;
    TensorT<T> stage1_alpha;
    std::vector<BlockParamT<T>> blocks;
    ConvParamT<T> stage3_post;
    TensorT<T> stage3_alpha;
    ConvParamT<T> stage3_out;

    // Canonical (name, tensor) enumeration; fixed order used by the
    // checkpoint format and the optimizer state.
    std::vector<std::pair<std::string, TensorT<T>*>> named_tensors();
    std::vector<std::pair<std::string, const TensorT<T>*>> named_tensors() const;

    void set_requires_grad(bool v);
    ModelParamsT clone() const;
};

using ModelParams = ModelParamsT<float>;
using ModelParamsD = ModelParamsT<double>;

// He-normal weights (std = sqrt(2/fan_in)), zero biases, PReLU alphas 0.25.
// Bit-deterministic for a given (config, seed).
template <typename T>
ModelParamsT<T> build(const ModelConfig& config, uint64_t seed);

// Optional record of the intermediate activation shapes, one entry per
// architecture row.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

// bayer (n,1,h,w) with h,w divisible by cfa_period -> (n,3,r*h,r*w).
// Output is raw linear values; clipping happens at encode/metric time.
template <typename T>
TensorT<T> forward(const ModelParamsT<T>& params, const ModelConfig& config,
                   const TensorT<T>& bayer, GradTapeT<T>* tape = nullptr,
                   ShapeTrace* trace = nullptr);

template <typename T>
TensorT<T> forward(const ModelParamsT<T>& params, const ModelConfig& config,
                   const TensorT<T>& bayer, ShapeTrace* trace) {
    return forward(params, config, bayer, static_cast<GradTapeT<T>*>(nullptr), trace);
}

// Closed-form total parameter count for a config.
int64_t param_count(const ModelConfig& config);

// Input-pixel radius (in Bayer pixels, multiple of cfa_period) that can
// influence one output site; used as the tile overlap margin.
int receptive_field_lr(const ModelConfig& config);

}  // namespace djsr
