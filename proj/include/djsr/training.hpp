#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "djsr/dataset.hpp"
#include "djsr/model.hpp"

namespace djsr {

// Defaults follow the published training protocol: ADAM with lr 1e-4,
// beta1 0.9, beta2 0.999, eps 1e-8, mini-batch 16, learning rate halved
// every 10000 updates.
struct TrainConfig {
    double lr0 = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch = 16;
    uint64_t halve_every = 10000;
    uint64_t max_steps = 20000;
    uint64_t seed = 0;
    std::string dtype = "f32";
    int patch = 64;                   // Bayer patch side
    uint64_t checkpoint_every = 1000;
    uint64_t val_every = 500;
    int val_patches = 8;
    uint64_t log_every = 100;

    void validate() const;
};

// First/second ADAM moments, parallel to ModelParams::named_tensors() order.
template <typename T>
struct OptimStateT {
    std::vector<TensorT<T>> m, v;
    uint64_t t = 0;

    static OptimStateT zeros_like(const ModelParamsT<T>& params);
};

using OptimState = OptimStateT<float>;
using OptimStateD = OptimStateT<double>;

struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    uint64_t step = 0;
    ModelParams params;
    OptimState opt;
};

// Mean of squared differences over all elements; differentiable.
template <typename T>
TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target,
                    GradTapeT<T>* tape = nullptr);

// lr0 * 0.5^floor(step / halve_every).
double lr_at(uint64_t step, const TrainConfig& cfg);

// Bias-corrected ADAM update, one t increment per call. grads is keyed by
// tensor id as returned by GradTape::backward; a missing parameter gradient
// is a contract error. Element math runs in double regardless of T.
template <typename T>
void adam_step(ModelParamsT<T>& params, const GradMapT<T>& grads, OptimStateT<T>& state,
               double lr, const TrainConfig& cfg);

struct TrainResult {
    Checkpoint checkpoint;
    std::filesystem::path checkpoint_path;
    std::filesystem::path metrics_path;
};

// Full loop: deterministic patch stream -> forward -> MSE -> backward ->
// ADAM, with periodic validation rows in metrics.csv and periodic
// checkpoints. Non-finite values abort with TrainingAborted carrying the
// step. Bit-reproducible for a fixed seed; resuming from a checkpoint
// continues the identical trajectory.
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::vector<ImagePair>& dataset, const std::filesystem::path& out_dir,
                  const Checkpoint* resume = nullptr);

// Binary checkpoint: "DJSR" | u32 version | u64 header length | key=value
// header | tensor records (u16 name len, name, u8 ndim, u64 dims, f32 data),
// little-endian throughout.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace djsr
