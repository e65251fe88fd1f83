#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "djsr/common.hpp"

namespace djsr {

// Rank-4 shape, (batch, channels, height, width), row-major with w fastest.
struct Shape {
    int64_t n = 0, c = 0, h = 0, w = 0;

    int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

template <typename T>
class GradTapeT;

// Dense rank-4 tensor. Copies share storage; values produced by an op are
// treated as immutable. mutable_values() exists for caller-owned leaves
// (parameters updated between steps). Buffers come from a recycling pool:
// training allocates and drops the same activation sizes every step.
template <typename T>
class TensorT {
  public:
    TensorT() = default;

    static TensorT zeros(const Shape& s);
    static TensorT full(const Shape& s, T value);
    static TensorT from_data(const Shape& s, std::vector<T> data);
    // Contents unspecified; for ops that overwrite every element.
    static TensorT uninitialized(const Shape& s);

    bool defined() const { return st_ != nullptr; }
    const Shape& shape() const { return st_->shape; }
    int64_t numel() const { return st_->shape.numel(); }

    // Unique per allocation; shared by shallow copies.
    int64_t id() const { return id_; }

    bool requires_grad() const { return requires_grad_; }
    TensorT& set_requires_grad(bool v) {
        requires_grad_ = v;
        return *this;
    }

    std::span<const T> values() const { return {st_->data, st_->size}; }
    std::span<T> mutable_values() { return {st_->data, st_->size}; }

    T at(int64_t n, int64_t c, int64_t y, int64_t x) const {
        const Shape& s = st_->shape;
        return st_->data[((n * s.c + c) * s.h + y) * s.w + x];
    }

    // Value of a 1x1x1x1 tensor.
    T scalar() const;

    // Deep copy with a fresh id.
    TensorT clone() const;

    template <typename U>
    TensorT<U> cast() const {
        auto v = values();
        std::vector<U> out(v.begin(), v.end());
        return TensorT<U>::from_data(st_->shape, std::move(out));
    }

  private:
    struct Storage {
        Shape shape;
        T* data = nullptr;
        size_t size = 0;
        Storage(const Shape& s, T* d, size_t n) : shape(s), data(d), size(n) {}
        Storage(const Storage&) = delete;
        Storage& operator=(const Storage&) = delete;
        ~Storage();
    };
    std::shared_ptr<Storage> st_;
    int64_t id_ = -1;
    bool requires_grad_ = false;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
using GradMapT = std::unordered_map<int64_t, TensorT<T>>;
using GradMap = GradMapT<float>;

// Linear record of executed operations for one forward pass. backward()
// replays the records once, in reverse order, and returns the gradient of
// the loss with respect to every tracked leaf (zeros for unreached leaves).
// One tape serves one logical training step; not shareable across steps.
template <typename T>
class GradTapeT {
  public:
    // Registers a leaf so it appears in the backward() result even if no
    // recorded op touches it. The tensor must have requires_grad set.
    void watch(const TensorT<T>& leaf);

    // loss must be 1x1x1x1 and connected to this tape (produced by a
    // recorded op or watched).
    GradMapT<T> backward(const TensorT<T>& loss);

    size_t op_count() const { return records_.size(); }

    // --- used by op implementations ---
    bool tracked(const TensorT<T>& t) const;
    void record(const std::vector<const TensorT<T>*>& inputs, const TensorT<T>& output,
                std::function<void(GradTapeT&)> pull);
    // Gradient accumulated so far for the tensor with this id (null if none).
    const TensorT<T>* grad_of(int64_t id) const;
    void accumulate(int64_t id, const TensorT<T>& contribution);

  private:
    struct Record {
        int64_t out_id;
        std::function<void(GradTapeT&)> pull;
    };
    void track_leaf(const TensorT<T>& t);

    std::vector<Record> records_;
    std::unordered_map<int64_t, Shape> leaves_;      // id -> shape, zero-filled if unreached
    std::unordered_map<int64_t, TensorT<T>> grads_;  // live only during backward()
    std::unordered_map<int64_t, bool> produced_;     // ids produced by recorded ops
};

using GradTape = GradTapeT<float>;
using GradTapeD = GradTapeT<double>;

// ===== Operations =====
// All ops validate shapes, raise NumericError if the result contains a
// non-finite value, and record gradient rules when `tape` is non-null and
// some input is tracked.

// Cross-correlation (no kernel flip). input (n,ci,h,w), weight (co,ci,kh,kw),
// bias (1,co,1,1); output dims h' = (h + 2*padding - kh)/stride + 1.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride, int padding, GradTapeT<T>* tape = nullptr);

// (n, C, h, w) -> (n, C/s^2, s*h, s*w) with
// out(n, c, y, x) = in(n, (C/s)*(y%s) + (C/s^2)*(x%s) + c, y/s, x/s).
template <typename T>
TensorT<T> pixel_shuffle(const TensorT<T>& input, int s, GradTapeT<T>* tape = nullptr);

// Exact inverse of pixel_shuffle.
template <typename T>
TensorT<T> pixel_unshuffle(const TensorT<T>& input, int s, GradTapeT<T>* tape = nullptr);

// out = x if x >= 0 else alpha[c]*x; alpha shaped (1,c,1,1).
template <typename T>
TensorT<T> prelu(const TensorT<T>& input, const TensorT<T>& alpha, GradTapeT<T>* tape = nullptr);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b, GradTapeT<T>* tape = nullptr);

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b, GradTapeT<T>* tape = nullptr);

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T k, GradTapeT<T>* tape = nullptr);

// Sum over all elements -> 1x1x1x1.
template <typename T>
TensorT<T> sum(const TensorT<T>& a, GradTapeT<T>* tape = nullptr);

// Max over elements of |analytic - central difference| / max(1, |analytic|),
// for a deterministic scalar-valued f evaluated at x. f receives the probe
// tensor and a tape (null for the plain evaluations).
template <typename T>
double finite_difference_check(
    const std::function<TensorT<T>(const TensorT<T>&, GradTapeT<T>*)>& f, const TensorT<T>& x,
    T eps);

// True if the float conv path is backed by the BLAS library (informational).
bool blas_backend_active();

}  // namespace djsr
