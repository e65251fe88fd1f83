#include "djsr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <sstream>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#if defined(__unix__)
#include <dlfcn.h>
#endif

namespace djsr {

namespace {

std::atomic<int64_t> g_next_id{1};

int64_t fresh_id() {
    return g_next_id.fetch_add(1, std::memory_order_relaxed);
}

// Size-bucketed free lists of raw buffers. A training step churns through
// the same few dozen activation sizes, so reuse avoids both page faults and
// redundant zero fills.
template <typename T>
class BufferPool {
  public:
    T* acquire(size_t n) {
        if (n == 0) return nullptr;
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = free_.find(n);
            if (it != free_.end() && !it->second.empty()) {
                T* p = it->second.back();
                it->second.pop_back();
                cached_ -= n * sizeof(T);
                return p;
            }
        }
        return new T[n];
    }

    void release(T* p, size_t n) {
        if (!p) return;
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (cached_ + n * sizeof(T) <= kMaxCachedBytes) {
                free_[n].push_back(p);
                cached_ += n * sizeof(T);
                return;
            }
        }
        delete[] p;
    }

    static BufferPool& instance() {
        static BufferPool* pool = new BufferPool();  // leaked: outlives all tensors
        return *pool;
    }

  private:
    static constexpr size_t kMaxCachedBytes = size_t(3) << 30;
    std::mutex mu_;
    std::unordered_map<size_t, std::vector<T*>> free_;
    size_t cached_ = 0;
};

// Exponent-mask test, vectorizable and branch-free.
inline bool all_finite(const float* v, size_t n) {
    uint32_t bad = 0;
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, v + i, 4);
        bad |= static_cast<uint32_t>((bits & 0x7f800000u) == 0x7f800000u);
    }
    return bad == 0;
}

inline bool all_finite(const double* v, size_t n) {
    uint64_t bad = 0;
    for (size_t i = 0; i < n; ++i) {
        uint64_t bits;
        std::memcpy(&bits, v + i, 8);
        bad |= static_cast<uint64_t>((bits & 0x7ff0000000000000ull) == 0x7ff0000000000000ull);
    }
    return bad == 0;
}

template <typename T>
void ensure_finite(std::span<const T> v, const char* op) {
    constexpr size_t kParallelCutoff = 1u << 20;
    bool ok;
    if (v.size() < kParallelCutoff) {
        ok = all_finite(v.data(), v.size());
    } else {
        std::vector<uint8_t> parts(static_cast<size_t>(max_threads()), 1);
        parallel_chunks(static_cast<int64_t>(v.size()), [&](int64_t lo, int64_t hi, int worker) {
            parts[static_cast<size_t>(worker)] &=
                static_cast<uint8_t>(all_finite(v.data() + lo, static_cast<size_t>(hi - lo)));
        });
        ok = std::all_of(parts.begin(), parts.end(), [](uint8_t b) { return b != 0; });
    }
    if (!ok) throw NumericError(std::string(op) + " produced a non-finite value");
}

// Deterministic pairwise summation; independent of thread count.
template <typename T>
T pairwise_sum(std::span<const T> v) {
    std::vector<T> buf(v.begin(), v.end());
    size_t len = buf.size();
    if (len == 0) return T(0);
    while (len > 1) {
        size_t half = len / 2;
        for (size_t i = 0; i < half; ++i) buf[i] = buf[2 * i] + buf[2 * i + 1];
        if (len & 1) buf[half] = buf[len - 1];
        len = half + (len & 1);
    }
    return buf[0];
}

}  // namespace

std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
    return os.str();
}

// ===== TensorT =====

template <typename T>
TensorT<T>::Storage::~Storage() {
    BufferPool<T>::instance().release(data, size);
}

template <typename T>
TensorT<T> TensorT<T>::uninitialized(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
        throw DimensionError("negative tensor dimension " + to_string(s));
    const size_t n = static_cast<size_t>(s.numel());
    TensorT t;
    t.st_ = std::make_shared<Storage>(s, BufferPool<T>::instance().acquire(n), n);
    t.id_ = fresh_id();
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::zeros(const Shape& s) {
    return full(s, T(0));
}

template <typename T>
TensorT<T> TensorT<T>::full(const Shape& s, T value) {
    TensorT t = uninitialized(s);
    std::fill(t.st_->data, t.st_->data + t.st_->size, value);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_data(const Shape& s, std::vector<T> data) {
    if (static_cast<int64_t>(data.size()) != s.numel() || s.n < 0 || s.c < 0 || s.h < 0 ||
        s.w < 0)
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + to_string(s));
    TensorT t = uninitialized(s);
    std::memcpy(t.st_->data, data.data(), data.size() * sizeof(T));
    return t;
}

template <typename T>
T TensorT<T>::scalar() const {
    if (!defined() || numel() != 1) throw ContractError("scalar() requires a 1x1x1x1 tensor");
    return st_->data[0];
}

template <typename T>
TensorT<T> TensorT<T>::clone() const {
    TensorT t = uninitialized(st_->shape);
    std::memcpy(t.st_->data, st_->data, st_->size * sizeof(T));
    t.requires_grad_ = requires_grad_;
    return t;
}

// ===== GradTapeT =====

template <typename T>
void GradTapeT<T>::watch(const TensorT<T>& leaf) {
    if (!leaf.requires_grad()) throw ContractError("watch() requires requires_grad");
    track_leaf(leaf);
}

template <typename T>
void GradTapeT<T>::track_leaf(const TensorT<T>& t) {
    if (!produced_.count(t.id())) leaves_.emplace(t.id(), t.shape());
}

template <typename T>
bool GradTapeT<T>::tracked(const TensorT<T>& t) const {
    return t.requires_grad() || produced_.count(t.id()) || leaves_.count(t.id());
}

template <typename T>
void GradTapeT<T>::record(const std::vector<const TensorT<T>*>& inputs, const TensorT<T>& output,
                          std::function<void(GradTapeT&)> pull) {
    for (const TensorT<T>* in : inputs)
        if (in->requires_grad()) track_leaf(*in);
    produced_[output.id()] = true;
    records_.push_back(Record{output.id(), std::move(pull)});
}

template <typename T>
const TensorT<T>* GradTapeT<T>::grad_of(int64_t id) const {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
}

template <typename T>
void GradTapeT<T>::accumulate(int64_t id, const TensorT<T>& contribution) {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
        grads_.emplace(id, contribution);
        return;
    }
    if (!(it->second.shape() == contribution.shape()))
        throw DimensionError("gradient shape mismatch during accumulation");
    std::span<T> dst = it->second.mutable_values();
    std::span<const T> src = contribution.values();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
GradMapT<T> GradTapeT<T>::backward(const TensorT<T>& loss) {
    if (!loss.defined() || !(loss.shape() == Shape{1, 1, 1, 1}))
        throw ContractError("backward() requires a 1x1x1x1 loss tensor");
    if (!produced_.count(loss.id()) && !leaves_.count(loss.id()))
        throw ContractError("loss tensor is not connected to this tape");

    grads_.clear();
    grads_.emplace(loss.id(), TensorT<T>::full(Shape{1, 1, 1, 1}, T(1)));

    // Records are already topologically ordered by construction; one visit
    // each, in reverse. Intermediate gradients are released as soon as the
    // producing record has consumed them.
    for (auto rec = records_.rbegin(); rec != records_.rend(); ++rec) {
        auto it = grads_.find(rec->out_id);
        if (it == grads_.end()) continue;  // not reachable from the loss
        rec->pull(*this);
        if (!leaves_.count(rec->out_id)) grads_.erase(rec->out_id);
    }

    GradMapT<T> result;
    for (const auto& [id, shape] : leaves_) {
        auto it = grads_.find(id);
        if (it != grads_.end()) {
            ensure_finite<T>(it->second.values(), "backward");
            result.emplace(id, std::move(it->second));
        } else {
            result.emplace(id, TensorT<T>::zeros(shape));
        }
    }
    grads_.clear();
    return result;
}

// ===== BLAS backend (float conv path) =====
// OpenBLAS is loaded lazily via dlopen so the core type can be forced before
// its dispatch runs: virtualized CPUs often report an unknown model and fall
// back to a slow generic kernel even when AVX-512 is available. The library
// is pinned to one internal thread; all parallelism lives in our pool, which
// keeps results independent of DJSR_THREADS.

namespace {

constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

struct BlasBackend {
    using sgemm_fn = void (*)(int order, int transa, int transb, int m, int n, int k, float alpha,
                              const float* a, int lda, const float* b, int ldb, float beta,
                              float* c, int ldc);
    sgemm_fn sgemm = nullptr;
};

BlasBackend load_blas() {
    BlasBackend b;
#if defined(__unix__)
    if (const char* env = std::getenv("DJSR_BLAS"); env && std::string(env) == "0") return b;
#if defined(__x86_64__)
    if (!std::getenv("OPENBLAS_CORETYPE") && __builtin_cpu_supports("avx512f"))
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
#endif
    void* h = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
    if (!h) h = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
    if (!h) return b;
    b.sgemm = reinterpret_cast<BlasBackend::sgemm_fn>(dlsym(h, "cblas_sgemm"));
    if (!b.sgemm) return b;
    if (auto set_threads = reinterpret_cast<void (*)(int)>(dlsym(h, "openblas_set_num_threads")))
        set_threads(1);
#endif
    return b;
}

const BlasBackend& blas() {
    static BlasBackend b = load_blas();
    return b;
}

}  // namespace

bool blas_backend_active() {
    return blas().sgemm != nullptr;
}

// ===== Convolution kernels =====

namespace {

struct ConvGeom {
    int64_t n, ci, h, w;       // input
    int64_t co, kh, kw;        // kernel
    int64_t stride, pad;
    int64_t ho, wo;            // output
    int64_t k() const { return ci * kh * kw; }
    int64_t cols() const { return ho * wo; }
};

template <typename T>
ConvGeom conv_geometry(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                       int stride, int padding) {
    if (stride < 1) throw ArgumentError("conv2d stride must be positive");
    if (padding < 0) throw ArgumentError("conv2d padding must be non-negative");
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.c != ws.c)
        throw DimensionError("conv2d channel mismatch: input " + to_string(is) + " vs weight " +
                             to_string(ws));
    if (!(bias.shape() == Shape{1, ws.n, 1, 1}))
        throw DimensionError("conv2d bias must be (1," + std::to_string(ws.n) + ",1,1), got " +
                             to_string(bias.shape()));
    ConvGeom g{is.n, is.c, is.h, is.w, ws.n, ws.h, ws.w, stride, padding, 0, 0};
    if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw)
        throw DimensionError("conv2d kernel " + to_string(ws) + " larger than padded input " +
                             to_string(is));
    g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
    return g;
}

// --- portable loop kernels (also the only path for double) ---

template <typename T>
void conv_forward_loops(const T* in, const T* wt, const T* bs, T* out, const ConvGeom& g) {
    parallel_chunks(g.n * g.co, [&](int64_t lo, int64_t hi, int) {
        for (int64_t t = lo; t < hi; ++t) {
            int64_t s = t / g.co, co = t % g.co;
            const T* in_s = in + s * g.ci * g.h * g.w;
            T* plane = out + (s * g.co + co) * g.ho * g.wo;
            const T* wco = wt + co * g.ci * g.kh * g.kw;
            for (int64_t y = 0; y < g.ho; ++y) {
                for (int64_t x = 0; x < g.wo; ++x) {
                    T acc = bs[co];
                    for (int64_t c = 0; c < g.ci; ++c) {
                        const T* ip = in_s + c * g.h * g.w;
                        const T* wp = wco + c * g.kh * g.kw;
                        for (int64_t ky = 0; ky < g.kh; ++ky) {
                            int64_t iy = y * g.stride + ky - g.pad;
                            if (iy < 0 || iy >= g.h) continue;
                            for (int64_t kx = 0; kx < g.kw; ++kx) {
                                int64_t ix = x * g.stride + kx - g.pad;
                                if (ix < 0 || ix >= g.w) continue;
                                acc += ip[iy * g.w + ix] * wp[ky * g.kw + kx];
                            }
                        }
                    }
                    plane[y * g.wo + x] = acc;
                }
            }
        }
    });
}

template <typename T>
void conv_dinput_loops(const T* dout, const T* wt, T* din, const ConvGeom& g) {
    parallel_chunks(g.n * g.ci, [&](int64_t lo, int64_t hi, int) {
        for (int64_t t = lo; t < hi; ++t) {
            int64_t s = t / g.ci, c = t % g.ci;
            T* dplane = din + (s * g.ci + c) * g.h * g.w;
            for (int64_t co = 0; co < g.co; ++co) {
                const T* gout = dout + (s * g.co + co) * g.ho * g.wo;
                const T* wp = wt + (co * g.ci + c) * g.kh * g.kw;
                for (int64_t y = 0; y < g.ho; ++y) {
                    for (int64_t ky = 0; ky < g.kh; ++ky) {
                        int64_t iy = y * g.stride + ky - g.pad;
                        if (iy < 0 || iy >= g.h) continue;
                        for (int64_t kx = 0; kx < g.kw; ++kx) {
                            T wv = wp[ky * g.kw + kx];
                            for (int64_t x = 0; x < g.wo; ++x) {
                                int64_t ix = x * g.stride + kx - g.pad;
                                if (ix < 0 || ix >= g.w) continue;
                                dplane[iy * g.w + ix] += wv * gout[y * g.wo + x];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void conv_dweight_loops(const T* in, const T* dout, T* dw, const ConvGeom& g) {
    parallel_chunks(g.co * g.ci, [&](int64_t lo, int64_t hi, int) {
        for (int64_t t = lo; t < hi; ++t) {
            int64_t co = t / g.ci, c = t % g.ci;
            T* wp = dw + (co * g.ci + c) * g.kh * g.kw;
            for (int64_t ky = 0; ky < g.kh; ++ky) {
                for (int64_t kx = 0; kx < g.kw; ++kx) {
                    T acc = 0;
                    for (int64_t s = 0; s < g.n; ++s) {
                        const T* ip = in + (s * g.ci + c) * g.h * g.w;
                        const T* gout = dout + (s * g.co + co) * g.ho * g.wo;
                        for (int64_t y = 0; y < g.ho; ++y) {
                            int64_t iy = y * g.stride + ky - g.pad;
                            if (iy < 0 || iy >= g.h) continue;
                            for (int64_t x = 0; x < g.wo; ++x) {
                                int64_t ix = x * g.stride + kx - g.pad;
                                if (ix < 0 || ix >= g.w) continue;
                                acc += ip[iy * g.w + ix] * gout[y * g.wo + x];
                            }
                        }
                    }
                    wp[ky * g.kw + kx] = acc;
                }
            }
        }
    });
}

template <typename T>
void conv_dbias(const T* dout, T* db, const ConvGeom& g) {
    for (int64_t co = 0; co < g.co; ++co) {
        T acc = 0;
        for (int64_t s = 0; s < g.n; ++s) {
            const T* gout = dout + (s * g.co + co) * g.ho * g.wo;
            for (int64_t i = 0; i < g.ho * g.wo; ++i) acc += gout[i];
        }
        db[co] = acc;
    }
}

// --- im2col + GEMM path (float) ---

void im2col(const float* in, float* col, const ConvGeom& g) {
    const int64_t cols = g.cols();
    for (int64_t c = 0; c < g.ci; ++c) {
        const float* src = in + c * g.h * g.w;
        for (int64_t ky = 0; ky < g.kh; ++ky) {
            for (int64_t kx = 0; kx < g.kw; ++kx) {
                float* dst = col + ((c * g.kh + ky) * g.kw + kx) * cols;
                for (int64_t y = 0; y < g.ho; ++y) {
                    int64_t iy = y * g.stride + ky - g.pad;
                    float* drow = dst + y * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(drow, drow + g.wo, 0.0f);
                        continue;
                    }
                    const float* srow = src + iy * g.w;
                    if (g.stride == 1) {
                        int64_t x0 = std::max<int64_t>(0, g.pad - kx);
                        int64_t x1 = std::min<int64_t>(g.wo, g.w + g.pad - kx);
                        std::fill(drow, drow + x0, 0.0f);
                        if (x1 > x0)
                            std::memcpy(drow + x0, srow + (x0 + kx - g.pad),
                                        static_cast<size_t>(x1 - x0) * sizeof(float));
                        std::fill(drow + std::max(x0, x1), drow + g.wo, 0.0f);
                    } else {
                        for (int64_t x = 0; x < g.wo; ++x) {
                            int64_t ix = x * g.stride + kx - g.pad;
                            drow[x] = (ix >= 0 && ix < g.w) ? srow[ix] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const float* col, float* din, const ConvGeom& g) {
    const int64_t cols = g.cols();
    for (int64_t c = 0; c < g.ci; ++c) {
        float* dst = din + c * g.h * g.w;
        for (int64_t ky = 0; ky < g.kh; ++ky) {
            for (int64_t kx = 0; kx < g.kw; ++kx) {
                const float* src = col + ((c * g.kh + ky) * g.kw + kx) * cols;
                for (int64_t y = 0; y < g.ho; ++y) {
                    int64_t iy = y * g.stride + ky - g.pad;
                    if (iy < 0 || iy >= g.h) continue;
                    const float* srow = src + y * g.wo;
                    float* drow = dst + iy * g.w;
                    if (g.stride == 1) {
                        int64_t x0 = std::max<int64_t>(0, g.pad - kx);
                        int64_t x1 = std::min<int64_t>(g.wo, g.w + g.pad - kx);
                        for (int64_t x = x0; x < x1; ++x) drow[x + kx - g.pad] += srow[x];
                    } else {
                        for (int64_t x = 0; x < g.wo; ++x) {
                            int64_t ix = x * g.stride + kx - g.pad;
                            if (ix >= 0 && ix < g.w) drow[ix] += srow[x];
                        }
                    }
                }
            }
        }
    }
}

void conv_forward_gemm(const float* in, const float* wt, const float* bs, float* out,
                       const ConvGeom& g) {
    const int64_t K = g.k(), N = g.cols();
    parallel_chunks(g.n, [&](int64_t lo, int64_t hi, int worker) {
        std::vector<float>& col = worker_scratch(worker);
        col.resize(static_cast<size_t>(K * N));
        for (int64_t s = lo; s < hi; ++s) {
            im2col(in + s * g.ci * g.h * g.w, col.data(), g);
            float* oplane = out + s * g.co * N;
            blas().sgemm(kRowMajor, kNoTrans, kNoTrans, static_cast<int>(g.co),
                         static_cast<int>(N), static_cast<int>(K), 1.0f, wt, static_cast<int>(K),
                         col.data(), static_cast<int>(N), 0.0f, oplane, static_cast<int>(N));
            for (int64_t co = 0; co < g.co; ++co) {
                float b = bs[co];
                float* row = oplane + co * N;
                for (int64_t i = 0; i < N; ++i) row[i] += b;
            }
        }
    });
}

void conv_backward_gemm(const float* in, const float* wt, const float* dout, float* din,
                        float* dw, const ConvGeom& g) {
    const int64_t K = g.k(), N = g.cols();
    std::vector<float> dw_per_sample;
    if (dw) dw_per_sample.assign(static_cast<size_t>(g.n * g.co * K), 0.0f);
    parallel_chunks(g.n, [&](int64_t lo, int64_t hi, int worker) {
        std::vector<float>& scratch = worker_scratch(worker);
        scratch.resize(static_cast<size_t>(2 * K * N));
        float* col = scratch.data();
        float* dcol = scratch.data() + K * N;
        for (int64_t s = lo; s < hi; ++s) {
            const float* gout = dout + s * g.co * N;
            if (dw) {
                im2col(in + s * g.ci * g.h * g.w, col, g);
                blas().sgemm(kRowMajor, kNoTrans, kTrans, static_cast<int>(g.co),
                             static_cast<int>(K), static_cast<int>(N), 1.0f, gout,
                             static_cast<int>(N), col, static_cast<int>(N), 0.0f,
                             dw_per_sample.data() + s * g.co * K, static_cast<int>(K));
            }
            if (din) {
                blas().sgemm(kRowMajor, kTrans, kNoTrans, static_cast<int>(K),
                             static_cast<int>(N), static_cast<int>(g.co), 1.0f, wt,
                             static_cast<int>(K), gout, static_cast<int>(N), 0.0f, dcol,
                             static_cast<int>(N));
                col2im_add(dcol, din + s * g.ci * g.h * g.w, g);
            }
        }
    });
    if (dw) {
        // Fixed sample-order reduction keeps the result thread-count independent.
        for (int64_t s = 0; s < g.n; ++s) {
            const float* src = dw_per_sample.data() + s * g.co * K;
            for (int64_t i = 0; i < g.co * K; ++i) dw[i] += src[i];
        }
    }
}

// --- padded same-size path (stride 1, odd kernel, pad = k/2) ---
// The input plane is copied once into a zero-framed buffer; each kernel tap
// then contributes one accumulating GEMM over a flat shifted view. Junk
// columns produced where a flat row crosses the frame land in frame
// positions of the work buffer and are never copied out. This removes the
// im2col traffic entirely and keeps the per-sample working set cache-sized.

bool use_padded_path(const ConvGeom& g) {
    return g.stride == 1 && g.kh == g.kw && g.kh % 2 == 1 && g.pad == g.kh / 2 && g.kh > 1;
}

// C(M x N, ldc = N) = sum over taps of A_t(M x K, packed) * B_t(K x N, rows
// strided by ldb). All taps accumulate in registers before one store, with a
// fixed (tap, k) order per element regardless of lane position.
void gemm_taps(int64_t M, int64_t K, int64_t N, int64_t taps, const float* A_packs,
               const float* const* B_bases, int64_t ldb, float* C) {
#if defined(__AVX512F__)
    constexpr int64_t kRows = 4;  // 8 accumulators + 2 B vectors stay in registers
    for (int64_t m0 = 0; m0 < M; m0 += kRows) {
        const int64_t mr = std::min<int64_t>(kRows, M - m0);
        for (int64_t n0 = 0; n0 < N; n0 += 32) {
            const int64_t nr = std::min<int64_t>(32, N - n0);
            const __mmask16 mask0 = nr >= 16 ? 0xffff : static_cast<__mmask16>((1u << nr) - 1);
            const __mmask16 mask1 =
                nr >= 32 ? 0xffff
                         : (nr > 16 ? static_cast<__mmask16>((1u << (nr - 16)) - 1) : 0);
            __m512 acc[kRows][2];
            for (int64_t r = 0; r < kRows; ++r) acc[r][0] = acc[r][1] = _mm512_setzero_ps();
            for (int64_t t = 0; t < taps; ++t) {
                const float* A = A_packs + t * M * K + m0 * K;
                const float* B = B_bases[t] + n0;
                if (mr == kRows) {
                    for (int64_t k = 0; k < K; ++k) {
                        const float* brow = B + k * ldb;
                        const __m512 b0 = _mm512_maskz_loadu_ps(mask0, brow);
                        const __m512 b1 = mask1 ? _mm512_maskz_loadu_ps(mask1, brow + 16)
                                                : _mm512_setzero_ps();
                        for (int64_t r = 0; r < kRows; ++r) {
                            const __m512 a = _mm512_set1_ps(A[r * K + k]);
                            acc[r][0] = _mm512_fmadd_ps(a, b0, acc[r][0]);
                            acc[r][1] = _mm512_fmadd_ps(a, b1, acc[r][1]);
                        }
                    }
                } else {
                    for (int64_t k = 0; k < K; ++k) {
                        const float* brow = B + k * ldb;
                        const __m512 b0 = _mm512_maskz_loadu_ps(mask0, brow);
                        const __m512 b1 = mask1 ? _mm512_maskz_loadu_ps(mask1, brow + 16)
                                                : _mm512_setzero_ps();
                        for (int64_t r = 0; r < mr; ++r) {
                            const __m512 a = _mm512_set1_ps(A[r * K + k]);
                            acc[r][0] = _mm512_fmadd_ps(a, b0, acc[r][0]);
                            acc[r][1] = _mm512_fmadd_ps(a, b1, acc[r][1]);
                        }
                    }
                }
            }
            for (int64_t r = 0; r < mr; ++r) {
                float* c = C + (m0 + r) * N + n0;
                _mm512_mask_storeu_ps(c, mask0, acc[r][0]);
                if (mask1) _mm512_mask_storeu_ps(c + 16, mask1, acc[r][1]);
            }
        }
    }
#else
    for (int64_t t = 0; t < taps; ++t)
        blas().sgemm(kRowMajor, kNoTrans, kNoTrans, static_cast<int>(M), static_cast<int>(N),
                     static_cast<int>(K), 1.0f, A_packs + t * M * K, static_cast<int>(K),
                     B_bases[t], static_cast<int>(ldb), t == 0 ? 0.0f : 1.0f, C,
                     static_cast<int>(N));
#endif
}

struct PaddedDims {
    int64_t p, W, Hp, flat;  // pad, padded width, padded height, flat GEMM span
};

PaddedDims padded_dims(const ConvGeom& g) {
    const int64_t p = g.pad;
    const int64_t W = g.w + 2 * p;
    return PaddedDims{p, W, g.h + 2 * p, (g.h - 1) * W + g.w};
}

// plane (c x h x w) -> zero-framed (c x Hp x W) with tail slop for shifted
// reads; only the frame is cleared, interior rows are copied over.
void pad_plane(const float* src, float* dst, int64_t c, int64_t h, int64_t w,
               const PaddedDims& d) {
    for (int64_t ci = 0; ci < c; ++ci) {
        float* plane = dst + ci * d.Hp * d.W;
        std::fill(plane, plane + d.p * d.W, 0.0f);  // top band
        for (int64_t y = 0; y < h; ++y) {
            float* row = plane + (y + d.p) * d.W;
            std::fill(row, row + d.p, 0.0f);
            std::memcpy(row + d.p, src + (ci * h + y) * w, static_cast<size_t>(w) * sizeof(float));
            std::fill(row + d.p + w, row + d.W, 0.0f);
        }
        std::fill(plane + (d.p + h) * d.W, plane + d.Hp * d.W, 0.0f);  // bottom band
    }
    std::fill(dst + c * d.Hp * d.W, dst + c * d.Hp * d.W + 2 * d.W, 0.0f);  // slop
}

// pad_cache, when non-null, receives the padded input planes of every
// sample for reuse by the weight-gradient pass.
void conv_forward_padded(const float* in, const float* wt, const float* bs, float* out,
                         const ConvGeom& g, TensorT<float>* pad_cache) {
    const PaddedDims d = padded_dims(g);
    const int64_t pad_plane_sz = d.Hp * d.W;
    const int64_t sample_pad = g.ci * pad_plane_sz + 2 * d.W;
    if (pad_cache)
        *pad_cache = TensorT<float>::uninitialized(Shape{1, 1, 1, g.n * sample_pad});
    const int64_t work_sz = g.co * ((g.h - 1) * d.W + d.W);
    const int64_t kk = g.kh * g.kw;
    std::vector<float> a_packs(static_cast<size_t>(kk) * g.co * g.ci);
    for (int64_t ky = 0; ky < g.kh; ++ky)
        for (int64_t kx = 0; kx < g.kw; ++kx) {
            float* slice = a_packs.data() + (ky * g.kw + kx) * g.co * g.ci;
            for (int64_t co = 0; co < g.co; ++co)
                for (int64_t c = 0; c < g.ci; ++c)
                    slice[co * g.ci + c] = wt[((co * g.ci + c) * g.kh + ky) * g.kw + kx];
        }
    parallel_chunks(g.n, [&](int64_t lo, int64_t hi, int worker) {
        std::vector<float>& scratch = worker_scratch(worker);
        scratch.resize(static_cast<size_t>(sample_pad + work_sz + 64));
        float* work = scratch.data() + sample_pad;
        std::vector<const float*> bases(static_cast<size_t>(kk));
        for (int64_t s = lo; s < hi; ++s) {
            float* P = pad_cache ? pad_cache->mutable_values().data() + s * sample_pad
                                 : scratch.data();
            pad_plane(in + s * g.ci * g.h * g.w, P, g.ci, g.h, g.w, d);
            for (int64_t ky = 0; ky < g.kh; ++ky)
                for (int64_t kx = 0; kx < g.kw; ++kx)
                    bases[static_cast<size_t>(ky * g.kw + kx)] = P + ky * d.W + kx;
            gemm_taps(g.co, g.ci, d.flat, kk, a_packs.data(), bases.data(), pad_plane_sz, work);
            float* oplane = out + s * g.co * g.h * g.w;
            for (int64_t co = 0; co < g.co; ++co) {
                const float b = bs[co];
                for (int64_t y = 0; y < g.h; ++y) {
                    const float* src = work + co * d.flat + y * d.W;
                    float* dst = oplane + (co * g.h + y) * g.w;
                    for (int64_t x = 0; x < g.w; ++x) dst[x] = src[x] + b;
                }
            }
        }
    });
}

void conv_backward_padded(const float* in, const float* wt, const float* dout, float* din,
                          float* dw, const ConvGeom& g, const TensorT<float>* pad_cache) {
    const PaddedDims d = padded_dims(g);
    const int64_t pad_plane_sz = d.Hp * d.W;
    const int64_t sample_pad = g.ci * pad_plane_sz + 2 * d.W;
    const int64_t kk = g.kh * g.kw;
    std::vector<float> dw_per_sample;
    if (dw) dw_per_sample.assign(static_cast<size_t>(g.n) * g.co * g.ci * kk, 0.0f);

    // flipped, transposed tap slices for the input gradient
    std::vector<float> a_flip(static_cast<size_t>(kk) * g.ci * g.co);
    for (int64_t ky = 0; ky < g.kh; ++ky)
        for (int64_t kx = 0; kx < g.kw; ++kx) {
            float* slice = a_flip.data() + (ky * g.kw + kx) * g.ci * g.co;
            for (int64_t c = 0; c < g.ci; ++c)
                for (int64_t co = 0; co < g.co; ++co)
                    slice[c * g.co + co] =
                        wt[((co * g.ci + c) * g.kh + (g.kh - 1 - ky)) * g.kw + (g.kw - 1 - kx)];
        }

    parallel_chunks(g.n, [&](int64_t lo, int64_t hi, int worker) {
        std::vector<float>& scratch = worker_scratch(worker);
        const int64_t gpad_sz = g.co * pad_plane_sz + 2 * d.W;
        const int64_t inpad_sz = (dw && !pad_cache) ? sample_pad : 0;
        const int64_t work_sz = din ? g.ci * ((g.h - 1) * d.W + d.W) : 0;
        scratch.resize(static_cast<size_t>(gpad_sz + inpad_sz + work_sz + 64));
        float* Gp = scratch.data();
        float* Pscratch = Gp + gpad_sz;
        float* work = Pscratch + inpad_sz;
        for (int64_t s = lo; s < hi; ++s) {
            pad_plane(dout + s * g.co * g.h * g.w, Gp, g.co, g.h, g.w, d);
            if (dw) {
                const float* P;
                if (pad_cache) {
                    P = pad_cache->values().data() + s * sample_pad;
                } else {
                    pad_plane(in + s * g.ci * g.h * g.w, Pscratch, g.ci, g.h, g.w, d);
                    P = Pscratch;
                }
                float* dws = dw_per_sample.data() + s * g.co * g.ci * kk;
                for (int64_t ky = 0; ky < g.kh; ++ky)
                    for (int64_t kx = 0; kx < g.kw; ++kx)
                        // dW_kk(co x ci) = dout_padded interior . shifted input^T
                        blas().sgemm(kRowMajor, kNoTrans, kTrans, static_cast<int>(g.co),
                                     static_cast<int>(g.ci), static_cast<int>(d.flat), 1.0f,
                                     Gp + d.p * d.W + d.p, static_cast<int>(pad_plane_sz),
                                     P + ky * d.W + kx, static_cast<int>(pad_plane_sz), 0.0f,
                                     dws + (ky * g.kw + kx) * g.co * g.ci,
                                     static_cast<int>(g.ci));
            }
            if (din) {
                std::vector<const float*> bases(static_cast<size_t>(kk));
                for (int64_t ky = 0; ky < g.kh; ++ky)
                    for (int64_t kx = 0; kx < g.kw; ++kx)
                        bases[static_cast<size_t>(ky * g.kw + kx)] = Gp + ky * d.W + kx;
                gemm_taps(g.ci, g.co, d.flat, kk, a_flip.data(), bases.data(), pad_plane_sz,
                          work);
                float* dplane = din + s * g.ci * g.h * g.w;
                for (int64_t c = 0; c < g.ci; ++c)
                    for (int64_t y = 0; y < g.h; ++y)
                        std::memcpy(dplane + (c * g.h + y) * g.w, work + c * d.flat + y * d.W,
                                    static_cast<size_t>(g.w) * sizeof(float));
            }
        }
    });

    if (dw) {
        // fixed sample order, then tap-slice scatter into (co,ci,ky,kx)
        for (int64_t s = 0; s < g.n; ++s) {
            const float* dws = dw_per_sample.data() + s * g.co * g.ci * kk;
            for (int64_t ky = 0; ky < g.kh; ++ky)
                for (int64_t kx = 0; kx < g.kw; ++kx) {
                    const float* slice = dws + (ky * g.kw + kx) * g.co * g.ci;
                    for (int64_t co = 0; co < g.co; ++co)
                        for (int64_t c = 0; c < g.ci; ++c)
                            dw[((co * g.ci + c) * g.kh + ky) * g.kw + kx] +=
                                slice[co * g.ci + c];
                }
        }
    }
}

}  // namespace

// ===== Public ops =====

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride, int padding, GradTapeT<T>* tape) {
    ConvGeom g = conv_geometry(input, weight, bias, stride, padding);
    TensorT<T> out = TensorT<T>::uninitialized(Shape{g.n, g.co, g.ho, g.wo});
    const bool tracked =
        tape && (tape->tracked(input) || tape->tracked(weight) || tape->tracked(bias));
    // Padded input planes built by the forward pass are kept for the
    // weight-gradient pass when a tape will need them.
    std::shared_ptr<TensorT<float>> pad_cache;
    if constexpr (std::is_same_v<T, float>) {
        if (blas().sgemm && use_padded_path(g)) {
            if (tracked && tape->tracked(weight))
                pad_cache = std::make_shared<TensorT<float>>();
            conv_forward_padded(input.values().data(), weight.values().data(),
                                bias.values().data(), out.mutable_values().data(), g,
                                pad_cache.get());
        } else if (blas().sgemm) {
            conv_forward_gemm(input.values().data(), weight.values().data(), bias.values().data(),
                              out.mutable_values().data(), g);
        } else {
            conv_forward_loops(input.values().data(), weight.values().data(),
                               bias.values().data(), out.mutable_values().data(), g);
        }
    } else {
        conv_forward_loops(input.values().data(), weight.values().data(), bias.values().data(),
                           out.mutable_values().data(), g);
    }
    ensure_finite<T>(out.values(), "conv2d");

    if (tracked) {
        bool need_in = tape->tracked(input);
        bool need_w = tape->tracked(weight);
        bool need_b = tape->tracked(bias);
        TensorT<T> in_saved = input, w_saved = weight;
        int64_t in_id = input.id(), w_id = weight.id(), b_id = bias.id(), out_id = out.id();
        tape->record(
            {&input, &weight, &bias}, out,
            [=](GradTapeT<T>& t) {
                const TensorT<T>* gout = t.grad_of(out_id);
                ConvGeom geo = g;
                const bool padded = use_padded_path(geo);
                TensorT<T> din, dw;
                if (need_in)
                    din = (std::is_same_v<T, float> && blas().sgemm && padded)
                              ? TensorT<T>::uninitialized(in_saved.shape())
                              : TensorT<T>::zeros(in_saved.shape());
                if (need_w) dw = TensorT<T>::zeros(w_saved.shape());
                if (need_in || need_w) {
                    if constexpr (std::is_same_v<T, float>) {
                        if (blas().sgemm && padded) {
                            conv_backward_padded(in_saved.values().data(),
                                                 w_saved.values().data(), gout->values().data(),
                                                 need_in ? din.mutable_values().data() : nullptr,
                                                 need_w ? dw.mutable_values().data() : nullptr,
                                                 geo, pad_cache.get());
                        } else if (blas().sgemm) {
                            conv_backward_gemm(in_saved.values().data(), w_saved.values().data(),
                                               gout->values().data(),
                                               need_in ? din.mutable_values().data() : nullptr,
                                               need_w ? dw.mutable_values().data() : nullptr, geo);
                        } else {
                            if (need_in)
                                conv_dinput_loops(gout->values().data(), w_saved.values().data(),
                                                  din.mutable_values().data(), geo);
                            if (need_w)
                                conv_dweight_loops(in_saved.values().data(),
                                                   gout->values().data(),
                                                   dw.mutable_values().data(), geo);
                        }
                    } else {
                        if (need_in)
                            conv_dinput_loops(gout->values().data(), w_saved.values().data(),
                                              din.mutable_values().data(), geo);
                        if (need_w)
                            conv_dweight_loops(in_saved.values().data(), gout->values().data(),
                                               dw.mutable_values().data(), geo);
                    }
                }
                if (need_in) t.accumulate(in_id, din);
                if (need_w) t.accumulate(w_id, dw);
                if (need_b) {
                    TensorT<T> db = TensorT<T>::zeros(Shape{1, geo.co, 1, 1});
                    conv_dbias(gout->values().data(), db.mutable_values().data(), geo);
                    t.accumulate(b_id, db);
                }
            });
    }
    return out;
}

// Shuffle output (c,y,x) pulls from input channel
// (C/s)*(y%s) + (C/s^2)*(x%s) + c at (y/s, x/s).
template <typename T>
TensorT<T> pixel_shuffle(const TensorT<T>& input, int s, GradTapeT<T>* tape) {
    if (s < 1) throw ArgumentError("pixel_shuffle factor must be positive");
    const Shape& is = input.shape();
    if (is.c % (static_cast<int64_t>(s) * s) != 0)
        throw DimensionError("pixel_shuffle: channels " + std::to_string(is.c) +
                             " not divisible by s^2 = " + std::to_string(s * s));
    const int64_t ss = static_cast<int64_t>(s);
    const int64_t co = is.c / (ss * ss), ho = is.h * ss, wo = is.w * ss;
    const int64_t cs = is.c / ss, css = is.c / (ss * ss);
    TensorT<T> out = TensorT<T>::uninitialized(Shape{is.n, co, ho, wo});
    const T* in = input.values().data();
    T* o = out.mutable_values().data();
    parallel_chunks(is.n * co, [&](int64_t lo, int64_t hi, int) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t b = t / co, c = t % co;
            const T* ib = in + b * is.c * is.h * is.w;
            T* ob = o + b * co * ho * wo;
            for (int64_t y = 0; y < ho; ++y) {
                T* orow = ob + (c * ho + y) * wo;
                const int64_t cy = cs * (y % ss) + c;
                const int64_t iy = y / ss;
                for (int64_t x = 0; x < wo; ++x) {
                    const int64_t cin = cy + css * (x % ss);
                    orow[x] = ib[(cin * is.h + iy) * is.w + x / ss];
                }
            }
        }
    });
    ensure_finite<T>(out.values(), "pixel_shuffle");

    if (tape && tape->tracked(input)) {
        int64_t in_id = input.id(), out_id = out.id();
        int factor = s;
        tape->record({&input}, out, [=](GradTapeT<T>& t) {
            t.accumulate(in_id, pixel_unshuffle(*t.grad_of(out_id), factor));
        });
    }
    return out;
}

template <typename T>
TensorT<T> pixel_unshuffle(const TensorT<T>& input, int s, GradTapeT<T>* tape) {
    if (s < 1) throw ArgumentError("pixel_unshuffle factor must be positive");
    const Shape& is = input.shape();
    const int64_t ss = static_cast<int64_t>(s);
    if (is.h % ss != 0 || is.w % ss != 0)
        throw DimensionError("pixel_unshuffle: dims " + to_string(is) + " not divisible by " +
                             std::to_string(s));
    const int64_t co = is.c * ss * ss, ho = is.h / ss, wo = is.w / ss;
    const int64_t cs = co / ss, css = co / (ss * ss);
    TensorT<T> out = TensorT<T>::uninitialized(Shape{is.n, co, ho, wo});
    const T* in = input.values().data();
    T* o = out.mutable_values().data();
    parallel_chunks(is.n * co, [&](int64_t lo, int64_t hi, int) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t b = t / co, q = t % co;
            const T* ib = in + b * is.c * is.h * is.w;
            T* ob = o + b * co * ho * wo;
            const int64_t a = q / cs;       // y offset within the s x s cell
            const int64_t rem = q % cs;
            const int64_t bx = rem / css;   // x offset
            const int64_t c = rem % css;
            for (int64_t iy = 0; iy < ho; ++iy) {
                T* orow = ob + (q * ho + iy) * wo;
                const T* irow = ib + (c * is.h + iy * ss + a) * is.w;
                for (int64_t ix = 0; ix < wo; ++ix) orow[ix] = irow[ix * ss + bx];
            }
        }
    });
    ensure_finite<T>(out.values(), "pixel_unshuffle");

    if (tape && tape->tracked(input)) {
        int64_t in_id = input.id(), out_id = out.id();
        int factor = s;
        tape->record({&input}, out, [=](GradTapeT<T>& t) {
            t.accumulate(in_id, pixel_shuffle(*t.grad_of(out_id), factor));
        });
    }
    return out;
}

template <typename T>
TensorT<T> prelu(const TensorT<T>& input, const TensorT<T>& alpha, GradTapeT<T>* tape) {
    const Shape& is = input.shape();
    if (!(alpha.shape() == Shape{1, is.c, 1, 1}))
        throw DimensionError("prelu alpha must be (1," + std::to_string(is.c) + ",1,1), got " +
                             to_string(alpha.shape()));
    TensorT<T> out = TensorT<T>::uninitialized(is);
    const T* in = input.values().data();
    const T* al = alpha.values().data();
    T* o = out.mutable_values().data();
    const int64_t plane = is.h * is.w;
    parallel_chunks(is.n * is.c, [&](int64_t lo, int64_t hi, int) {
        for (int64_t t = lo; t < hi; ++t) {
            const T a = al[t % is.c];
            const T* ip = in + t * plane;
            T* op = o + t * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const T x = ip[i];
                op[i] = x >= T(0) ? x : a * x;
            }
        }
    });
    ensure_finite<T>(out.values(), "prelu");

    if (tape && (tape->tracked(input) || tape->tracked(alpha))) {
        bool need_in = tape->tracked(input);
        bool need_a = tape->tracked(alpha);
        TensorT<T> in_saved = input, a_saved = alpha;
        int64_t in_id = input.id(), a_id = alpha.id(), out_id = out.id();
        tape->record({&input, &alpha}, out, [=](GradTapeT<T>& t) {
            const T* gout = t.grad_of(out_id)->values().data();
            const Shape& s = in_saved.shape();
            const int64_t pl = s.h * s.w;
            const T* x = in_saved.values().data();
            const T* a = a_saved.values().data();
            if (need_in) {
                TensorT<T> din = TensorT<T>::uninitialized(s);
                T* d = din.mutable_values().data();
                parallel_chunks(s.n * s.c, [&](int64_t lo, int64_t hi, int) {
                    for (int64_t tc = lo; tc < hi; ++tc) {
                        const T ac = a[tc % s.c];
                        const int64_t off = tc * pl;
                        for (int64_t i = 0; i < pl; ++i)
                            d[off + i] = gout[off + i] * (x[off + i] >= T(0) ? T(1) : ac);
                    }
                });
                t.accumulate(in_id, din);
            }
            if (need_a) {
                TensorT<T> da = TensorT<T>::zeros(Shape{1, s.c, 1, 1});
                T* d = da.mutable_values().data();
                for (int64_t c = 0; c < s.c; ++c) {
                    T acc = 0;
                    for (int64_t b = 0; b < s.n; ++b) {
                        const int64_t off = (b * s.c + c) * pl;
                        for (int64_t i = 0; i < pl; ++i)
                            if (x[off + i] < T(0)) acc += x[off + i] * gout[off + i];
                    }
                    d[c] = acc;
                }
                t.accumulate(a_id, da);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b, GradTapeT<T>* tape) {
    if (!(a.shape() == b.shape()))
        throw DimensionError("add shape mismatch: " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    TensorT<T> out = TensorT<T>::uninitialized(a.shape());
    std::span<const T> av = a.values(), bv = b.values();
    std::span<T> ov = out.mutable_values();
    parallel_chunks(static_cast<int64_t>(ov.size()), [&](int64_t lo, int64_t hi, int) {
        for (int64_t i = lo; i < hi; ++i) ov[i] = av[i] + bv[i];
    });
    ensure_finite<T>(out.values(), "add");

    if (tape && (tape->tracked(a) || tape->tracked(b))) {
        bool need_a = tape->tracked(a), need_b = tape->tracked(b);
        int64_t a_id = a.id(), b_id = b.id(), out_id = out.id();
        tape->record({&a, &b}, out, [=](GradTapeT<T>& t) {
            if (need_a) t.accumulate(a_id, *t.grad_of(out_id));
            if (need_b) t.accumulate(b_id, *t.grad_of(out_id));
        });
    }
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b, GradTapeT<T>* tape) {
    if (!(a.shape() == b.shape()))
        throw DimensionError("mul shape mismatch: " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    TensorT<T> out = TensorT<T>::uninitialized(a.shape());
    std::span<const T> av = a.values(), bv = b.values();
    std::span<T> ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    ensure_finite<T>(out.values(), "mul");

    if (tape && (tape->tracked(a) || tape->tracked(b))) {
        bool need_a = tape->tracked(a), need_b = tape->tracked(b);
        TensorT<T> a_saved = a, b_saved = b;
        int64_t a_id = a.id(), b_id = b.id(), out_id = out.id();
        tape->record({&a, &b}, out, [=](GradTapeT<T>& t) {
            std::span<const T> g = t.grad_of(out_id)->values();
            if (need_a) {
                TensorT<T> da = TensorT<T>::uninitialized(a_saved.shape());
                std::span<T> d = da.mutable_values();
                std::span<const T> bv2 = b_saved.values();
                for (size_t i = 0; i < d.size(); ++i) d[i] = g[i] * bv2[i];
                t.accumulate(a_id, da);
            }
            if (need_b) {
                TensorT<T> db = TensorT<T>::uninitialized(b_saved.shape());
                std::span<T> d = db.mutable_values();
                std::span<const T> av2 = a_saved.values();
                for (size_t i = 0; i < d.size(); ++i) d[i] = g[i] * av2[i];
                t.accumulate(b_id, db);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T k, GradTapeT<T>* tape) {
    TensorT<T> out = TensorT<T>::uninitialized(a.shape());
    std::span<const T> av = a.values();
    std::span<T> ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * k;
    ensure_finite<T>(out.values(), "scale");

    if (tape && tape->tracked(a)) {
        int64_t a_id = a.id(), out_id = out.id();
        Shape sh = a.shape();
        tape->record({&a}, out, [=](GradTapeT<T>& t) {
            std::span<const T> g = t.grad_of(out_id)->values();
            TensorT<T> da = TensorT<T>::uninitialized(sh);
            std::span<T> d = da.mutable_values();
            for (size_t i = 0; i < d.size(); ++i) d[i] = g[i] * k;
            t.accumulate(a_id, da);
        });
    }
    return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a, GradTapeT<T>* tape) {
    TensorT<T> out = TensorT<T>::full(Shape{1, 1, 1, 1}, pairwise_sum<T>(a.values()));
    ensure_finite<T>(out.values(), "sum");

    if (tape && tape->tracked(a)) {
        int64_t a_id = a.id(), out_id = out.id();
        Shape sh = a.shape();
        tape->record({&a}, out, [=](GradTapeT<T>& t) {
            T g = t.grad_of(out_id)->values()[0];
            t.accumulate(a_id, TensorT<T>::full(sh, g));
        });
    }
    return out;
}

template <typename T>
double finite_difference_check(
    const std::function<TensorT<T>(const TensorT<T>&, GradTapeT<T>*)>& f, const TensorT<T>& x,
    T eps) {
    if (!(eps > T(0))) throw ArgumentError("finite_difference_check eps must be positive");
    TensorT<T> probe = x.clone();
    probe.set_requires_grad(true);
    GradTapeT<T> tape;
    tape.watch(probe);
    TensorT<T> loss = f(probe, &tape);
    if (loss.numel() != 1) throw ContractError("finite_difference_check: f must return a scalar");
    GradMapT<T> grads = tape.backward(loss);
    const TensorT<T>& analytic = grads.at(probe.id());

    double worst = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        TensorT<T> xp = x.clone();
        xp.mutable_values()[static_cast<size_t>(i)] += eps;
        TensorT<T> xm = x.clone();
        xm.mutable_values()[static_cast<size_t>(i)] -= eps;
        double fp = static_cast<double>(f(xp, nullptr).scalar());
        double fm = static_cast<double>(f(xm, nullptr).scalar());
        double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
        double a = static_cast<double>(analytic.values()[static_cast<size_t>(i)]);
        double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        worst = std::max(worst, err);
    }
    return worst;
}

// ===== explicit instantiations =====

template class TensorT<float>;
template class TensorT<double>;
template class GradTapeT<float>;
template class GradTapeT<double>;

#define DJSR_INSTANTIATE_OPS(T)                                                                  \
    template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int, \
                                  int, GradTapeT<T>*);                                           \
    template TensorT<T> pixel_shuffle<T>(const TensorT<T>&, int, GradTapeT<T>*);                 \
    template TensorT<T> pixel_unshuffle<T>(const TensorT<T>&, int, GradTapeT<T>*);               \
    template TensorT<T> prelu<T>(const TensorT<T>&, const TensorT<T>&, GradTapeT<T>*);           \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&, GradTapeT<T>*);             \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&, GradTapeT<T>*);             \
    template TensorT<T> scale<T>(const TensorT<T>&, T, GradTapeT<T>*);                           \
    template TensorT<T> sum<T>(const TensorT<T>&, GradTapeT<T>*);                                \
    template double finite_difference_check<T>(                                                  \
        const std::function<TensorT<T>(const TensorT<T>&, GradTapeT<T>*)>&, const TensorT<T>&,   \
        T);

DJSR_INSTANTIATE_OPS(float)
DJSR_INSTANTIATE_OPS(double)

#undef DJSR_INSTANTIATE_OPS

}  // namespace djsr
