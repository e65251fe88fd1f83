#define DOCTEST_CONFIG_IMPLEMENT
#include <unistd.h>

#include <cstdio>
#include <cstring>

#include "djsr/tensor.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace djsr;
using testutil::bit_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::random_tensor_away_from_zero;
using testutil::reference_conv2d;

// Fixed-seed op chain whose output hash must not depend on DJSR_THREADS; the
// determinism test re-runs this binary with different thread caps.
static int probe_conv_hash() {
    Tensor x = random_tensor<float>({3, 8, 20, 24}, 99);
    Tensor w = random_tensor<float>({16, 8, 3, 3}, 100);
    Tensor b = random_tensor<float>({1, 16, 1, 1}, 101);
    Tensor w2 = random_tensor<float>({8, 16, 3, 3}, 102);
    Tensor b2 = random_tensor<float>({1, 8, 1, 1}, 103);
    w.set_requires_grad(true);
    GradTape tape;
    Tensor h1 = conv2d(x, w, b, 1, 1, &tape);
    Tensor h2 = conv2d(h1, w2, b2, 1, 1, &tape);
    Tensor loss = sum(mul(h2, h2, &tape), &tape);
    GradMap grads = tape.backward(loss);
    const Tensor& gw = grads.at(w.id());
    uint64_t h = testutil::fnv1a(h2.values().data(), h2.values().size() * sizeof(float));
    h ^= testutil::fnv1a(gw.values().data(), gw.values().size() * sizeof(float));
    std::printf("%016llx\n", static_cast<unsigned long long>(h));
    return 0;
}

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--probe-conv-hash") == 0) return probe_conv_hash();
    doctest::Context ctx(argc, argv);
    return ctx.run();
}

TEST_SUITE_BEGIN("tensor");

TEST_CASE("tensor construction and invariants") {
    Tensor t = Tensor::zeros({2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.values().size() == 120);
    CHECK_THROWS_AS(Tensor::from_data({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f}), DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({-1, 1, 1, 1}), DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({2, 2, 2, 2}).scalar(), ContractError);

    Tensor a = Tensor::full({1, 1, 1, 1}, 7.0f);
    CHECK(a.scalar() == 7.0f);
    Tensor b = a;          // shares storage and id
    Tensor c = a.clone();  // fresh id
    CHECK(b.id() == a.id());
    CHECK(c.id() != a.id());
    c.mutable_values()[0] = 9.0f;
    CHECK(a.scalar() == 7.0f);
}

// ===== conv2d =====

TEST_CASE("conv2d single-window fixture") {
    // brute-force dot product over the one window: 1*1 + 2*0 + 3*0 + 4*1 = 5
    Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::zeros({1, 1, 1, 1});
    Tensor out = conv2d(in, w, b, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out.scalar() == doctest::Approx(5.0f));
    CHECK(bit_equal(out, reference_conv2d(in, w, b, 1, 0)));
}

TEST_CASE("conv2d 1x1 identity kernel preserves input") {
    Tensor in = random_tensor<float>({2, 3, 5, 7}, 1);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.mutable_values()[c * 3 + c] = 1.0f;
    Tensor b = Tensor::zeros({1, 3, 1, 1});
    Tensor out = conv2d(in, w, b, 1, 0);
    CHECK(max_abs_diff(out, in) == 0.0);
}

TEST_CASE("conv2d stride-2 full-support shape") {
    Tensor in = random_tensor<float>({1, 1, 4, 4}, 2);
    Tensor w = random_tensor<float>({6, 1, 4, 4}, 3);
    Tensor b = random_tensor<float>({1, 6, 1, 1}, 4);
    Tensor out = conv2d(in, w, b, 2, 0);
    CHECK(out.shape() == Shape{1, 6, 1, 1});
    CHECK(max_abs_diff(out, reference_conv2d(in, w, b, 2, 0)) < 1e-5);
}

TEST_CASE("conv2d output dims follow the closed form") {
    std::mt19937_64 eng(77);
    for (int trial = 0; trial < 30; ++trial) {
        int h = 1 + static_cast<int>(eng() % 12);
        int w = 1 + static_cast<int>(eng() % 12);
        int kh = 1 + static_cast<int>(eng() % 4);
        int kw = 1 + static_cast<int>(eng() % 4);
        int stride = 1 + static_cast<int>(eng() % 3);
        int pad = static_cast<int>(eng() % 3);
        if (h + 2 * pad < kh || w + 2 * pad < kw) continue;
        Tensor in = random_tensor<float>({2, 3, h, w}, eng());
        Tensor wt = random_tensor<float>({4, 3, kh, kw}, eng());
        Tensor b = random_tensor<float>({1, 4, 1, 1}, eng());
        Tensor out = conv2d(in, wt, b, stride, pad);
        CHECK(out.shape().h == (h + 2 * pad - kh) / stride + 1);
        CHECK(out.shape().w == (w + 2 * pad - kw) / stride + 1);
        CHECK(max_abs_diff(out, reference_conv2d(in, wt, b, stride, pad)) < 1e-4);
    }
}

TEST_CASE("conv2d dimension and numeric errors") {
    Tensor in = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({1, 3, 3, 3});
    Tensor b = Tensor::zeros({1, 1, 1, 1});
    CHECK_THROWS_AS(conv2d(in, w, b, 1, 1), DimensionError);
    Tensor w2 = Tensor::zeros({1, 2, 5, 5});
    CHECK_THROWS_AS(conv2d(in, w2, b, 1, 0), DimensionError);  // kernel larger than input
    CHECK_THROWS_AS(conv2d(in, Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({1, 2, 1, 1}), 1, 1),
                    DimensionError);  // bias length
    CHECK_THROWS_AS(conv2d(in, Tensor::zeros({1, 2, 3, 3}), b, 0, 1), ArgumentError);

    Tensor big = Tensor::full({1, 1, 2, 2}, 2e38f);
    Tensor wbig = Tensor::full({1, 1, 2, 2}, 2e38f);
    CHECK_THROWS_AS(conv2d(big, wbig, b, 1, 0), NumericError);
}

// ===== pixel shuffle / unshuffle =====

TEST_CASE("pixel_shuffle s=1 is the identity") {
    Tensor in = random_tensor<float>({2, 3, 4, 4}, 5);
    CHECK(bit_equal(pixel_shuffle(in, 1), in));
    CHECK(bit_equal(pixel_unshuffle(in, 1), in));
}

TEST_CASE("pixel_shuffle enumerated 1x4x1x1 fixture") {
    // out(x,y,c) = in((C/s)*mod(y,s) + (C/s^2)*mod(x,s) + c) with C=4, s=2:
    //   (0,0)->ch0  (1,0)->ch1  (0,1)->ch2  (1,1)->ch3
    Tensor in = Tensor::from_data({1, 4, 1, 1}, {10, 11, 12, 13});
    Tensor out = pixel_shuffle(in, 2);
    CHECK(out.shape() == Shape{1, 1, 2, 2});
    CHECK(out.at(0, 0, 0, 0) == 10.0f);
    CHECK(out.at(0, 0, 0, 1) == 11.0f);
    CHECK(out.at(0, 0, 1, 0) == 12.0f);
    CHECK(out.at(0, 0, 1, 1) == 13.0f);
    // inverting the enumerated map recovers the channels
    Tensor back = pixel_unshuffle(out, 2);
    CHECK(bit_equal(back, in));
}

TEST_CASE("pixel_shuffle stage shapes") {
    Tensor in = random_tensor<float>({1, 256, 8, 8}, 6);
    Tensor out = pixel_shuffle(in, 2);
    CHECK(out.shape() == Shape{1, 64, 16, 16});
}

TEST_CASE("pixel_shuffle is a bijection on elements") {
    Tensor in = random_tensor<float>({2, 8, 6, 6}, 7);
    Tensor out = pixel_shuffle(in, 2);
    auto a = std::vector<float>(in.values().begin(), in.values().end());
    auto b = std::vector<float>(out.values().begin(), out.values().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(bit_equal(pixel_unshuffle(out, 2), in));          // unshuffle(shuffle(x)) == x
    CHECK(bit_equal(pixel_shuffle(pixel_unshuffle(in, 2), 2), in));
}

TEST_CASE("pixel shuffle dimension errors") {
    CHECK_THROWS_AS(pixel_shuffle(Tensor::zeros({1, 6, 2, 2}), 2), DimensionError);
    CHECK_THROWS_AS(pixel_unshuffle(Tensor::zeros({1, 2, 5, 4}), 2), DimensionError);
}

// ===== prelu =====

TEST_CASE("prelu fixtures") {
    Tensor alpha = Tensor::from_data({1, 2, 1, 1}, {0.25f, 0.5f});
    Tensor pos = random_tensor<float>({1, 2, 3, 3}, 8, 0.1f, 1.0f);
    CHECK(bit_equal(prelu(pos, alpha), pos));  // identity on the positive orthant

    Tensor x = Tensor::from_data({1, 2, 1, 1}, {-2.0f, -2.0f});
    Tensor out = prelu(x, alpha);
    CHECK(out.at(0, 0, 0, 0) == doctest::Approx(-0.5f));
    CHECK(out.at(0, 1, 0, 0) == doctest::Approx(-1.0f));

    // alpha = 0 degenerates to ReLU
    Tensor zero_alpha = Tensor::zeros({1, 2, 1, 1});
    Tensor mixed = Tensor::from_data({1, 2, 1, 1}, {-3.0f, 4.0f});
    Tensor relu = prelu(mixed, zero_alpha);
    CHECK(relu.at(0, 0, 0, 0) == 0.0f);
    CHECK(relu.at(0, 1, 0, 0) == 4.0f);

    CHECK_THROWS_AS(prelu(x, Tensor::zeros({1, 3, 1, 1})), DimensionError);
}

// ===== add / mul / scale / sum =====

TEST_CASE("elementwise fixtures") {
    Tensor x = random_tensor<float>({1, 2, 2, 2}, 9);
    CHECK(bit_equal(add(x, Tensor::zeros(x.shape())), x));
    CHECK(bit_equal(scale(x, 1.0f), x));

    Tensor a = Tensor::from_data({1, 1, 1, 2}, {1, 2});
    Tensor b = Tensor::from_data({1, 1, 1, 2}, {3, 4});
    Tensor s = add(a, b);
    CHECK(s.at(0, 0, 0, 0) == 4.0f);
    CHECK(s.at(0, 0, 0, 1) == 6.0f);
    CHECK_THROWS_AS(add(a, Tensor::zeros({1, 1, 2, 1})), DimensionError);
    CHECK_THROWS_AS(mul(a, Tensor::zeros({1, 1, 2, 1})), DimensionError);
    CHECK(sum(b).scalar() == 7.0f);
}

// ===== backward =====

TEST_CASE("backward of sum is all-ones") {
    Tensor x = random_tensor<float>({1, 2, 3, 3}, 10);
    x.set_requires_grad(true);
    GradTape tape;
    Tensor loss = sum(x, &tape);
    GradMap grads = tape.backward(loss);
    const Tensor& g = grads.at(x.id());
    CHECK(g.shape() == x.shape());
    for (float v : g.values()) CHECK(v == 1.0f);
}

TEST_CASE("backward of sum(x^2)/2 is x") {
    Tensor x = random_tensor<float>({1, 1, 4, 4}, 11);
    x.set_requires_grad(true);
    GradTape tape;
    Tensor loss = scale(sum(mul(x, x, &tape), &tape), 0.5f, &tape);
    GradMap grads = tape.backward(loss);
    CHECK(max_abs_diff(grads.at(x.id()), x) < 1e-6);
}

TEST_CASE("backward distributes add gradients unchanged") {
    Tensor x = random_tensor<float>({1, 1, 2, 2}, 12);
    Tensor y = random_tensor<float>({1, 1, 2, 2}, 13);
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    GradTape tape;
    Tensor z = add(x, y, &tape);
    Tensor loss = sum(mul(z, z, &tape), &tape);
    // both inputs receive the upstream gradient (2z) bit-identically
    GradMap grads = tape.backward(loss);
    CHECK(bit_equal(grads.at(x.id()), grads.at(y.id())));
    Tensor expected = scale(z, 2.0f);
    CHECK(bit_equal(grads.at(x.id()), expected));
}

TEST_CASE("backward contract errors and zero fill") {
    Tensor x = random_tensor<float>({1, 1, 2, 2}, 14);
    x.set_requires_grad(true);
    GradTape tape;
    Tensor notscalar = add(x, x, &tape);
    CHECK_THROWS_AS(tape.backward(notscalar), ContractError);

    Tensor unused = Tensor::zeros({1, 1, 3, 3});
    unused.set_requires_grad(true);
    GradTape tape2;
    tape2.watch(unused);
    Tensor loss = sum(x, &tape2);
    GradMap grads = tape2.backward(loss);
    for (float v : grads.at(unused.id()).values()) CHECK(v == 0.0f);

    GradTape tape3;
    Tensor detached = sum(x);  // not recorded anywhere
    CHECK_THROWS_AS(tape3.backward(detached), ContractError);
    CHECK_THROWS_AS(tape3.watch(Tensor::zeros({1, 1, 1, 1})), ContractError);
}

// ===== finite differences =====

template <typename Op>
static double fd_wrt(const TensorD& x, Op op) {
    return finite_difference_check<double>(
        [&](const TensorD& probe, GradTapeD* tape) { return op(probe, tape); }, x, 1e-5);
}

TEST_CASE("finite_difference_check on exact linear case") {
    TensorD x = random_tensor<double>({1, 2, 3, 3}, 15);
    double err = fd_wrt(x, [](const TensorD& p, GradTapeD* t) { return sum(p, t); });
    CHECK(err <= 1e-10);
}

TEST_CASE("finite_difference_check on prelu away from the kink") {
    TensorD x = random_tensor_away_from_zero<double>({1, 3, 4, 4}, 16);
    TensorD alpha = TensorD::from_data({1, 3, 1, 1}, {0.25, 0.1, 0.7});
    double err = fd_wrt(x, [&](const TensorD& p, GradTapeD* t) { return sum(prelu(p, alpha, t), t); });
    CHECK(err <= 1e-8);
}

TEST_CASE("gradients match central differences for every op") {
    const double tol = 1e-4;
    TensorD in = random_tensor_away_from_zero<double>({2, 4, 6, 6}, 17);
    TensorD w = random_tensor<double>({3, 4, 3, 3}, 18);
    TensorD b = random_tensor<double>({1, 3, 1, 1}, 19);
    TensorD alpha = TensorD::from_data({1, 4, 1, 1}, {0.25, 0.5, 0.1, 0.9});
    TensorD other = random_tensor<double>({2, 4, 6, 6}, 20);

    auto sq_sum = [](const TensorD& t, GradTapeD* tape) { return sum(mul(t, t, tape), tape); };

    SUBCASE("conv2d wrt input") {
        double err = fd_wrt(in, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(conv2d(p, w, b, 1, 1, t), t);
        });
        CHECK(err <= tol);
    }
    SUBCASE("conv2d wrt weight") {
        double err = fd_wrt(w, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(conv2d(in, p, b, 1, 1, t), t);
        });
        CHECK(err <= tol);
    }
    SUBCASE("conv2d wrt bias") {
        double err = fd_wrt(b, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(conv2d(in, w, p, 1, 1, t), t);
        });
        CHECK(err <= tol);
    }
    SUBCASE("strided conv2d wrt input") {
        TensorD ws = random_tensor<double>({3, 4, 4, 4}, 21);
        double err = fd_wrt(in, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(conv2d(p, ws, b, 2, 1, t), t);
        });
        CHECK(err <= tol);
    }
    SUBCASE("pixel_shuffle") {
        double err = fd_wrt(in, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(pixel_shuffle(p, 2, t), t);
        });
        CHECK(err <= tol);
    }
    SUBCASE("pixel_unshuffle") {
        double err = fd_wrt(in, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(pixel_unshuffle(p, 2, t), t);
        });
        CHECK(err <= tol);
    }
    SUBCASE("prelu wrt input") {
        double err = fd_wrt(in, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(prelu(p, alpha, t), t);
        });
        CHECK(err <= tol);
    }
    SUBCASE("prelu wrt alpha") {
        double err = fd_wrt(alpha, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(prelu(in, p, t), t);
        });
        CHECK(err <= tol);
    }
    SUBCASE("add / mul / scale") {
        double err = fd_wrt(in, [&](const TensorD& p, GradTapeD* t) {
            return sq_sum(scale(add(mul(p, other, t), other, t), 0.3, t), t);
        });
        CHECK(err <= tol);
    }
}

// ===== determinism =====

TEST_CASE("identical inputs give bit-identical outputs") {
    Tensor in = random_tensor<float>({2, 8, 16, 16}, 22);
    Tensor w = random_tensor<float>({8, 8, 3, 3}, 23);
    Tensor b = random_tensor<float>({1, 8, 1, 1}, 24);
    Tensor o1 = conv2d(in, w, b, 1, 1);
    Tensor o2 = conv2d(in, w, b, 1, 1);
    CHECK(bit_equal(o1, o2));
}

TEST_CASE("results do not depend on the thread cap") {
    char self[4096];
    ssize_t len = readlink("/proc/self/exe", self, sizeof(self) - 1);
    REQUIRE(len > 0);
    self[len] = '\0';
    auto run_with_threads = [&](const char* threads) {
        std::string cmd = std::string("DJSR_THREADS=") + threads + " '" + self +
                          "' --probe-conv-hash 2>/dev/null";
        FILE* pipe = popen(cmd.c_str(), "r");
        REQUIRE(pipe != nullptr);
        char buf[64] = {0};
        REQUIRE(fgets(buf, sizeof(buf), pipe) != nullptr);
        pclose(pipe);
        return std::string(buf);
    };
    std::string h1 = run_with_threads("1");
    std::string h4 = run_with_threads("4");
    CHECK(h1.size() > 8);
    CHECK(h1 == h4);
}

TEST_SUITE_END();
