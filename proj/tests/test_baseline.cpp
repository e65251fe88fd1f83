#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "djsr/baseline.hpp"
#include "djsr/metrics.hpp"
#include "doctest.h"

using namespace djsr;

namespace {

Image constant_rgb(int64_t h, int64_t w, double r, double g, double b) {
    Image img = Image::zeros(3, h, w);
    for (int64_t i = 0; i < h * w; ++i) {
        img.data[0 * h * w + i] = r;
        img.data[1 * h * w + i] = g;
        img.data[2 * h * w + i] = b;
    }
    return img;
}

}  // namespace

TEST_SUITE_BEGIN("baseline");

TEST_CASE("bilinear demosaic reconstructs constants exactly") {
    CfaSpec cfa = CfaSpec::rggb();
    // dyadic values stay exact through the edge 3-sample averages
    Image scene = constant_rgb(8, 8, 0.75, 0.5, 0.25);
    Image out = bilinear_demosaic(mosaic(scene, cfa), cfa);
    double worst = 0.0;
    for (size_t i = 0; i < out.data.size(); ++i)
        worst = std::max(worst, std::abs(out.data[i] - scene.data[i]));
    CHECK(worst == 0.0);
}

TEST_CASE("bilinear demosaic preserves known sites") {
    CfaSpec cfa = CfaSpec::rggb();
    Image scene = Image::zeros(3, 8, 8);
    std::mt19937_64 eng(1);
    for (double& v : scene.data) v = uniform01(eng);
    Image bayer = mosaic(scene, cfa);
    Image out = bilinear_demosaic(bayer, cfa);
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 8; ++x)
            CHECK(out.at(cfa.channel_at(y, x), y, x) == bayer.at(0, y, x));
}

TEST_CASE("bilinear demosaic is exact on a green ramp interior") {
    CfaSpec cfa = CfaSpec::rggb();
    Image scene = Image::zeros(3, 8, 12);
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 12; ++x) {
            double g = (x + 1) / 16.0;  // horizontal ramp, linear in x
            scene.at(0, y, x) = 0.3;
            scene.at(1, y, x) = g;
            scene.at(2, y, x) = 0.3;
        }
    Image out = bilinear_demosaic(mosaic(scene, cfa), cfa);
    for (int64_t y = 1; y < 7; ++y)
        for (int64_t x = 1; x < 11; ++x)
            CHECK(out.at(1, y, x) == doctest::Approx(scene.at(1, y, x)).epsilon(1e-12));

    CHECK_THROWS_AS(bilinear_demosaic(Image::zeros(1, 7, 8), cfa), DimensionError);
    CHECK_THROWS_AS(bilinear_demosaic(Image::zeros(1, 8, 8), CfaSpec::xtrans()), ArgumentError);
}

TEST_CASE("bicubic upsample fixtures") {
    Image img = Image::zeros(3, 6, 6);
    std::mt19937_64 eng(2);
    for (double& v : img.data) v = uniform01(eng);
    Image same = bicubic_upsample(img, 1);
    CHECK(std::memcmp(same.data.data(), img.data.data(), img.data.size() * sizeof(double)) == 0);

    Image flat = constant_rgb(6, 6, 0.25, 0.5, 0.75);
    Image up = bicubic_upsample(flat, 2);
    CHECK(up.height == 12);
    for (int c = 0; c < 3; ++c)
        for (int64_t i = 0; i < 144; ++i)
            CHECK(up.data[c * 144 + i] == doctest::Approx(flat.data[c * 36]).epsilon(1e-12));

    // cubic interpolation reproduces linear ramps away from the clamped border
    Image ramp = Image::zeros(1, 8, 8);
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 8; ++x) ramp.at(0, y, x) = (2.0 * y + 3.0 * x) / 40.0;
    Image up2 = bicubic_upsample(ramp, 2);
    for (int64_t y = 4; y < 12; ++y)
        for (int64_t x = 4; x < 12; ++x) {
            double want = (2.0 * ((y + 0.5) / 2.0 - 0.5) + 3.0 * ((x + 0.5) / 2.0 - 0.5)) / 40.0;
            CHECK(up2.at(0, y, x) == doctest::Approx(want).epsilon(1e-12));
        }

    CHECK_THROWS_AS(bicubic_upsample(img, 0), ArgumentError);
}

TEST_CASE("sequential pipeline shape and perfect-constant case") {
    CfaSpec cfa = CfaSpec::rggb();
    SequentialPipeline pipe;
    Image scene = constant_rgb(64, 64, 0.75, 0.25, 0.5);  // dyadic: exact pipeline
    Image bayer = mosaic(scene, cfa);
    Image out = run_sequential(bayer, pipe);
    CHECK(out.channels == 3);
    CHECK(out.height == 128);
    CHECK(out.width == 128);

    Image big = constant_rgb(128, 128, 0.75, 0.25, 0.5);
    CHECK(std::isinf(psnr(out, big)));

    SequentialPipeline bad;
    bad.demosaicer = "amaze";
    CHECK_THROWS_AS(run_sequential(bayer, bad), ArgumentError);
}

TEST_CASE("zipper fixture: chroma error hugs the step edge") {
    // gray vertical step: R=G=B everywhere, so any channel spread is artifact
    CfaSpec cfa = CfaSpec::rggb();
    const int64_t h = 16, w = 16, edge = 8;
    Image scene = Image::zeros(3, h, w);
    for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) scene.at(c, y, x) = x < edge ? 0.25 : 0.75;
    Image out = bilinear_demosaic(mosaic(scene, cfa), cfa);

    auto chroma_spread = [&](int64_t x) {
        double worst = 0.0;
        for (int64_t y = 2; y < h - 2; ++y) {
            double lo = std::min({out.at(0, y, x), out.at(1, y, x), out.at(2, y, x)});
            double hi = std::max({out.at(0, y, x), out.at(1, y, x), out.at(2, y, x)});
            worst = std::max(worst, hi - lo);
        }
        return worst;
    };

    CHECK(chroma_spread(edge - 1) > 0.0);  // artifact present at the edge
    CHECK(chroma_spread(edge) > 0.0);
    CHECK(chroma_spread(2) == 0.0);  // constant regions reconstruct exactly
    CHECK(chroma_spread(w - 3) == 0.0);
    for (int64_t y = 2; y < h - 2; ++y)
        for (int64_t x = 0; x < 3; ++x) CHECK(out.at(1, y, x) == 0.25);
}

TEST_SUITE_END();
