#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "djsr/image_io.hpp"
#include "djsr/imaging.hpp"
#include "doctest.h"

using namespace djsr;
namespace fs = std::filesystem;

namespace {

Image random_image(int channels, int64_t h, int64_t w, uint64_t seed) {
    Image img = Image::zeros(channels, h, w);
    std::mt19937_64 eng(seed);
    for (double& v : img.data) v = uniform01(eng);
    return img;
}

Image constant_image(int channels, int64_t h, int64_t w, std::initializer_list<double> vals) {
    Image img = Image::zeros(channels, h, w);
    int c = 0;
    for (double v : vals) {
        for (int64_t i = 0; i < img.pixels(); ++i) img.data[c * img.pixels() + i] = v;
        ++c;
    }
    return img;
}

double max_diff(const Image& a, const Image& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "djsr_imaging_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE_BEGIN("imaging");

TEST_CASE("cfa presets") {
    CfaSpec rggb = CfaSpec::rggb();
    rggb.validate();
    CHECK(rggb.period == 2);
    CHECK(rggb.channel_at(0, 0) == 0);  // R top-left
    CHECK(rggb.channel_at(0, 1) == 1);
    CHECK(rggb.channel_at(1, 0) == 1);
    CHECK(rggb.channel_at(1, 1) == 2);

    CfaSpec xt = CfaSpec::xtrans();
    xt.validate();
    CHECK(xt.period == 6);
    int counts[3] = {0, 0, 0};
    for (int v : xt.pattern) counts[v]++;
    CHECK(counts[0] == 8);
    CHECK(counts[1] == 20);
    CHECK(counts[2] == 8);

    CHECK_THROWS_AS(cfa_by_name("nope"), ArgumentError);
    CfaSpec broken{2, {0, 1, 1, 1}};  // no blue site
    CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("gaussian blur") {
    Image img = random_image(3, 12, 10, 1);
    CHECK(max_diff(gaussian_blur(img, 0.0), img) == 0.0);

    Image flat = constant_image(1, 9, 9, {0.6});
    CHECK(max_diff(gaussian_blur(flat, 1.3), flat) < 1e-12);  // kernel sums to one

    // impulse response peak equals the separable kernel center squared
    Image impulse = Image::zeros(1, 13, 13);
    impulse.at(0, 6, 6) = 1.0;
    Image blurred = gaussian_blur(impulse, 1.0);
    double total = 0.0, peak1d = 0.0;
    for (int i = -3; i <= 3; ++i) total += std::exp(-i * i / 2.0);
    peak1d = 1.0 / total;
    CHECK(blurred.at(0, 6, 6) == doctest::Approx(peak1d * peak1d).epsilon(1e-12));

    CHECK_THROWS_AS(gaussian_blur(img, -0.5), ArgumentError);
}

TEST_CASE("downsample") {
    Image img = random_image(3, 8, 8, 2);
    CHECK(max_diff(downsample(img, 1), img) == 0.0);

    Image block = Image::zeros(1, 2, 2);
    block.at(0, 1, 0) = 1.0;
    block.at(0, 1, 1) = 1.0;
    CHECK(downsample(block, 2).at(0, 0, 0) == doctest::Approx(0.5));

    // averaging preserves the mean
    Image down = downsample(img, 2);
    double m1 = 0.0, m2 = 0.0;
    for (double v : img.data) m1 += v;
    for (double v : down.data) m2 += v;
    CHECK(m1 / double(img.data.size()) == doctest::Approx(m2 / double(down.data.size())));

    CHECK_THROWS_AS(downsample(random_image(1, 7, 8, 3), 2), DimensionError);
}

TEST_CASE("bilinear resize") {
    Image img = random_image(3, 10, 14, 4);
    CHECK(max_diff(resize_bilinear(img, 10, 14), img) == 0.0);  // same dims short-circuits

    Image flat = constant_image(3, 10, 10, {0.2, 0.5, 0.8});
    Image small = resize_fractional(flat, 0.8);
    CHECK(small.height == 8);
    for (int c = 0; c < 3; ++c)
        for (int64_t i = 0; i < small.pixels(); ++i)
            CHECK(small.data[c * small.pixels() + i] ==
                  doctest::Approx(flat.data[c * flat.pixels()]).epsilon(1e-12));

    // 1D ramp [0, 1/3, 2/3, 1] at scale 0.5: half-pixel centers land midway
    // between tap pairs, giving (0 + 1/3)/2 and (2/3 + 1)/2
    Image ramp = Image::zeros(1, 1, 4);
    for (int x = 0; x < 4; ++x) ramp.at(0, 0, x) = x / 3.0;
    Image half = resize_bilinear(ramp, 1, 2);
    CHECK(half.at(0, 0, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(half.at(0, 0, 1) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

    CHECK_THROWS_AS(resize_fractional(img, 0.0), ArgumentError);
    CHECK_THROWS_AS(resize_fractional(img, 1.5), ArgumentError);
    CHECK_THROWS_AS(resize_fractional(Image::zeros(1, 2, 2), 0.1), ArgumentError);
}

TEST_CASE("mosaic") {
    CfaSpec cfa = CfaSpec::rggb();
    Image rgb = constant_image(3, 4, 4, {0.9, 0.5, 0.1});
    Image m = mosaic(rgb, cfa);
    CHECK(m.at(0, 0, 0) == 0.9);
    CHECK(m.at(0, 0, 1) == 0.5);
    CHECK(m.at(0, 1, 0) == 0.5);
    CHECK(m.at(0, 1, 1) == 0.1);

    Image green = constant_image(3, 4, 4, {0.0, 0.7, 0.0});
    Image gm = mosaic(green, cfa);
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x) {
            if (cfa.channel_at(y, x) == 1)
                CHECK(gm.at(0, y, x) == 0.7);
            else
                CHECK(gm.at(0, y, x) == 0.0);
        }

    // sampled values are bit-equal to the source channel
    Image img = random_image(3, 6, 6, 5);
    Image sampled = mosaic(img, cfa);
    for (int64_t y = 0; y < 6; ++y)
        for (int64_t x = 0; x < 6; ++x)
            CHECK(sampled.at(0, y, x) == img.at(cfa.channel_at(y, x), y, x));

    CHECK_THROWS_AS(mosaic(random_image(3, 5, 6, 6), cfa), DimensionError);
    CHECK_THROWS_AS(mosaic(random_image(1, 4, 4, 7), cfa), DimensionError);
}

TEST_CASE("form_bayer composition") {
    CfaSpec cfa = CfaSpec::rggb();
    Image hr = random_image(3, 128, 128, 8);
    Image bayer = form_bayer(hr, 2, cfa);
    CHECK(bayer.height == 64);
    CHECK(bayer.width == 64);
    CHECK(bayer.channels == 1);

    Image flat = constant_image(3, 8, 8, {0.3, 0.6, 0.9});
    Image fb = form_bayer(flat, 2, cfa);
    CHECK(fb.at(0, 0, 0) == doctest::Approx(0.3));
    CHECK(fb.at(0, 1, 1) == doctest::Approx(0.9));

    Image small = random_image(3, 8, 8, 9);
    CHECK(max_diff(form_bayer(small, 1, cfa, 0.0), mosaic(small, cfa)) == 0.0);

    CHECK_THROWS_AS(form_bayer(random_image(3, 6, 6, 10), 4, cfa), DimensionError);
}

TEST_CASE("formation ops stay in range") {
    Image img = random_image(3, 24, 24, 11);
    for (const Image& out :
         {gaussian_blur(img, 1.7), downsample(img, 2), resize_fractional(img, 0.8),
          form_bayer(img, 2, CfaSpec::rggb(), 0.4)})
        for (double v : out.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
}

TEST_CASE("gray replication survives the mosaic") {
    // A gray scene measures the same value at every CFA site, so copying the
    // single channel back to three reconstructs it exactly.
    Image gray1 = random_image(1, 8, 8, 12);
    Image gray3 = Image::zeros(3, 8, 8);
    for (int c = 0; c < 3; ++c)
        for (int64_t i = 0; i < 64; ++i) gray3.data[c * 64 + i] = gray1.data[i];
    Image m = mosaic(gray3, CfaSpec::rggb());
    CHECK(max_diff(m, gray1) == 0.0);
}

TEST_CASE("png round trip at both depths") {
    fs::path dir = temp_dir();
    Image img = random_image(3, 9, 13, 13);
    for (int depth : {8, 16}) {
        fs::path p = dir / ("rt" + std::to_string(depth) + ".png");
        write_png(p.string(), img, depth);
        Image back = read_png(p.string());
        CHECK(back.height == 9);
        CHECK(back.width == 13);
        const double maxval = depth == 16 ? 65535.0 : 255.0;
        double worst = 0.0;
        for (size_t i = 0; i < img.data.size(); ++i) {
            double expect = std::round(img.data[i] * maxval) / maxval;
            worst = std::max(worst, std::abs(back.data[i] - expect));
        }
        CHECK(worst == 0.0);  // decode reproduces the quantized grid exactly
    }
}

TEST_CASE("pgm round trip and errors") {
    fs::path dir = temp_dir();
    Image img = random_image(1, 7, 5, 14);
    for (int maxval : {255, 65535, 1020}) {
        fs::path p = dir / ("rt" + std::to_string(maxval) + ".pgm");
        write_pgm(p.string(), img, maxval);
        Image back = read_pgm(p.string());
        double worst = 0.0;
        for (size_t i = 0; i < img.data.size(); ++i) {
            double expect = std::round(img.data[i] * maxval) / maxval;
            worst = std::max(worst, std::abs(back.data[i] - expect));
        }
        CHECK(worst == 0.0);
    }

    fs::path bad = dir / "bad.pgm";
    std::ofstream(bad) << "P5\n4 4\n255\nxx";  // truncated payload
    CHECK_THROWS_AS(read_pgm(bad.string()), CorruptFileError);
    std::ofstream(bad) << "P2\n1 1\n255\n0";
    CHECK_THROWS_AS(read_pgm(bad.string()), CorruptFileError);
    CHECK_THROWS_AS(read_png(bad.string()), CorruptFileError);
    CHECK_THROWS_AS(read_pgm("/nonexistent/x.pgm"), IoError);
    CHECK_THROWS_AS(read_image("file.bmp"), ArgumentError);
}

TEST_SUITE_END();
