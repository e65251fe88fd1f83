#include "djsr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

namespace djsr {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    (void)png;
    throw CorruptFileError(std::string("png: ") + msg);
}

void png_warn_fn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw CorruptFileError(path + " is not a PNG file");

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp p;
        png_infop i;
        ~Guard() { png_destroy_read_struct(&p, &i, nullptr); }
    } guard{png, info};

    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    if (png_get_bit_depth(png, info) == 16) png_set_swap(png);  // PNG stores big-endian
    png_read_update_info(png, info);

    const int64_t width = png_get_image_width(png, info);
    const int64_t height = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (png_get_channels(png, info) != 3)
        throw CorruptFileError(path + ": unsupported channel layout");

    Image img = Image::zeros(3, height, width);
    const double maxval = (depth == 16) ? 65535.0 : 255.0;
    std::vector<png_byte> row(static_cast<size_t>(width) * 3 * (depth == 16 ? 2 : 1));
    for (int64_t y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int64_t x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                uint32_t v;
                if (depth == 16) {
                    const png_byte* p = row.data() + (x * 3 + c) * 2;
                    v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8);
                } else {
                    v = row[static_cast<size_t>(x * 3 + c)];
                }
                img.at(c, y, x) = v / maxval;
            }
    }
    png_read_end(png, nullptr);
    return img;
}

void write_png(const std::string& path, const Image& img, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw ArgumentError("PNG bit depth must be 8 or 16");
    if (img.channels != 3) throw DimensionError("write_png expects a 3-channel image");

    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path + " for writing");

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp p;
        png_infop i;
        ~Guard() { png_destroy_write_struct(&p, &i); }
    } guard{png, info};

    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), bit_depth, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);

    const double maxval = (bit_depth == 16) ? 65535.0 : 255.0;
    std::vector<png_byte> row(static_cast<size_t>(img.width) * 3 * (bit_depth == 16 ? 2 : 1));
    for (int64_t y = 0; y < img.height; ++y) {
        for (int64_t x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                auto q = static_cast<uint32_t>(std::lround(v * maxval));
                if (bit_depth == 16) {
                    row[(x * 3 + c) * 2] = static_cast<png_byte>(q >> 8);  // big-endian
                    row[(x * 3 + c) * 2 + 1] = static_cast<png_byte>(q & 0xff);
                } else {
                    row[static_cast<size_t>(x * 3 + c)] = static_cast<png_byte>(q);
                }
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
}

Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    auto next_token = [&]() -> std::string {
        std::string tok;
        int ch;
        while ((ch = in.get()) != EOF) {
            if (ch == '#') {
                while ((ch = in.get()) != EOF && ch != '\n') {}
                continue;
            }
            if (std::isspace(ch)) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(static_cast<char>(ch));
        }
        if (tok.empty()) throw CorruptFileError(path + ": truncated PGM header");
        return tok;
    };

    if (next_token() != "P5") throw CorruptFileError(path + ": not a binary PGM (P5)");
    const int64_t width = std::stoll(next_token());
    const int64_t height = std::stoll(next_token());
    const int64_t maxval = std::stoll(next_token());
    if (width < 1 || height < 1 || maxval < 1 || maxval > 65535)
        throw CorruptFileError(path + ": invalid PGM header");

    Image img = Image::zeros(1, height, width);
    const bool wide = maxval > 255;
    std::vector<unsigned char> buf(static_cast<size_t>(width) * (wide ? 2 : 1));
    const double denom = static_cast<double>(maxval);
    for (int64_t y = 0; y < height; ++y) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!in) throw CorruptFileError(path + ": truncated PGM data");
        for (int64_t x = 0; x < width; ++x) {
            uint32_t v = wide ? (static_cast<uint32_t>(buf[x * 2]) << 8) | buf[x * 2 + 1]
                              : buf[static_cast<size_t>(x)];
            img.at(0, y, x) = v / denom;
        }
    }
    return img;
}

void write_pgm(const std::string& path, const Image& img, int maxval) {
    if (img.channels != 1) throw DimensionError("write_pgm expects a single-channel image");
    if (maxval < 1 || maxval > 65535) throw ArgumentError("PGM maxval out of range");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
    const bool wide = maxval > 255;
    std::vector<unsigned char> buf(static_cast<size_t>(img.width) * (wide ? 2 : 1));
    for (int64_t y = 0; y < img.height; ++y) {
        for (int64_t x = 0; x < img.width; ++x) {
            double v = std::clamp(img.at(0, y, x), 0.0, 1.0);
            auto q = static_cast<uint32_t>(std::lround(v * maxval));
            if (wide) {
                buf[x * 2] = static_cast<unsigned char>(q >> 8);
                buf[x * 2 + 1] = static_cast<unsigned char>(q & 0xff);
            } else {
                buf[static_cast<size_t>(x)] = static_cast<unsigned char>(q);
            }
        }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw IoError("short write to " + path);
}

Image read_image(const std::string& path) {
    auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == "png") return read_png(path);
    if (ext == "pgm") return read_pgm(path);
    throw ArgumentError("unsupported image extension: " + path);
}

}  // namespace djsr
