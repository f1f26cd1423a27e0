#include "iuf/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "iuf/common.hpp"

namespace iuf {

namespace {

std::uint8_t to_byte(double v) {
    double s = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<std::uint8_t>(std::lround(s));
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void io_fail(const std::filesystem::path& path, const char* what) {
    throw ConfigError(std::string(what) + ": " + path.string());
}

// --- PNG via libpng ---

void png_write_rows(const std::filesystem::path& path, const std::uint8_t* data, int h, int w,
                    int color_type, int row_stride) {
    FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) io_fail(path, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        io_fail(path, "png write failed");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
        png_write_row(png, const_cast<png_bytep>(data + static_cast<size_t>(y) * row_stride));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct PngPixels {
    int h = 0, w = 0, channels = 0;
    std::vector<std::uint8_t> data;  // interleaved
};

PngPixels png_read_pixels(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) io_fail(path, "cannot open");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        io_fail(path, "png read failed");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    PngPixels out;
    out.h = static_cast<int>(png_get_image_height(png, info));
    out.w = static_cast<int>(png_get_image_width(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    size_t stride = png_get_rowbytes(png, info);
    out.data.resize(stride * out.h);
    for (int y = 0; y < out.h; ++y) {
        png_read_row(png, out.data.data() + static_cast<size_t>(y) * stride, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

// --- PPM / PGM ---

void skip_pnm_whitespace(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

PngPixels read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) io_fail(path, "cannot open");
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P6") io_fail(path, "unsupported pnm magic");
    skip_pnm_whitespace(in);
    int w = 0, h = 0, maxval = 0;
    in >> w;
    skip_pnm_whitespace(in);
    in >> h;
    skip_pnm_whitespace(in);
    in >> maxval;
    in.get();  // single whitespace before raster
    if (w <= 0 || h <= 0 || maxval != 255) io_fail(path, "unsupported pnm header");
    PngPixels out;
    out.h = h;
    out.w = w;
    out.channels = (magic == "P6") ? 3 : 1;
    out.data.resize(static_cast<size_t>(h) * w * out.channels);
    in.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.data.size()));
    if (!in) io_fail(path, "truncated pnm raster");
    return out;
}

bool has_ext(const std::filesystem::path& path, const char* ext) {
    std::string e = path.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ext;
}

PngPixels read_pixels_any(const std::filesystem::path& path) {
    if (has_ext(path, ".png")) return png_read_pixels(path);
    if (has_ext(path, ".ppm") || has_ext(path, ".pgm")) return read_pnm(path);
    io_fail(path, "unsupported image format");
}

}  // namespace

void write_png_rgb8(const std::filesystem::path& path, const Rgb8& img) {
    png_write_rows(path, img.data.data(), img.height, img.width, PNG_COLOR_TYPE_RGB, img.width * 3);
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) io_fail(path, "cannot open for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                int src_c = img.channels == 1 ? 0 : c;
                out.put(static_cast<char>(to_byte(img.at(src_c, y, x))));
            }
        }
    }
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) io_fail(path, "cannot open for writing");
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            out.put(static_cast<char>(mask.at(y, x) ? 255 : 0));
        }
    }
}

Image read_image(const std::filesystem::path& path) {
    PngPixels px = read_pixels_any(path);
    Image img(3, px.h, px.w);
    for (int y = 0; y < px.h; ++y) {
        for (int x = 0; x < px.w; ++x) {
            const std::uint8_t* p = px.data.data() + (static_cast<size_t>(y) * px.w + x) * px.channels;
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = (px.channels == 1 ? p[0] : p[c]) / 255.0;
            }
        }
    }
    return img;
}

Mask read_mask(const std::filesystem::path& path) {
    PngPixels px = read_pixels_any(path);
    Mask mask(px.h, px.w);
    for (int y = 0; y < px.h; ++y) {
        for (int x = 0; x < px.w; ++x) {
            const std::uint8_t* p = px.data.data() + (static_cast<size_t>(y) * px.w + x) * px.channels;
            int v = px.channels >= 3 ? (p[0] + p[1] + p[2]) / 3 : p[0];
            mask.at(y, x) = v >= 128 ? 1 : 0;
        }
    }
    return mask;
}

Rgb8 image_to_rgb8(const Image& img) {
    Rgb8 out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                int src_c = img.channels == 1 ? 0 : c;
                out.data[(static_cast<size_t>(y) * img.width + x) * 3 + c] = to_byte(img.at(src_c, y, x));
            }
        }
    }
    return out;
}

}  // namespace iuf
