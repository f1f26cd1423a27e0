#ifndef IUF_IMAGE_IO_HPP
#define IUF_IMAGE_IO_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include "iuf/image.hpp"

namespace iuf {

// Interleaved 8-bit RGB rows, top to bottom.
struct Rgb8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;  // 3 * width * height

    Rgb8() = default;
    Rgb8(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0) {}
};

// Writers are byte-deterministic for identical inputs.
void write_png_rgb8(const std::filesystem::path& path, const Rgb8& img);
void write_ppm(const std::filesystem::path& path, const Image& img);   // P6, values scaled to 0..255
void write_pgm(const std::filesystem::path& path, const Mask& mask);   // P5, 0 or 255

// Reads PNG / PPM (P6) / PGM (P5) by extension sniff; result scaled to [0,1].
Image read_image(const std::filesystem::path& path);
// Grayscale read thresholded at 128 into a binary mask.
Mask read_mask(const std::filesystem::path& path);

Rgb8 image_to_rgb8(const Image& img);

}  // namespace iuf

#endif
