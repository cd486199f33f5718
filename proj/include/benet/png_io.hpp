#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace benet::png_io {

// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;

    size_t idx(int y, int x, int c) const {
        return (static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) *
                   static_cast<size_t>(channels) +
               static_cast<size_t>(c);
    }
};

// Throws benet::DataError on failure; paths are reported in the message.
void write_png(const std::filesystem::path& path, const Image8& img);
Image8 read_png(const std::filesystem::path& path);

}  // namespace benet::png_io
