#ifndef ATTNSEG_IMAGE_HPP
#define ATTNSEG_IMAGE_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnseg {

// 8-bit interleaved RGB image, row-major.
struct ImageU8 {
    int h = 0, w = 0;
    std::vector<uint8_t> data;  // h * w * 3

    static ImageU8 filled(int h, int w, uint8_t r, uint8_t g, uint8_t b);
    uint8_t* px(int y, int x) { return data.data() + (static_cast<size_t>(y) * w + x) * 3; }
    const uint8_t* px(int y, int x) const {
        return data.data() + (static_cast<size_t>(y) * w + x) * 3;
    }
};

// Integer label mask, values 0..255.
struct LabelMask {
    int h = 0, w = 0;
    std::vector<uint8_t> data;  // h * w

    static LabelMask filled(int h, int w, uint8_t v);
    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ImageU8 read_image(const std::string& path);
void write_image(const ImageU8& img, const std::string& path);

// 8-bit single-channel files only; anything else raises FormatError.
LabelMask read_mask(const std::string& path);
void write_mask(const LabelMask& mask, const std::string& path);

ImageU8 resize_image(const ImageU8& img, int h, int w);

// Writes a min-max normalized grayscale rendering of a float map.
void write_gray_map(const std::vector<double>& map, int h, int w, const std::string& path);

}  // namespace attnseg

#endif
