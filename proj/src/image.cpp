#include "attnseg/image.hpp"

#include <algorithm>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace attnseg {

ImageU8 ImageU8::filled(int h, int w, uint8_t r, uint8_t g, uint8_t b) {
    ImageU8 img;
    img.h = h;
    img.w = w;
    img.data.resize(static_cast<size_t>(h) * w * 3);
    for (size_t i = 0; i < img.data.size(); i += 3) {
        img.data[i] = r;
        img.data[i + 1] = g;
        img.data[i + 2] = b;
    }
    return img;
}

LabelMask LabelMask::filled(int h, int w, uint8_t v) {
    LabelMask m;
    m.h = h;
    m.w = w;
    m.data.assign(static_cast<size_t>(h) * w, v);
    return m;
}

ImageU8 read_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw FormatError("cannot read image: " + path);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    ImageU8 img;
    img.h = rgb.rows;
    img.w = rgb.cols;
    img.data.assign(rgb.data, rgb.data + static_cast<size_t>(rgb.rows) * rgb.cols * 3);
    return img;
}

void write_image(const ImageU8& img, const std::string& path) {
    cv::Mat rgb(img.h, img.w, CV_8UC3, const_cast<uint8_t*>(img.data.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) throw FormatError("cannot write image: " + path);
}

LabelMask read_mask(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw FormatError("cannot read mask: " + path);
    if (m.channels() != 1 || m.depth() != CV_8U)
        throw FormatError("mask must be an 8-bit single-channel image: " + path);
    LabelMask mask;
    mask.h = m.rows;
    mask.w = m.cols;
    mask.data.assign(m.data, m.data + static_cast<size_t>(m.rows) * m.cols);
    return mask;
}

void write_mask(const LabelMask& mask, const std::string& path) {
    cv::Mat m(mask.h, mask.w, CV_8UC1, const_cast<uint8_t*>(mask.data.data()));
    if (!cv::imwrite(path, m)) throw FormatError("cannot write mask: " + path);
}

ImageU8 resize_image(const ImageU8& img, int h, int w) {
    cv::Mat src(img.h, img.w, CV_8UC3, const_cast<uint8_t*>(img.data.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    ImageU8 out;
    out.h = h;
    out.w = w;
    out.data.assign(dst.data, dst.data + static_cast<size_t>(h) * w * 3);
    return out;
}

void write_gray_map(const std::vector<double>& map, int h, int w, const std::string& path) {
    double lo = *std::min_element(map.begin(), map.end());
    double hi = *std::max_element(map.begin(), map.end());
    double span = hi - lo;
    LabelMask out = LabelMask::filled(h, w, 0);
    for (size_t i = 0; i < map.size(); ++i)
        out.data[i] = span > 0
                          ? static_cast<uint8_t>(std::clamp((map[i] - lo) / span * 255.0, 0.0, 255.0))
                          : 0;
    write_mask(out, path);
}

}  // namespace attnseg
