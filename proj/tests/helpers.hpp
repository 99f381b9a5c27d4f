#ifndef ATTNSEG_TEST_HELPERS_HPP
#define ATTNSEG_TEST_HELPERS_HPP

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "attnseg/data.hpp"

namespace attnseg::test {

// Synthetic two-region sample: left half background (dark), right half class 1
// (bright). Axis-aligned so the coarse toy attention grids can represent it.
inline AnnotatedSample two_region_sample(int size = 64) {
    AnnotatedSample s;
    s.id = "two_region";
    s.class_names = {"background", "part"};
    s.image = ImageU8::filled(size, size, 30, 40, 50);
    s.mask = LabelMask::filled(size, size, 0);
    for (int y = 0; y < size; ++y)
        for (int x = size / 2; x < size; ++x) {
            uint8_t* p = s.image.px(y, x);
            p[0] = 220;
            p[1] = 180;
            p[2] = 90;
            s.mask.at(y, x) = 1;
        }
    return s;
}

// Central finite difference of f around x in-place on coordinate i.
inline double central_diff(std::vector<double>& x, size_t i,
                           const std::function<double()>& f, double h = 1e-5) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f();
    x[i] = orig - h;
    const double fm = f();
    x[i] = orig;
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Independent brute-force bilinear resize (align-corners = false) of an
// (h, w, c) grid; the oracle used against resize_bilinear_hwc.
inline std::vector<double> oracle_bilinear(const std::vector<double>& in, int h, int w, int c,
                                           int oh, int ow) {
    std::vector<double> out(static_cast<size_t>(oh) * ow * c, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double sy = (y + 0.5) * h / oh - 0.5;
            double sx = (x + 0.5) * w / ow - 0.5;
            sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
            sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const int y1 = std::min(y0 + 1, h - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double fy = sy - y0, fx = sx - x0;
            for (int ch = 0; ch < c; ++ch) {
                auto v = [&](int yy, int xx) {
                    return in[(static_cast<size_t>(yy) * w + xx) * c + ch];
                };
                out[(static_cast<size_t>(y) * ow + x) * c + ch] =
                    (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x1)) +
                    fy * ((1 - fx) * v(y1, x0) + fx * v(y1, x1));
            }
        }
    return out;
}

// Random row-stochastic values (simplex rows) for attention-like fixtures.
inline std::vector<double> random_simplex_rows(int rows, int cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::vector<double> v(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        double s = 0;
        for (int c = 0; c < cols; ++c) s += (v[static_cast<size_t>(r) * cols + c] = u(rng));
        for (int c = 0; c < cols; ++c) v[static_cast<size_t>(r) * cols + c] /= s;
    }
    return v;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("attnseg_test_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

}  // namespace attnseg::test

#endif
