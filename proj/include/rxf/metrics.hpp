#pragma once

#include "rxf/tensor.hpp"

#include <limits>

namespace rxf {

// 10 * log10(peak^2 / MSE), computed in double; identical inputs report the
// +inf sentinel.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    if (a.shape != b.shape)
        throw ShapeError("psnr: shapes disagree: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double mse = 0.0;
    const long long n = a.size();
    for (long long i = 0; i < n; ++i) {
        const double d = static_cast<double>((*a.values)[i]) - static_cast<double>((*b.values)[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> gaussian_window11(double sigma = 1.5) {
    std::vector<double> w(121);
    double sum = 0.0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
            const double dy = y - 5, dx = x - 5;
            w[static_cast<size_t>(y) * 11 + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            sum += w[static_cast<size_t>(y) * 11 + x];
        }
    for (auto& v : w) v /= sum;
    return w;
}

template <typename T>
std::vector<double> to_gray(const Tensor<T>& t) {
    const int h = t.dim(0), w = t.dim(1);
    const int c = t.rank() == 3 ? t.dim(2) : 1;
    std::vector<double> g(static_cast<size_t>(h) * w);
    const T* p = t.ptr();
    for (long long i = 0; i < static_cast<long long>(h) * w; ++i) {
        double acc = 0.0;
        for (int ch = 0; ch < c; ++ch) acc += static_cast<double>(p[i * c + ch]);
        g[static_cast<size_t>(i)] = acc / c;
    }
    return g;
}

} // namespace detail

// Mean local SSIM over valid 11x11 windows (Gaussian sigma 1.5, K1 = 0.01,
// K2 = 0.03, dynamic range 1). Color inputs are reduced by the channel mean.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape)
        throw ShapeError("ssim: shapes disagree: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    if (a.rank() != 2 && a.rank() != 3) throw UsageError("ssim: expected H x W or H x W x C");
    const int h = a.dim(0), w = a.dim(1);
    if (h < 11 || w < 11) throw UsageError("ssim: image smaller than the 11x11 window");

    static const std::vector<double> win = detail::gaussian_window11();
    const std::vector<double> ga = detail::to_gray(a);
    const std::vector<double> gb = detail::to_gray(b);

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    long long count = 0;
    for (int y = 0; y + 11 <= h; ++y) {
        for (int x = 0; x + 11 <= w; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < 11; ++dy)
                for (int dx = 0; dx < 11; ++dx) {
                    const double wv = win[static_cast<size_t>(dy) * 11 + dx];
                    const double va = ga[static_cast<size_t>(y + dy) * w + (x + dx)];
                    const double vb = gb[static_cast<size_t>(y + dy) * w + (x + dx)];
                    ma += wv * va;
                    mb += wv * vb;
                    saa += wv * va * va;
                    sbb += wv * vb * vb;
                    sab += wv * va * vb;
                }
            const double var_a = saa - ma * ma;
            const double var_b = sbb - mb * mb;
            const double cov = sab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

} // namespace rxf
