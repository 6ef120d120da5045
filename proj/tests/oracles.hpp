// Brute-force reference implementations, independent of the library kernels.
#pragma once

#include "rxf/nn.hpp"

#include <vector>

namespace oracle {

// Scalar triple loop, double accumulation.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int m, int n, int p) {
    std::vector<double> c(static_cast<size_t>(m) * p, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) acc += a[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k) * p + j];
            c[static_cast<size_t>(i) * p + j] = acc;
        }
    return c;
}

// Direct per-output gather with explicit zero padding; layout matches the
// library (input H x W x Cin, weight [k, k, cin/groups, cout]).
inline std::vector<double> conv2d(const std::vector<double>& in, int h, int w, const rxf::ConvSpec& s,
                                  const std::vector<double>& wgt, const std::vector<double>* bias) {
    const int oh = s.out_size(h), ow = s.out_size(w);
    const int k = s.kernel_size;
    const int cin_g = s.in_channels / s.groups, cout_g = s.out_channels / s.groups;
    std::vector<double> out(static_cast<size_t>(oh) * ow * s.out_channels, 0.0);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int co = 0; co < s.out_channels; ++co) {
                const int g = co / cout_g;
                double acc = bias ? (*bias)[static_cast<size_t>(co)] : 0.0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const int iy = oy * s.stride + ky - s.padding;
                        const int ix = ox * s.stride + kx - s.padding;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue; // zero pad
                        for (int ci = 0; ci < cin_g; ++ci)
                            acc += in[(static_cast<size_t>(iy) * w + ix) * s.in_channels + g * cin_g + ci] *
                                   wgt[((static_cast<size_t>(ky) * k + kx) * cin_g + ci) * s.out_channels + co];
                    }
                out[(static_cast<size_t>(oy) * ow + ox) * s.out_channels + co] = acc;
            }
    return out;
}

template <typename T>
std::vector<double> to_doubles(const rxf::Tensor<T>& t) {
    std::vector<double> out(t.data().begin(), t.data().end());
    return out;
}

template <typename T>
double max_rel_diff(const rxf::Tensor<T>& got, const std::vector<double>& want) {
    double worst = 0.0;
    for (long long i = 0; i < got.size(); ++i) {
        const double g = static_cast<double>((*got.values)[i]);
        const double w = want[static_cast<size_t>(i)];
        worst = std::max(worst, std::abs(g - w) / std::max({std::abs(g), std::abs(w), 1e-12}));
    }
    return worst;
}

} // namespace oracle
