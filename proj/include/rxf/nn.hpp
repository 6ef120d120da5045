#pragma once

#include "rxf/tensor.hpp"

namespace rxf {

struct ConvSpec {
    int kernel_size = 1;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    int in_channels = 0;
    int out_channels = 0;
    bool bias = true;

    void validate() const {
        if (kernel_size < 1 || stride < 1 || padding < 0 || groups < 1)
            throw ConfigError("conv: kernel/stride/padding/groups out of range");
        if (in_channels % groups != 0 || out_channels % groups != 0)
            throw ConfigError("conv: channels (" + std::to_string(in_channels) + "->" +
                              std::to_string(out_channels) + ") not divisible by groups " + std::to_string(groups));
    }

    int out_size(int in) const { return (in + 2 * padding - kernel_size) / stride + 1; }

    Shape weight_shape() const {
        return {kernel_size, kernel_size, in_channels / groups, out_channels};
    }
};

namespace detail {

// patches: [oh*ow, kh*kw*cin]; zero padding.
template <typename T>
void im2col(const T* in, int h, int w, int cin, const ConvSpec& s, T* cols) {
    const int oh = s.out_size(h), ow = s.out_size(w);
    const int k = s.kernel_size;
    const long long row_len = static_cast<long long>(k) * k * cin;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            T* row = cols + (static_cast<long long>(oy) * ow + ox) * row_len;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * s.stride + ky - s.padding;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * s.stride + kx - s.padding;
                    T* dst = row + (static_cast<long long>(ky) * k + kx) * cin;
                    if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
                        std::fill(dst, dst + cin, T(0));
                    } else {
                        const T* src = in + (static_cast<long long>(iy) * w + ix) * cin;
                        std::copy(src, src + cin, dst);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, int h, int w, int cin, const ConvSpec& s, T* din) {
    const int oh = s.out_size(h), ow = s.out_size(w);
    const int k = s.kernel_size;
    const long long row_len = static_cast<long long>(k) * k * cin;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const T* row = cols + (static_cast<long long>(oy) * ow + ox) * row_len;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * s.stride + ky - s.padding;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * s.stride + kx - s.padding;
                    if (ix < 0 || ix >= w) continue;
                    const T* src = row + (static_cast<long long>(ky) * k + kx) * cin;
                    T* dst = din + (static_cast<long long>(iy) * w + ix) * cin;
                    for (int c = 0; c < cin; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

// Depthwise (groups == cin == cout) forward; channel-inner loops.
template <typename T>
void conv_depthwise_fwd(const T* in, const T* wgt, int h, int w, int c, const ConvSpec& s, T* out) {
    const int oh = s.out_size(h), ow = s.out_size(w);
    const int k = s.kernel_size;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            T* orow = out + (static_cast<long long>(oy) * ow + ox) * c;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * s.stride + ky - s.padding;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * s.stride + kx - s.padding;
                    if (ix < 0 || ix >= w) continue;
                    const T* irow = in + (static_cast<long long>(iy) * w + ix) * c;
                    const T* wrow = wgt + (static_cast<long long>(ky) * k + kx) * c;
                    for (int ch = 0; ch < c; ++ch) orow[ch] += irow[ch] * wrow[ch];
                }
            }
        }
    }
}

template <typename T>
void conv_depthwise_bwd(const T* in, const T* wgt, const T* dout, int h, int w, int c, const ConvSpec& s, T* din,
                        T* dwgt) {
    const int oh = s.out_size(h), ow = s.out_size(w);
    const int k = s.kernel_size;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const T* drow = dout + (static_cast<long long>(oy) * ow + ox) * c;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * s.stride + ky - s.padding;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * s.stride + kx - s.padding;
                    if (ix < 0 || ix >= w) continue;
                    const T* irow = in + (static_cast<long long>(iy) * w + ix) * c;
                    const T* wrow = wgt + (static_cast<long long>(ky) * k + kx) * c;
                    if (din) {
                        T* dirow = din + (static_cast<long long>(iy) * w + ix) * c;
                        for (int ch = 0; ch < c; ++ch) dirow[ch] += drow[ch] * wrow[ch];
                    }
                    if (dwgt) {
                        T* dwrow = dwgt + (static_cast<long long>(ky) * k + kx) * c;
                        for (int ch = 0; ch < c; ++ch) dwrow[ch] += drow[ch] * irow[ch];
                    }
                }
            }
        }
    }
}

// Generic grouped forward/backward (slow path; groups other than 1 or cin).
template <typename T>
void conv_grouped_fwd(const T* in, const T* wgt, int h, int w, const ConvSpec& s, T* out) {
    const int oh = s.out_size(h), ow = s.out_size(w);
    const int k = s.kernel_size;
    const int cin_g = s.in_channels / s.groups, cout_g = s.out_channels / s.groups;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int g = 0; g < s.groups; ++g)
                for (int co = 0; co < cout_g; ++co) {
                    T acc = T(0);
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * s.stride + ky - s.padding;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * s.stride + kx - s.padding;
                            if (ix < 0 || ix >= w) continue;
                            for (int ci = 0; ci < cin_g; ++ci)
                                acc += in[(static_cast<long long>(iy) * w + ix) * s.in_channels + g * cin_g + ci] *
                                       wgt[((static_cast<long long>(ky) * k + kx) * cin_g + ci) * s.out_channels +
                                           g * cout_g + co];
                        }
                    }
                    out[(static_cast<long long>(oy) * ow + ox) * s.out_channels + g * cout_g + co] += acc;
                }
}

template <typename T>
void conv_grouped_bwd(const T* in, const T* wgt, const T* dout, int h, int w, const ConvSpec& s, T* din, T* dwgt) {
    const int oh = s.out_size(h), ow = s.out_size(w);
    const int k = s.kernel_size;
    const int cin_g = s.in_channels / s.groups, cout_g = s.out_channels / s.groups;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int g = 0; g < s.groups; ++g)
                for (int co = 0; co < cout_g; ++co) {
                    const T dv = dout[(static_cast<long long>(oy) * ow + ox) * s.out_channels + g * cout_g + co];
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * s.stride + ky - s.padding;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * s.stride + kx - s.padding;
                            if (ix < 0 || ix >= w) continue;
                            for (int ci = 0; ci < cin_g; ++ci) {
                                const long long iidx =
                                    (static_cast<long long>(iy) * w + ix) * s.in_channels + g * cin_g + ci;
                                const long long widx =
                                    ((static_cast<long long>(ky) * k + kx) * cin_g + ci) * s.out_channels +
                                    g * cout_g + co;
                                if (din) din[iidx] += dv * wgt[widx];
                                if (dwgt) dwgt[widx] += dv * in[iidx];
                            }
                        }
                    }
                }
}

} // namespace detail

// Cross-correlation with zero padding. Input H x W x Cin, weights
// [k, k, cin/groups, cout]; groups == cin gives depthwise convolution.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias = std::nullopt) {
    spec.validate();
    if (input.rank() != 3 || input.dim(2) != spec.in_channels)
        throw ShapeError("conv2d: input " + shape_str(input.shape) + " does not match in_channels " +
                         std::to_string(spec.in_channels));
    if (weight.shape != spec.weight_shape())
        throw ShapeError("conv2d: weight " + shape_str(weight.shape) + " does not match spec " +
                         shape_str(spec.weight_shape()));
    if (spec.bias) {
        if (!bias || bias->shape != Shape{spec.out_channels})
            throw ShapeError("conv2d: bias tensor missing or misshaped");
    }
    const int h = input.dim(0), w = input.dim(1);
    const int oh = spec.out_size(h), ow = spec.out_size(w);
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: output would be empty for input " + shape_str(input.shape) + " with kernel " +
                         std::to_string(spec.kernel_size) + " stride " + std::to_string(spec.stride));

    Tensor<T> out = Tensor<T>::zeros({oh, ow, spec.out_channels});
    const bool depthwise = spec.groups == spec.in_channels && spec.out_channels == spec.in_channels;
    // The im2col patch matrix is recomputed in backward instead of captured;
    // it is k*k times the input size.
    std::shared_ptr<std::vector<T>> cols;
    if (spec.groups == 1) {
        const long long rows = static_cast<long long>(oh) * ow;
        const long long rlen = static_cast<long long>(spec.kernel_size) * spec.kernel_size * spec.in_channels;
        cols = std::make_shared<std::vector<T>>(rows * rlen);
        detail::im2col(input.ptr(), h, w, spec.in_channels, spec, cols->data());
        detail::matmul_nn(cols->data(), weight.ptr(), out.mut_ptr(), static_cast<int>(rows), static_cast<int>(rlen),
                          spec.out_channels);
    } else if (depthwise) {
        detail::conv_depthwise_fwd(input.ptr(), weight.ptr(), h, w, spec.in_channels, spec, out.mut_ptr());
    } else {
        detail::conv_grouped_fwd(input.ptr(), weight.ptr(), h, w, spec, out.mut_ptr());
    }
    if (spec.bias) {
        T* op = out.mut_ptr();
        const T* bp = bias->ptr();
        for (long long i = 0; i < static_cast<long long>(oh) * ow; ++i)
            for (int c = 0; c < spec.out_channels; ++c) op[i * spec.out_channels + c] += bp[c];
    }
    detail::check_finite(out, "conv2d");

    Tape<T>* tp = spec.bias ? detail::merge_tapes<T>({&input, &weight, &*bias})
                            : detail::merge_tapes<T>({&input, &weight});
    if (tp) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const auto iv = input.values;
        const auto wv = weight.values;
        const int inode = input.node, wnode = weight.node;
        const int bnode = spec.bias ? bias->node : -1;
        const ConvSpec s = spec;
        tp->record("conv2d", {inode, wnode, bnode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            const long long rows = static_cast<long long>(oh) * ow;
            T* din = inode >= 0 ? g.accum(inode, static_cast<long long>(h) * w * s.in_channels).data() : nullptr;
            T* dwgt = wnode >= 0 ? g.accum(wnode, shape_size(s.weight_shape())).data() : nullptr;
            if (s.groups == 1) {
                const long long rlen = static_cast<long long>(s.kernel_size) * s.kernel_size * s.in_channels;
                std::vector<T> patch(rows * rlen);
                detail::im2col(iv->data(), h, w, s.in_channels, s, patch.data());
                if (dwgt)
                    detail::matmul_tn(patch.data(), dout.data(), dwgt, static_cast<int>(rlen),
                                      static_cast<int>(rows), s.out_channels);
                if (din) {
                    std::vector<T> dcols(rows * rlen, T(0));
                    detail::matmul_nt(dout.data(), wv->data(), dcols.data(), static_cast<int>(rows), s.out_channels,
                                      static_cast<int>(rlen));
                    detail::col2im(dcols.data(), h, w, s.in_channels, s, din);
                }
            } else if (s.groups == s.in_channels && s.out_channels == s.in_channels) {
                detail::conv_depthwise_bwd(iv->data(), wv->data(), dout.data(), h, w, s.in_channels, s, din, dwgt);
            } else {
                detail::conv_grouped_bwd(iv->data(), wv->data(), dout.data(), h, w, s, din, dwgt);
            }
            if (bnode >= 0) {
                auto& db = g.accum(bnode, s.out_channels);
                for (long long i = 0; i < rows; ++i)
                    for (int c = 0; c < s.out_channels; ++c) db[c] += dout[i * s.out_channels + c];
            }
        });
    }
    return out;
}

// 2x2 transposed convolution with stride 2: exact spatial doubling, the
// adjoint of the 2x2 stride-2 convolution with the same weights.
// Weights [2, 2, cin, cout].
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const std::optional<Tensor<T>>& bias = std::nullopt) {
    if (input.rank() != 3) throw ShapeError("conv_transpose2d: input must be H x W x C, got " + shape_str(input.shape));
    const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
    if (weight.rank() != 4 || weight.dim(0) != 2 || weight.dim(1) != 2 || weight.dim(2) != cin)
        throw ShapeError("conv_transpose2d: weight " + shape_str(weight.shape) + " incompatible with input " +
                         shape_str(input.shape));
    const int cout = weight.dim(3);
    if (bias && bias->shape != Shape{cout}) throw ShapeError("conv_transpose2d: bias misshaped");

    Tensor<T> out = Tensor<T>::zeros({2 * h, 2 * w, cout});
    const T* ip = input.ptr();
    const T* wp = weight.ptr();
    T* op = out.mut_ptr();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const T* irow = ip + (static_cast<long long>(y) * w + x) * cin;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    T* orow = op + (static_cast<long long>(2 * y + dy) * (2 * w) + 2 * x + dx) * cout;
                    const T* wtap = wp + (static_cast<long long>(dy) * 2 + dx) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const T av = irow[ci];
                        const T* wrow = wtap + static_cast<long long>(ci) * cout;
                        for (int co = 0; co < cout; ++co) orow[co] += av * wrow[co];
                    }
                }
        }
    if (bias) {
        const T* bp = bias->ptr();
        for (long long i = 0; i < static_cast<long long>(4) * h * w; ++i)
            for (int c = 0; c < cout; ++c) op[i * cout + c] += bp[c];
    }
    detail::check_finite(out, "conv_transpose2d");

    Tape<T>* tp = bias ? detail::merge_tapes<T>({&input, &weight, &*bias}) : detail::merge_tapes<T>({&input, &weight});
    if (tp) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const auto iv = input.values;
        const auto wv = weight.values;
        const int inode = input.node, wnode = weight.node, bnode = bias ? bias->node : -1;
        tp->record("conv_transpose2d", {inode, wnode, bnode}, out.node,
                   [=](const std::vector<T>& dout, GradientMap<T>& g) {
                       T* din = inode >= 0 ? g.accum(inode, static_cast<long long>(h) * w * cin).data() : nullptr;
                       T* dwgt = wnode >= 0 ? g.accum(wnode, static_cast<long long>(4) * cin * cout).data() : nullptr;
                       for (int y = 0; y < h; ++y)
                           for (int x = 0; x < w; ++x) {
                               const T* irow = iv->data() + (static_cast<long long>(y) * w + x) * cin;
                               T* dirow = din ? din + (static_cast<long long>(y) * w + x) * cin : nullptr;
                               for (int dy = 0; dy < 2; ++dy)
                                   for (int dx = 0; dx < 2; ++dx) {
                                       const T* drow =
                                           dout.data() + (static_cast<long long>(2 * y + dy) * (2 * w) + 2 * x + dx) * cout;
                                       const T* wtap = wv->data() + (static_cast<long long>(dy) * 2 + dx) * cin * cout;
                                       T* dwtap = dwgt ? dwgt + (static_cast<long long>(dy) * 2 + dx) * cin * cout : nullptr;
                                       for (int ci = 0; ci < cin; ++ci) {
                                           const T* wrow = wtap + static_cast<long long>(ci) * cout;
                                           T acc = T(0);
                                           for (int co = 0; co < cout; ++co) acc += drow[co] * wrow[co];
                                           if (dirow) dirow[ci] += acc;
                                           if (dwtap) {
                                               const T av = irow[ci];
                                               T* dwrow = dwtap + static_cast<long long>(ci) * cout;
                                               for (int co = 0; co < cout; ++co) dwrow[co] += av * drow[co];
                                           }
                                       }
                                   }
                           }
                       if (bnode >= 0) {
                           auto& db = g.accum(bnode, cout);
                           for (long long i = 0; i < static_cast<long long>(4) * h * w; ++i)
                               for (int c = 0; c < cout; ++c) db[c] += dout[i * cout + c];
                       }
                   });
    }
    return out;
}

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma; // [C]
    Tensor<T> beta;  // [C]
    double epsilon = 1e-5;
};

// Normalizes over the channel (last) dimension per spatial position.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const LayerNormParams<T>& p) {
    const int c = input.dim(input.rank() - 1);
    if (p.gamma.size() != c || p.beta.size() != c)
        throw ShapeError("layer_norm: gamma/beta length " + std::to_string(p.gamma.size()) +
                         " does not match channels " + std::to_string(c));
    if (p.epsilon <= 0) throw ConfigError("layer_norm: epsilon must be positive");
    const long long rows = input.size() / c;

    Tensor<T> out = Tensor<T>::zeros(input.shape);
    const T* ip = input.ptr();
    const T* gp = p.gamma.ptr();
    const T* bp = p.beta.ptr();
    T* op = out.mut_ptr();
    for (long long r = 0; r < rows; ++r) {
        const T* x = ip + r * c;
        T* y = op + r * c;
        T mean = T(0);
        for (int i = 0; i < c; ++i) mean += x[i];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int i = 0; i < c; ++i) {
            const T d = x[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T inv_std = T(1) / std::sqrt(var + static_cast<T>(p.epsilon));
        for (int i = 0; i < c; ++i) y[i] = (x[i] - mean) * inv_std * gp[i] + bp[i];
    }
    detail::check_finite(out, "layer_norm");

    if (Tape<T>* tp = detail::merge_tapes<T>({&input, &p.gamma, &p.beta})) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const auto iv = input.values;
        const auto gv = p.gamma.values;
        const int inode = input.node, gnode = p.gamma.node, bnode = p.beta.node;
        const double eps = p.epsilon;
        tp->record("layer_norm", {inode, gnode, bnode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            T* din = inode >= 0 ? g.accum(inode, rows * c).data() : nullptr;
            T* dg = gnode >= 0 ? g.accum(gnode, c).data() : nullptr;
            T* db = bnode >= 0 ? g.accum(bnode, c).data() : nullptr;
            std::vector<T> xhat(static_cast<size_t>(c));
            for (long long r = 0; r < rows; ++r) {
                const T* x = iv->data() + r * c;
                const T* dy = dout.data() + r * c;
                T mean = T(0);
                for (int i = 0; i < c; ++i) mean += x[i];
                mean /= static_cast<T>(c);
                T var = T(0);
                for (int i = 0; i < c; ++i) {
                    const T d = x[i] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(c);
                const T inv_std = T(1) / std::sqrt(var + static_cast<T>(eps));
                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                for (int i = 0; i < c; ++i) {
                    xhat[i] = (x[i] - mean) * inv_std;
                    const T dxhat = dy[i] * (*gv)[i];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat[i];
                }
                if (din) {
                    T* dx = din + r * c;
                    for (int i = 0; i < c; ++i) {
                        const T dxhat = dy[i] * (*gv)[i];
                        dx[i] += inv_std * (dxhat - sum_dxhat / static_cast<T>(c) -
                                            xhat[i] * sum_dxhat_xhat / static_cast<T>(c));
                    }
                }
                if (dg)
                    for (int i = 0; i < c; ++i) dg[i] += dy[i] * xhat[i];
                if (db)
                    for (int i = 0; i < c; ++i) db[i] += dy[i];
            }
        });
    }
    return out;
}

namespace detail {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace detail

// x * Phi(x), tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& input) {
    Tensor<T> out = Tensor<T>::zeros(input.shape);
    const long long n = input.size();
    const T* ip = input.ptr();
    T* op = out.mut_ptr();
    for (long long i = 0; i < n; ++i) {
        const T x = ip[i];
        const T u = static_cast<T>(detail::kGeluC) * (x + static_cast<T>(detail::kGeluA) * x * x * x);
        op[i] = T(0.5) * x * (T(1) + std::tanh(u));
    }
    if (Tape<T>* tp = input.tape) {
        out.tape = tp;
        out.node = tp->add_node(out.shape);
        out.requires_grad = true;
        const auto iv = input.values;
        const int inode = input.node;
        tp->record("gelu", {inode}, out.node, [=](const std::vector<T>& dout, GradientMap<T>& g) {
            if (inode < 0) return;
            auto& din = g.accum(inode, n);
            for (long long i = 0; i < n; ++i) {
                const T x = (*iv)[i];
                const T u = static_cast<T>(detail::kGeluC) * (x + static_cast<T>(detail::kGeluA) * x * x * x);
                const T t = std::tanh(u);
                const T du = static_cast<T>(detail::kGeluC) * (T(1) + T(3) * static_cast<T>(detail::kGeluA) * x * x);
                din[i] += dout[i] * (T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du);
            }
        });
    }
    return out;
}

template <typename T>
struct FfnParams {
    Tensor<T> w0, b0; // 1x1 conv C -> 4C
    Tensor<T> w1, b1; // 1x1 conv 4C -> C
};

// conv1x1 (C -> 4C) -> GELU -> conv1x1 (4C -> C); expansion factor 4.
template <typename T>
Tensor<T> ffn(const Tensor<T>& input, const FfnParams<T>& p) {
    const int c = input.dim(input.rank() - 1);
    ConvSpec expand{1, 1, 0, 1, c, 4 * c, true};
    ConvSpec project{1, 1, 0, 1, 4 * c, c, true};
    Tensor<T> h = conv2d(input, expand, p.w0, p.b0);
    h = gelu(h);
    return conv2d(h, project, p.w1, p.b1);
}

} // namespace rxf
