#pragma once

#include "rxf/nn.hpp"

namespace rxf {

enum class PosEncMode {
    Depthwise,  // depthwise 3x3 -> GELU -> depthwise 3x3 over the value maps
    FixedTable, // learnable [HW x C] table, resolution-bound
};

template <typename T>
struct AttentionParams {
    int heads = 1;
    std::vector<Tensor<T>> wq, wk, wv; // per head [d_k, d_k], no bias
    std::vector<Tensor<T>> alpha;      // per head scalar logit divisor
    Tensor<T> proj;                    // output projection [C, C], no bias
    PosEncMode pos_mode = PosEncMode::Depthwise;
    Tensor<T> pe_w0, pe_b0;               // depthwise 3x3
    Tensor<T> pe_w1, pe_b1;               // depthwise 3x3
    std::optional<Tensor<T>> pos_table;   // [HW, C] when pos_mode == FixedTable
};

// Multi-head self-attention over channel tokens: each single-channel feature
// map is one token, so the attention matrix is d_k x d_k rather than HW x HW.
// Per head: out_i = (Y_i (.) V_i) . softmax(K_i^T Q_i / alpha_i), softmax taken
// over the K index (columns of the attention matrix sum to 1). Heads are
// concatenated, projected, and a positional encoding of the value maps is
// added after the projection. Passing no illumination feature is equivalent
// to Y == 1 (no gating).
template <typename T>
Tensor<T> ig_msa(const Tensor<T>& x, const std::optional<Tensor<T>>& f_lu, const AttentionParams<T>& p) {
    if (x.rank() != 3) throw ShapeError("ig_msa: input must be H x W x C, got " + shape_str(x.shape));
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const int k = p.heads;
    if (k < 1 || c % k != 0)
        throw ConfigError("ig_msa: channels " + std::to_string(c) + " not divisible by heads " + std::to_string(k));
    if (f_lu && f_lu->shape != x.shape)
        throw ShapeError("ig_msa: illumination feature " + shape_str(f_lu->shape) + " does not match input " +
                         shape_str(x.shape));
    if (static_cast<int>(p.wq.size()) != k || static_cast<int>(p.wk.size()) != k ||
        static_cast<int>(p.wv.size()) != k || static_cast<int>(p.alpha.size()) != k)
        throw ConfigError("ig_msa: per-head parameter count does not match heads");

    const long long hw = static_cast<long long>(h) * w;
    Tensor<T> tokens = reshape(x, {static_cast<int>(hw), c});
    std::vector<Tensor<T>> xh = split(tokens, 1, k);
    std::vector<Tensor<T>> yh;
    if (f_lu) yh = split(reshape(*f_lu, {static_cast<int>(hw), c}), 1, k);

    std::vector<Tensor<T>> head_out, values;
    head_out.reserve(k);
    values.reserve(k);
    for (int i = 0; i < k; ++i) {
        Tensor<T> q = matmul(xh[i], transpose(p.wq[i]));
        Tensor<T> key = matmul(xh[i], transpose(p.wk[i]));
        Tensor<T> v = matmul(xh[i], transpose(p.wv[i]));
        values.push_back(v);

        Tensor<T> logits;
        {
            flopcount::Scope counted;
            logits = matmul(transpose(key), q); // d_k x d_k
        }
        Tensor<T> attn = softmax(attn_scale(logits, p.alpha[i]), 0);
        Tensor<T> gated = f_lu ? mul(yh[i], v) : v;
        Tensor<T> out;
        {
            flopcount::Scope counted;
            out = matmul(gated, attn);
        }
        head_out.push_back(std::move(out));
    }

    Tensor<T> merged = k == 1 ? head_out[0] : concat(head_out, 1);
    Tensor<T> projected = matmul(merged, transpose(p.proj));

    Tensor<T> pos;
    if (p.pos_mode == PosEncMode::Depthwise) {
        Tensor<T> vmap = reshape(k == 1 ? values[0] : concat(values, 1), {h, w, c});
        ConvSpec dw{3, 1, 1, c, c, c, true};
        Tensor<T> pe = conv2d(vmap, dw, p.pe_w0, p.pe_b0);
        pe = gelu(pe);
        pe = conv2d(pe, dw, p.pe_w1, p.pe_b1);
        pos = reshape(pe, {static_cast<int>(hw), c});
    } else {
        if (!p.pos_table) throw ConfigError("ig_msa: fixed positional table missing");
        if (p.pos_table->shape != Shape{static_cast<int>(hw), c})
            throw ShapeError("ig_msa: positional table " + shape_str(p.pos_table->shape) +
                             " does not match tokens [" + std::to_string(hw) + "x" + std::to_string(c) + "]");
        pos = *p.pos_table;
    }
    return reshape(add(projected, pos), {h, w, c});
}

template <typename T>
struct IgabParams {
    LayerNormParams<T> ln1, ln2;
    AttentionParams<T> attn;
    FfnParams<T> ffn;
};

// Pre-norm residual block: x1 = x + ig_msa(LN(x), f_lu); out = x1 + ffn(LN(x1)).
template <typename T>
Tensor<T> igab(const Tensor<T>& x, const std::optional<Tensor<T>>& f_lu, const IgabParams<T>& p) {
    Tensor<T> x1 = add(x, ig_msa(layer_norm(x, p.ln1), f_lu, p.attn));
    return add(x1, ffn(layer_norm(x1, p.ln2), p.ffn));
}

// Analytic multiply-add count of the two attention matmuls per head:
// k * [d_k*(d_k*HW) + HW*(d_k*d_k)] = 2*H*W*C^2/k. Projections excluded.
inline long long flops_ig_msa(int h, int w, int c, int k) {
    if (k < 1 || c % k != 0)
        throw ConfigError("flops_ig_msa: channels " + std::to_string(c) + " not divisible by heads " +
                          std::to_string(k));
    return 2LL * h * w * c * (c / k);
}

// Global MSA cost over spatial tokens: 2*(HW)^2*C, quadratic in spatial size.
inline long long flops_g_msa(int h, int w, int c) {
    const long long hw = static_cast<long long>(h) * w;
    return 2LL * hw * hw * c;
}

// Random but validly-shaped attention parameters (tests, flop measurement).
template <typename T>
AttentionParams<T> random_attention_params(int c, int k, Rng& rng, PosEncMode mode = PosEncMode::Depthwise,
                                           int hw = 0) {
    if (k < 1 || c % k != 0) throw ConfigError("attention params: channels not divisible by heads");
    const int dk = c / k;
    const double bound = 1.0 / std::sqrt(static_cast<double>(dk));
    AttentionParams<T> p;
    p.heads = k;
    p.pos_mode = mode;
    for (int i = 0; i < k; ++i) {
        p.wq.push_back(Tensor<T>::uniform_init({dk, dk}, rng, -bound, bound));
        p.wk.push_back(Tensor<T>::uniform_init({dk, dk}, rng, -bound, bound));
        p.wv.push_back(Tensor<T>::uniform_init({dk, dk}, rng, -bound, bound));
        p.alpha.push_back(Tensor<T>::scalar(T(1)));
    }
    const double pbound = 1.0 / std::sqrt(static_cast<double>(c));
    p.proj = Tensor<T>::uniform_init({c, c}, rng, -pbound, pbound);
    if (mode == PosEncMode::Depthwise) {
        const double dwb = 1.0 / 3.0; // fan-in 9
        p.pe_w0 = Tensor<T>::uniform_init({3, 3, 1, c}, rng, -dwb, dwb);
        p.pe_b0 = Tensor<T>::zeros({c});
        p.pe_w1 = Tensor<T>::uniform_init({3, 3, 1, c}, rng, -dwb, dwb);
        p.pe_b1 = Tensor<T>::zeros({c});
    } else {
        p.pos_table = Tensor<T>::uniform_init({hw, c}, rng, -pbound, pbound);
    }
    return p;
}

// Multiply-adds actually executed by the two attention matmuls of one ig_msa
// forward pass; requires the counter instrumentation to be enabled.
template <typename T>
long long measured_matmul_flops(int h, int w, int c, int k, uint64_t seed = 7) {
    if (!flopcount::master()) throw UsageError("measured_matmul_flops: flop counter instrumentation is disabled");
    Rng rng(seed);
    AttentionParams<T> p = random_attention_params<T>(c, k, rng);
    Tensor<T> x = Tensor<T>::uniform_init({h, w, c}, rng, -1.0, 1.0);
    Tensor<T> f = Tensor<T>::uniform_init({h, w, c}, rng, 0.0, 1.0);
    flopcount::reset();
    ig_msa(x, std::optional<Tensor<T>>(f), p);
    return flopcount::total();
}

} // namespace rxf
