#pragma once

#include "rxf/attention.hpp"
#include "rxf/estimator.hpp"

#include <array>
#include <unordered_map>

namespace rxf {

enum class OrfMode {
    Full,       // I_lu = I (.) map, attention guided by the illumination feature
    LightUpMap, // I_lu = I (.) map, no feature guidance
    DivideL,    // I_lu = I ./ (|map| + 1e-4), no feature guidance
    NoOrf,      // I_lu = I, estimator absent
};

inline const char* orf_mode_name(OrfMode m) {
    switch (m) {
    case OrfMode::Full: return "full";
    case OrfMode::LightUpMap: return "lightup_map";
    case OrfMode::DivideL: return "divide_L";
    case OrfMode::NoOrf: return "no_orf";
    }
    return "?";
}

inline OrfMode orf_mode_from_name(const std::string& s) {
    if (s == "full" || s == "lightup_map_plus_flu") return OrfMode::Full;
    if (s == "lightup_map") return OrfMode::LightUpMap;
    if (s == "divide_L" || s == "divide_l") return OrfMode::DivideL;
    if (s == "no_orf") return OrfMode::NoOrf;
    throw ConfigError("unknown ORF mode '" + s + "'");
}

struct ModelConfig {
    int base_channels = 16;             // C
    std::array<int, 3> heads = {1, 2, 4}; // per scale; d_k = 2^i*C / k_i
    std::array<int, 3> igabs = {1, 2, 2}; // blocks at scale 0, scale 1, bottleneck
    int crop_size = 64;
    OrfMode mode = OrfMode::Full;
    PosEncMode pos_mode = PosEncMode::Depthwise;

    void validate() const {
        if (base_channels < 1) throw ConfigError("model: base_channels must be positive");
        for (int i = 0; i < 3; ++i) {
            if (heads[static_cast<size_t>(i)] < 1 ||
                ((base_channels << i) % heads[static_cast<size_t>(i)]) != 0)
                throw ConfigError("model: channels at scale " + std::to_string(i) + " (" +
                                  std::to_string(base_channels << i) + ") not divisible by heads " +
                                  std::to_string(heads[static_cast<size_t>(i)]));
            if (igabs[static_cast<size_t>(i)] < 1) throw ConfigError("model: igab count must be >= 1");
        }
        if (crop_size < 4 || crop_size % 4 != 0) throw ConfigError("model: crop size must be a positive multiple of 4");
    }

    int channels_at(int scale) const { return base_channels << scale; }
};

// Ordered name -> tensor map; iteration order is insertion order.
template <typename T>
class ParameterStore {
public:
    void add(std::string name, Tensor<T> t) {
        if (index_.count(name)) throw ConfigError("parameter store: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.emplace_back(std::move(name), std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("parameter store: missing name " + name);
        return entries_[it->second].second;
    }

    size_t count() const { return entries_.size(); }

    long long total_scalars() const {
        long long n = 0;
        for (const auto& e : entries_) n += e.second.size();
        return n;
    }

    const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor<T>>>& entries_mut() { return entries_; }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Register every parameter as a leaf on the tape; returns a store of watched
// handles over the same storage.
template <typename T>
ParameterStore<T> watch_all(Tape<T>& tape, const ParameterStore<T>& store) {
    ParameterStore<T> out;
    for (const auto& [name, t] : store.entries()) out.add(name, tape.watch(t));
    return out;
}

template <typename T>
struct FluPyramidParams {
    Tensor<T> w0, b0; // conv4x4 s2, C -> 2C
    Tensor<T> w1, b1; // conv4x4 s2, 2C -> 4C
};

template <typename T>
struct IgtParams {
    Tensor<T> embed_w, embed_b; // conv3x3, 3 -> C
    std::vector<IgabParams<T>> enc0, enc1, mid, dec1, dec0;
    Tensor<T> down0_w, down0_b; // conv4x4 s2, C -> 2C
    Tensor<T> down1_w, down1_b; // conv4x4 s2, 2C -> 4C
    Tensor<T> up1_w, up1_b;     // deconv2x2 s2, 4C -> 2C
    Tensor<T> up1_fuse_w, up1_fuse_b; // conv1x1, 4C -> 2C
    Tensor<T> up0_w, up0_b;     // deconv2x2 s2, 2C -> C
    Tensor<T> up0_fuse_w, up0_fuse_b; // conv1x1, 2C -> C
    Tensor<T> out_w, out_b;     // conv3x3, C -> 3, zero-initialized
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    std::optional<EstimatorParams<T>> estimator;
    std::optional<FluPyramidParams<T>> flu;
    IgtParams<T> igt;
};

namespace detail {

inline int pos_table_rows(const ModelConfig& cfg, int scale) {
    const int side = cfg.crop_size >> scale;
    return side * side;
}

// Walks the parameter schema in store order. emit(name, shape, fan_in, kind):
// kind 0 = fan-in uniform, 1 = zeros, 2 = ones.
template <typename Fn>
void walk_schema(const ModelConfig& cfg, Fn&& emit) {
    const int c = cfg.base_channels;
    if (cfg.mode != OrfMode::NoOrf) {
        emit("estimator.fuse.weight", Shape{1, 1, 4, c}, 4, 0);
        emit("estimator.fuse.bias", Shape{c}, 0, 1);
        emit("estimator.depthwise.weight", Shape{9, 9, 1, c}, 81, 0);
        emit("estimator.depthwise.bias", Shape{c}, 0, 1);
        emit("estimator.project.weight", Shape{1, 1, c, 3}, c, 0);
        emit("estimator.project.bias", Shape{3}, 0, 1);
    }
    if (cfg.mode == OrfMode::Full) {
        emit("igt.flu_down0.weight", Shape{4, 4, c, 2 * c}, 16 * c, 0);
        emit("igt.flu_down0.bias", Shape{2 * c}, 0, 1);
        emit("igt.flu_down1.weight", Shape{4, 4, 2 * c, 4 * c}, 32 * c, 0);
        emit("igt.flu_down1.bias", Shape{4 * c}, 0, 1);
    }
    emit("igt.embed.weight", Shape{3, 3, 3, c}, 27, 0);
    emit("igt.embed.bias", Shape{c}, 0, 1);

    auto block = [&](const std::string& prefix, int scale) {
        const int d = cfg.channels_at(scale);
        const int k = cfg.heads[static_cast<size_t>(scale)];
        const int dk = d / k;
        emit(prefix + ".ln1.gamma", Shape{d}, 0, 2);
        emit(prefix + ".ln1.beta", Shape{d}, 0, 1);
        for (int i = 0; i < k; ++i) emit(prefix + ".attn.wq.head" + std::to_string(i), Shape{dk, dk}, dk, 0);
        for (int i = 0; i < k; ++i) emit(prefix + ".attn.wk.head" + std::to_string(i), Shape{dk, dk}, dk, 0);
        for (int i = 0; i < k; ++i) emit(prefix + ".attn.wv.head" + std::to_string(i), Shape{dk, dk}, dk, 0);
        for (int i = 0; i < k; ++i) emit(prefix + ".attn.alpha.head" + std::to_string(i), Shape{1}, 0, 2);
        emit(prefix + ".attn.proj.weight", Shape{d, d}, d, 0);
        if (cfg.pos_mode == PosEncMode::Depthwise) {
            emit(prefix + ".attn.pe.conv0.weight", Shape{3, 3, 1, d}, 9, 0);
            emit(prefix + ".attn.pe.conv0.bias", Shape{d}, 0, 1);
            emit(prefix + ".attn.pe.conv1.weight", Shape{3, 3, 1, d}, 9, 0);
            emit(prefix + ".attn.pe.conv1.bias", Shape{d}, 0, 1);
        } else {
            emit(prefix + ".attn.pos.table", Shape{pos_table_rows(cfg, scale), d}, d, 0);
        }
        emit(prefix + ".ln2.gamma", Shape{d}, 0, 2);
        emit(prefix + ".ln2.beta", Shape{d}, 0, 1);
        emit(prefix + ".ffn.fc0.weight", Shape{1, 1, d, 4 * d}, d, 0);
        emit(prefix + ".ffn.fc0.bias", Shape{4 * d}, 0, 1);
        emit(prefix + ".ffn.fc1.weight", Shape{1, 1, 4 * d, d}, 4 * d, 0);
        emit(prefix + ".ffn.fc1.bias", Shape{d}, 0, 1);
    };

    for (int i = 0; i < cfg.igabs[0]; ++i) block("igt.enc0.igab" + std::to_string(i), 0);
    emit("igt.down0.weight", Shape{4, 4, c, 2 * c}, 16 * c, 0);
    emit("igt.down0.bias", Shape{2 * c}, 0, 1);
    for (int i = 0; i < cfg.igabs[1]; ++i) block("igt.enc1.igab" + std::to_string(i), 1);
    emit("igt.down1.weight", Shape{4, 4, 2 * c, 4 * c}, 32 * c, 0);
    emit("igt.down1.bias", Shape{4 * c}, 0, 1);
    for (int i = 0; i < cfg.igabs[2]; ++i) block("igt.mid.igab" + std::to_string(i), 2);
    emit("igt.up1.deconv.weight", Shape{2, 2, 4 * c, 2 * c}, 16 * c, 0);
    emit("igt.up1.deconv.bias", Shape{2 * c}, 0, 1);
    emit("igt.up1.fuse.weight", Shape{1, 1, 4 * c, 2 * c}, 4 * c, 0);
    emit("igt.up1.fuse.bias", Shape{2 * c}, 0, 1);
    for (int i = 0; i < cfg.igabs[1]; ++i) block("igt.dec1.igab" + std::to_string(i), 1);
    emit("igt.up0.deconv.weight", Shape{2, 2, 2 * c, c}, 8 * c, 0);
    emit("igt.up0.deconv.bias", Shape{c}, 0, 1);
    emit("igt.up0.fuse.weight", Shape{1, 1, 2 * c, c}, 2 * c, 0);
    emit("igt.up0.fuse.bias", Shape{c}, 0, 1);
    for (int i = 0; i < cfg.igabs[0]; ++i) block("igt.dec0.igab" + std::to_string(i), 0);
    emit("igt.out.weight", Shape{3, 3, c, 3}, 0, 1); // zero-init: identity on I_lu at step 0
    emit("igt.out.bias", Shape{3}, 0, 1);
}

} // namespace detail

// Fan-in-scaled uniform init; biases zero; LN gamma / alpha one; final conv
// zero. Deterministic given the seed.
template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ParameterStore<T> store;
    detail::walk_schema(cfg, [&](const std::string& name, const Shape& shape, int fan_in, int kind) {
        Tensor<T> t;
        switch (kind) {
        case 0: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
            t = Tensor<T>::uniform_init(shape, rng, -bound, bound);
            break;
        }
        case 1: t = Tensor<T>::zeros(shape); break;
        default: t = Tensor<T>::full(shape, T(1)); break;
        }
        store.add(name, std::move(t));
    });
    return store;
}

// Closed-form parameter count over the topology; cross-checked against the
// enumerated store by tests.
inline long long count_parameters(const ModelConfig& cfg) {
    cfg.validate();
    const long long c = cfg.base_channels;
    long long total = 0;
    if (cfg.mode != OrfMode::NoOrf) total += (4 * c + c) + (81 * c + c) + (3 * c + 3);
    if (cfg.mode == OrfMode::Full) total += (16 * c * 2 * c + 2 * c) + (16 * 2 * c * 4 * c + 4 * c);
    total += 27 * c + c; // embed

    auto block_params = [&](int scale) -> long long {
        const long long d = c << scale;
        const long long k = cfg.heads[static_cast<size_t>(scale)];
        const long long dk = d / k;
        long long n = 2 * (2 * d);               // two layer norms
        n += 3 * k * dk * dk + k + d * d;        // projections, alphas, output fc
        if (cfg.pos_mode == PosEncMode::Depthwise)
            n += 2 * (9 * d + d);
        else
            n += static_cast<long long>(detail::pos_table_rows(cfg, scale)) * d;
        n += d * 4 * d + 4 * d + 4 * d * d + d;  // ffn
        return n;
    };
    total += 2 * cfg.igabs[0] * block_params(0);
    total += 2 * cfg.igabs[1] * block_params(1);
    total += cfg.igabs[2] * block_params(2);
    total += (16 * c * 2 * c + 2 * c) + (16 * 2 * c * 4 * c + 4 * c);        // down convs
    total += (4 * 4 * c * 2 * c + 2 * c) + (4 * c * 2 * c + 2 * c);          // up1 deconv + fuse
    total += (4 * 2 * c * c + c) + (2 * c * c + c);                          // up0 deconv + fuse
    total += 27 * c + 3;                                                     // out conv
    return total;
}

// Assemble structured parameter views over the store (same storage).
template <typename T>
ModelParams<T> bind_model(const ParameterStore<T>& store, const ModelConfig& cfg) {
    cfg.validate();
    ModelParams<T> mp;
    mp.config = cfg;
    auto g = [&](const std::string& n) { return store.get(n); };

    if (cfg.mode != OrfMode::NoOrf) {
        mp.estimator = EstimatorParams<T>{g("estimator.fuse.weight"),      g("estimator.fuse.bias"),
                                          g("estimator.depthwise.weight"), g("estimator.depthwise.bias"),
                                          g("estimator.project.weight"),   g("estimator.project.bias")};
    }
    if (cfg.mode == OrfMode::Full) {
        mp.flu = FluPyramidParams<T>{g("igt.flu_down0.weight"), g("igt.flu_down0.bias"), g("igt.flu_down1.weight"),
                                     g("igt.flu_down1.bias")};
    }

    auto block = [&](const std::string& prefix, int scale) {
        IgabParams<T> b;
        const int k = cfg.heads[static_cast<size_t>(scale)];
        b.ln1 = LayerNormParams<T>{g(prefix + ".ln1.gamma"), g(prefix + ".ln1.beta"), 1e-5};
        b.attn.heads = k;
        b.attn.pos_mode = cfg.pos_mode;
        for (int i = 0; i < k; ++i) {
            b.attn.wq.push_back(g(prefix + ".attn.wq.head" + std::to_string(i)));
            b.attn.wk.push_back(g(prefix + ".attn.wk.head" + std::to_string(i)));
            b.attn.wv.push_back(g(prefix + ".attn.wv.head" + std::to_string(i)));
            b.attn.alpha.push_back(g(prefix + ".attn.alpha.head" + std::to_string(i)));
        }
        b.attn.proj = g(prefix + ".attn.proj.weight");
        if (cfg.pos_mode == PosEncMode::Depthwise) {
            b.attn.pe_w0 = g(prefix + ".attn.pe.conv0.weight");
            b.attn.pe_b0 = g(prefix + ".attn.pe.conv0.bias");
            b.attn.pe_w1 = g(prefix + ".attn.pe.conv1.weight");
            b.attn.pe_b1 = g(prefix + ".attn.pe.conv1.bias");
        } else {
            b.attn.pos_table = g(prefix + ".attn.pos.table");
        }
        b.ln2 = LayerNormParams<T>{g(prefix + ".ln2.gamma"), g(prefix + ".ln2.beta"), 1e-5};
        b.ffn = FfnParams<T>{g(prefix + ".ffn.fc0.weight"), g(prefix + ".ffn.fc0.bias"),
                             g(prefix + ".ffn.fc1.weight"), g(prefix + ".ffn.fc1.bias")};
        return b;
    };

    IgtParams<T>& n = mp.igt;
    n.embed_w = g("igt.embed.weight");
    n.embed_b = g("igt.embed.bias");
    for (int i = 0; i < cfg.igabs[0]; ++i) n.enc0.push_back(block("igt.enc0.igab" + std::to_string(i), 0));
    n.down0_w = g("igt.down0.weight");
    n.down0_b = g("igt.down0.bias");
    for (int i = 0; i < cfg.igabs[1]; ++i) n.enc1.push_back(block("igt.enc1.igab" + std::to_string(i), 1));
    n.down1_w = g("igt.down1.weight");
    n.down1_b = g("igt.down1.bias");
    for (int i = 0; i < cfg.igabs[2]; ++i) n.mid.push_back(block("igt.mid.igab" + std::to_string(i), 2));
    n.up1_w = g("igt.up1.deconv.weight");
    n.up1_b = g("igt.up1.deconv.bias");
    n.up1_fuse_w = g("igt.up1.fuse.weight");
    n.up1_fuse_b = g("igt.up1.fuse.bias");
    for (int i = 0; i < cfg.igabs[1]; ++i) n.dec1.push_back(block("igt.dec1.igab" + std::to_string(i), 1));
    n.up0_w = g("igt.up0.deconv.weight");
    n.up0_b = g("igt.up0.deconv.bias");
    n.up0_fuse_w = g("igt.up0.fuse.weight");
    n.up0_fuse_b = g("igt.up0.fuse.bias");
    for (int i = 0; i < cfg.igabs[0]; ++i) n.dec0.push_back(block("igt.dec0.igab" + std::to_string(i), 0));
    n.out_w = g("igt.out.weight");
    n.out_b = g("igt.out.bias");
    return mp;
}

// Level-l entry of the illumination-feature pyramid: level 0 is the feature
// itself, each deeper level applies the shared strided conv4x4.
template <typename T>
Tensor<T> downscale_flu(const Tensor<T>& f_lu, const FluPyramidParams<T>& p, int level) {
    if (level < 0 || level > 2) throw ConfigError("downscale_flu: level must be 0, 1, or 2");
    if (level == 0) return f_lu;
    const int c = f_lu.dim(2);
    ConvSpec s0{4, 2, 1, 1, c, 2 * c, true};
    Tensor<T> l1 = conv2d(f_lu, s0, p.w0, p.b0);
    if (level == 1) return l1;
    ConvSpec s1{4, 2, 1, 1, 2 * c, 4 * c, true};
    return conv2d(l1, s1, p.w1, p.b1);
}

struct IgtTrace {
    std::vector<std::pair<std::string, Shape>> stages;
};

template <typename T>
struct IgtResult {
    Tensor<T> enhanced; // I_en = I_lu + I_re
    Tensor<T> residual; // I_re
};

// Three-scale U-shape. Skips fuse by concatenation + conv1x1 halving, keeping
// the 2^i*C channel schedule; every block at scale i consumes the level-i
// illumination feature (both bottleneck blocks use level 2).
template <typename T>
IgtResult<T> igt_forward(const Tensor<T>& i_lu, const std::optional<Tensor<T>>& f_lu, const ModelParams<T>& mp,
                         IgtTrace* trace = nullptr) {
    if (i_lu.rank() != 3 || i_lu.dim(2) != 3)
        throw ShapeError("igt_forward: input must be H x W x 3, got " + shape_str(i_lu.shape));
    const int h = i_lu.dim(0), w = i_lu.dim(1);
    if (h % 4 != 0 || w % 4 != 0)
        throw ShapeError("igt_forward: spatial dims must be divisible by 4 (three-scale U-shape), got " +
                         shape_str(i_lu.shape));
    const int c = mp.config.base_channels;
    const IgtParams<T>& n = mp.igt;

    // Illumination-feature pyramid, one conv per level per forward pass.
    std::array<std::optional<Tensor<T>>, 3> flu{};
    if (f_lu) {
        if (!mp.flu) throw ConfigError("igt_forward: illumination feature given but pyramid convs are absent");
        flu[0] = *f_lu;
        flu[1] = downscale_flu(*f_lu, *mp.flu, 1);
        ConvSpec s1{4, 2, 1, 1, 2 * c, 4 * c, true};
        flu[2] = conv2d(*flu[1], s1, mp.flu->w1, mp.flu->b1);
    }

    auto log = [&](const char* name, const Tensor<T>& t) {
        if (trace) trace->stages.emplace_back(name, t.shape);
    };

    ConvSpec embed{3, 1, 1, 1, 3, c, true};
    Tensor<T> x = conv2d(i_lu, embed, n.embed_w, n.embed_b);
    log("embed", x);
    for (const auto& b : n.enc0) x = igab(x, flu[0], b);
    Tensor<T> skip0 = x;
    log("enc0", skip0);

    ConvSpec down0{4, 2, 1, 1, c, 2 * c, true};
    x = conv2d(x, down0, n.down0_w, n.down0_b);
    for (const auto& b : n.enc1) x = igab(x, flu[1], b);
    Tensor<T> skip1 = x;
    log("enc1", skip1);

    ConvSpec down1{4, 2, 1, 1, 2 * c, 4 * c, true};
    x = conv2d(x, down1, n.down1_w, n.down1_b);
    for (const auto& b : n.mid) x = igab(x, flu[2], b);
    log("mid", x);

    x = conv_transpose2d(x, n.up1_w, std::optional<Tensor<T>>(n.up1_b));
    ConvSpec fuse1{1, 1, 0, 1, 4 * c, 2 * c, true};
    x = conv2d(concat<T>({x, skip1}, 2), fuse1, n.up1_fuse_w, n.up1_fuse_b);
    for (const auto& b : n.dec1) x = igab(x, flu[1], b);
    log("dec1", x);

    x = conv_transpose2d(x, n.up0_w, std::optional<Tensor<T>>(n.up0_b));
    ConvSpec fuse0{1, 1, 0, 1, 2 * c, c, true};
    x = conv2d(concat<T>({x, skip0}, 2), fuse0, n.up0_fuse_w, n.up0_fuse_b);
    for (const auto& b : n.dec0) x = igab(x, flu[0], b);
    log("dec0", x);

    ConvSpec out{3, 1, 1, 1, c, 3, true};
    Tensor<T> residual = conv2d(x, out, n.out_w, n.out_b);
    Tensor<T> enhanced = add(i_lu, residual);
    return {std::move(enhanced), std::move(residual)};
}

} // namespace rxf
