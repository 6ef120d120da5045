#pragma once

#include "rxf/tensor.hpp"

#include <filesystem>
#include <fstream>

namespace rxf {

struct RawImage {
    int width = 0, height = 0, channels = 0;
    std::vector<uint8_t> bytes; // row-major, interleaved
};

RawImage read_pnm(const std::string& path);
void write_pnm(const std::string& path, const RawImage& img);

// Degradation model: low = clamp((clean + R_hat) (.) (L + L_hat)) with a
// smooth illumination field L in [l_min, l_max], a smooth perturbation L_hat,
// and per-pixel Gaussian noise R_hat.
struct DegradationConfig {
    double noise_sigma = 0.05;   // R_hat std-dev
    double illum_perturb = 0.05; // L_hat magnitude
    double l_min = 0.1;          // illumination field lower bound
    double l_max = 1.0;
    int field_grid = 4;          // coarse grid side; smaller = smoother

    void validate() const {
        if (l_min <= 0) throw ConfigError("degradation: l_min must be > 0");
        if (l_max < l_min) throw ConfigError("degradation: l_max must be >= l_min");
        if (noise_sigma < 0) throw ConfigError("degradation: noise sigma must be >= 0");
        if (illum_perturb < 0) throw ConfigError("degradation: illumination perturbation must be >= 0");
        if (field_grid < 1) throw ConfigError("degradation: field grid must be >= 1");
    }
};

template <typename T>
struct ImagePair {
    Tensor<T> low;       // H x W x 3 in [0,1]
    Tensor<T> reference; // H x W x 3 in [0,1]
    std::optional<Tensor<T>> ground_truth_illumination; // H x W x 1, pre-clamp L
};

namespace detail {

// Coarse grid bilinearly upsampled to H x W (clamp-to-edge, cell centers).
template <typename T>
std::vector<T> upsample_field(const std::vector<double>& coarse, int grid, int h, int w) {
    std::vector<T> out(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        const double gy = (y + 0.5) / h * grid - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(gy)), 0, grid - 1);
        const int y1 = std::min(y0 + 1, grid - 1);
        const double fy = std::clamp(gy - y0, 0.0, 1.0);
        for (int x = 0; x < w; ++x) {
            const double gx = (x + 0.5) / w * grid - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(gx)), 0, grid - 1);
            const int x1 = std::min(x0 + 1, grid - 1);
            const double fx = std::clamp(gx - x0, 0.0, 1.0);
            const double v = (1 - fy) * ((1 - fx) * coarse[static_cast<size_t>(y0) * grid + x0] +
                                         fx * coarse[static_cast<size_t>(y0) * grid + x1]) +
                             fy * ((1 - fx) * coarse[static_cast<size_t>(y1) * grid + x0] +
                                   fx * coarse[static_cast<size_t>(y1) * grid + x1]);
            out[static_cast<size_t>(y) * w + x] = static_cast<T>(v);
        }
    }
    return out;
}

} // namespace detail

// Deterministic given (clean, cfg, seed). Draw order: illumination grid,
// perturbation grid, then noise in row-major pixel order.
template <typename T>
ImagePair<T> synth_pair(const Tensor<T>& clean, const DegradationConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (clean.rank() != 3 || clean.dim(2) != 3)
        throw ShapeError("synth_pair: clean image must be H x W x 3, got " + shape_str(clean.shape));
    const int h = clean.dim(0), w = clean.dim(1);
    Rng rng(seed);

    std::vector<double> lc(static_cast<size_t>(cfg.field_grid) * cfg.field_grid);
    for (auto& v : lc) v = uniform(rng, cfg.l_min, cfg.l_max);
    std::vector<double> pc(lc.size());
    for (auto& v : pc) v = uniform(rng, -cfg.illum_perturb, cfg.illum_perturb);
    std::vector<T> field = detail::upsample_field<T>(lc, cfg.field_grid, h, w);
    std::vector<T> perturb = detail::upsample_field<T>(pc, cfg.field_grid, h, w);

    ImagePair<T> pair;
    pair.reference = clean.clone();
    pair.low = Tensor<T>::zeros(clean.shape);
    pair.ground_truth_illumination = Tensor<T>::from({h, w, 1}, std::vector<T>(field));

    const T* cp = clean.ptr();
    T* lp = pair.low.mut_ptr();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t pix = static_cast<size_t>(y) * w + x;
            const T l = field[pix] + perturb[pix];
            for (int ch = 0; ch < 3; ++ch) {
                const T noisy = cp[pix * 3 + ch] +
                                (cfg.noise_sigma > 0 ? static_cast<T>(gaussian(rng, 0.0, cfg.noise_sigma)) : T(0));
                lp[pix * 3 + ch] = std::clamp(noisy * l, T(0), T(1));
            }
        }
    return pair;
}

// --------------------------------------------------------------------------
// PPM / PGM <-> tensor

template <typename T>
Tensor<T> load_image(const std::string& path) {
    RawImage img = read_pnm(path);
    if (img.channels != 3) throw IoError(path + ": expected 3-channel P6");
    Tensor<T> t = Tensor<T>::zeros({img.height, img.width, 3});
    for (size_t i = 0; i < img.bytes.size(); ++i) (*t.values)[i] = static_cast<T>(img.bytes[i]) / T(255);
    return t;
}

template <typename T>
void save_image(const Tensor<T>& t, const std::string& path) {
    if (t.rank() != 3 || (t.dim(2) != 3 && t.dim(2) != 1))
        throw UsageError("save_image: expected H x W x 3 or H x W x 1, got " + shape_str(t.shape));
    RawImage img;
    img.height = t.dim(0);
    img.width = t.dim(1);
    img.channels = t.dim(2);
    img.bytes.resize(static_cast<size_t>(t.size()));
    for (long long i = 0; i < t.size(); ++i) {
        const double v = std::clamp(static_cast<double>((*t.values)[i]), 0.0, 1.0);
        img.bytes[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    write_pnm(path, img);
}

// --------------------------------------------------------------------------
// crop + flip/rotation augmentation

struct AugmentChoice {
    int x0 = 0, y0 = 0;
    int quarter_turns = 0; // 90-degree clockwise turns
    bool hflip = false;
};

namespace detail {

template <typename T>
Tensor<T> crop(const Tensor<T>& t, int y0, int x0, int size) {
    const int w = t.dim(1), c = t.dim(2);
    Tensor<T> out = Tensor<T>::zeros({size, size, c});
    for (int y = 0; y < size; ++y)
        std::copy(t.ptr() + ((static_cast<long long>(y0) + y) * w + x0) * c,
                  t.ptr() + ((static_cast<long long>(y0) + y) * w + x0 + size) * c,
                  out.mut_ptr() + static_cast<long long>(y) * size * c);
    return out;
}

template <typename T>
Tensor<T> rot90_cw(const Tensor<T>& t) {
    const int h = t.dim(0), w = t.dim(1), c = t.dim(2);
    Tensor<T> out = Tensor<T>::zeros({w, h, c});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            std::copy(t.ptr() + (static_cast<long long>(y) * w + x) * c,
                      t.ptr() + (static_cast<long long>(y) * w + x + 1) * c,
                      out.mut_ptr() + (static_cast<long long>(x) * h + (h - 1 - y)) * c);
    return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& t) {
    const int h = t.dim(0), w = t.dim(1), c = t.dim(2);
    Tensor<T> out = Tensor<T>::zeros(t.shape);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            std::copy(t.ptr() + (static_cast<long long>(y) * w + x) * c,
                      t.ptr() + (static_cast<long long>(y) * w + x + 1) * c,
                      out.mut_ptr() + (static_cast<long long>(y) * w + (w - 1 - x)) * c);
    return out;
}

template <typename T>
Tensor<T> apply_augment(const Tensor<T>& t, const AugmentChoice& a, int size) {
    Tensor<T> out = crop(t, a.y0, a.x0, size);
    for (int i = 0; i < a.quarter_turns; ++i) out = rot90_cw(out);
    if (a.hflip) out = hflip(out);
    return out;
}

} // namespace detail

// Identical window and identical flip/rotation applied to low and reference
// (and the illumination map when present); deterministic given the seed.
template <typename T>
ImagePair<T> random_crop_augment(const ImagePair<T>& pair, int size, uint64_t seed,
                                 AugmentChoice* chosen = nullptr) {
    const int h = pair.low.dim(0), w = pair.low.dim(1);
    if (size > std::min(h, w))
        throw UsageError("random_crop_augment: crop " + std::to_string(size) + " exceeds image " +
                         shape_str(pair.low.shape));
    if (size % 4 != 0) throw UsageError("random_crop_augment: crop size must be divisible by 4");
    if (pair.reference.shape != pair.low.shape) throw ShapeError("random_crop_augment: pair shapes disagree");

    Rng rng(seed);
    AugmentChoice a;
    a.y0 = static_cast<int>(rng() % static_cast<uint64_t>(h - size + 1));
    a.x0 = static_cast<int>(rng() % static_cast<uint64_t>(w - size + 1));
    a.quarter_turns = static_cast<int>(rng() % 4);
    a.hflip = (rng() % 2) != 0;
    if (chosen) *chosen = a;

    ImagePair<T> out;
    out.low = detail::apply_augment(pair.low, a, size);
    out.reference = detail::apply_augment(pair.reference, a, size);
    if (pair.ground_truth_illumination)
        out.ground_truth_illumination = detail::apply_augment(*pair.ground_truth_illumination, a, size);
    return out;
}

// --------------------------------------------------------------------------
// dataset directory: <dir>/index.txt lists basenames; images live under
// <dir>/pairs/ as NNNN_low.ppm / NNNN_ref.ppm / optional NNNN_illum.pgm.

template <typename T>
void write_dataset(const std::string& dir, const std::vector<ImagePair<T>>& pairs) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "pairs", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());
    std::ofstream index(fs::path(dir) / "index.txt", std::ios::trunc);
    if (!index) throw IoError("cannot write index.txt in " + dir);
    char name[16];
    for (size_t i = 0; i < pairs.size(); ++i) {
        std::snprintf(name, sizeof(name), "%04zu", i);
        index << name << "\n";
        save_image(pairs[i].low, (fs::path(dir) / "pairs" / (std::string(name) + "_low.ppm")).string());
        save_image(pairs[i].reference, (fs::path(dir) / "pairs" / (std::string(name) + "_ref.ppm")).string());
        if (pairs[i].ground_truth_illumination) {
            const Tensor<T>& illum = *pairs[i].ground_truth_illumination;
            save_image(illum, (fs::path(dir) / "pairs" / (std::string(name) + "_illum.pgm")).string());
        }
    }
}

inline std::vector<std::string> read_index(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream index(fs::path(dir) / "index.txt");
    if (!index) throw IoError("cannot open " + dir + "/index.txt");
    std::vector<std::string> names;
    std::string line;
    while (std::getline(index, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) names.push_back(line);
    }
    return names;
}

template <typename T>
std::vector<ImagePair<T>> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<ImagePair<T>> pairs;
    for (const std::string& name : read_index(dir)) {
        ImagePair<T> p;
        p.low = load_image<T>((fs::path(dir) / "pairs" / (name + "_low.ppm")).string());
        p.reference = load_image<T>((fs::path(dir) / "pairs" / (name + "_ref.ppm")).string());
        if (p.low.shape != p.reference.shape) throw CorruptError("dataset pair " + name + " has mismatched shapes");
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// Procedural clean image: smooth gradient plus soft blobs and a mild
// sinusoidal texture, kept inside [0.05, 0.95]. Used by tests and benchmarks.
template <typename T>
Tensor<T> make_test_image(int h, int w, uint64_t seed) {
    Rng rng(seed);
    Tensor<T> img = Tensor<T>::zeros({h, w, 3});
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = uniform(rng, 0.3, 0.7);
        gx[c] = uniform(rng, -0.25, 0.25);
        gy[c] = uniform(rng, -0.25, 0.25);
    }
    struct Blob {
        double cx, cy, r, amp[3];
    };
    std::vector<Blob> blobs(4);
    for (auto& b : blobs) {
        b.cx = uniform(rng, 0.1, 0.9);
        b.cy = uniform(rng, 0.1, 0.9);
        b.r = uniform(rng, 0.08, 0.3);
        for (int c = 0; c < 3; ++c) b.amp[c] = uniform(rng, -0.3, 0.3);
    }
    const double fx = uniform(rng, 2.0, 6.0), fy = uniform(rng, 2.0, 6.0);
    const double tex = uniform(rng, 0.02, 0.06);

    T* p = img.mut_ptr();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = (x + 0.5) / w, v = (y + 0.5) / h;
            const double wave = std::sin(2 * 3.14159265358979 * (fx * u + fy * v));
            for (int c = 0; c < 3; ++c) {
                double val = base[c] + gx[c] * (u - 0.5) + gy[c] * (v - 0.5) + tex * wave;
                for (const auto& b : blobs) {
                    const double d2 = (u - b.cx) * (u - b.cx) + (v - b.cy) * (v - b.cy);
                    val += b.amp[c] * std::exp(-d2 / (2 * b.r * b.r));
                }
                p[(static_cast<long long>(y) * w + x) * 3 + c] = static_cast<T>(std::clamp(val, 0.05, 0.95));
            }
        }
    return img;
}

} // namespace rxf
