#pragma once

#include "rxf/data.hpp"
#include "rxf/metrics.hpp"
#include "rxf/orf.hpp"
#include "rxf/weights.hpp"

#include <cstdio>
#include <fstream>

namespace rxf {

// Mean absolute error; the subgradient at exact ties is 0.
template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape != target.shape)
        throw ShapeError("mae_loss: shapes disagree: " + shape_str(pred.shape) + " vs " + shape_str(target.shape));
    return mean_all(abs_op(sub(pred, target)));
}

struct Schedule {
    double lr_start = 2e-4;
    double lr_end = 1e-6;
    long long total_steps = 5000;

    void validate() const {
        if (!(lr_start > lr_end && lr_end > 0)) throw ConfigError("schedule: requires lr_start > lr_end > 0");
        if (total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
    }
};

// Cosine annealing: lr_end + 0.5*(lr_start - lr_end)*(1 + cos(pi*step/total)).
// Endpoints are returned exactly; out-of-range steps clamp with a warning.
inline double lr_at(long long step, const Schedule& s) {
    s.validate();
    if (step < 0 || step > s.total_steps) {
        std::fprintf(stderr, "rxf: warning: schedule step %lld outside [0, %lld], clamping\n",
                     static_cast<long long>(step), static_cast<long long>(s.total_steps));
        step = std::clamp<long long>(step, 0, s.total_steps);
    }
    if (step == 0) return s.lr_start;
    if (step == s.total_steps) return s.lr_end;
    const double t = static_cast<double>(step) / static_cast<double>(s.total_steps);
    return s.lr_end + 0.5 * (s.lr_start - s.lr_end) * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <typename T>
struct OptimState {
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    long long step = 0;
    std::vector<std::vector<T>> m, v; // aligned with the parameter store
};

template <typename T>
OptimState<T> make_optim_state(const ParameterStore<T>& store) {
    OptimState<T> st;
    for (const auto& [name, t] : store.entries()) {
        st.m.emplace_back(static_cast<size_t>(t.size()), T(0));
        st.v.emplace_back(static_cast<size_t>(t.size()), T(0));
    }
    return st;
}

// Gradients in store order, extracted from a backward pass over watched handles.
template <typename T>
std::vector<std::vector<T>> collect_grads(const ParameterStore<T>& watched, const GradientMap<T>& grads) {
    std::vector<std::vector<T>> out;
    out.reserve(watched.count());
    for (const auto& [name, t] : watched.entries()) out.push_back(grads.grad(t).data());
    return out;
}

// Bias-corrected Adam update, in place.
template <typename T>
void adam_step(ParameterStore<T>& params, const std::vector<std::vector<T>>& grads, OptimState<T>& st, double lr) {
    if (grads.size() != params.count() || st.m.size() != params.count())
        throw UsageError("adam_step: gradient/state maps misaligned with parameters");
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t pi = 0; pi < params.count(); ++pi) {
        auto& tensor = params.entries_mut()[pi].second;
        const auto& g = grads[pi];
        if (static_cast<long long>(g.size()) != tensor.size())
            throw UsageError("adam_step: gradient size mismatch for " + params.entries()[pi].first);
        auto& m = st.m[pi];
        auto& v = st.v[pi];
        T* p = tensor.mut_ptr();
        for (size_t i = 0; i < g.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            m[i] = static_cast<T>(st.beta1 * m[i] + (1.0 - st.beta1) * gi);
            v[i] = static_cast<T>(st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi);
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + st.epsilon));
        }
    }
}

// --------------------------------------------------------------------------
// inference helpers

template <typename T>
Tensor<T> clamp01(const Tensor<T>& t) {
    Tensor<T> out = t.clone();
    for (auto& v : *out.values) v = std::clamp(v, T(0), T(1));
    return out;
}

namespace detail {

// Mirror-pad bottom/right to the next multiple of 4 (no edge duplication).
template <typename T>
Tensor<T> reflect_pad_to4(const Tensor<T>& t, int& orig_h, int& orig_w) {
    orig_h = t.dim(0);
    orig_w = t.dim(1);
    const int h = (orig_h + 3) / 4 * 4, w = (orig_w + 3) / 4 * 4;
    if (h == orig_h && w == orig_w) return t;
    if (orig_h < 4 || orig_w < 4) throw UsageError("image too small to enhance (need at least 4x4)");
    const int c = t.dim(2);
    Tensor<T> out = Tensor<T>::zeros({h, w, c});
    for (int y = 0; y < h; ++y) {
        const int sy = y < orig_h ? y : 2 * orig_h - 2 - y;
        for (int x = 0; x < w; ++x) {
            const int sx = x < orig_w ? x : 2 * orig_w - 2 - x;
            std::copy(t.ptr() + (static_cast<long long>(sy) * orig_w + sx) * c,
                      t.ptr() + (static_cast<long long>(sy) * orig_w + sx + 1) * c,
                      out.mut_ptr() + (static_cast<long long>(y) * w + x) * c);
        }
    }
    return out;
}

} // namespace detail

template <typename T>
Tensor<T> crop_back(const Tensor<T>& t, int h, int w) {
    if (t.dim(0) == h && t.dim(1) == w) return t;
    const int c = t.dim(2);
    Tensor<T> out = Tensor<T>::zeros({h, w, c});
    for (int y = 0; y < h; ++y)
        std::copy(t.ptr() + static_cast<long long>(y) * t.dim(1) * c,
                  t.ptr() + (static_cast<long long>(y) * t.dim(1) + w) * c,
                  out.mut_ptr() + static_cast<long long>(y) * w * c);
    return out;
}

// Forward pass on an arbitrary-size image: reflect-pads to a multiple of 4
// and crops the result back.
template <typename T>
Tensor<T> enhance_image(const ParameterStore<T>& store, const ModelConfig& cfg, const Tensor<T>& low) {
    ModelParams<T> mp = bind_model(store, cfg);
    int oh = 0, ow = 0;
    Tensor<T> padded = detail::reflect_pad_to4(low, oh, ow);
    return crop_back(orf_forward(padded, mp).enhanced, oh, ow);
}

// --------------------------------------------------------------------------
// training loop

struct TrainConfig {
    long long steps = 5000;
    int batch_size = 2;
    int crop = 64;
    bool augment = true;
    long long eval_every = 0; // 0 = no periodic evaluation
    uint64_t seed = 1;
    double aux_lightup_weight = 0.0; // optional extra MAE(I_lu, reference) term
    Schedule schedule;
    std::string log_path;        // CSV: step,lr,loss,psnr,ssim
    std::string checkpoint_path; // RXFW file written at the end
};

struct TrainLogRow {
    long long step;
    double lr, loss;
    double psnr = -1.0, ssim = -1.0; // negative = not evaluated this step
};

template <typename T>
struct EvalRow {
    std::string id;
    double psnr_in, psnr_out, ssim_in, ssim_out;
};

template <typename T>
std::vector<EvalRow<T>> evaluate(const ParameterStore<T>& store, const ModelConfig& cfg,
                                 const std::vector<ImagePair<T>>& pairs) {
    ModelParams<T> mp = bind_model(store, cfg);
    std::vector<EvalRow<T>> rows;
    char id[16];
    for (size_t i = 0; i < pairs.size(); ++i) {
        std::snprintf(id, sizeof(id), "%04zu", i);
        Tensor<T> enhanced = clamp01(orf_forward(pairs[i].low, mp).enhanced);
        rows.push_back(EvalRow<T>{id, psnr(pairs[i].low, pairs[i].reference), psnr(enhanced, pairs[i].reference),
                                  ssim(pairs[i].low, pairs[i].reference), ssim(enhanced, pairs[i].reference)});
    }
    return rows;
}

template <typename T>
struct TrainResult {
    std::vector<TrainLogRow> log;
    double final_psnr = -1.0, final_ssim = -1.0;
};

// MAE + Adam + cosine annealing over random crops with flip/rotation
// augmentation. Single-threaded and bit-deterministic given the seed.
template <typename T>
TrainResult<T> train(ParameterStore<T>& store, const ModelConfig& cfg, const std::vector<ImagePair<T>>& dataset,
                     const std::vector<ImagePair<T>>& val, const TrainConfig& tc) {
    cfg.validate();
    tc.schedule.validate();
    if (dataset.empty()) throw UsageError("train: dataset is empty");
    if (tc.crop % 4 != 0) throw UsageError("train: crop size must be divisible by 4");
    if (tc.batch_size < 1) throw UsageError("train: batch size must be >= 1");

    OptimState<T> opt = make_optim_state(store);
    Rng rng(tc.seed);
    TrainResult<T> result;

    std::ofstream log_file;
    if (!tc.log_path.empty()) {
        log_file.open(tc.log_path, std::ios::trunc);
        if (!log_file) throw IoError("train: cannot open log file " + tc.log_path);
        log_file << "step,lr,loss,psnr,ssim\n";
    }

    auto run_eval = [&](double& out_psnr, double& out_ssim) {
        if (val.empty()) return;
        double sp = 0, ss = 0;
        auto rows = evaluate(store, cfg, val);
        for (const auto& r : rows) {
            sp += r.psnr_out;
            ss += r.ssim_out;
        }
        out_psnr = sp / static_cast<double>(rows.size());
        out_ssim = ss / static_cast<double>(rows.size());
    };

    for (long long step = 0; step < tc.steps; ++step) {
        const double lr = lr_at(step, tc.schedule);

        Tape<T> tape;
        ParameterStore<T> watched = watch_all(tape, store);
        ModelParams<T> mp = bind_model(watched, cfg);

        std::vector<uint64_t> batch_seeds;
        Tensor<T> loss;
        for (int b = 0; b < tc.batch_size; ++b) {
            const size_t idx = static_cast<size_t>(rng() % dataset.size());
            const uint64_t aug_seed = rng();
            batch_seeds.push_back(aug_seed);
            const ImagePair<T>& src = dataset[idx];
            ImagePair<T> sample;
            if (tc.augment) {
                sample = random_crop_augment(src, tc.crop, aug_seed);
            } else if (tc.crop < src.low.dim(0) || tc.crop < src.low.dim(1)) {
                Rng crop_rng(aug_seed);
                const int y0 = static_cast<int>(crop_rng() % static_cast<uint64_t>(src.low.dim(0) - tc.crop + 1));
                const int x0 = static_cast<int>(crop_rng() % static_cast<uint64_t>(src.low.dim(1) - tc.crop + 1));
                sample.low = detail::crop(src.low, y0, x0, tc.crop);
                sample.reference = detail::crop(src.reference, y0, x0, tc.crop);
            } else {
                sample = src;
            }
            OrfResult<T> out = orf_forward(sample.low, mp);
            Tensor<T> ref = sample.reference;
            Tensor<T> item_loss = mae_loss(out.enhanced, ref);
            if (tc.aux_lightup_weight > 0.0)
                item_loss = add(item_loss, scale(mae_loss(out.lit, ref), tc.aux_lightup_weight));
            loss = (b == 0) ? item_loss : add(loss, item_loss);
        }
        if (tc.batch_size > 1) loss = scale(loss, 1.0 / tc.batch_size);

        const double loss_v = static_cast<double>(loss.item());
        if (!std::isfinite(loss_v)) {
            std::string seeds;
            for (uint64_t s : batch_seeds) seeds += std::to_string(s) + " ";
            throw NumericError("train: non-finite loss at step " + std::to_string(step) + ", batch seeds: " + seeds);
        }

        GradientMap<T> grads = tape.backward(loss);
        auto grad_vecs = collect_grads(watched, grads);
        adam_step(store, grad_vecs, opt, lr);

        TrainLogRow row{step, lr, loss_v};
        if (tc.eval_every > 0 && (step + 1) % tc.eval_every == 0) run_eval(row.psnr, row.ssim);
        if (log_file) {
            log_file << row.step << "," << row.lr << "," << row.loss << ",";
            if (row.psnr >= 0) log_file << row.psnr;
            log_file << ",";
            if (row.ssim >= 0) log_file << row.ssim;
            log_file << "\n";
        }
        result.log.push_back(row);
    }

    run_eval(result.final_psnr, result.final_ssim);
    if (!tc.checkpoint_path.empty()) save_model(tc.checkpoint_path, store, cfg);
    return result;
}

// --------------------------------------------------------------------------
// ORF ablation harness

struct AblateRow {
    OrfMode mode;
    uint64_t seed;
    double psnr, ssim;
};

// Trains every mode with identical data, seeds, and recipe; reports held-out
// mean PSNR/SSIM per (mode, seed).
template <typename T>
std::vector<AblateRow> ablate_orf(ModelConfig cfg, const std::vector<ImagePair<T>>& train_set,
                                  const std::vector<ImagePair<T>>& held_out, TrainConfig tc,
                                  const std::vector<uint64_t>& seeds,
                                  const std::vector<OrfMode>& modes = {OrfMode::NoOrf, OrfMode::DivideL,
                                                                       OrfMode::LightUpMap, OrfMode::Full}) {
    std::vector<AblateRow> rows;
    for (OrfMode mode : modes) {
        for (uint64_t seed : seeds) {
            cfg.mode = mode;
            ParameterStore<T> store = init_parameters<T>(cfg, seed);
            tc.seed = seed;
            train(store, cfg, train_set, {}, tc);
            double sp = 0, ss = 0;
            auto eval_rows = evaluate(store, cfg, held_out);
            for (const auto& r : eval_rows) {
                sp += r.psnr_out;
                ss += r.ssim_out;
            }
            rows.push_back(AblateRow{mode, seed, sp / static_cast<double>(eval_rows.size()),
                                     ss / static_cast<double>(eval_rows.size())});
        }
    }
    return rows;
}

} // namespace rxf
