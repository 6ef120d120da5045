#pragma once

#include "rxf/network.hpp"

namespace rxf {

template <typename T>
struct OrfResult {
    Tensor<T> lit;                           // I_lu fed to the restorer
    Tensor<T> enhanced;                      // I_en
    Tensor<T> residual;                      // I_re
    std::optional<Tensor<T>> light_up_map;   // estimator map (absent in no_orf)
    std::optional<Tensor<T>> light_up_feature; // F_lu (guidance modes only)
};

// One forward graph from image to enhancement, end-to-end differentiable.
// Mode selects how the restorer input is formed:
//   full        I_lu = I (.) map,            attention gated by F_lu
//   lightup_map I_lu = I (.) map,            no gating
//   divide_L    I_lu = I ./ (|map| + 1e-4),  no gating (ablation baseline)
//   no_orf      I_lu = I,                    no estimator at all
template <typename T>
OrfResult<T> orf_forward(const Tensor<T>& image, const ModelParams<T>& mp, IgtTrace* trace = nullptr) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ShapeError("orf_forward: image must be H x W x 3, got " + shape_str(image.shape));
    if (image.dim(0) % 4 != 0 || image.dim(1) % 4 != 0)
        throw ShapeError("orf_forward: spatial dims must be divisible by 4, got " + shape_str(image.shape));

    OrfResult<T> r;
    switch (mp.config.mode) {
    case OrfMode::Full: {
        LightUpOutput<T> lu = estimate_illumination(image, illumination_prior(image), *mp.estimator);
        r.lit = lu.lit_image;
        r.light_up_map = lu.light_up_map;
        r.light_up_feature = lu.light_up_feature;
        break;
    }
    case OrfMode::LightUpMap: {
        LightUpOutput<T> lu = estimate_illumination(image, illumination_prior(image), *mp.estimator);
        r.lit = lu.lit_image;
        r.light_up_map = lu.light_up_map;
        break;
    }
    case OrfMode::DivideL: {
        EstimatorMaps<T> maps = estimator_maps(image, illumination_prior(image), *mp.estimator);
        // Illumination maps are nonnegative; epsilon keeps the division finite.
        Tensor<T> denom = offset(abs_op(maps.map), 1e-4);
        r.lit = div(image, denom);
        r.light_up_map = maps.map;
        break;
    }
    case OrfMode::NoOrf: r.lit = image; break;
    }

    IgtResult<T> out = igt_forward(r.lit, r.light_up_feature, mp, trace);
    r.enhanced = std::move(out.enhanced);
    r.residual = std::move(out.residual);
    return r;
}

} // namespace rxf
