#pragma once

#include "rxf/nn.hpp"

#include <cstdio>

namespace rxf {

// Per-pixel channel mean of an H x W x 3 image -> H x W x 1 prior map.
template <typename T>
Tensor<T> illumination_prior(const Tensor<T>& image) {
    if (image.rank() != 3) throw ShapeError("illumination_prior: expected H x W x C, got " + shape_str(image.shape));
    return mean_over_axis(image, 2);
}

template <typename T>
struct EstimatorParams {
    Tensor<T> fuse_w, fuse_b; // 1x1 conv, 4 -> C
    Tensor<T> dw_w, dw_b;     // depthwise 9x9, C channels
    Tensor<T> proj_w, proj_b; // 1x1 conv, C -> 3
};

template <typename T>
struct EstimatorMaps {
    Tensor<T> map;     // 3-channel output of the aggregation conv
    Tensor<T> feature; // depthwise conv output, H x W x C
};

// Shared trunk: fuse conv1x1 over [image, prior], depthwise conv9x9 producing
// the illumination feature, conv1x1 aggregating it into a 3-channel map.
template <typename T>
EstimatorMaps<T> estimator_maps(const Tensor<T>& image, const Tensor<T>& prior, const EstimatorParams<T>& p) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ShapeError("estimator: image must be H x W x 3, got " + shape_str(image.shape));
    if (prior.shape != Shape{image.dim(0), image.dim(1), 1})
        throw ShapeError("estimator: prior " + shape_str(prior.shape) + " does not match image " +
                         shape_str(image.shape));
    if (p.fuse_w.rank() != 4 || p.fuse_w.dim(2) != 4)
        throw ConfigError("estimator: fuse conv must take the 4-channel [image, prior] concat");
    const int c = p.fuse_w.dim(3);

    Tensor<T> fused_in = concat<T>({image, prior}, 2);
    ConvSpec fuse{1, 1, 0, 1, 4, c, true};
    ConvSpec dw{9, 1, 4, c, c, c, true};
    ConvSpec agg{1, 1, 0, 1, c, 3, true};
    Tensor<T> fused = conv2d(fused_in, fuse, p.fuse_w, p.fuse_b);
    Tensor<T> feature = conv2d(fused, dw, p.dw_w, p.dw_b);
    Tensor<T> map = conv2d(feature, agg, p.proj_w, p.proj_b);
    return {std::move(map), std::move(feature)};
}

// I_lu = image (.) map, elementwise. Deliberately a product, never a division.
template <typename T>
Tensor<T> light_up(const Tensor<T>& image, const Tensor<T>& map) {
    if (image.shape != map.shape)
        throw ShapeError("light_up: image " + shape_str(image.shape) + " vs map " + shape_str(map.shape));
    return mul(image, map);
}

template <typename T>
struct LightUpOutput {
    Tensor<T> light_up_map;     // H x W x 3
    Tensor<T> lit_image;        // H x W x 3
    Tensor<T> light_up_feature; // H x W x C
};

// The light-up map is left unclamped and unactivated; the restorer absorbs
// over-/under-shoot. A debug warning fires when it grows past 10 in magnitude.
template <typename T>
LightUpOutput<T> estimate_illumination(const Tensor<T>& image, const Tensor<T>& prior, const EstimatorParams<T>& p) {
    EstimatorMaps<T> maps = estimator_maps(image, prior, p);
    if (flags().warn_large_light_up) {
        T mx = T(0);
        for (T v : maps.map.data()) mx = std::max(mx, std::abs(v));
        if (mx > T(10)) {
            static int warned = 0;
            if (warned < 5) {
                std::fprintf(stderr, "rxf: warning: light-up map magnitude %.3g exceeds 10\n",
                             static_cast<double>(mx));
                ++warned;
            }
        }
    }
    Tensor<T> lit = light_up(image, maps.map);
    return {std::move(maps.map), std::move(lit), std::move(maps.feature)};
}

} // namespace rxf
