#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "hedet/rng.hpp"

namespace hedet {

/// Smallest width/height a valid box may have. Boxes at or below the
/// degeneracy threshold (1e-6) are rejected at construction; perturbation
/// clamps to this value instead.
inline constexpr double kMinBoxSize = 1e-3;
inline constexpr double kDegenerateBoxSize = 1e-6;

/// Axis-aligned corner rectangle, any scale. x1 < x2 and y1 < y2 expected.
template <typename Scalar>
struct CornerRect {
    Scalar x1, y1, x2, y2;
    Scalar area() const { return (x2 - x1) * (y2 - y1); }
};

template <typename Scalar>
Scalar iou(const CornerRect<Scalar>& a, const CornerRect<Scalar>& b) {
    const Scalar iw = std::max(Scalar(0), std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const Scalar ih = std::max(Scalar(0), std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const Scalar inter = iw * ih;
    const Scalar uni = a.area() + b.area() - inter;
    return uni > Scalar(0) ? inter / uni : Scalar(0);
}

/// Generalized IoU: iou minus the normalized empty area of the smallest
/// enclosing rectangle. Range (-1, 1].
template <typename Scalar>
Scalar giou(const CornerRect<Scalar>& a, const CornerRect<Scalar>& b) {
    const Scalar iw = std::max(Scalar(0), std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const Scalar ih = std::max(Scalar(0), std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const Scalar inter = iw * ih;
    const Scalar uni = a.area() + b.area() - inter;
    const Scalar cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    const Scalar ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    const Scalar enclose = cw * ch;
    const Scalar i = uni > Scalar(0) ? inter / uni : Scalar(0);
    if (enclose <= Scalar(0)) return i;
    return i - (enclose - uni) / enclose;
}

/// Normalized center-size bounding box. Coordinates are relative to the
/// image extent: cx, cy in [0,1], 0 < w,h <= 1.
struct Box {
    double cx = 0.5, cy = 0.5, w = 1.0, h = 1.0;

    static Box center_size(double cx, double cy, double w, double h) {
        if (!(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h)))
            throw std::invalid_argument("box: non-finite coordinate");
        if (cx < 0.0 || cx > 1.0 || cy < 0.0 || cy > 1.0)
            throw std::invalid_argument("box: center outside [0,1]");
        if (w <= kDegenerateBoxSize || h <= kDegenerateBoxSize)
            throw std::invalid_argument("box: degenerate size");
        if (w > 1.0 || h > 1.0)
            throw std::invalid_argument("box: size above 1");
        Box b;
        b.cx = cx; b.cy = cy; b.w = w; b.h = h;
        return b;
    }

    static Box corners(double x1, double y1, double x2, double y2) {
        return center_size(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1);
    }

    CornerRect<double> corner_form() const {
        return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    }
};

inline double iou(const Box& a, const Box& b) { return iou(a.corner_form(), b.corner_form()); }
inline double giou(const Box& a, const Box& b) { return giou(a.corner_form(), b.corner_form()); }

/// Denoising-query construction parameters.
struct DenoisingConfig {
    double epsilon = 0.1;   // perturbation half-range per center-size coordinate
    int groups = 2;         // independent noisy copies of the GT set
    double lambda_dn = 1.0; // weight of the denoising loss in the total

    void validate() const {
        if (!(epsilon >= 0.0 && epsilon < 0.5))
            throw std::invalid_argument("denoising: epsilon must be in [0, 0.5)");
        if (groups < 1)
            throw std::invalid_argument("denoising: groups must be >= 1");
        if (!(lambda_dn >= 0.0))
            throw std::invalid_argument("denoising: lambda_dn must be >= 0");
    }
};

/// Shift each center-size coordinate by an independent uniform draw in
/// [-epsilon, epsilon], then clamp back to a valid box. Consumes exactly
/// four uniforms in (cx, cy, w, h) order.
inline Box perturb_box(const Box& b, const DenoisingConfig& cfg, RandomStream& rng) {
    const double e = cfg.epsilon;
    const double cx = b.cx + rng.uniform(-e, e);
    const double cy = b.cy + rng.uniform(-e, e);
    const double w = b.w + rng.uniform(-e, e);
    const double h = b.h + rng.uniform(-e, e);
    // Size floor never exceeds the input size, so epsilon = 0 is an exact identity.
    const double wmin = std::min(b.w, kMinBoxSize);
    const double hmin = std::min(b.h, kMinBoxSize);
    Box out;
    out.cx = std::clamp(cx, 0.0, 1.0);
    out.cy = std::clamp(cy, 0.0, 1.0);
    out.w = std::clamp(w, wmin, 1.0);
    out.h = std::clamp(h, hmin, 1.0);
    return out;
}

} // namespace hedet
