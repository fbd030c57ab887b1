#pragma once

// C-infinity building blocks shared by the mollifier, the velocity-field
// cutoff and the sub-solution cutoffs.

#include <cmath>

namespace kinetic_noise::smooth {

struct Jet {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

/// Unnormalised bump exp(-1 / (1 - z^2)) on |z| < 1 with two derivatives.
inline Jet bump(double z) {
    const double w = 1.0 - z * z;
    if (w <= 0.0) return {};
    const double e = std::exp(-1.0 / w);
    const double w2 = w * w;
    return {e, -2.0 * z * e / w2, e * (4.0 * z * z - 2.0 * w2 - 8.0 * z * z * w) / (w2 * w2)};
}

/// Smooth step: 0 for s <= 0, 1 for s >= 1, monotone in between.
inline Jet step(double s) {
    if (s <= 0.0) return {0.0, 0.0, 0.0};
    if (s >= 1.0) return {1.0, 0.0, 0.0};
    auto edge = [](double r, double& a, double& a1, double& a2) {
        a = std::exp(-1.0 / r);
        a1 = a / (r * r);
        a2 = a * (1.0 / (r * r * r * r) - 2.0 / (r * r * r));
    };
    double a, a1, a2, b, b1, b2;
    edge(s, a, a1, a2);
    edge(1.0 - s, b, b1, b2);
    b1 = -b1;  // d/ds of b(1 - s)
    const double d = a + b;
    const double d1 = a1 + b1;
    const double n = a1 * b - a * b1;
    const double n1 = a2 * b - a * b2;
    return {a / d, n / (d * d), (n1 * d - 2.0 * n * d1) / (d * d * d)};
}

/// Rising transition from 0 at `lo` to 1 at `hi`, as a function of r.
inline Jet rise(double r, double lo, double hi) {
    const double width = hi - lo;
    const Jet s = step((r - lo) / width);
    return {s.value, s.d1 / width, s.d2 / (width * width)};
}

/// Falling transition from 1 at `lo` to 0 at `hi`.
inline Jet fall(double r, double lo, double hi) {
    const Jet s = rise(r, lo, hi);
    return {1.0 - s.value, -s.d1, -s.d2};
}

inline Jet product(const Jet& a, const Jet& b) {
    return {a.value * b.value, a.d1 * b.value + a.value * b.d1,
            a.d2 * b.value + 2.0 * a.d1 * b.d1 + a.value * b.d2};
}

/// Radial profile g(|x|) seen as a function of x in one dimension.
inline Jet radial_1d(const Jet& g, double x) {
    const double sgn = x < 0.0 ? -1.0 : 1.0;
    return {g.value, sgn * g.d1, g.d2};
}

}  // namespace kinetic_noise::smooth
