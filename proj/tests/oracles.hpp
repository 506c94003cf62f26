#pragma once

// Brute-force reference implementations used only by tests. None of these
// share code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "dumpwatch/dataset.hpp"
#include "dumpwatch/geodata.hpp"
#include "dumpwatch/tensor.hpp"

namespace dumpwatch::oracle {

/// Direct six-deep loop cross-correlation with zero padding k/2.
template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, std::size_t batch, std::size_t cin, std::size_t h,
                      std::size_t w, const std::vector<T>& kernel, std::size_t cout, std::size_t k,
                      const std::vector<T>& bias) {
    const long pad = static_cast<long>(k / 2);
    std::vector<T> y(batch * cout * h * w, T(0));
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    double acc = bias[o];
                    for (std::size_t i = 0; i < cin; ++i)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long sr = static_cast<long>(r + ky) - pad;
                                const long sc = static_cast<long>(c + kx) - pad;
                                if (sr < 0 || sc < 0 || sr >= static_cast<long>(h) || sc >= static_cast<long>(w)) continue;
                                acc += static_cast<double>(kernel[((o * cin + i) * k + ky) * k + kx]) *
                                       static_cast<double>(x[((b * cin + i) * h + sr) * w + sc]);
                            }
                    y[((b * cout + o) * h + r) * w + c] = static_cast<T>(acc);
                }
    return y;
}

/// Transposed 2x2 stride-2 convolution by scatter-accumulate.
template <typename T>
std::vector<T> transposed_conv(const std::vector<T>& x, std::size_t batch, std::size_t cin, std::size_t h,
                               std::size_t w, const std::vector<T>& kernel, std::size_t cout,
                               const std::vector<T>& bias) {
    std::vector<T> y(batch * cout * 4 * h * w, T(0));
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t r = 0; r < 2 * h; ++r)
                for (std::size_t c = 0; c < 2 * w; ++c) y[((b * cout + o) * 2 * h + r) * 2 * w + c] = bias[o];
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c)
                    for (std::size_t o = 0; o < cout; ++o)
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx)
                                y[((b * cout + o) * 2 * h + 2 * r + dy) * 2 * w + 2 * c + dx] +=
                                    x[((b * cin + i) * h + r) * w + c] * kernel[((i * cout + o) * 2 + dy) * 2 + dx];
    return y;
}

/// Stride-2 2x2 convolution (no padding, no bias): the map whose adjoint is
/// the transposed convolution.
template <typename T>
std::vector<T> strided_conv(const std::vector<T>& y, std::size_t batch, std::size_t cout, std::size_t h,
                            std::size_t w, const std::vector<T>& kernel, std::size_t cin) {
    std::vector<T> x(batch * cin * h * w, T(0));
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    T acc = 0;
                    for (std::size_t o = 0; o < cout; ++o)
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx)
                                acc += y[((b * cout + o) * 2 * h + 2 * r + dy) * 2 * w + 2 * c + dx] *
                                       kernel[((i * cout + o) * 2 + dy) * 2 + dx];
                    x[((b * cin + i) * h + r) * w + c] = acc;
                }
    return x;
}

/// Central finite differences of a scalar function of the given tensors.
/// Returns the max relative error against the analytic gradients, using
/// max(|analytic|, |numeric|, floor) as the denominator.
inline double gradient_check(std::vector<Tensor64> inputs,
                             const std::function<Tensor64(Graph<double>&, const std::vector<Tensor64>&)>& f,
                             double h = 1e-5, double floor = 1e-6) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Graph<double> g;
    auto loss = f(g, inputs);
    backward(g, loss);
    double worst = 0.0;
    for (auto& t : inputs) {
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double orig = t[i];
            Graph<double> ig(Graph<double>::Mode::kInference);
            t[i] = orig + h;
            const double up = f(ig, inputs).item();
            t[i] = orig - h;
            const double down = f(ig, inputs).item();
            t[i] = orig;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return worst;
}

/// Ray casting to +x over every ring edge; independent of the library's
/// scanline fill.
inline bool inside(const PolygonAnnotation& poly, double x, double y) {
    bool in = false;
    auto ring_pass = [&](const Ring& ring) {
        for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
            const auto& a = ring[i];
            const auto& b = ring[j];
            if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
        }
    };
    ring_pass(poly.exterior);
    for (const auto& hole : poly.holes) ring_pass(hole);
    return in;
}

inline Mask rasterize(const std::vector<PolygonAnnotation>& polys, const GeoTransform& t, int w, int h) {
    Mask m(w, h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double x = t.origin_x + (c + 0.5) * t.pixel_width;
            const double y = t.origin_y - (r + 0.5) * t.pixel_height;
            for (const auto& p : polys)
                if (inside(p, x, y)) m.at(r, c) = 1;
        }
    return m;
}

/// Recursive-free depth-first flood fill, labels in first-encounter order.
inline std::vector<int> flood_fill_labels(const Mask& m, int connectivity, int* count = nullptr) {
    std::vector<int> labels(m.data.size(), 0);
    int next = 0;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) {
            if (!m.at(r, c) || labels[static_cast<std::size_t>(r) * m.width + c]) continue;
            ++next;
            std::vector<std::pair<int, int>> stack{{r, c}};
            labels[static_cast<std::size_t>(r) * m.width + c] = next;
            while (!stack.empty()) {
                auto [y, x] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        if (connectivity == 4 && dy != 0 && dx != 0) continue;
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width) continue;
                        auto& l = labels[static_cast<std::size_t>(ny) * m.width + nx];
                        if (!m.at(ny, nx) || l) continue;
                        l = next;
                        stack.push_back({ny, nx});
                    }
            }
        }
    if (count) *count = next;
    return labels;
}

/// IoU from explicit pixel sets.
inline double set_iou(const Mask& a, const Mask& b) {
    std::set<std::pair<int, int>> sa, sb, un, in;
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c) {
            if (a.at(r, c)) sa.insert({r, c});
            if (b.at(r, c)) sb.insert({r, c});
        }
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(un, un.end()));
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(in, in.end()));
    if (un.empty()) return 1.0;
    return static_cast<double>(in.size()) / static_cast<double>(un.size());
}

inline Mask random_mask(std::mt19937_64& rng, int w, int h, double density) {
    std::bernoulli_distribution bit(density);
    Mask m(w, h);
    for (auto& v : m.data) v = bit(rng);
    return m;
}

/// Star-shaped ring around (cx, cy): jittered increasing angles with every
/// gap below pi, radii in [rmin, rmax]. Counter-clockwise and simple by
/// construction.
inline Ring random_star_ring(std::mt19937_64& rng, double cx, double cy, double rmin, double rmax,
                             int min_vertices = 3, int max_vertices = 9) {
    const int n = std::uniform_int_distribution<int>(min_vertices, max_vertices)(rng);
    std::uniform_real_distribution<double> jitter(0.0, 0.4), radius(rmin, rmax);
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
    Ring ring;
    for (int i = 0; i < n; ++i) {
        const double a = phase + 2.0 * M_PI * (i + jitter(rng)) / n;
        const double r = radius(rng);
        ring.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    ring.push_back(ring.front());
    return ring;
}

/// Random star polygon, optionally with one star hole strictly inside it.
inline PolygonAnnotation random_polygon(std::mt19937_64& rng, const GeoTransform& t, int w, int h,
                                        bool allow_hole = true) {
    std::uniform_real_distribution<double> fx(0.0, w), fy(0.0, h);
    const double span = std::min(w, h) * std::min(t.pixel_width, t.pixel_height);
    const double cx = t.origin_x + fx(rng) * t.pixel_width;
    const double cy = t.origin_y - fy(rng) * t.pixel_height;
    const double rmax = std::uniform_real_distribution<double>(0.1, 0.6)(rng) * span;
    const double rmin = 0.5 * rmax;
    PolygonAnnotation p;
    p.exterior = random_star_ring(rng, cx, cy, rmin, rmax);
    if (allow_hole && std::bernoulli_distribution(0.4)(rng)) {
        auto hole = random_star_ring(rng, cx, cy, 0.1 * rmin, 0.45 * rmin);
        std::reverse(hole.begin(), hole.end());
        p.holes.push_back(hole);
    }
    return p;
}

}  // namespace dumpwatch::oracle
