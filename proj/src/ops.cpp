#include "dumpwatch/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>

#include "dumpwatch/parallel.hpp"

namespace dumpwatch {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* what) {
    if (!t.defined() || t.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": " + what + " must have rank " +
                                    std::to_string(rank));
    }
}

struct ImageDims {
    std::size_t batch, channels, height, width;
    std::size_t plane() const { return height * width; }
    std::size_t image() const { return channels * height * width; }
};

template <typename T>
ImageDims image_dims(const BasicTensor<T>& t, const char* op) {
    require_rank(t, 4, op, "input");
    return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// Unfolds a [C, H, W] image into [C*k*k, H*W] patch columns with zero padding.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t k, T* cols) {
    const long pad = static_cast<long>(k / 2);
    const long h = static_cast<long>(height);
    const long w = static_cast<long>(width);
    for (std::size_t c = 0; c < channels; ++c) {
        const T* plane = image + c * height * width;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = cols + ((c * k + ky) * k + kx) * height * width;
                const long dy = static_cast<long>(ky) - pad;
                const long dx = static_cast<long>(kx) - pad;
                for (long y = 0; y < h; ++y) {
                    T* out = row + y * w;
                    const long sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(out, out + w, T(0));
                        continue;
                    }
                    const T* src = plane + sy * w;
                    for (long x = 0; x < w; ++x) {
                        const long sx = x + dx;
                        out[x] = (sx < 0 || sx >= w) ? T(0) : src[sx];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters patch columns back onto the image.
template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t k, T* image) {
    const long pad = static_cast<long>(k / 2);
    const long h = static_cast<long>(height);
    const long w = static_cast<long>(width);
    for (std::size_t c = 0; c < channels; ++c) {
        T* plane = image + c * height * width;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = cols + ((c * k + ky) * k + kx) * height * width;
                const long dy = static_cast<long>(ky) - pad;
                const long dx = static_cast<long>(kx) - pad;
                for (long y = 0; y < h; ++y) {
                    const long sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const T* in = row + y * w;
                    T* dst = plane + sy * w;
                    const long x0 = std::max(0L, -dx);
                    const long x1 = std::min(w, w - dx);
                    for (long x = x0; x < x1; ++x) dst[x + dx] += in[x];
                }
            }
        }
    }
}

// Sums per-sample parameter gradients in sample order so the result does not
// depend on how samples were spread over workers.
template <typename T>
void reduce_into(std::span<T> dst, const std::vector<std::vector<T>>& parts) {
    for (const auto& part : parts) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += part[i];
    }
}

}  // namespace

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <typename T>
BasicTensor<T> conv2d(Graph<T>& g, const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias) {
    const auto in = image_dims(input, "conv2d");
    require_rank(kernel, 4, "conv2d", "kernel");
    require_rank(bias, 1, "conv2d", "bias");
    const std::size_t cout = kernel.dim(0);
    const std::size_t k = kernel.dim(2);
    if (kernel.dim(1) != in.channels) {
        throw std::invalid_argument("conv2d: channel mismatch, input has " +
                                    std::to_string(in.channels) + " channels, kernel expects " +
                                    std::to_string(kernel.dim(1)));
    }
    if (k != kernel.dim(3) || k % 2 == 0) {
        throw std::invalid_argument("conv2d: kernel must be square with odd size");
    }
    if (bias.dim(0) != cout) throw std::invalid_argument("conv2d: bias size mismatch");

    const std::size_t patch = in.channels * k * k;
    const std::size_t hw = in.plane();
    BasicTensor<T> out(Shape{in.batch, cout, in.height, in.width});

    const T* x = input.values().data();
    const T* w = kernel.values().data();
    const T* bv = bias.values().data();
    T* y = out.values().data();
    parallel_for(in.batch, [&](std::size_t b) {
        std::vector<T> cols(patch * hw);
        im2col(x + b * in.image(), in.channels, in.height, in.width, k, cols.data());
        ConstMatMap<T> wm(w, cout, patch);
        ConstMatMap<T> cm(cols.data(), patch, hw);
        MatMap<T> om(y + b * cout * hw, cout, hw);
        om.noalias() = wm * cm;
        for (std::size_t o = 0; o < cout; ++o) om.row(o).array() += bv[o];
    });

    if (!g.wants({&input, &kernel, &bias})) return out;
    g.record("conv2d", {input, kernel, bias}, out, [input, kernel, bias, out, in, cout, k, patch]() mutable {
        const std::size_t hw = in.plane();
        const T* gy = out.grad().data();
        const bool need_x = input.requires_grad();
        const bool need_w = kernel.requires_grad();
        const bool need_b = bias.requires_grad();
        std::vector<std::vector<T>> dw(need_w ? in.batch : 0);
        std::vector<std::vector<T>> db(need_b ? in.batch : 0);
        T* gx = need_x ? input.grad().data() : nullptr;
        const T* x = input.values().data();
        const T* w = kernel.values().data();
        parallel_for(in.batch, [&](std::size_t b) {
            ConstMatMap<T> gm(gy + b * cout * hw, cout, hw);
            if (need_b) {
                db[b].assign(cout, T(0));
                for (std::size_t o = 0; o < cout; ++o) db[b][o] = gm.row(o).sum();
            }
            if (!need_w && !need_x) return;
            std::vector<T> cols(patch * hw);
            if (need_w) {
                im2col(x + b * in.image(), in.channels, in.height, in.width, k, cols.data());
                dw[b].assign(cout * patch, T(0));
                MatMap<T> dwm(dw[b].data(), cout, patch);
                ConstMatMap<T> cm(cols.data(), patch, hw);
                dwm.noalias() = gm * cm.transpose();
            }
            if (need_x) {
                MatMap<T> dcols(cols.data(), patch, hw);
                ConstMatMap<T> wm(w, cout, patch);
                dcols.noalias() = wm.transpose() * gm;
                col2im_add(cols.data(), in.channels, in.height, in.width, k, gx + b * in.image());
            }
        });
        if (need_w) reduce_into(kernel.grad(), dw);
        if (need_b) reduce_into(bias.grad(), db);
    });
    return out;
}

template <typename T>
BasicTensor<T> max_pool_2x2(Graph<T>& g, const BasicTensor<T>& input) {
    const auto in = image_dims(input, "max_pool_2x2");
    if (in.height % 2 != 0 || in.width % 2 != 0) {
        throw std::invalid_argument("max_pool_2x2: odd spatial dimension " +
                                    shape_string(input.shape()));
    }
    const std::size_t oh = in.height / 2;
    const std::size_t ow = in.width / 2;
    BasicTensor<T> out(Shape{in.batch, in.channels, oh, ow});
    std::vector<std::size_t> argmax(out.numel());
    const T* x = input.values().data();
    T* y = out.values().data();
    const std::size_t planes = in.batch * in.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x + p * in.plane();
        for (std::size_t r = 0; r < oh; ++r) {
            for (std::size_t c = 0; c < ow; ++c) {
                const std::size_t base = 2 * r * in.width + 2 * c;
                const std::size_t cand[4] = {base, base + 1, base + in.width, base + in.width + 1};
                std::size_t best = cand[0];
                for (int i = 1; i < 4; ++i) {
                    if (src[cand[i]] > src[best]) best = cand[i];
                }
                const std::size_t o = p * oh * ow + r * ow + c;
                y[o] = src[best];
                argmax[o] = p * in.plane() + best;
            }
        }
    }
    if (!g.wants({&input})) return out;
    g.record("max_pool_2x2", {input}, out, [input, out, argmax = std::move(argmax)]() mutable {
        auto gx = input.grad();
        auto gy = out.grad();
        for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
    });
    return out;
}

template <typename T>
BasicTensor<T> transposed_conv_2x2(Graph<T>& g, const BasicTensor<T>& input,
                                   const BasicTensor<T>& kernel, const BasicTensor<T>& bias) {
    const auto in = image_dims(input, "transposed_conv_2x2");
    require_rank(kernel, 4, "transposed_conv_2x2", "kernel");
    require_rank(bias, 1, "transposed_conv_2x2", "bias");
    if (kernel.dim(0) != in.channels) {
        throw std::invalid_argument("transposed_conv_2x2: channel mismatch, input has " +
                                    std::to_string(in.channels) + " channels, kernel expects " +
                                    std::to_string(kernel.dim(0)));
    }
    if (kernel.dim(2) != 2 || kernel.dim(3) != 2) {
        throw std::invalid_argument("transposed_conv_2x2: kernel must be 2x2");
    }
    const std::size_t cout = kernel.dim(1);
    if (bias.dim(0) != cout) throw std::invalid_argument("transposed_conv_2x2: bias size mismatch");

    const std::size_t hw = in.plane();
    const std::size_t oh = 2 * in.height;
    const std::size_t ow = 2 * in.width;
    BasicTensor<T> out(Shape{in.batch, cout, oh, ow});
    const T* x = input.values().data();
    const T* w = kernel.values().data();
    const T* bv = bias.values().data();
    T* y = out.values().data();

    // Per sample: Y[(co,dy,dx), hw] = W^T[(co,dy,dx), ci] * X[ci, hw], then
    // each Y entry lands on output pixel (2i+dy, 2j+dx).
    parallel_for(in.batch, [&](std::size_t b) {
        ConstMatMap<T> wm(w, in.channels, cout * 4);
        ConstMatMap<T> xm(x + b * in.image(), in.channels, hw);
        RowMat<T> ym = wm.transpose() * xm;
        T* dst = y + b * cout * oh * ow;
        for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t d = 0; d < 4; ++d) {
                const std::size_t dy = d / 2, dx = d % 2;
                const T* row = ym.data() + (co * 4 + d) * hw;
                T* plane = dst + co * oh * ow;
                for (std::size_t i = 0; i < in.height; ++i) {
                    for (std::size_t j = 0; j < in.width; ++j) {
                        plane[(2 * i + dy) * ow + 2 * j + dx] = row[i * in.width + j] + bv[co];
                    }
                }
            }
        }
    });

    if (!g.wants({&input, &kernel, &bias})) return out;
    g.record("transposed_conv_2x2", {input, kernel, bias}, out,
             [input, kernel, bias, out, in, cout, oh, ow]() mutable {
                 const std::size_t hw = in.plane();
                 const bool need_x = input.requires_grad();
                 const bool need_w = kernel.requires_grad();
                 const bool need_b = bias.requires_grad();
                 std::vector<std::vector<T>> dw(need_w ? in.batch : 0);
                 std::vector<std::vector<T>> db(need_b ? in.batch : 0);
                 const T* gy = out.grad().data();
                 const T* x = input.values().data();
                 const T* w = kernel.values().data();
                 T* gx = need_x ? input.grad().data() : nullptr;
                 parallel_for(in.batch, [&](std::size_t b) {
                     RowMat<T> gym(cout * 4, hw);
                     const T* src = gy + b * cout * oh * ow;
                     for (std::size_t co = 0; co < cout; ++co) {
                         for (std::size_t d = 0; d < 4; ++d) {
                             const std::size_t dy = d / 2, dx = d % 2;
                             T* row = gym.data() + (co * 4 + d) * hw;
                             const T* plane = src + co * oh * ow;
                             for (std::size_t i = 0; i < in.height; ++i) {
                                 for (std::size_t j = 0; j < in.width; ++j) {
                                     row[i * in.width + j] = plane[(2 * i + dy) * ow + 2 * j + dx];
                                 }
                             }
                         }
                     }
                     if (need_b) {
                         db[b].assign(cout, T(0));
                         for (std::size_t co = 0; co < cout; ++co) {
                             db[b][co] = gym.middleRows(co * 4, 4).sum();
                         }
                     }
                     if (need_w) {
                         dw[b].assign(in.channels * cout * 4, T(0));
                         MatMap<T> dwm(dw[b].data(), in.channels, cout * 4);
                         ConstMatMap<T> xm(x + b * in.image(), in.channels, hw);
                         dwm.noalias() = xm * gym.transpose();
                     }
                     if (need_x) {
                         ConstMatMap<T> wm(w, in.channels, cout * 4);
                         MatMap<T> gxm(gx + b * in.image(), in.channels, hw);
                         gxm.noalias() += wm * gym;
                     }
                 });
                 if (need_w) reduce_into(kernel.grad(), dw);
                 if (need_b) reduce_into(bias.grad(), db);
             });
    return out;
}

template <typename T>
BasicTensor<T> concat_channels(Graph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const auto da = image_dims(a, "concat_channels");
    const auto dbm = image_dims(b, "concat_channels");
    if (da.batch != dbm.batch || da.height != dbm.height || da.width != dbm.width) {
        throw std::invalid_argument("concat_channels: shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
    }
    const std::size_t ia = da.image();
    const std::size_t ib = dbm.image();
    BasicTensor<T> out(Shape{da.batch, da.channels + dbm.channels, da.height, da.width});
    auto y = out.values();
    for (std::size_t n = 0; n < da.batch; ++n) {
        std::copy_n(a.values().begin() + n * ia, ia, y.begin() + n * (ia + ib));
        std::copy_n(b.values().begin() + n * ib, ib, y.begin() + n * (ia + ib) + ia);
    }
    if (!g.wants({&a, &b})) return out;
    g.record("concat_channels", {a, b}, out, [a, b, out, ia, ib, batch = da.batch]() mutable {
        auto gy = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t i = 0; i < ia; ++i) ga[n * ia + i] += gy[n * (ia + ib) + i];
            }
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t i = 0; i < ib; ++i) gb[n * ib + i] += gy[n * (ia + ib) + ia + i];
            }
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> crop2d(Graph<T>& g, const BasicTensor<T>& input, std::size_t top, std::size_t left,
                      std::size_t height, std::size_t width) {
    const auto in = image_dims(input, "crop2d");
    if (top + height > in.height || left + width > in.width) {
        throw std::invalid_argument("crop2d: window exceeds input " + shape_string(input.shape()));
    }
    BasicTensor<T> out(Shape{in.batch, in.channels, height, width});
    auto x = input.values();
    auto y = out.values();
    const std::size_t planes = in.batch * in.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < height; ++r) {
            std::copy_n(x.begin() + p * in.plane() + (top + r) * in.width + left, width,
                        y.begin() + (p * height + r) * width);
        }
    }
    if (!g.wants({&input})) return out;
    g.record("crop2d", {input}, out, [input, out, in, top, left, height, width]() mutable {
        auto gx = input.grad();
        auto gy = out.grad();
        const std::size_t planes = in.batch * in.channels;
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t r = 0; r < height; ++r) {
                for (std::size_t c = 0; c < width; ++c) {
                    gx[p * in.plane() + (top + r) * in.width + left + c] +=
                        gy[(p * height + r) * width + c];
                }
            }
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> relu(Graph<T>& g, const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape());
    auto xv = x.values();
    auto y = out.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (!g.wants({&x})) return out;
    g.record("relu", {x}, out, [x, out]() mutable {
        auto gx = x.grad();
        auto gy = out.grad();
        auto xv = x.values();
        for (std::size_t i = 0; i < gy.size(); ++i) {
            if (xv[i] > T(0)) gx[i] += gy[i];
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> sigmoid(Graph<T>& g, const BasicTensor<T>& x) {
    // Largest representable value below one, and the smallest positive one.
    constexpr T lo = std::numeric_limits<T>::denorm_min();
    constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
    BasicTensor<T> out(x.shape());
    auto xv = x.values();
    auto y = out.values();
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = std::clamp(static_cast<T>(stable_sigmoid(static_cast<double>(xv[i]))), lo, hi);
    }
    if (!g.wants({&x})) return out;
    g.record("sigmoid", {x}, out, [x, out]() mutable {
        auto gx = x.grad();
        auto gy = out.grad();
        auto y = out.values();
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
    });
    return out;
}

template <typename T>
BasicTensor<T> mul(Graph<T>& g, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("mul: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
    BasicTensor<T> out(a.shape());
    auto y = out.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
    if (!g.wants({&a, &b})) return out;
    g.record("mul", {a, b}, out, [a, b, out]() mutable {
        auto gy = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
        }
    });
    return out;
}

template <typename T>
BasicTensor<T> sum(Graph<T>& g, const BasicTensor<T>& x) {
    double acc = 0.0;
    for (T v : x.values()) acc += static_cast<double>(v);
    auto out = BasicTensor<T>::scalar(static_cast<T>(acc));
    if (!g.wants({&x})) return out;
    g.record("sum", {x}, out, [x, out]() mutable {
        const T gy = out.grad()[0];
        for (auto& v : x.grad()) v += gy;
    });
    return out;
}

template <typename T>
BasicTensor<T> weighted_bce_with_logits(Graph<T>& g, const BasicTensor<T>& logits,
                                        const BasicTensor<T>& target, double pos_weight) {
    if (logits.shape() != target.shape()) {
        throw std::invalid_argument("weighted_bce_with_logits: shape mismatch " +
                                    shape_string(logits.shape()) + " vs " +
                                    shape_string(target.shape()));
    }
    if (!(pos_weight > 0.0) || !std::isfinite(pos_weight)) {
        throw std::invalid_argument("weighted_bce_with_logits: pos_weight must be positive");
    }
    auto z = logits.values();
    auto t = target.values();
    for (T v : t) {
        if (v != T(0) && v != T(1)) {
            throw std::invalid_argument("weighted_bce_with_logits: target is not binary");
        }
    }
    const double n = static_cast<double>(z.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = static_cast<double>(z[i]);
        acc += t[i] != T(0) ? pos_weight * softplus(-zi) : softplus(zi);
    }
    auto out = BasicTensor<T>::scalar(static_cast<T>(acc / n));
    if (!g.wants({&logits})) return out;
    g.record("weighted_bce_with_logits", {logits, target}, out,
             [logits, target, out, pos_weight, n]() mutable {
                 const double gy = static_cast<double>(out.grad()[0]) / n;
                 auto gz = logits.grad();
                 auto z = logits.values();
                 auto t = target.values();
                 for (std::size_t i = 0; i < gz.size(); ++i) {
                     const double s = stable_sigmoid(static_cast<double>(z[i]));
                     const double d = t[i] != T(0) ? -pos_weight * (1.0 - s) : s;
                     gz[i] += static_cast<T>(gy * d);
                 }
             });
    return out;
}

#define DUMPWATCH_INSTANTIATE_OPS(T)                                                               \
    template BasicTensor<T> conv2d(Graph<T>&, const BasicTensor<T>&, const BasicTensor<T>&,       \
                                   const BasicTensor<T>&);                                         \
    template BasicTensor<T> max_pool_2x2(Graph<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> transposed_conv_2x2(Graph<T>&, const BasicTensor<T>&,                  \
                                                const BasicTensor<T>&, const BasicTensor<T>&);     \
    template BasicTensor<T> concat_channels(Graph<T>&, const BasicTensor<T>&,                      \
                                            const BasicTensor<T>&);                                \
    template BasicTensor<T> crop2d(Graph<T>&, const BasicTensor<T>&, std::size_t, std::size_t,     \
                                   std::size_t, std::size_t);                                      \
    template BasicTensor<T> relu(Graph<T>&, const BasicTensor<T>&);                                \
    template BasicTensor<T> sigmoid(Graph<T>&, const BasicTensor<T>&);                             \
    template BasicTensor<T> mul(Graph<T>&, const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> sum(Graph<T>&, const BasicTensor<T>&);                                 \
    template BasicTensor<T> weighted_bce_with_logits(Graph<T>&, const BasicTensor<T>&,             \
                                                     const BasicTensor<T>&, double);

DUMPWATCH_INSTANTIATE_OPS(float)
DUMPWATCH_INSTANTIATE_OPS(double)

#undef DUMPWATCH_INSTANTIATE_OPS

}  // namespace dumpwatch
