#include "crownseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

// Small products otherwise take a coefficient-wise path whose vectorisation
// depends on buffer addresses; GEMM/GEMV results do not.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>

namespace crownseg {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
bool recording(Tape<T>* tape, const Tensor<T>& out) {
    return tape != nullptr && out.requires_grad();
}

void require_rank4(const Shape& s, const char* what) {
    if (s.size() != 4) throw DimensionError(std::string(what) + " expects an N x C x H x W tensor, got " + shape_string(s));
}

struct ConvGeometry {
    std::size_t n, cin, h, w;
    std::size_t cout, kh, kw;
    std::size_t ho, wo;
    std::ptrdiff_t pad_h, pad_w;
    std::size_t stride, dilation;

    std::size_t col_rows() const { return cin * kh * kw; }
    std::size_t col_cols() const { return ho * wo; }
    bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad_h == 0 && pad_w == 0; }
};

std::size_t pad_for(std::size_t kernel, const Conv2dOptions& opts) {
    if (opts.padding == Padding::valid) return 0;
    if (kernel % 2 == 0) throw DimensionError("same-zero padding needs an odd kernel extent");
    return opts.dilation * (kernel - 1) / 2;
}

// valid output-column range [lo, hi) for a stride-1 row with input offset off
inline void valid_range(std::ptrdiff_t off, std::ptrdiff_t w, std::ptrdiff_t wo, std::ptrdiff_t& lo,
                        std::ptrdiff_t& hi) {
    lo = std::clamp<std::ptrdiff_t>(-off, 0, wo);
    hi = std::clamp<std::ptrdiff_t>(w - off, lo, wo);
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const auto ho = static_cast<std::ptrdiff_t>(g.ho), wo = static_cast<std::ptrdiff_t>(g.wo);
    const auto h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
    const auto s = static_cast<std::ptrdiff_t>(g.stride), d = static_cast<std::ptrdiff_t>(g.dilation);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cin; ++c) {
        const T* plane = x + c * g.h * g.w;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj, ++row) {
                T* out = col + row * g.col_cols();
                const std::ptrdiff_t off_h = static_cast<std::ptrdiff_t>(ki) * d - g.pad_h;
                const std::ptrdiff_t off_w = static_cast<std::ptrdiff_t>(kj) * d - g.pad_w;
                std::ptrdiff_t lo = 0, hi = 0;
                if (s == 1) valid_range(off_w, w, wo, lo, hi);
                for (std::ptrdiff_t oh = 0; oh < ho; ++oh) {
                    const std::ptrdiff_t ih = oh * s + off_h;
                    T* dst = out + oh * wo;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst, dst + wo, T(0));
                        continue;
                    }
                    const T* src = plane + ih * w;
                    if (s == 1) {
                        std::fill(dst, dst + lo, T(0));
                        std::copy(src + lo + off_w, src + hi + off_w, dst + lo);
                        std::fill(dst + hi, dst + wo, T(0));
                        continue;
                    }
                    for (std::ptrdiff_t ow = 0; ow < wo; ++ow) {
                        const std::ptrdiff_t iw = ow * s + off_w;
                        dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
    const auto ho = static_cast<std::ptrdiff_t>(g.ho), wo = static_cast<std::ptrdiff_t>(g.wo);
    const auto h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
    const auto s = static_cast<std::ptrdiff_t>(g.stride), d = static_cast<std::ptrdiff_t>(g.dilation);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cin; ++c) {
        T* plane = dx + c * g.h * g.w;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj, ++row) {
                const T* in = col + row * g.col_cols();
                const std::ptrdiff_t off_h = static_cast<std::ptrdiff_t>(ki) * d - g.pad_h;
                const std::ptrdiff_t off_w = static_cast<std::ptrdiff_t>(kj) * d - g.pad_w;
                for (std::ptrdiff_t oh = 0; oh < ho; ++oh) {
                    const std::ptrdiff_t ih = oh * s + off_h;
                    if (ih < 0 || ih >= h) continue;
                    T* dst = plane + ih * w;
                    const T* src = in + oh * wo;
                    if (s == 1) {
                        std::ptrdiff_t lo = 0, hi = 0;
                        valid_range(off_w, w, wo, lo, hi);
                        for (std::ptrdiff_t ow = lo; ow < hi; ++ow) dst[ow + off_w] += src[ow];
                        continue;
                    }
                    for (std::ptrdiff_t ow = 0; ow < wo; ++ow) {
                        const std::ptrdiff_t iw = ow * s + off_w;
                        if (iw >= 0 && iw < w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

} // namespace

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, const Conv2dOptions& opts) {
    if (opts.stride == 0) throw ParameterError("conv2d stride must be positive");
    if (opts.dilation == 0) throw ParameterError("conv2d dilation must be positive");
    const std::size_t pad = pad_for(kernel, opts);
    const std::size_t span = opts.dilation * (kernel - 1) + 1;
    if (input + 2 * pad < span)
        throw DimensionError("conv2d input extent " + std::to_string(input) + " smaller than dilated kernel span " +
                             std::to_string(span));
    return (input + 2 * pad - span) / opts.stride + 1;
}

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const Conv2dOptions& opts) {
    require_rank4(x.shape(), "conv2d input");
    require_rank4(w.shape(), "conv2d weight");
    ConvGeometry g{};
    g.n = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = w.dim(0);
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    if (w.dim(1) != g.cin)
        throw DimensionError("conv2d channel mismatch: input " + shape_string(x.shape()) + ", weight " +
                             shape_string(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != g.cout))
        throw DimensionError("conv2d bias must have " + std::to_string(g.cout) + " entries");
    g.ho = conv_output_extent(g.h, g.kh, opts);
    g.wo = conv_output_extent(g.w, g.kw, opts);
    g.pad_h = static_cast<std::ptrdiff_t>(pad_for(g.kh, opts));
    g.pad_w = static_cast<std::ptrdiff_t>(pad_for(g.kw, opts));
    g.stride = opts.stride;
    g.dilation = opts.dilation;

    Tensor<T> y({g.n, g.cout, g.ho, g.wo}, T(0), detail::any_requires_grad<T>({&x, &w, &b}));
    const std::size_t rows = g.col_rows(), cols = g.col_cols();
    const T* xv = x.values().data();
    T* yv = y.values().data();
    ConstMatMap<T> wm(w.values().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(rows));

    const bool record = recording(tape, y);
    // column buffers are kept for the weight gradient when recording
    auto cols_cache = std::make_shared<std::vector<T>>();
    if (!g.is_pointwise()) cols_cache->resize((record && w.requires_grad() ? g.n : 1) * rows * cols);
    for (std::size_t n = 0; n < g.n; ++n) {
        const T* xn = xv + n * g.cin * g.h * g.w;
        const T* colp = xn;
        if (!g.is_pointwise()) {
            T* dst = cols_cache->data() + (cols_cache->size() > rows * cols ? n * rows * cols : 0);
            im2col(xn, g, dst);
            colp = dst;
        }
        ConstMatMap<T> cm(colp, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        MatMap<T> ym(yv + n * g.cout * cols, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(cols));
        ym.noalias() = wm * cm;
        if (b.defined()) {
            for (std::size_t o = 0; o < g.cout; ++o) ym.row(static_cast<Eigen::Index>(o)).array() += b[o];
        }
    }

    if (record) {
        auto xn = x.node_ptr(), wn = w.node_ptr(), yn = y.node_ptr();
        NodePtr<T> bn = b.defined() ? b.node_ptr() : nullptr;
        std::vector<NodePtr<T>> inputs{xn, wn};
        if (bn) inputs.push_back(bn);
        tape->record(std::move(inputs), yn, [g, cols_cache, xn = xn.get(), wn = wn.get(), bn = bn.get(), yn = yn.get()]() {
            const std::size_t rows = g.col_rows(), cols = g.col_cols();
            const auto er = static_cast<Eigen::Index>(rows), ec = static_cast<Eigen::Index>(cols),
                       eo = static_cast<Eigen::Index>(g.cout);
            const T* gy = yn->grad.data();
            std::vector<T> dcol(xn->requires_grad && !g.is_pointwise() ? rows * cols : 0);
            ConstMatMap<T> wm(wn->value.data(), eo, er);
            for (std::size_t n = 0; n < g.n; ++n) {
                ConstMatMap<T> gym(gy + n * g.cout * cols, eo, ec);
                const T* xs = xn->value.data() + n * g.cin * g.h * g.w;
                if (wn->requires_grad) {
                    const T* colp = g.is_pointwise() ? xs : cols_cache->data() + n * rows * cols;
                    ConstMatMap<T> cm(colp, er, ec);
                    MatMap<T> dw(wn->ensure_grad().data(), eo, er);
                    dw.noalias() += gym * cm.transpose();
                }
                if (bn && bn->requires_grad) {
                    auto& db = bn->ensure_grad();
                    // plain loop: Eigen's vectorised sum peels by address, so its
                    // rounding would depend on where the buffer happens to live
                    const T* gyn = gy + n * g.cout * cols;
                    for (std::size_t o = 0; o < g.cout; ++o) {
                        T s = T(0);
                        for (std::size_t i = 0; i < cols; ++i) s += gyn[o * cols + i];
                        db[o] += s;
                    }
                }
                if (xn->requires_grad) {
                    T* dx = xn->ensure_grad().data() + n * g.cin * g.h * g.w;
                    if (g.is_pointwise()) {
                        MatMap<T> dxm(dx, er, ec);
                        dxm.noalias() += wm.transpose() * gym;
                    } else {
                        MatMap<T> dcm(dcol.data(), er, ec);
                        dcm.noalias() = wm.transpose() * gym;
                        col2im_add(dcol.data(), g, dx);
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::fresh(std::size_t channels) {
    return BatchNormState{Tensor<T>({channels}, T(0)), Tensor<T>({channels}, T(1))};
}

namespace {

template <typename T>
void check_bn_params(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     const BatchNormState<T>& state) {
    require_rank4(x.shape(), "batch_norm input");
    const std::size_t c = x.dim(1);
    if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c ||
        state.running_var.numel() != c)
        throw DimensionError("batch_norm parameter length does not match channel count " + std::to_string(c));
}

// y = gamma * (x - mean) * inv_std + beta, recorded with the given statistics.
// `batch_stats` selects the train-mode backward rule (gradient through the
// batch mean and variance).
template <typename T>
Tensor<T> bn_apply(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                   std::vector<double> mean, std::vector<double> inv_std, bool batch_stats) {
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y(x.shape(), T(0), detail::any_requires_grad<T>({&x, &gamma, &beta}));
    const T* xv = x.values().data();
    T* yv = y.values().data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * hw;
            const double m = mean[ch], s = inv_std[ch];
            const double gm = gamma[ch], bt = beta[ch];
            for (std::size_t k = 0; k < hw; ++k)
                yv[base + k] = static_cast<T>(gm * ((static_cast<double>(xv[base + k]) - m) * s) + bt);
        }

    if (recording(tape, y)) {
        auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(), yn = y.node_ptr();
        tape->record({xn, gn, bn}, yn,
                     [n, c, hw, batch_stats, mean = std::move(mean), inv_std = std::move(inv_std), xn = xn.get(),
                      gn = gn.get(), bn = bn.get(), yn = yn.get()]() {
                         const T* gy = yn->grad.data();
                         const T* xv = xn->value.data();
                         const double count = static_cast<double>(n * hw);
                         for (std::size_t ch = 0; ch < c; ++ch) {
                             double sum_g = 0.0, sum_gx = 0.0;
                             for (std::size_t i = 0; i < n; ++i) {
                                 const std::size_t base = (i * c + ch) * hw;
                                 for (std::size_t k = 0; k < hw; ++k) {
                                     const double xhat = (static_cast<double>(xv[base + k]) - mean[ch]) * inv_std[ch];
                                     sum_g += gy[base + k];
                                     sum_gx += gy[base + k] * xhat;
                                 }
                             }
                             if (gn->requires_grad) gn->ensure_grad()[ch] += static_cast<T>(sum_gx);
                             if (bn->requires_grad) bn->ensure_grad()[ch] += static_cast<T>(sum_g);
                             if (!xn->requires_grad) continue;
                             T* dx = xn->ensure_grad().data();
                             const double scale = static_cast<double>(gn->value[ch]) * inv_std[ch];
                             for (std::size_t i = 0; i < n; ++i) {
                                 const std::size_t base = (i * c + ch) * hw;
                                 for (std::size_t k = 0; k < hw; ++k) {
                                     if (batch_stats) {
                                         const double xhat =
                                             (static_cast<double>(xv[base + k]) - mean[ch]) * inv_std[ch];
                                         dx[base + k] += static_cast<T>(
                                             scale * (gy[base + k] - sum_g / count - xhat * sum_gx / count));
                                     } else {
                                         dx[base + k] += static_cast<T>(scale * gy[base + k]);
                                     }
                                 }
                             }
                         }
                     });
    }
    return y;
}

} // namespace

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode, const BatchNormOptions& opts) {
    if (mode == Mode::eval) return batch_norm_eval(tape, x, gamma, beta, state, opts);
    check_bn_params(x, gamma, beta, state);
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const std::size_t count = n * hw;
    if (count < 2)
        throw ParameterError("batch_norm in train mode needs at least two values per channel, got " +
                             std::to_string(count));

    std::vector<double> mean(c, 0.0), var(c, 0.0), inv_std(c);
    const T* xv = x.values().data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const T* p = xv + (i * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) s += p[k];
        }
        mean[ch] = s / static_cast<double>(count);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const T* p = xv + (i * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                const double d = p[k] - mean[ch];
                v += d * d;
            }
        }
        var[ch] = v / static_cast<double>(count);
        inv_std[ch] = 1.0 / std::sqrt(var[ch] + opts.epsilon);
    }

    for (std::size_t ch = 0; ch < c; ++ch) {
        auto& rm = state.running_mean[ch];
        auto& rv = state.running_var[ch];
        rm = static_cast<T>(opts.momentum * rm + (1.0 - opts.momentum) * mean[ch]);
        rv = static_cast<T>(opts.momentum * rv + (1.0 - opts.momentum) * var[ch]);
    }
    return bn_apply(tape, x, gamma, beta, std::move(mean), std::move(inv_std), true);
}

template <typename T>
Tensor<T> batch_norm_eval(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const BatchNormState<T>& state, const BatchNormOptions& opts) {
    check_bn_params(x, gamma, beta, state);
    const std::size_t c = x.dim(1);
    std::vector<double> mean(c), inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        mean[ch] = state.running_mean[ch];
        inv_std[ch] = 1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) + opts.epsilon);
    }
    return bn_apply(tape, x, gamma, beta, std::move(mean), std::move(inv_std), false);
}

template <typename T>
Tensor<T> activation(Tape<T>* tape, const Tensor<T>& x, Activation kind) {
    Tensor<T> y(x.shape(), T(0), x.requires_grad());
    const T* xv = x.values().data();
    T* yv = y.values().data();
    const std::size_t total = x.numel();

    std::size_t c = 1, inner = 1, outer = 1;
    if (kind == Activation::softmax_channels) {
        if (x.rank() < 2) throw DimensionError("softmax_channels needs a channel axis");
        outer = x.dim(0);
        c = x.dim(1);
        inner = total / (outer * c);
    }

    switch (kind) {
    case Activation::elu:
        for (std::size_t i = 0; i < total; ++i) yv[i] = xv[i] > T(0) ? xv[i] : std::expm1(xv[i]);
        break;
    case Activation::sigmoid:
        for (std::size_t i = 0; i < total; ++i) {
            const T v = xv[i];
            if (v >= T(0)) {
                yv[i] = T(1) / (T(1) + std::exp(-v));
            } else {
                const T e = std::exp(v);
                yv[i] = e / (T(1) + e);
            }
        }
        break;
    case Activation::softmax_channels:
        for (std::size_t o = 0; o < outer; ++o) {
            const T* xb = xv + o * c * inner;
            T* yb = yv + o * c * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                T mx = xb[k];
                for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xb[j * inner + k]);
                T s = T(0);
                for (std::size_t j = 0; j < c; ++j) {
                    const T e = std::exp(xb[j * inner + k] - mx);
                    yb[j * inner + k] = e;
                    s += e;
                }
                const T inv = T(1) / s;
                for (std::size_t j = 0; j < c; ++j) yb[j * inner + k] *= inv;
            }
        }
        break;
    }

    if (recording(tape, y)) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record({xn}, yn, [kind, total, outer, c, inner, xn = xn.get(), yn = yn.get()]() {
            const T* gy = yn->grad.data();
            const T* yv = yn->value.data();
            const T* xv = xn->value.data();
            T* dx = xn->ensure_grad().data();
            switch (kind) {
            case Activation::elu:
                for (std::size_t i = 0; i < total; ++i) dx[i] += gy[i] * (xv[i] > T(0) ? T(1) : yv[i] + T(1));
                break;
            case Activation::sigmoid:
                for (std::size_t i = 0; i < total; ++i) dx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
                break;
            case Activation::softmax_channels:
                for (std::size_t o = 0; o < outer; ++o) {
                    const std::size_t base = o * c * inner;
                    for (std::size_t k = 0; k < inner; ++k) {
                        T dot = T(0);
                        for (std::size_t j = 0; j < c; ++j) dot += gy[base + j * inner + k] * yv[base + j * inner + k];
                        for (std::size_t j = 0; j < c; ++j) {
                            const std::size_t idx = base + j * inner + k;
                            dx[idx] += yv[idx] * (gy[idx] - dot);
                        }
                    }
                }
                break;
            }
        });
    }
    return y;
}

namespace {

struct InterpAxis {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac; // weight of hi
};

// Half-pixel centres: src = (dst + 0.5) * in / out - 0.5, clamped at 0.
InterpAxis interp_axis(std::size_t in, std::size_t out) {
    InterpAxis a;
    a.lo.resize(out);
    a.hi.resize(out);
    a.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        auto lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = lo + 1 < in ? lo + 1 : lo;
        a.lo[o] = lo;
        a.hi[o] = hi;
        a.frac[o] = hi == lo ? 0.0 : src - static_cast<double>(lo);
    }
    return a;
}

} // namespace

template <typename T>
Tensor<T> resize_bilinear(Tape<T>* tape, const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    require_rank4(x.shape(), "resize_bilinear input");
    if (out_h == 0 || out_w == 0) throw ParameterError("resize_bilinear target extents must be positive");
    const std::size_t planes = x.dim(0) * x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
    Tensor<T> y({x.dim(0), x.dim(1), out_h, out_w}, T(0), x.requires_grad());
    auto ah = std::make_shared<InterpAxis>(interp_axis(in_h, out_h));
    auto aw = std::make_shared<InterpAxis>(interp_axis(in_w, out_w));

    const T* xv = x.values().data();
    T* yv = y.values().data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv + p * in_h * in_w;
        T* dst = yv + p * out_h * out_w;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
            const T fh = static_cast<T>(ah->frac[oh]);
            const T* r0 = src + ah->lo[oh] * in_w;
            const T* r1 = src + ah->hi[oh] * in_w;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
                const T fw = static_cast<T>(aw->frac[ow]);
                const std::size_t l = aw->lo[ow], r = aw->hi[ow];
                const T top = r0[l] + fw * (r0[r] - r0[l]);
                const T bot = r1[l] + fw * (r1[r] - r1[l]);
                dst[oh * out_w + ow] = top + fh * (bot - top);
            }
        }
    }

    if (recording(tape, y)) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record({xn}, yn, [planes, in_h, in_w, out_h, out_w, ah, aw, xn = xn.get(), yn = yn.get()]() {
            const T* gy = yn->grad.data();
            T* dx = xn->ensure_grad().data();
            for (std::size_t p = 0; p < planes; ++p) {
                const T* g = gy + p * out_h * out_w;
                T* d = dx + p * in_h * in_w;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    const T fh = static_cast<T>(ah->frac[oh]);
                    T* r0 = d + ah->lo[oh] * in_w;
                    T* r1 = d + ah->hi[oh] * in_w;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        const T fw = static_cast<T>(aw->frac[ow]);
                        const std::size_t l = aw->lo[ow], r = aw->hi[ow];
                        const T v = g[oh * out_w + ow];
                        const T top = v * (T(1) - fh), bot = v * fh;
                        r0[l] += top * (T(1) - fw);
                        r0[r] += top * fw;
                        r1[l] += bot * (T(1) - fw);
                        r1[r] += bot * fw;
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> bilinear_upsample(Tape<T>* tape, const Tensor<T>& x, std::size_t factor) {
    if (factor == 0) throw ParameterError("bilinear_upsample factor must be at least 1");
    require_rank4(x.shape(), "bilinear_upsample input");
    return resize_bilinear(tape, x, x.dim(2) * factor, x.dim(3) * factor);
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x) {
    require_rank4(x.shape(), "global_avg_pool input");
    const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({x.dim(0), x.dim(1), 1, 1}, T(0), x.requires_grad());
    const T* xv = x.values().data();
    for (std::size_t p = 0; p < planes; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < hw; ++k) s += xv[p * hw + k];
        y[p] = static_cast<T>(s / static_cast<double>(hw));
    }
    if (recording(tape, y)) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record({xn}, yn, [planes, hw, xn = xn.get(), yn = yn.get()]() {
            T* dx = xn->ensure_grad().data();
            for (std::size_t p = 0; p < planes; ++p) {
                const T g = yn->grad[p] / static_cast<T>(hw);
                for (std::size_t k = 0; k < hw; ++k) dx[p * hw + k] += g;
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, std::span<const Tensor<T>> xs) {
    if (xs.empty()) throw DimensionError("concat_channels needs at least one input");
    require_rank4(xs[0].shape(), "concat_channels input");
    const std::size_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3), hw = h * w;
    std::size_t total_c = 0;
    bool needs_grad = false;
    for (const auto& t : xs) {
        require_rank4(t.shape(), "concat_channels input");
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
            throw DimensionError("concat_channels extent mismatch: " + shape_string(xs[0].shape()) + " vs " +
                                 shape_string(t.shape()));
        total_c += t.dim(1);
        needs_grad = needs_grad || t.requires_grad();
    }
    Tensor<T> y({n, total_c, h, w}, T(0), needs_grad);
    T* yv = y.values().data();
    std::size_t offset = 0;
    for (const auto& t : xs) {
        const std::size_t c = t.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(t.values().data() + i * c * hw, c * hw, yv + (i * total_c + offset) * hw);
        offset += c;
    }
    if (recording(tape, y)) {
        std::vector<NodePtr<T>> inputs;
        for (const auto& t : xs) inputs.push_back(t.node_ptr());
        auto yn = y.node_ptr();
        std::vector<TensorNode<T>*> raw;
        for (auto& p : inputs) raw.push_back(p.get());
        tape->record(inputs, yn, [raw, n, total_c, hw, yn = yn.get()]() {
            std::size_t offset = 0;
            for (auto* in : raw) {
                const std::size_t c = in->shape[1];
                if (in->requires_grad) {
                    T* dx = in->ensure_grad().data();
                    for (std::size_t i = 0; i < n; ++i) {
                        const T* g = yn->grad.data() + (i * total_c + offset) * hw;
                        T* d = dx + i * c * hw;
                        for (std::size_t k = 0; k < c * hw; ++k) d[k] += g[k];
                    }
                }
                offset += c;
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> slice_channels(Tape<T>* tape, const Tensor<T>& x, std::size_t begin, std::size_t count) {
    require_rank4(x.shape(), "slice_channels input");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (count == 0 || begin + count > c) throw DimensionError("slice_channels range outside channel axis");
    Tensor<T> y({n, count, x.dim(2), x.dim(3)}, T(0), x.requires_grad());
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(x.values().data() + (i * c + begin) * hw, count * hw, y.values().data() + i * count * hw);
    if (recording(tape, y)) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record({xn}, yn, [n, c, hw, begin, count, xn = xn.get(), yn = yn.get()]() {
            T* dx = xn->ensure_grad().data();
            for (std::size_t i = 0; i < n; ++i) {
                const T* g = yn->grad.data() + i * count * hw;
                T* d = dx + (i * c + begin) * hw;
                for (std::size_t k = 0; k < count * hw; ++k) d[k] += g[k];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
    if (mode == Mode::eval || rate == 0.0) return x;
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    for (auto& m : *mask) m = rng.uniform() < rate ? T(0) : scale;
    Tensor<T> y(x.shape(), T(0), x.requires_grad());
    {
        const T* xv = x.values().data();
        const T* mv = mask->data();
        T* yv = y.values().data();
        for (std::size_t i = 0; i < mask->size(); ++i) yv[i] = xv[i] * mv[i];
    }
    if (recording(tape, y)) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record({xn}, yn, [mask, xn = xn.get(), yn = yn.get()]() {
            T* dx = xn->ensure_grad().data();
            for (std::size_t i = 0; i < mask->size(); ++i) dx[i] += yn->grad[i] * (*mask)[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    Tensor<T> y(a.shape(), T(0), a.requires_grad() || b.requires_grad());
    {
        const T* av = a.values().data();
        const T* bv = b.values().data();
        T* yv = y.values().data();
        for (std::size_t i = 0; i < a.numel(); ++i) yv[i] = av[i] + bv[i];
    }
    if (recording(tape, y)) {
        auto an = a.node_ptr(), bn = b.node_ptr(), yn = y.node_ptr();
        tape->record({an, bn}, yn, [an = an.get(), bn = bn.get(), yn = yn.get()]() {
            for (auto* in : {an, bn}) {
                if (!in->requires_grad) continue;
                T* d = in->ensure_grad().data();
                for (std::size_t i = 0; i < yn->grad.size(); ++i) d[i] += yn->grad[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
    double s = 0.0;
    for (auto v : x.values()) s += v;
    Tensor<T> y({1}, static_cast<T>(s), x.requires_grad());
    if (recording(tape, y)) {
        auto xn = x.node_ptr(), yn = y.node_ptr();
        tape->record({xn}, yn, [xn = xn.get(), yn = yn.get()]() {
            const T g = yn->grad[0];
            for (auto& d : xn->ensure_grad()) d += g;
        });
    }
    return y;
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weights) {
    if (x.numel() != weights.numel()) throw DimensionError("weighted_sum needs one weight per entry");
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += static_cast<double>(x[i]) * static_cast<double>(weights[i]);
    Tensor<T> y({1}, static_cast<T>(s), x.requires_grad());
    if (recording(tape, y)) {
        auto xn = x.node_ptr(), wn = weights.node_ptr(), yn = y.node_ptr();
        tape->record({xn}, yn, [xn = xn.get(), wn, yn = yn.get()]() {
            const T g = yn->grad[0];
            auto& d = xn->ensure_grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * wn->value[i];
        });
    }
    return y;
}

#define CROWNSEG_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> conv2d(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                    \
                              const Conv2dOptions&);                                                             \
    template struct BatchNormState<T>;                                                                           \
    template Tensor<T> batch_norm(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                  BatchNormState<T>&, Mode, const BatchNormOptions&);                            \
    template Tensor<T> batch_norm_eval(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                       const BatchNormState<T>&, const BatchNormOptions&);                       \
    template Tensor<T> activation(Tape<T>*, const Tensor<T>&, Activation);                                       \
    template Tensor<T> resize_bilinear(Tape<T>*, const Tensor<T>&, std::size_t, std::size_t);                    \
    template Tensor<T> bilinear_upsample(Tape<T>*, const Tensor<T>&, std::size_t);                               \
    template Tensor<T> global_avg_pool(Tape<T>*, const Tensor<T>&);                                              \
    template Tensor<T> concat_channels(Tape<T>*, std::span<const Tensor<T>>);                                    \
    template Tensor<T> slice_channels(Tape<T>*, const Tensor<T>&, std::size_t, std::size_t);                     \
    template Tensor<T> dropout(Tape<T>*, const Tensor<T>&, double, Mode, Rng&);                                  \
    template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> sum(Tape<T>*, const Tensor<T>&);                                                          \
    template Tensor<T> weighted_sum(Tape<T>*, const Tensor<T>&, const Tensor<T>&);

CROWNSEG_INSTANTIATE_OPS(float)
CROWNSEG_INSTANTIATE_OPS(double)

#undef CROWNSEG_INSTANTIATE_OPS

} // namespace crownseg
