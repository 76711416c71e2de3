#include "critmap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace critmap::kernels {

namespace {

void require_same_dtype(const Tensor& a, const Tensor& b, const char* what) {
    require(a.dtype() == b.dtype(), ErrorKind::shape, std::string(what) + ": dtype mismatch");
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    require(t.rank() == rank, ErrorKind::shape,
            std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
}

struct ConvGeometry {
    std::int64_t n, c, h, w, k, kh, kw, ho, wo;
    int stride, pad;
    std::int64_t rows() const { return c * kh * kw; }
    std::int64_t cols() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, Conv2dParams p) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    require_same_dtype(input, weight, "conv2d");
    require(p.stride >= 1 && p.padding >= 0, ErrorKind::shape, "conv2d: stride must be >= 1 and padding >= 0");
    ConvGeometry g{};
    g.n = input.dim(0);
    g.c = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.k = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    require(weight.dim(1) == g.c, ErrorKind::shape,
            "conv2d: weight " + shape_string(weight.shape()) + " does not match input " + shape_string(input.shape()));
    g.ho = window_extent(g.h, g.kh, p.stride, p.padding);
    g.wo = window_extent(g.w, g.kw, p.stride, p.padding);
    g.stride = p.stride;
    g.pad = p.padding;
    return g;
}

// Unfolds sample `n` into col[rows][cols].
template <typename T>
void im2col(std::span<const T> x, std::int64_t n, const ConvGeometry& g, std::vector<T>& col) {
    const std::int64_t cols = g.cols();
    col.assign(static_cast<std::size_t>(g.rows() * cols), T(0));
    const T* base = x.data() + n * g.c * g.h * g.w;
    std::int64_t r = 0;
    for (std::int64_t c = 0; c < g.c; ++c)
        for (std::int64_t i = 0; i < g.kh; ++i)
            for (std::int64_t j = 0; j < g.kw; ++j, ++r) {
                T* dst = col.data() + r * cols;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.pad + i;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* row = base + (c * g.h + iy) * g.w;
                    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.pad + j;
                        if (ix >= 0 && ix < g.w) dst[oy * g.wo + ox] = row[ix];
                    }
                }
            }
}

// Folds col-shaped gradient back onto one sample's input gradient (double buffer).
void col2im(const std::vector<double>& col, const ConvGeometry& g, std::vector<double>& gx) {
    const std::int64_t cols = g.cols();
    gx.assign(static_cast<std::size_t>(g.c * g.h * g.w), 0.0);
    std::int64_t r = 0;
    for (std::int64_t c = 0; c < g.c; ++c)
        for (std::int64_t i = 0; i < g.kh; ++i)
            for (std::int64_t j = 0; j < g.kw; ++j, ++r) {
                const double* src = col.data() + r * cols;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.pad + i;
                    if (iy < 0 || iy >= g.h) continue;
                    double* row = gx.data() + (c * g.h + iy) * g.w;
                    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.pad + j;
                        if (ix >= 0 && ix < g.w) row[ix] += src[oy * g.wo + ox];
                    }
                }
            }
}

std::int64_t channel_span(const Tensor& t) {
    std::int64_t s = 1;
    for (std::size_t i = 2; i < t.rank(); ++i) s *= t.dim(i);
    return s;
}

void check_channel_vector(const Tensor& v, std::int64_t channels, const Tensor& input, const char* what) {
    require(v.rank() == 1 && v.dim(0) == channels, ErrorKind::shape,
            std::string("batchnorm: ") + what + " must be [" + std::to_string(channels) + "]");
    require_same_dtype(v, input, "batchnorm");
}

}  // namespace

std::int64_t window_extent(std::int64_t size, std::int64_t kernel, int stride, int padding) {
    const std::int64_t span = size + 2 * static_cast<std::int64_t>(padding) - kernel;
    require(kernel >= 1 && span >= 0, ErrorKind::shape,
            "window of " + std::to_string(kernel) + " does not fit padded extent " +
                std::to_string(size + 2 * padding));
    return span / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, Conv2dParams params) {
    const auto g = conv_geometry(input, weight, params);
    if (bias) {
        require(bias->rank() == 1 && bias->dim(0) == g.k, ErrorKind::shape, "conv2d: bias must be [K]");
        require_same_dtype(*bias, input, "conv2d bias");
    }
    Tensor out({g.n, g.k, g.ho, g.wo}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto wt = weight.data<T>();
        auto y = out.data<T>();
        const std::int64_t rows = g.rows();
        const std::int64_t cols = g.cols();
        std::vector<T> col;
        std::vector<double> acc(static_cast<std::size_t>(cols));
        for (std::int64_t n = 0; n < g.n; ++n) {
            im2col<T>(x, n, g, col);
            for (std::int64_t k = 0; k < g.k; ++k) {
                std::fill(acc.begin(), acc.end(), 0.0);
                const T* wrow = wt.data() + k * rows;
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double wv = static_cast<double>(wrow[r]);
                    const T* crow = col.data() + r * cols;
                    for (std::int64_t p = 0; p < cols; ++p) acc[p] += wv * static_cast<double>(crow[p]);
                }
                const double b = bias ? static_cast<double>(bias->data<T>()[k]) : 0.0;
                T* dst = y.data() + (n * g.k + k) * cols;
                for (std::int64_t p = 0; p < cols; ++p) dst[p] = static_cast<T>(acc[p] + b);
            }
        }
    });
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias, const Tensor& grad_out,
                            Conv2dParams params) {
    const auto g = conv_geometry(input, weight, params);
    require(grad_out.shape() == Shape{g.n, g.k, g.ho, g.wo}, ErrorKind::shape, "conv2d_backward: grad shape");
    require_same_dtype(grad_out, input, "conv2d_backward");
    Conv2dGrads grads{Tensor(input.shape(), input.dtype()), Tensor(weight.shape(), weight.dtype()), std::nullopt};
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto wt = weight.data<T>();
        auto gy = grad_out.data<T>();
        auto gx = grads.input.data<T>();
        const std::int64_t rows = g.rows();
        const std::int64_t cols = g.cols();
        std::vector<double> gw(static_cast<std::size_t>(g.k * rows), 0.0);
        std::vector<double> gb(static_cast<std::size_t>(g.k), 0.0);
        std::vector<T> col;
        std::vector<double> gcol;
        std::vector<double> gxs;
        for (std::int64_t n = 0; n < g.n; ++n) {
            im2col<T>(x, n, g, col);
            gcol.assign(static_cast<std::size_t>(rows * cols), 0.0);
            for (std::int64_t k = 0; k < g.k; ++k) {
                const T* gyk = gy.data() + (n * g.k + k) * cols;
                const T* wrow = wt.data() + k * rows;
                double bsum = 0.0;
                for (std::int64_t p = 0; p < cols; ++p) bsum += static_cast<double>(gyk[p]);
                gb[k] += bsum;
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* crow = col.data() + r * cols;
                    double s = 0.0;
                    for (std::int64_t p = 0; p < cols; ++p) s += static_cast<double>(gyk[p]) * static_cast<double>(crow[p]);
                    gw[k * rows + r] += s;
                    const double wv = static_cast<double>(wrow[r]);
                    double* grow = gcol.data() + r * cols;
                    for (std::int64_t p = 0; p < cols; ++p) grow[p] += wv * static_cast<double>(gyk[p]);
                }
            }
            col2im(gcol, g, gxs);
            T* dst = gx.data() + n * g.c * g.h * g.w;
            for (std::size_t i = 0; i < gxs.size(); ++i) dst[i] = static_cast<T>(gxs[i]);
        }
        auto gwt = grads.weight.data<T>();
        for (std::size_t i = 0; i < gw.size(); ++i) gwt[i] = static_cast<T>(gw[i]);
        if (has_bias) {
            Tensor b({g.k}, input.dtype());
            auto bd = b.data<T>();
            for (std::int64_t k = 0; k < g.k; ++k) bd[k] = static_cast<T>(gb[k]);
            grads.bias = std::move(b);
        }
    });
    return grads;
}

Tensor batchnorm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                       const Tensor& running_var, double eps) {
    require(input.rank() >= 2, ErrorKind::shape, "batchnorm: input rank must be >= 2");
    require(eps >= 0.0, ErrorKind::parameter, "batchnorm: eps must be non-negative");
    const std::int64_t n = input.dim(0), c = input.dim(1), s = channel_span(input);
    check_channel_vector(gamma, c, input, "gamma");
    check_channel_vector(beta, c, input, "beta");
    check_channel_vector(running_mean, c, input, "running_mean");
    check_channel_vector(running_var, c, input, "running_var");
    Tensor out(input.shape(), input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto y = out.data<T>();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double var = static_cast<double>(running_var.data<T>()[ch]);
            require(var >= 0.0, ErrorKind::parameter, "batchnorm: negative running variance");
            require(var + eps > 0.0, ErrorKind::parameter, "batchnorm: zero variance with eps = 0");
        }
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const std::int64_t off = (i * c + ch) * s;
                const double mean = static_cast<double>(running_mean.data<T>()[ch]);
                const double g = static_cast<double>(gamma.data<T>()[ch]);
                const double b = static_cast<double>(beta.data<T>()[ch]);
                const double denom = std::sqrt(static_cast<double>(running_var.data<T>()[ch]) + eps);
                for (std::int64_t p = 0; p < s; ++p)
                    y[off + p] = static_cast<T>((static_cast<double>(x[off + p]) - mean) / denom * g + b);
            }
    });
    return out;
}

BatchNormTrainResult batchnorm_train(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps) {
    require(input.rank() >= 2, ErrorKind::shape, "batchnorm: input rank must be >= 2");
    require(eps > 0.0, ErrorKind::parameter, "batchnorm: training mode needs eps > 0");
    const std::int64_t n = input.dim(0), c = input.dim(1), s = channel_span(input);
    check_channel_vector(gamma, c, input, "gamma");
    check_channel_vector(beta, c, input, "beta");
    BatchNormTrainResult r{Tensor(input.shape(), input.dtype()), std::vector<double>(c, 0.0),
                           std::vector<double>(c, 0.0), std::vector<double>(c, 0.0), n * s};
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto y = r.output.data<T>();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * s;
                for (std::int64_t q = 0; q < s; ++q) sum += static_cast<double>(p[q]);
            }
            const double mean = sum / static_cast<double>(r.count);
            double sq = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * s;
                for (std::int64_t q = 0; q < s; ++q) {
                    const double d = static_cast<double>(p[q]) - mean;
                    sq += d * d;
                }
            }
            const double var = sq / static_cast<double>(r.count);
            const double inv = 1.0 / std::sqrt(var + eps);
            r.mean[ch] = mean;
            r.var[ch] = var;
            r.inv_std[ch] = inv;
            const double g = static_cast<double>(gamma.data<T>()[ch]);
            const double b = static_cast<double>(beta.data<T>()[ch]);
            for (std::int64_t i = 0; i < n; ++i) {
                const std::int64_t off = (i * c + ch) * s;
                for (std::int64_t q = 0; q < s; ++q)
                    y[off + q] = static_cast<T>((static_cast<double>(x[off + q]) - mean) * inv * g + b);
            }
        }
    });
    return r;
}

BatchNormGrads batchnorm_train_backward(const Tensor& input, const Tensor& gamma, const BatchNormTrainResult& fwd,
                                        const Tensor& grad_out) {
    require(grad_out.shape() == input.shape(), ErrorKind::shape, "batchnorm_backward: grad shape");
    const std::int64_t n = input.dim(0), c = input.dim(1), s = channel_span(input);
    BatchNormGrads g{Tensor(input.shape(), input.dtype()), Tensor({c}, input.dtype()), Tensor({c}, input.dtype())};
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto gy = grad_out.data<T>();
        auto gx = g.input.data<T>();
        const double m = static_cast<double>(fwd.count);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double mean = fwd.mean[ch], inv = fwd.inv_std[ch];
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const std::int64_t off = (i * c + ch) * s;
                for (std::int64_t q = 0; q < s; ++q) {
                    const double xhat = (static_cast<double>(x[off + q]) - mean) * inv;
                    sum_gy += static_cast<double>(gy[off + q]);
                    sum_gy_xhat += static_cast<double>(gy[off + q]) * xhat;
                }
            }
            g.gamma.data<T>()[ch] = static_cast<T>(sum_gy_xhat);
            g.beta.data<T>()[ch] = static_cast<T>(sum_gy);
            const double gam = static_cast<double>(gamma.data<T>()[ch]);
            for (std::int64_t i = 0; i < n; ++i) {
                const std::int64_t off = (i * c + ch) * s;
                for (std::int64_t q = 0; q < s; ++q) {
                    const double xhat = (static_cast<double>(x[off + q]) - mean) * inv;
                    const double d = m * static_cast<double>(gy[off + q]) - sum_gy - xhat * sum_gy_xhat;
                    gx[off + q] = static_cast<T>(gam * inv * d / m);
                }
            }
        }
    });
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape(), input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto y = out.data<T>();
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    });
    return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
    require(output.shape() == grad_out.shape(), ErrorKind::shape, "relu_backward: grad shape");
    Tensor gx(output.shape(), output.dtype());
    dispatch(output.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto y = output.data<T>();
        auto gy = grad_out.data<T>();
        auto g = gx.data<T>();
        for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] > T(0) ? gy[i] : T(0);
    });
    return gx;
}

namespace {

struct PoolGeometry {
    std::int64_t n, c, h, w, ho, wo;
};

PoolGeometry pool_geometry(const Tensor& input, const MaxPool& mode) {
    require_rank(input, 4, "maxpool input");
    require(mode.kernel >= 1 && mode.stride >= 1 && mode.padding >= 0 && 2 * mode.padding <= mode.kernel,
            ErrorKind::shape, "maxpool: invalid window (need kernel >= 1, stride >= 1, padding <= kernel/2)");
    PoolGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), 0, 0};
    g.ho = window_extent(g.h, mode.kernel, mode.stride, mode.padding);
    g.wo = window_extent(g.w, mode.kernel, mode.stride, mode.padding);
    return g;
}

// Calls visit(out_index, argmax_input_index) for every output cell of plane-major maxpool.
template <typename T, typename Visit>
void maxpool_scan(std::span<const T> x, const PoolGeometry& g, const MaxPool& mode, Visit&& visit) {
    for (std::int64_t plane = 0; plane < g.n * g.c; ++plane) {
        const std::int64_t in_off = plane * g.h * g.w;
        for (std::int64_t oy = 0; oy < g.ho; ++oy)
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                std::int64_t best = -1;
                T best_v = -std::numeric_limits<T>::infinity();
                for (int i = 0; i < mode.kernel; ++i) {
                    const std::int64_t iy = oy * mode.stride - mode.padding + i;
                    if (iy < 0 || iy >= g.h) continue;
                    for (int j = 0; j < mode.kernel; ++j) {
                        const std::int64_t ix = ox * mode.stride - mode.padding + j;
                        if (ix < 0 || ix >= g.w) continue;
                        const std::int64_t idx = in_off + iy * g.w + ix;
                        if (best < 0 || x[idx] > best_v) {
                            best = idx;
                            best_v = x[idx];
                        }
                    }
                }
                visit((plane * g.ho + oy) * g.wo + ox, best);
            }
    }
}

}  // namespace

Tensor maxpool(const Tensor& input, const MaxPool& mode) {
    const auto g = pool_geometry(input, mode);
    Tensor out({g.n, g.c, g.ho, g.wo}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto y = out.data<T>();
        maxpool_scan<T>(x, g, mode, [&](std::int64_t o, std::int64_t i) { y[o] = x[i]; });
    });
    return out;
}

Tensor maxpool_backward(const Tensor& input, const MaxPool& mode, const Tensor& grad_out) {
    const auto g = pool_geometry(input, mode);
    require(grad_out.shape() == Shape{g.n, g.c, g.ho, g.wo}, ErrorKind::shape, "maxpool_backward: grad shape");
    Tensor gx(input.shape(), input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto gy = grad_out.data<T>();
        auto gi = gx.data<T>();
        maxpool_scan<T>(x, g, mode, [&](std::int64_t o, std::int64_t i) { gi[i] += gy[o]; });
    });
    return gx;
}

Tensor global_avg_pool(const Tensor& input) {
    require_rank(input, 4, "global_avg_pool input");
    const std::int64_t n = input.dim(0), c = input.dim(1), s = input.dim(2) * input.dim(3);
    Tensor out({n, c}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto y = out.data<T>();
        for (std::int64_t i = 0; i < n * c; ++i) {
            double sum = 0.0;
            for (std::int64_t p = 0; p < s; ++p) sum += static_cast<double>(x[i * s + p]);
            y[i] = static_cast<T>(sum / static_cast<double>(s));
        }
    });
    return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
    require(input_shape.size() == 4 && grad_out.shape() == Shape{input_shape[0], input_shape[1]}, ErrorKind::shape,
            "global_avg_pool_backward: grad shape");
    const std::int64_t s = input_shape[2] * input_shape[3];
    Tensor gx(input_shape, grad_out.dtype());
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gy = grad_out.data<T>();
        auto g = gx.data<T>();
        for (std::size_t i = 0; i < gy.size(); ++i) {
            const T v = static_cast<T>(static_cast<double>(gy[i]) / static_cast<double>(s));
            for (std::int64_t p = 0; p < s; ++p) g[static_cast<std::int64_t>(i) * s + p] = v;
        }
    });
    return gx;
}

Tensor activation_pool(const Tensor& input, const PoolMode& mode) {
    return std::visit([&input](const auto& m) -> Tensor {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Relu>) return relu(input);
        else if constexpr (std::is_same_v<M, MaxPool>) return maxpool(input, m);
        else return global_avg_pool(input);
    }, mode);
}

namespace {

std::pair<std::int64_t, std::int64_t> linear_dims(const Tensor& input, const Tensor& weight) {
    require(input.rank() >= 2, ErrorKind::shape, "linear: input rank must be >= 2");
    require_rank(weight, 2, "linear weight");
    require_same_dtype(input, weight, "linear");
    const std::int64_t n = input.dim(0);
    const std::int64_t f = input.numel() / n;
    require(weight.dim(1) == f, ErrorKind::shape,
            "linear: weight " + shape_string(weight.shape()) + " does not match input " + shape_string(input.shape()));
    return {n, f};
}

}  // namespace

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor* bias) {
    const auto [n, f] = linear_dims(input, weight);
    const std::int64_t o = weight.dim(0);
    if (bias) {
        require(bias->rank() == 1 && bias->dim(0) == o, ErrorKind::shape, "linear: bias must be [O]");
        require_same_dtype(*bias, input, "linear bias");
    }
    Tensor out({n, o}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto w = weight.data<T>();
        auto y = out.data<T>();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < o; ++j) {
                double acc = bias ? static_cast<double>(bias->data<T>()[j]) : 0.0;
                const T* xr = x.data() + i * f;
                const T* wr = w.data() + j * f;
                for (std::int64_t k = 0; k < f; ++k) acc += static_cast<double>(xr[k]) * static_cast<double>(wr[k]);
                y[i * o + j] = static_cast<T>(acc);
            }
    });
    return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, bool has_bias, const Tensor& grad_out) {
    const auto [n, f] = linear_dims(input, weight);
    const std::int64_t o = weight.dim(0);
    require(grad_out.shape() == Shape{n, o}, ErrorKind::shape, "linear_backward: grad shape");
    LinearGrads g{Tensor(input.shape(), input.dtype()), Tensor(weight.shape(), weight.dtype()), std::nullopt};
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto w = weight.data<T>();
        auto gy = grad_out.data<T>();
        auto gx = g.input.data<T>();
        auto gw = g.weight.data<T>();
        std::vector<double> acc(static_cast<std::size_t>(f));
        for (std::int64_t i = 0; i < n; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::int64_t j = 0; j < o; ++j) {
                const double gv = static_cast<double>(gy[i * o + j]);
                const T* wr = w.data() + j * f;
                for (std::int64_t k = 0; k < f; ++k) acc[k] += gv * static_cast<double>(wr[k]);
            }
            for (std::int64_t k = 0; k < f; ++k) gx[i * f + k] = static_cast<T>(acc[k]);
        }
        for (std::int64_t j = 0; j < o; ++j) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::int64_t i = 0; i < n; ++i) {
                const double gv = static_cast<double>(gy[i * o + j]);
                const T* xr = x.data() + i * f;
                for (std::int64_t k = 0; k < f; ++k) acc[k] += gv * static_cast<double>(xr[k]);
            }
            for (std::int64_t k = 0; k < f; ++k) gw[j * f + k] = static_cast<T>(acc[k]);
        }
        if (has_bias) {
            Tensor b({o}, input.dtype());
            for (std::int64_t j = 0; j < o; ++j) {
                double s = 0.0;
                for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(gy[i * o + j]);
                b.data<T>()[j] = static_cast<T>(s);
            }
            g.bias = std::move(b);
        }
    });
    return g;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), ErrorKind::shape,
            "add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
    require_same_dtype(a, b, "add");
    Tensor out(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.data<T>();
        auto y = b.data<T>();
        auto z = out.data<T>();
        for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + y[i];
    });
    return out;
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax input");
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    Tensor out(logits.shape(), logits.dtype());
    dispatch(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto z = logits.data<T>();
        auto p = out.data<T>();
        std::vector<double> e(static_cast<std::size_t>(c));
        for (std::int64_t i = 0; i < n; ++i) {
            const T* row = z.data() + i * c;
            double mx = static_cast<double>(row[0]);
            for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double sum = 0.0;
            for (std::int64_t j = 0; j < c; ++j) {
                e[j] = std::exp(static_cast<double>(row[j]) - mx);
                sum += e[j];
            }
            for (std::int64_t j = 0; j < c; ++j) p[i * c + j] = static_cast<T>(e[j] / sum);
        }
    });
    return out;
}

CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "cross_entropy logits");
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    require(static_cast<std::int64_t>(labels.size()) == n, ErrorKind::parameter, "cross_entropy: label count mismatch");
    for (int y : labels)
        require(y >= 0 && y < c, ErrorKind::parameter,
                "label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    CrossEntropy ce{0.0, Tensor(logits.shape(), logits.dtype()), 0};
    dispatch(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto z = logits.data<T>();
        auto g = ce.grad_logits.data<T>();
        std::vector<double> e(static_cast<std::size_t>(c));
        double total = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const T* row = z.data() + i * c;
            double mx = static_cast<double>(row[0]);
            std::int64_t best = 0;
            for (std::int64_t j = 1; j < c; ++j)
                if (static_cast<double>(row[j]) > mx) {
                    mx = static_cast<double>(row[j]);
                    best = j;
                }
            if (best == labels[i]) ++ce.correct;
            double sum = 0.0;
            for (std::int64_t j = 0; j < c; ++j) {
                e[j] = std::exp(static_cast<double>(row[j]) - mx);
                sum += e[j];
            }
            const int y = labels[i];
            total += std::log(sum) - (static_cast<double>(row[y]) - mx);
            for (std::int64_t j = 0; j < c; ++j) {
                const double p = e[j] / sum - (j == y ? 1.0 : 0.0);
                g[i * c + j] = static_cast<T>(p / static_cast<double>(n));
            }
        }
        ce.loss = total / static_cast<double>(n);
    });
    return ce;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "argmax input");
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (std::int64_t j = 1; j < c; ++j)
            if (logits.at(i * c + j) > logits.at(i * c + best)) best = static_cast<int>(j);
        out[i] = best;
    }
    return out;
}

}  // namespace critmap::kernels
