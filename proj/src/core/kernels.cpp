#include "dereflect/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dereflect::kernels {

namespace {

int g_threads = 1;

// Range of output columns whose input column ox*stride + kx - pad lies in [0, in_width).
inline void valid_columns(const ConvGeometry& g, int kx, int& lo, int& hi) {
    const int p = g.pad();
    const int s = g.stride;
    const int ow = g.out_width();
    lo = std::max(0, (p - kx + s - 1) / s);
    hi = std::min(ow - 1, (g.in_width - 1 - kx + p) / s);
}

} // namespace

void set_num_threads(int n) { g_threads = std::max(1, n); }
int num_threads() { return g_threads; }

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

// Fixed work-chunk height: GEMM shapes never depend on the thread count.
constexpr int kChunk = 16;

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1; }

// Rows (ic, ky, kx), columns (oy, ox).
template <class T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
    const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, s = g.stride, p = g.pad();
    const std::size_t cols = std::size_t(oh) * ow;
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (int ic = 0; ic < g.in_channels; ++ic) {
        const T* src = in + std::size_t(ic) * g.in_height * g.in_width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + (std::size_t(ic) * k * k + ky * k + kx) * cols;
                int lo, hi;
                valid_columns(g, kx, lo, hi);
                for (int oy = 0; oy < oh; ++oy) {
                    T* drow = dst + std::size_t(oy) * ow;
                    const int iy = oy * s + ky - p;
                    if (iy < 0 || iy >= g.in_height) {
                        std::fill(drow, drow + ow, T(0));
                        continue;
                    }
                    const T* irow = src + std::size_t(iy) * g.in_width + kx - p;
                    for (int ox = 0; ox < lo; ++ox) drow[ox] = T(0);
                    for (int ox = lo; ox <= hi; ++ox) drow[ox] = irow[ox * s];
                    for (int ox = std::max(lo, hi + 1); ox < ow; ++ox) drow[ox] = T(0);
                }
            }
        }
    }
}

template <class T>
void col2im(const ConvGeometry& g, const T* col, T* grad_in) {
    const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, s = g.stride, p = g.pad();
    const std::size_t cols = std::size_t(oh) * ow;
    const std::size_t in_plane = std::size_t(g.in_height) * g.in_width;
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (int ic = 0; ic < g.in_channels; ++ic) {
        T* dst = grad_in + ic * in_plane;
        std::fill(dst, dst + in_plane, T(0));
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + (std::size_t(ic) * k * k + ky * k + kx) * cols;
                int lo, hi;
                valid_columns(g, kx, lo, hi);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s + ky - p;
                    if (iy < 0 || iy >= g.in_height) continue;
                    const T* srow = src + std::size_t(oy) * ow;
                    T* irow = dst + std::size_t(iy) * g.in_width + kx - p;
                    for (int ox = lo; ox <= hi; ++ox) irow[ox * s] += srow[ox];
                }
            }
        }
    }
}

template <class T>
const T* columns(const ConvGeometry& g, const T* in, std::vector<T>& buf) {
    if (is_pointwise(g)) return in;
    buf.resize(std::size_t(g.in_channels) * g.kernel * g.kernel * g.out_height() * g.out_width());
    im2col(g, in, buf.data());
    return buf.data();
}

} // namespace

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
    const int depth = g.in_channels * g.kernel * g.kernel;
    const int cols = g.out_height() * g.out_width();
    std::vector<T> buf;
    const MapC<T> col(columns(g, in.data(), buf), depth, cols);
    const MapC<T> w(weight.data(), g.out_channels, depth);
    Map<T> o(out.data(), g.out_channels, cols);
    const int chunks = (g.out_channels + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (int c = 0; c < chunks; ++c) {
        const int r0 = c * kChunk, rows = std::min(kChunk, g.out_channels - r0);
        o.middleRows(r0, rows).noalias() = w.middleRows(r0, rows) * col;
        for (int r = r0; r < r0 + rows; ++r) o.row(r).array() += bias[r];
    }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
    const int depth = g.in_channels * g.kernel * g.kernel;
    const int cols = g.out_height() * g.out_width();
    const MapC<T> w(weight.data(), g.out_channels, depth);
    const MapC<T> go(grad_out.data(), g.out_channels, cols);
    std::vector<T> buf;
    T* gcol_ptr = grad_in.data();
    if (!is_pointwise(g)) {
        buf.resize(std::size_t(depth) * cols);
        gcol_ptr = buf.data();
    }
    Map<T> gcol(gcol_ptr, depth, cols);
    const int chunks = (depth + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (int c = 0; c < chunks; ++c) {
        const int r0 = c * kChunk, rows = std::min(kChunk, depth - r0);
        gcol.middleRows(r0, rows).noalias() = w.middleCols(r0, rows).transpose() * go;
    }
    if (!is_pointwise(g)) col2im(g, gcol_ptr, grad_in.data());
}

template <class T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
    const int depth = g.in_channels * g.kernel * g.kernel;
    const int cols = g.out_height() * g.out_width();
    std::vector<T> buf;
    const MapC<T> col(columns(g, in.data(), buf), depth, cols);
    const MapC<T> go(grad_out.data(), g.out_channels, cols);
    Map<T> gw(grad_weight.data(), g.out_channels, depth);
    const int chunks = (g.out_channels + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (int c = 0; c < chunks; ++c) {
        const int r0 = c * kChunk, rows = std::min(kChunk, g.out_channels - r0);
        gw.middleRows(r0, rows).noalias() += go.middleRows(r0, rows) * col.transpose();
        // plain loop: Eigen's vectorised sum peels by address alignment, which varies between allocations
        for (int r = r0; r < r0 + rows; ++r) {
            const T* row = grad_out.data() + std::size_t(r) * cols;
            T acc = T(0);
            for (int i = 0; i < cols; ++i) acc += row[i];
            grad_bias[r] += acc;
        }
    }
}

template <class T>
void silu_forward(std::span<const T> x, std::span<T> y) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const T v = x[i];
        y[i] = v / (T(1) + std::exp(-v));
    }
}

template <class T>
void silu_backward(std::span<const T> x, std::span<const T> grad_y, std::span<T> grad_x) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const T v = x[i];
        const T sg = T(1) / (T(1) + std::exp(-v));
        grad_x[i] = grad_y[i] * sg * (T(1) + v * (T(1) - sg));
    }
}

void sigmoid_forward(std::span<const float> x, std::span<float> y) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
}

void sigmoid_backward(std::span<const float> y, std::span<const float> grad_y, std::span<float> grad_x) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (std::ptrdiff_t i = 0; i < n; ++i) grad_x[i] = grad_y[i] * y[i] * (1.0f - y[i]);
}

void upsample2x_forward(int channels, int height, int width, std::span<const float> in, std::span<float> out) {
    const int ow = 2 * width;
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (int c = 0; c < channels; ++c) {
        const float* src = in.data() + std::size_t(c) * height * width;
        float* dst = out.data() + std::size_t(c) * 4 * height * width;
        for (int y = 0; y < height; ++y) {
            float* r0 = dst + std::size_t(2 * y) * ow;
            float* r1 = r0 + ow;
            for (int x = 0; x < width; ++x) {
                const float v = src[y * width + x];
                r0[2 * x] = v;
                r0[2 * x + 1] = v;
                r1[2 * x] = v;
                r1[2 * x + 1] = v;
            }
        }
    }
}

void upsample2x_backward(int channels, int height, int width, std::span<const float> grad_out,
                         std::span<float> grad_in) {
    const int ow = 2 * width;
#pragma omp parallel for schedule(static) num_threads(g_threads)
    for (int c = 0; c < channels; ++c) {
        const float* src = grad_out.data() + std::size_t(c) * 4 * height * width;
        float* dst = grad_in.data() + std::size_t(c) * height * width;
        for (int y = 0; y < height; ++y) {
            const float* r0 = src + std::size_t(2 * y) * ow;
            const float* r1 = r0 + ow;
            for (int x = 0; x < width; ++x) {
                dst[y * width + x] = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
}

void add_inplace(std::span<float> y, std::span<const float> x) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for simd schedule(static) num_threads(g_threads)
    for (std::ptrdiff_t i = 0; i < n; ++i) y[i] += x[i];
}

namespace reference {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
    const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, p = g.pad();
    for (int oc = 0; oc < g.out_channels; ++oc) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T acc = bias[oc];
                for (int ic = 0; ic < g.in_channels; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * g.stride + ky - p;
                            const int ix = ox * g.stride + kx - p;
                            if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                            acc += weight[((std::size_t(oc) * g.in_channels + ic) * k + ky) * k + kx] *
                                   in[(std::size_t(ic) * g.in_height + iy) * g.in_width + ix];
                        }
                    }
                }
                out[(std::size_t(oc) * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
    const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, p = g.pad();
    std::fill(grad_in.begin(), grad_in.end(), T(0));
    for (int oc = 0; oc < g.out_channels; ++oc) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T go = grad_out[(std::size_t(oc) * oh + oy) * ow + ox];
                for (int ic = 0; ic < g.in_channels; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * g.stride + ky - p;
                            const int ix = ox * g.stride + kx - p;
                            if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                            grad_in[(std::size_t(ic) * g.in_height + iy) * g.in_width + ix] +=
                                go * weight[((std::size_t(oc) * g.in_channels + ic) * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
    const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, p = g.pad();
    for (int oc = 0; oc < g.out_channels; ++oc) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T go = grad_out[(std::size_t(oc) * oh + oy) * ow + ox];
                grad_bias[oc] += go;
                for (int ic = 0; ic < g.in_channels; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * g.stride + ky - p;
                            const int ix = ox * g.stride + kx - p;
                            if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                            grad_weight[((std::size_t(oc) * g.in_channels + ic) * k + ky) * k + kx] +=
                                go * in[(std::size_t(ic) * g.in_height + iy) * g.in_width + ix];
                        }
                    }
                }
            }
        }
    }
}

void upsample2x_forward(int channels, int height, int width, std::span<const float> in, std::span<float> out) {
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < 2 * height; ++y)
            for (int x = 0; x < 2 * width; ++x)
                out[(std::size_t(c) * 2 * height + y) * 2 * width + x] =
                    in[(std::size_t(c) * height + y / 2) * width + x / 2];
}

void upsample2x_backward(int channels, int height, int width, std::span<const float> grad_out,
                         std::span<float> grad_in) {
    std::fill(grad_in.begin(), grad_in.end(), 0.0f);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < 2 * height; ++y)
            for (int x = 0; x < 2 * width; ++x)
                grad_in[(std::size_t(c) * height + y / 2) * width + x / 2] +=
                    grad_out[(std::size_t(c) * 2 * height + y) * 2 * width + x];
}

template void conv2d_forward<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                    std::span<const float>, std::span<float>);
template void conv2d_forward<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>);
template void conv2d_backward_input<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                           std::span<float>);
template void conv2d_backward_input<double>(const ConvGeometry&, std::span<const double>,
                                            std::span<const double>, std::span<double>);
template void conv2d_backward_params<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                            std::span<float>, std::span<float>);
template void conv2d_backward_params<double>(const ConvGeometry&, std::span<const double>,
                                             std::span<const double>, std::span<double>, std::span<double>);

} // namespace reference

template void conv2d_forward<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                    std::span<const float>, std::span<float>);
template void conv2d_forward<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>);
template void conv2d_backward_input<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                           std::span<float>);
template void conv2d_backward_input<double>(const ConvGeometry&, std::span<const double>,
                                            std::span<const double>, std::span<double>);
template void conv2d_backward_params<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                            std::span<float>, std::span<float>);
template void conv2d_backward_params<double>(const ConvGeometry&, std::span<const double>,
                                             std::span<const double>, std::span<double>, std::span<double>);
template void silu_forward<float>(std::span<const float>, std::span<float>);
template void silu_forward<double>(std::span<const double>, std::span<double>);
template void silu_backward<float>(std::span<const float>, std::span<const float>, std::span<float>);
template void silu_backward<double>(std::span<const double>, std::span<const double>, std::span<double>);

} // namespace dereflect::kernels
