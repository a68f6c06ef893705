#pragma once

// Independent, deliberately naive re-implementations used as oracles.
// Nothing here calls into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dereflect/tensor.hpp"

namespace oracle {

using dereflect::Tensor;

inline double mix_scalar(double t, double r, double g1, double g2) { return g1 * t + g2 * r - g1 * g2 * t * r; }

inline double mean_sq_diff(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    std::size_t n = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) {
                const double d = double(a.at(c, y, x)) - double(b.at(c, y, x));
                s += d * d;
                ++n;
            }
    return s / double(n);
}

inline double mean_abs_diff(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) s += std::abs(double(a.at(c, y, x)) - double(b.at(c, y, x)));
    return s / double(a.size());
}

// SSIM over BT.601 luma with a full 2-D Gaussian window evaluated at every
// fully contained position.
inline double ssim(const Tensor& a, const Tensor& b, int win = 11, double sigma = 1.5, double k1 = 0.01,
                   double k2 = 0.03) {
    const int h = a.height(), w = a.width();
    auto luma = [&](const Tensor& t, int y, int x) {
        return 0.299 * t.at(0, y, x) + 0.587 * t.at(1, y, x) + 0.114 * t.at(2, y, x);
    };
    std::vector<double> kw(std::size_t(win) * win);
    const double c = (win - 1) / 2.0;
    double ksum = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            kw[i * win + j] = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2.0 * sigma * sigma));
            ksum += kw[i * win + j];
        }
    const double c1 = k1 * k1, c2 = k2 * k2;
    double total = 0.0;
    int count = 0;
    for (int y0 = 0; y0 + win <= h; ++y0)
        for (int x0 = 0; x0 + win <= w; ++x0) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double k = kw[i * win + j] / ksum;
                    const double p = luma(a, y0 + i, x0 + j), q = luma(b, y0 + i, x0 + j);
                    mx += k * p;
                    my += k * q;
                    sxx += k * p * p;
                    syy += k * q * q;
                    sxy += k * p * q;
                }
            const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

// Zero-padded "same" convolution, kernel k, stride s, in double.
inline std::vector<double> conv(const std::vector<double>& in, int ci, int h, int w, const std::vector<double>& wt,
                                const std::vector<double>& bias, int co, int k, int s, int& oh, int& ow) {
    const int pad = k / 2;
    oh = (h + 2 * pad - k) / s + 1;
    ow = (w + 2 * pad - k) / s + 1;
    std::vector<double> out(std::size_t(co) * oh * ow);
    for (int o = 0; o < co; ++o)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = bias.empty() ? 0.0 : bias[o];
                for (int i = 0; i < ci; ++i)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = y * s + ky - pad, ix = x * s + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += wt[((std::size_t(o) * ci + i) * k + ky) * k + kx] * in[(std::size_t(i) * h + iy) * w + ix];
                        }
                out[(std::size_t(o) * oh + y) * ow + x] = acc;
            }
    return out;
}

struct PyramidLevel {
    int in_ch, out_ch, stride;
    const std::vector<double>* weight;
    const std::vector<double>* bias;
};

// Mean over levels of the mean squared feature difference, with features
// silu(conv(.)) chained from the input mapped to [-1, 1].
inline double pyramid_distance(const Tensor& a, const Tensor& b, const std::vector<PyramidLevel>& levels) {
    auto features = [&](const Tensor& img) {
        std::vector<std::vector<double>> out;
        std::vector<double> x(img.size());
        for (std::size_t i = 0; i < img.size(); ++i) x[i] = 2.0 * img[i] - 1.0;
        int h = img.height(), w = img.width();
        for (const auto& lv : levels) {
            int oh, ow;
            x = conv(x, lv.in_ch, h, w, *lv.weight, *lv.bias, lv.out_ch, 3, lv.stride, oh, ow);
            for (double& v : x) v = v / (1.0 + std::exp(-v));
            h = oh;
            w = ow;
            out.push_back(x);
        }
        return out;
    };
    const auto fa = features(a), fb = features(b);
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        double s = 0.0;
        for (std::size_t i = 0; i < fa[l].size(); ++i) s += (fa[l][i] - fb[l][i]) * (fa[l][i] - fb[l][i]);
        total += s / double(fa[l].size());
    }
    return total / double(fa.size());
}

} // namespace oracle
