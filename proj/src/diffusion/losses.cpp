#include <algorithm>
#include <cmath>
#include <random>

#include "dereflect/diffusion.hpp"
#include "dereflect/kernels.hpp"
#include "dereflect/metrics.hpp"

namespace dereflect::diffusion {

double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    if (a.size() == 0) throw DimensionError("mse of empty tensors");
    const int channels = a.channels();
    const std::size_t plane = a.shape().plane();
    std::vector<double> partial(channels, 0.0);
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads())
    for (int c = 0; c < channels; ++c) {
        const float* pa = a.data() + c * plane;
        const float* pb = b.data() + c * plane;
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double d = double(pa[i]) - double(pb[i]);
            s += d * d;
        }
        partial[c] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total / double(a.size());
}

Tensor mse_grad(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse_grad");
    Tensor g(a.shape());
    const double scale = 2.0 / double(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = float(scale * (double(a[i]) - double(b[i])));
    return g;
}

double loss_multistep_reference(const LatentTensor& pred_eps, const LatentTensor& eps) {
    require_same_shape(pred_eps, eps, "loss_multistep_reference");
    double s = 0.0;
    for (int c = 0; c < eps.channels(); ++c)
        for (int y = 0; y < eps.height(); ++y)
            for (int x = 0; x < eps.width(); ++x) {
                const double d = double(eps.at(c, y, x)) - double(pred_eps.at(c, y, x));
                s += d * d;
            }
    return s / double(eps.size());
}

double loss_one_step(const LatentTensor& pred_zt, const LatentTensor& target_zt) { return mse(pred_zt, target_zt); }

double loss_consistency(const LatentTensor& pred_1, const LatentTensor& pred_2) { return mse(pred_1, pred_2); }

Stage2Loss loss_stage2(const LatentTensor& pred_1, const LatentTensor& target_1, const LatentTensor& pred_2,
                       const LatentTensor& target_2) {
    require_same_shape(pred_1, pred_2, "loss_stage2");
    Stage2Loss out;
    out.report.l_diff_1 = loss_one_step(pred_1, target_1);
    out.report.l_diff_2 = loss_one_step(pred_2, target_2);
    out.report.l_con = loss_consistency(pred_1, pred_2);
    out.report.total = out.report.l_diff_1 + *out.report.l_diff_2 + *out.report.l_con;

    out.grad_pred_1 = mse_grad(pred_1, target_1);
    out.grad_pred_2 = mse_grad(pred_2, target_2);
    const Tensor g_con = mse_grad(pred_1, pred_2);
    for (std::size_t i = 0; i < g_con.size(); ++i) {
        out.grad_pred_1[i] += g_con[i];
        out.grad_pred_2[i] -= g_con[i];
    }
    return out;
}

RandomPyramidDistance::RandomPyramidDistance(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int chans[4] = {3, 8, 16, 32};
    for (int l = 0; l < 3; ++l) {
        Level lv{chans[l], chans[l + 1], l == 0 ? 1 : 2, {}, {}};
        const double std_dev = std::sqrt(2.0 / (lv.in_ch * 9));
        std::normal_distribution<double> d(0.0, std_dev);
        lv.weight.resize(std::size_t(lv.out_ch) * lv.in_ch * 9);
        for (double& w : lv.weight) w = d(rng);
        lv.bias.assign(lv.out_ch, 0.0);
        levels_.push_back(std::move(lv));
    }
}

double RandomPyramidDistance::distance(const ImageTensor& a, const ImageTensor& b, Tensor* grad_a) const {
    require_same_shape(a, b, "perceptual distance");
    const int nl = int(levels_.size());
    struct Cache {
        kernels::ConvGeometry g;
        std::vector<double> in, pre, out;
    };
    auto run = [&](const ImageTensor& img, std::vector<Cache>& caches) {
        std::vector<double> x(img.size());
        for (std::size_t i = 0; i < img.size(); ++i) x[i] = 2.0 * img[i] - 1.0;
        int h = img.height(), w = img.width();
        for (const Level& lv : levels_) {
            Cache c;
            c.g = {lv.in_ch, lv.out_ch, h, w, 3, lv.stride};
            c.in = std::move(x);
            c.pre.resize(c.g.out_size());
            kernels::conv2d_forward<double>(c.g, c.in, lv.weight, lv.bias, c.pre);
            c.out.resize(c.pre.size());
            kernels::silu_forward<double>(c.pre, c.out);
            x = c.out;
            h = c.g.out_height();
            w = c.g.out_width();
            caches.push_back(std::move(c));
        }
    };
    std::vector<Cache> ca, cb;
    run(a, ca);
    run(b, cb);

    double total = 0.0;
    std::vector<std::vector<double>> level_grad(nl);
    for (int l = 0; l < nl; ++l) {
        const auto& fa = ca[l].out;
        const auto& fb = cb[l].out;
        double s = 0.0;
        for (std::size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
        total += s / double(fa.size()) / nl;
        if (grad_a) {
            level_grad[l].resize(fa.size());
            const double scale = 2.0 / double(fa.size()) / nl;
            for (std::size_t i = 0; i < fa.size(); ++i) level_grad[l][i] = scale * (fa[i] - fb[i]);
        }
    }
    if (grad_a) {
        std::vector<double> g;
        for (int l = nl - 1; l >= 0; --l) {
            const Cache& c = ca[l];
            if (g.empty()) g.assign(c.out.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += level_grad[l][i];
            std::vector<double> gpre(g.size());
            kernels::silu_backward<double>(c.pre, g, gpre);
            std::vector<double> gin(c.in.size());
            kernels::conv2d_backward_input<double>(c.g, gpre, levels_[l].weight, gin);
            g = std::move(gin);
        }
        *grad_a = Tensor(a.shape());
        for (std::size_t i = 0; i < g.size(); ++i) (*grad_a)[i] = float(2.0 * g[i]);
    }
    return total;
}

ReconstructionLoss loss_reconstruction(const ImageTensor& pred, const ImageTensor& gt, double lambda,
                                       const PerceptualDistance& perceptual, bool want_grad) {
    require_same_shape(pred, gt, "loss_reconstruction");
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
    ReconstructionLoss r;
    r.lambda = lambda;
    const double n = double(pred.size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) l1 += std::abs(double(pred[i]) - double(gt[i]));
    r.l1 = l1 / n;

    Tensor g_ssim, g_perc;
    const double s = want_grad ? metrics::ssim_with_grad(pred, gt, g_ssim) : metrics::ssim(pred, gt);
    r.l_ssim = 1.0 - s;
    r.l_perceptual = perceptual.distance(pred, gt, want_grad ? &g_perc : nullptr);
    r.total = r.l1 + lambda * (r.l_ssim + r.l_perceptual);

    if (want_grad) {
        r.grad = Tensor(pred.shape());
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = double(pred[i]) - double(gt[i]);
            const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            r.grad[i] = float(sign / n + lambda * (-double(g_ssim[i]) + double(g_perc[i])));
        }
    }
    return r;
}

} // namespace dereflect::diffusion
