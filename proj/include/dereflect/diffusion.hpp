#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dereflect/tensor.hpp"

namespace dereflect::diffusion {

// Cumulative signal coefficients alpha_bar[t], t = 0..t_max, from a
// scaled-linear beta schedule (betas linear in sqrt space).
class NoiseSchedule {
public:
    // beta_start/beta_end <= 0 select defaults scaled from the 1000-step
    // reference range (0.00085, 0.012) so that alpha_bar[t_max] < 0.01.
    explicit NoiseSchedule(int t_max = 64, double beta_start = -1.0, double beta_end = -1.0);

    int t_max() const { return t_max_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }
    double alpha_bar(int t) const;
    const std::vector<double>& alpha_bars() const { return alpha_bar_; }

    nlohmann::json to_json() const;
    static NoiseSchedule from_json(const nlohmann::json& j);

private:
    int t_max_;
    double beta_start_;
    double beta_end_;
    std::vector<double> alpha_bar_;
};

// sqrt(alpha_bar[t]) * z + sqrt(1 - alpha_bar[t]) * eps
LatentTensor add_noise(const LatentTensor& z, int t, const LatentTensor& eps, const NoiseSchedule& sched);

// Shared mean-squared-error kernel: fixed-order reduction in double.
double mse(const Tensor& a, const Tensor& b);

// d/d(a) of mse(a, b).
Tensor mse_grad(const Tensor& a, const Tensor& b);

// Plain two-loop evaluation of ||eps - pred_eps||^2 / n; kept as the
// reference for the shared kernel.
double loss_multistep_reference(const LatentTensor& pred_eps, const LatentTensor& eps);

double loss_one_step(const LatentTensor& pred_zt, const LatentTensor& target_zt);

double loss_consistency(const LatentTensor& pred_1, const LatentTensor& pred_2);

struct LossReport {
    double l_diff_1 = 0.0;
    std::optional<double> l_diff_2;
    std::optional<double> l_con;
    double total = 0.0;
};

struct Stage2Loss {
    LossReport report;
    Tensor grad_pred_1;
    Tensor grad_pred_2;
};

// L = L_diff(M1) + L_diff(M2) + L_con(M1, M2), equal weights.
Stage2Loss loss_stage2(const LatentTensor& pred_1, const LatentTensor& target_1, const LatentTensor& pred_2,
                       const LatentTensor& target_2);

// Differentiable image distance standing in for a learned perceptual metric.
class PerceptualDistance {
public:
    virtual ~PerceptualDistance() = default;
    // When grad_a is non-null it receives d(distance)/d(a).
    virtual double distance(const ImageTensor& a, const ImageTensor& b, Tensor* grad_a) const = 0;
    virtual std::string name() const = 0;
};

// Multi-scale feature distance through a small fixed random conv pyramid
// (3 levels, SiLU, stride-2 between levels), evaluated in double.
class RandomPyramidDistance final : public PerceptualDistance {
public:
    explicit RandomPyramidDistance(std::uint64_t seed = 20240611);
    double distance(const ImageTensor& a, const ImageTensor& b, Tensor* grad_a) const override;
    std::string name() const override { return "random_pyramid"; }

    struct Level {
        int in_ch, out_ch, stride;
        std::vector<double> weight, bias;
    };
    const std::vector<Level>& levels() const { return levels_; }

private:
    std::vector<Level> levels_;
};

struct ReconstructionLoss {
    double l1 = 0.0;
    double l_ssim = 0.0;  // 1 - SSIM
    double l_perceptual = 0.0;
    double lambda = 0.0;
    double total = 0.0;   // l1 + lambda * (l_ssim + l_perceptual)
    Tensor grad;          // d(total)/d(pred), empty unless requested
};

// Main-text weighting; the equal-weight variant is lambda = 1.
inline constexpr double kDefaultLambdaRec = 0.2;

ReconstructionLoss loss_reconstruction(const ImageTensor& pred, const ImageTensor& gt, double lambda,
                                       const PerceptualDistance& perceptual, bool want_grad = false);

// Sinusoidal embedding of a diffusion step; `dim` must be even.
std::vector<float> timestep_embedding(int t, int t_max, int dim);

} // namespace dereflect::diffusion
