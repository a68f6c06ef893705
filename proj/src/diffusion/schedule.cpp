#include <cmath>

#include "dereflect/diffusion.hpp"

namespace dereflect::diffusion {

NoiseSchedule::NoiseSchedule(int t_max, double beta_start, double beta_end) : t_max_(t_max) {
    if (t_max < 2) throw ValidationError("t_max must be >= 2");
    beta_start_ = beta_start > 0 ? beta_start : 0.00085 * 1000.0 / t_max;
    beta_end_ = beta_end > 0 ? beta_end : 0.012 * 1000.0 / t_max;
    if (!(beta_start_ < beta_end_) || beta_end_ >= 1.0) {
        throw ValidationError("beta range must satisfy 0 < beta_start < beta_end < 1");
    }
    alpha_bar_.resize(t_max + 1);
    alpha_bar_[0] = 1.0;
    const double s0 = std::sqrt(beta_start_), s1 = std::sqrt(beta_end_);
    for (int t = 1; t <= t_max; ++t) {
        const double s = s0 + (s1 - s0) * double(t - 1) / double(t_max - 1);
        alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - s * s);
    }
    if (!(alpha_bar_[t_max] > 0.0 && alpha_bar_[t_max] < 0.01)) {
        throw ValidationError("schedule ends at alpha_bar = " + std::to_string(alpha_bar_[t_max]) +
                              ", outside (0, 0.01)");
    }
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > t_max_) {
        throw ValidationError("step " + std::to_string(t) + " outside [0, " + std::to_string(t_max_) + "]");
    }
    return alpha_bar_[t];
}

nlohmann::json NoiseSchedule::to_json() const {
    return {{"t_max", t_max_}, {"beta_start", beta_start_}, {"beta_end", beta_end_}, {"alpha_bar", alpha_bar_}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
    NoiseSchedule s(j.at("t_max").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
    if (j.contains("alpha_bar")) {
        const auto stored = j.at("alpha_bar").get<std::vector<double>>();
        if (stored.size() != s.alpha_bar_.size()) throw ValidationError("alpha_bar length disagrees with t_max");
        for (std::size_t i = 0; i < stored.size(); ++i) {
            if (std::abs(stored[i] - s.alpha_bar_[i]) > 1e-12) {
                throw ValidationError("stored alpha_bar disagrees with beta range");
            }
        }
    }
    return s;
}

LatentTensor add_noise(const LatentTensor& z, int t, const LatentTensor& eps, const NoiseSchedule& sched) {
    require_same_shape(z, eps, "add_noise");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    LatentTensor out(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = float(a * z[i] + b * eps[i]);
    return out;
}

std::vector<float> timestep_embedding(int t, int t_max, int dim) {
    if (dim % 2 != 0) throw ValidationError("embedding dimension must be even");
    const int half = dim / 2;
    const double pos = double(t) * 1000.0 / double(t_max);
    std::vector<float> e(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e[i] = float(std::sin(pos * freq));
        e[half + i] = float(std::cos(pos * freq));
    }
    return e;
}

} // namespace dereflect::diffusion
