#include "dereflect/optim.hpp"

#include <cmath>

namespace dereflect::train {

void AdamW::step(const std::vector<net::Param*>& params, float grad_scale) {
    for (net::Param* p : params) {
        State& s = state_[p];
        if (s.m.empty()) {
            s.m.assign(p->size(), 0.0f);
            s.v.assign(p->size(), 0.0f);
        }
        ++s.steps;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(s.steps));
        const double c2 = 1.0 - std::pow(cfg_.beta2, double(s.steps));
        const float b1 = float(cfg_.beta1), b2 = float(cfg_.beta2);
        const float step = float(cfg_.lr / c1);
        const float inv_c2 = float(1.0 / c2);
        const float decay = float(1.0 - cfg_.lr * cfg_.weight_decay);
        const float eps = float(cfg_.eps);
        float* w = p->value.data();
        const float* g = p->grad.data();
        float* m = s.m.data();
        float* v = s.v.data();
        for (std::size_t i = 0; i < p->size(); ++i) {
            const float gi = g[i] * grad_scale;
            m[i] = b1 * m[i] + (1.0f - b1) * gi;
            v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
            w[i] = w[i] * decay - step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
        }
    }
}

} // namespace dereflect::train
