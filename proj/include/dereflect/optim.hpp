#pragma once

#include <unordered_map>
#include <vector>

#include "dereflect/layers.hpp"

namespace dereflect::train {

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. Moment state is kept per parameter,
// so disjoint subsets can be stepped independently.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    // Updates each parameter from its accumulated gradient, scaled by grad_scale.
    void step(const std::vector<net::Param*>& params, float grad_scale = 1.0f);

private:
    struct State {
        std::vector<float> m, v;
        long steps = 0;
    };
    AdamWConfig cfg_;
    std::unordered_map<const net::Param*, State> state_;
};

} // namespace dereflect::train
