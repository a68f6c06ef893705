#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dereflect/kernels.hpp"
#include "dereflect/rng.hpp"
#include "dereflect/tensor.hpp"

namespace dereflect::net {

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;

    Param() = default;
    Param(std::string n, std::vector<int> s);
    std::size_t size() const { return value.size(); }
    void zero_grad();
};

enum class Activation { none, silu, sigmoid };

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride);

    // He-normal weights, zero bias.
    void init_he(Rng& rng, double gain = 1.0);
    void init_zero();

    kernels::ConvGeometry geometry(const Tensor& x) const;
    Tensor forward(const Tensor& x) const;
    // Accumulates parameter gradients when param_grads; returns the input
    // gradient when need_input (empty tensor otherwise).
    Tensor backward(const Tensor& x, const Tensor& grad_y, bool need_input, bool param_grads);

    void collect(std::vector<Param*>& out) { out.push_back(&weight); out.push_back(&bias); }
    void collect(std::vector<const Param*>& out) const { out.push_back(&weight); out.push_back(&bias); }

    Param weight;
    Param bias;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
};

class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in_features, int out_features);

    void init_normal(Rng& rng, double std_dev);
    std::vector<float> forward(std::span<const float> x) const;
    // grad_x (if non-empty) is accumulated into.
    void backward(std::span<const float> x, std::span<const float> grad_y, std::span<float> grad_x,
                  bool param_grads);

    void collect(std::vector<Param*>& out) { out.push_back(&weight); out.push_back(&bias); }
    void collect(std::vector<const Param*>& out) const { out.push_back(&weight); out.push_back(&bias); }

    Param weight;
    Param bias;
    int in_features = 0;
    int out_features = 0;
};

struct ConvActTrace {
    Tensor in;
    Tensor pre;
    Tensor out; // kept only for sigmoid
};

// conv -> (+ per-channel projection of an embedding) -> activation
class ConvAct {
public:
    ConvAct() = default;
    ConvAct(const std::string& name, int in_channels, int out_channels, int kernel, int stride, Activation act,
            int emb_dim = 0);

    void init(Rng& rng, double gain = 1.0);

    Tensor forward(const Tensor& x, std::span<const float> emb, ConvActTrace* trace) const;
    // grad_emb is accumulated into when non-empty.
    Tensor backward(const Tensor& grad_y, const ConvActTrace& trace, std::span<const float> emb,
                    std::span<float> grad_emb, bool need_input, bool param_grads);

    void collect(std::vector<Param*>& out);
    void collect(std::vector<const Param*>& out) const;

    Conv2d conv;
    std::optional<Linear> proj;
    Activation act = Activation::silu;
};

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& ab, int a_channels, Tensor& a, Tensor& b);
Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& grad_y);

} // namespace dereflect::net
