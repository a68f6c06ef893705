#include "dereflect/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dereflect::net {

Param::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int d : shape) count *= std::size_t(d);
    value.assign(count, 0.0f);
    grad.assign(count, 0.0f);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

Conv2d::Conv2d(const std::string& name, int in_ch, int out_ch, int k, int s)
    : weight(name + ".weight", {out_ch, in_ch, k, k}),
      bias(name + ".bias", {out_ch}),
      in_channels(in_ch),
      out_channels(out_ch),
      kernel(k),
      stride(s) {}

void Conv2d::init_he(Rng& rng, double gain) {
    const double std_dev = gain * std::sqrt(2.0 / double(in_channels * kernel * kernel));
    std::normal_distribution<float> d(0.0f, float(std_dev));
    for (float& w : weight.value) w = d(rng);
    std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

void Conv2d::init_zero() {
    std::fill(weight.value.begin(), weight.value.end(), 0.0f);
    std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

kernels::ConvGeometry Conv2d::geometry(const Tensor& x) const {
    if (x.channels() != in_channels) {
        throw DimensionError(weight.name + ": expected " + std::to_string(in_channels) + " input channels, got " +
                             std::to_string(x.channels()));
    }
    return {in_channels, out_channels, x.height(), x.width(), kernel, stride};
}

Tensor Conv2d::forward(const Tensor& x) const {
    const auto g = geometry(x);
    Tensor y(out_channels, g.out_height(), g.out_width());
    kernels::conv2d_forward<float>(g, x.values(), weight.value, bias.value, y.values());
    return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_y, bool need_input, bool param_grads) {
    const auto g = geometry(x);
    if (param_grads) kernels::conv2d_backward_params<float>(g, x.values(), grad_y.values(), weight.grad, bias.grad);
    Tensor gx;
    if (need_input) {
        gx = Tensor(x.shape());
        kernels::conv2d_backward_input<float>(g, grad_y.values(), weight.value, gx.values());
    }
    return gx;
}

Linear::Linear(const std::string& name, int in_f, int out_f)
    : weight(name + ".weight", {out_f, in_f}), bias(name + ".bias", {out_f}), in_features(in_f), out_features(out_f) {}

void Linear::init_normal(Rng& rng, double std_dev) {
    std::normal_distribution<float> d(0.0f, float(std_dev));
    for (float& w : weight.value) w = d(rng);
    std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

std::vector<float> Linear::forward(std::span<const float> x) const {
    if (int(x.size()) != in_features) throw DimensionError(weight.name + ": input size mismatch");
    std::vector<float> y(out_features);
    for (int o = 0; o < out_features; ++o) {
        float acc = bias.value[o];
        const float* w = weight.value.data() + std::size_t(o) * in_features;
        for (int i = 0; i < in_features; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
    return y;
}

void Linear::backward(std::span<const float> x, std::span<const float> grad_y, std::span<float> grad_x,
                      bool param_grads) {
    for (int o = 0; o < out_features; ++o) {
        const float g = grad_y[o];
        if (param_grads) {
            bias.grad[o] += g;
            float* gw = weight.grad.data() + std::size_t(o) * in_features;
            for (int i = 0; i < in_features; ++i) gw[i] += g * x[i];
        }
        if (!grad_x.empty()) {
            const float* w = weight.value.data() + std::size_t(o) * in_features;
            for (int i = 0; i < in_features; ++i) grad_x[i] += g * w[i];
        }
    }
}

ConvAct::ConvAct(const std::string& name, int in_ch, int out_ch, int k, int stride, Activation a, int emb_dim)
    : conv(name, in_ch, out_ch, k, stride), act(a) {
    if (emb_dim > 0) proj.emplace(name + ".emb", emb_dim, out_ch);
}

void ConvAct::init(Rng& rng, double gain) {
    conv.init_he(rng, gain);
    if (proj) proj->init_normal(rng, 1.0 / std::sqrt(double(proj->in_features)));
}

Tensor ConvAct::forward(const Tensor& x, std::span<const float> emb, ConvActTrace* trace) const {
    Tensor pre = conv.forward(x);
    if (proj) {
        const std::vector<float> b = proj->forward(emb);
        for (int c = 0; c < pre.channels(); ++c)
            for (float& v : pre.channel(c)) v += b[c];
    }
    Tensor out;
    switch (act) {
    case Activation::none: out = pre; break;
    case Activation::silu:
        out = Tensor(pre.shape());
        kernels::silu_forward<float>(pre.values(), out.values());
        break;
    case Activation::sigmoid:
        out = Tensor(pre.shape());
        kernels::sigmoid_forward(pre.values(), out.values());
        break;
    }
    if (trace) {
        trace->in = x;
        if (act == Activation::sigmoid) trace->out = out;
        trace->pre = std::move(pre);
    }
    return out;
}

Tensor ConvAct::backward(const Tensor& grad_y, const ConvActTrace& trace, std::span<const float> emb,
                         std::span<float> grad_emb, bool need_input, bool param_grads) {
    Tensor gpre;
    switch (act) {
    case Activation::none: gpre = grad_y; break;
    case Activation::silu:
        gpre = Tensor(grad_y.shape());
        kernels::silu_backward<float>(trace.pre.values(), grad_y.values(), gpre.values());
        break;
    case Activation::sigmoid:
        gpre = Tensor(grad_y.shape());
        kernels::sigmoid_backward(trace.out.values(), grad_y.values(), gpre.values());
        break;
    }
    if (proj && (param_grads || !grad_emb.empty())) {
        std::vector<float> gb(gpre.channels());
        for (int c = 0; c < gpre.channels(); ++c) {
            double s = 0.0;
            for (float v : gpre.channel(c)) s += v;
            gb[c] = float(s);
        }
        proj->backward(emb, gb, grad_emb, param_grads);
    }
    return conv.backward(trace.in, gpre, need_input, param_grads);
}

void ConvAct::collect(std::vector<Param*>& out) {
    conv.collect(out);
    if (proj) proj->collect(out);
}

void ConvAct::collect(std::vector<const Param*>& out) const {
    conv.collect(out);
    if (proj) proj->collect(out);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw DimensionError("concat: spatial mismatch");
    Tensor out(a.channels() + b.channels(), a.height(), a.width());
    std::memcpy(out.data(), a.data(), a.size() * sizeof(float));
    std::memcpy(out.data() + a.size(), b.data(), b.size() * sizeof(float));
    return out;
}

void split_channels(const Tensor& ab, int a_channels, Tensor& a, Tensor& b) {
    a = Tensor(a_channels, ab.height(), ab.width());
    b = Tensor(ab.channels() - a_channels, ab.height(), ab.width());
    std::memcpy(a.data(), ab.data(), a.size() * sizeof(float));
    std::memcpy(b.data(), ab.data() + a.size(), b.size() * sizeof(float));
}

Tensor upsample2x(const Tensor& x) {
    Tensor y(x.channels(), 2 * x.height(), 2 * x.width());
    kernels::upsample2x_forward(x.channels(), x.height(), x.width(), x.values(), y.values());
    return y;
}

Tensor upsample2x_backward(const Tensor& grad_y) {
    Tensor gx(grad_y.channels(), grad_y.height() / 2, grad_y.width() / 2);
    kernels::upsample2x_backward(gx.channels(), gx.height(), gx.width(), grad_y.values(), gx.values());
    return gx;
}

} // namespace dereflect::net
