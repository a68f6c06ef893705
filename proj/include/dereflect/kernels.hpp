#pragma once

// Data-parallel compute kernels. Every kernel here has a serial
// counterpart in dereflect::kernels::reference that the tests and the
// benchmark compare against. The OpenMP kernels partition work so that
// each output element is reduced by exactly one thread in a fixed order,
// which keeps results independent of the thread count.

#include <span>

namespace dereflect::kernels {

struct ConvGeometry {
    int in_channels = 0;
    int out_channels = 0;
    int in_height = 0;
    int in_width = 0;
    int kernel = 3;
    int stride = 1;

    int pad() const { return kernel / 2; }
    int out_height() const { return (in_height + 2 * pad() - kernel) / stride + 1; }
    int out_width() const { return (in_width + 2 * pad() - kernel) / stride + 1; }
    std::size_t in_size() const { return std::size_t(in_channels) * in_height * in_width; }
    std::size_t out_size() const { return std::size_t(out_channels) * out_height() * out_width(); }
    std::size_t weight_size() const { return std::size_t(out_channels) * in_channels * kernel * kernel; }
};

// out = conv(in, weight) + bias; out is overwritten.
template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

// grad_in is overwritten.
template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);

// grad_weight and grad_bias are accumulated into.
template <class T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);

// x * sigmoid(x)
template <class T>
void silu_forward(std::span<const T> x, std::span<T> y);
// grad_x = grad_y * d/dx silu(x); grad_x is overwritten.
template <class T>
void silu_backward(std::span<const T> x, std::span<const T> grad_y, std::span<T> grad_x);

void sigmoid_forward(std::span<const float> x, std::span<float> y);
void sigmoid_backward(std::span<const float> y, std::span<const float> grad_y, std::span<float> grad_x);

// Nearest-neighbour 2x upsampling of `channels` planes of height x width.
void upsample2x_forward(int channels, int height, int width, std::span<const float> in, std::span<float> out);
// Sums each 2x2 block of grad_out back into grad_in (overwritten).
void upsample2x_backward(int channels, int height, int width, std::span<const float> grad_out,
                         std::span<float> grad_in);

// y += x
void add_inplace(std::span<float> y, std::span<const float> x);

namespace reference {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);
template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);
template <class T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);

void upsample2x_forward(int channels, int height, int width, std::span<const float> in, std::span<float> out);
void upsample2x_backward(int channels, int height, int width, std::span<const float> grad_out,
                         std::span<float> grad_in);

} // namespace reference

// Thread count used by the parallel kernels; 1 keeps every run sequential.
void set_num_threads(int n);
int num_threads();

} // namespace dereflect::kernels
