#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dereflect/errors.hpp"

namespace dereflect {

struct Shape {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(width);
    }
    std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Planar (channel, row, column) float tensor for a single sample.
// Images are 3-channel tensors with values in [0,1]; latents use the
// same carrier with the codec's channel count.
class Tensor {
public:
    Tensor() = default;
    Tensor(int channels, int height, int width, float fill = 0.0f);
    explicit Tensor(Shape shape, float fill = 0.0f) : Tensor(shape.channels, shape.height, shape.width, fill) {}

    const Shape& shape() const { return shape_; }
    int channels() const { return shape_.channels; }
    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    float at(int c, int y, int x) const { return data_[index(c, y, x)]; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }
    std::span<float> channel(int c) { return std::span<float>(data_).subspan(c * shape_.plane(), shape_.plane()); }
    std::span<const float> channel(int c) const {
        return std::span<const float>(data_).subspan(c * shape_.plane(), shape_.plane());
    }

    void fill(float v);
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
    }

    Shape shape_{};
    std::vector<float> data_;
};

using ImageTensor = Tensor;
using LatentTensor = Tensor;

// Throws DimensionError naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Throws ValidationError unless `img` is a finite 3-channel image of at least
// 8x8 with values in [0,1].
void require_image(const Tensor& img, const char* what);

bool bitwise_equal(const Tensor& a, const Tensor& b);

Tensor clamp01(Tensor t);

} // namespace dereflect
