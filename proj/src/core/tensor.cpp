#include "dereflect/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dereflect {

std::string to_string(const Shape& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

Tensor::Tensor(int channels, int height, int width, float fill) : shape_{channels, height, width} {
    if (channels < 0 || height < 0 || width < 0) {
        throw DimensionError("negative tensor extent " + to_string(shape_));
    }
    data_.assign(shape_.size(), fill);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
}

void require_image(const Tensor& img, const char* what) {
    if (img.channels() != 3) {
        throw DimensionError(std::string(what) + ": expected 3 channels, got " + to_string(img.shape()));
    }
    if (img.height() < 8 || img.width() < 8) {
        throw DimensionError(std::string(what) + ": image smaller than 8x8 (" + to_string(img.shape()) + ")");
    }
    for (float v : img.values()) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw ValidationError(std::string(what) + ": pixel value outside [0,1]");
        }
    }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

Tensor clamp01(Tensor t) {
    for (float& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
    return t;
}

} // namespace dereflect
