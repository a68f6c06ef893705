#pragma once

#include <span>
#include <vector>

#include "json.hpp"

#include "dereflect/rng.hpp"
#include "dereflect/tensor.hpp"

namespace dereflect::train {

struct AugmentConfig {
    bool enabled = true;
    int crop = 64;
    bool flip = true;
    // Maximum deviations: factors are drawn from [1 - x, 1 + x], hue angle
    // from [-hue, hue] turns.
    double brightness = 0.1;
    double contrast = 0.1;
    double saturation = 0.1;
    double hue = 0.02;

    void validate() const;
    nlohmann::json to_json() const;
    static AugmentConfig from_json(const nlohmann::json& j);
};

struct AugmentParams {
    int x0 = 0;
    int y0 = 0;
    int crop = 0;
    bool flip = false;
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue = 0.0;
};

// Draws one transform for an image of the given size. Throws
// ValidationError when the crop does not fit.
AugmentParams sample_augment(Rng& rng, int height, int width, const AugmentConfig& cfg);

ImageTensor apply_augment(const ImageTensor& img, const AugmentParams& p);

// Same transform for every image of a group (transmission and mixed
// variants); identity when disabled.
std::vector<ImageTensor> augment_group(std::span<const ImageTensor* const> images, Rng& rng,
                                       const AugmentConfig& cfg);

} // namespace dereflect::train
