#include "dereflect/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dereflect::train {

void AugmentConfig::validate() const {
    if (crop < 8) throw ValidationError("crop must be at least 8");
    for (double x : {brightness, contrast, saturation})
        if (x < 0.0 || x >= 1.0) throw ValidationError("photometric jitter must be in [0,1)");
    if (hue < 0.0 || hue > 0.5) throw ValidationError("hue jitter must be in [0,0.5]");
}

nlohmann::json AugmentConfig::to_json() const {
    return {{"enabled", enabled},       {"crop", crop},         {"flip", flip},
            {"brightness", brightness}, {"contrast", contrast}, {"saturation", saturation},
            {"hue", hue}};
}

AugmentConfig AugmentConfig::from_json(const nlohmann::json& j) {
    AugmentConfig c;
    c.enabled = j.value("enabled", c.enabled);
    c.crop = j.value("crop", c.crop);
    c.flip = j.value("flip", c.flip);
    c.brightness = j.value("brightness", c.brightness);
    c.contrast = j.value("contrast", c.contrast);
    c.saturation = j.value("saturation", c.saturation);
    c.hue = j.value("hue", c.hue);
    c.validate();
    return c;
}

AugmentParams sample_augment(Rng& rng, int height, int width, const AugmentConfig& cfg) {
    if (cfg.crop > height || cfg.crop > width) {
        throw ValidationError("crop " + std::to_string(cfg.crop) + " larger than image " + std::to_string(height) +
                              "x" + std::to_string(width));
    }
    AugmentParams p;
    p.crop = cfg.crop;
    p.y0 = std::uniform_int_distribution<int>(0, height - cfg.crop)(rng);
    p.x0 = std::uniform_int_distribution<int>(0, width - cfg.crop)(rng);
    p.flip = cfg.flip && std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    p.brightness = uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness);
    p.contrast = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast);
    p.saturation = uniform(rng, 1.0 - cfg.saturation, 1.0 + cfg.saturation);
    p.hue = uniform(rng, -cfg.hue, cfg.hue);
    return p;
}

ImageTensor apply_augment(const ImageTensor& img, const AugmentParams& p) {
    if (img.channels() != 3) throw DimensionError("augment expects a 3-channel image");
    if (p.y0 < 0 || p.x0 < 0 || p.y0 + p.crop > img.height() || p.x0 + p.crop > img.width()) {
        throw ValidationError("crop window outside image");
    }
    const int n = p.crop;
    ImageTensor out(3, n, n);
    // hue rotation in YIQ space
    const double a = 2.0 * std::numbers::pi * p.hue;
    const double ca = std::cos(a), sa = std::sin(a);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const int sx = p.x0 + (p.flip ? n - 1 - x : x);
            const int sy = p.y0 + y;
            double r = img.at(0, sy, sx) * p.brightness;
            double g = img.at(1, sy, sx) * p.brightness;
            double b = img.at(2, sy, sx) * p.brightness;
            r = (r - 0.5) * p.contrast + 0.5;
            g = (g - 0.5) * p.contrast + 0.5;
            b = (b - 0.5) * p.contrast + 0.5;
            const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
            r = luma + (r - luma) * p.saturation;
            g = luma + (g - luma) * p.saturation;
            b = luma + (b - luma) * p.saturation;
            if (p.hue != 0.0) {
                const double yy = 0.299 * r + 0.587 * g + 0.114 * b;
                const double i0 = 0.596 * r - 0.274 * g - 0.322 * b;
                const double q0 = 0.211 * r - 0.523 * g + 0.312 * b;
                const double i1 = i0 * ca - q0 * sa;
                const double q1 = i0 * sa + q0 * ca;
                r = yy + 0.956 * i1 + 0.621 * q1;
                g = yy - 0.272 * i1 - 0.647 * q1;
                b = yy - 1.106 * i1 + 1.703 * q1;
            }
            out.at(0, y, x) = float(std::clamp(r, 0.0, 1.0));
            out.at(1, y, x) = float(std::clamp(g, 0.0, 1.0));
            out.at(2, y, x) = float(std::clamp(b, 0.0, 1.0));
        }
    }
    return out;
}

std::vector<ImageTensor> augment_group(std::span<const ImageTensor* const> images, Rng& rng,
                                       const AugmentConfig& cfg) {
    std::vector<ImageTensor> out;
    out.reserve(images.size());
    if (images.empty()) return out;
    const Shape s = images.front()->shape();
    for (const ImageTensor* im : images) require_same_shape(*images.front(), *im, "augment group");
    if (!cfg.enabled) {
        for (const ImageTensor* im : images) out.push_back(*im);
        return out;
    }
    const AugmentParams p = sample_augment(rng, s.height, s.width, cfg);
    for (const ImageTensor* im : images) out.push_back(apply_augment(*im, p));
    return out;
}

} // namespace dereflect::train
