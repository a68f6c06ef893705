#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dereflect/rng.hpp"
#include "dereflect/tensor.hpp"

namespace dereflect::align {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct KeypointMatch {
    Point2 src; // in the mixed image
    Point2 dst; // in the transmission image
    double descriptor_distance = 0.0;
};

// 3x3 projective transform mapping mixed-image coordinates to
// transmission coordinates, normalised so that m(2,2) == 1.
class Homography {
public:
    Homography() : m_(Eigen::Matrix3d::Identity()) {}
    explicit Homography(const Eigen::Matrix3d& m);

    static Homography identity() { return Homography(); }
    static Homography translation(double tx, double ty);

    const Eigen::Matrix3d& matrix() const { return m_; }
    Point2 apply(Point2 p) const;
    Homography inverse() const;
    double determinant() const { return m_.determinant(); }

private:
    Eigen::Matrix3d m_;
};

struct AlignConfig {
    double ratio_threshold = 0.75;
    double inlier_tol = 2.0;
    int max_iters = 2000;
    int min_inliers = 4;
    double confidence = 0.999;
};

// SIFT keypoints on both images, 2-NN matching with Lowe's ratio test.
// Sorted by descriptor distance. Throws InsufficientFeaturesError when
// fewer than four matches survive.
std::vector<KeypointMatch> detect_and_match(const ImageTensor& mixed, const ImageTensor& transmission,
                                            const AlignConfig& cfg = {});

struct HomographyFit {
    Homography h;
    std::vector<std::uint8_t> inliers;
    int n_inliers = 0;
};

// Normalised DLT least-squares fit over all given correspondences.
Homography fit_homography_dlt(const std::vector<KeypointMatch>& matches);

// RANSAC over minimal 4-point samples, then a DLT refit on the consensus
// set. Throws ValidationError for fewer than 4 matches and
// AlignmentFailure when no model gathers cfg.min_inliers inliers.
HomographyFit estimate_homography(const std::vector<KeypointMatch>& matches, Rng& rng, const AlignConfig& cfg = {});

struct WarpResult {
    ImageTensor image;
    std::vector<std::uint8_t> valid; // height*width, 1 where the source sample was in bounds
};

// Resamples `mixed` into the reference frame: output pixel p takes the
// bilinear sample of `mixed` at h^-1(p).
WarpResult warp_to_reference(const ImageTensor& mixed, const Homography& h, int out_height, int out_width);

// Largest displacement of the four image corners under h.
double corner_shift(const Homography& h, int height, int width);

// Largest distance between the corner mappings of two homographies.
double corner_error(const Homography& a, const Homography& b, int height, int width);

} // namespace dereflect::align
