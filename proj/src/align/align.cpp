#include "dereflect/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <opencv2/features2d.hpp>

namespace dereflect::align {

Homography::Homography(const Eigen::Matrix3d& m) {
    if (std::abs(m(2, 2)) < 1e-15) throw ValidationError("homography with zero h33 cannot be normalised");
    m_ = m / m(2, 2);
    if (std::abs(m_.determinant()) <= 1e-10) throw ValidationError("singular homography");
}

Homography Homography::translation(double tx, double ty) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return Homography(m);
}

Point2 Homography::apply(Point2 p) const {
    const double w = m_(2, 0) * p.x + m_(2, 1) * p.y + m_(2, 2);
    return {(m_(0, 0) * p.x + m_(0, 1) * p.y + m_(0, 2)) / w, (m_(1, 0) * p.x + m_(1, 1) * p.y + m_(1, 2)) / w};
}

Homography Homography::inverse() const { return Homography(m_.inverse()); }

namespace {

cv::Mat to_gray8(const ImageTensor& img) {
    cv::Mat g(img.height(), img.width(), CV_8UC1);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const double l = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
            g.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::lround(l * 255.0));
        }
    }
    return g;
}

// Similarity transform moving the centroid to the origin with mean
// distance sqrt(2).
Eigen::Matrix3d normaliser(const std::vector<Point2>& pts) {
    double cx = 0, cy = 0;
    for (const auto& p : pts) {
        cx += p.x;
        cy += p.y;
    }
    cx /= pts.size();
    cy /= pts.size();
    double d = 0;
    for (const auto& p : pts) d += std::hypot(p.x - cx, p.y - cy);
    d /= pts.size();
    const double s = d > 0 ? std::sqrt(2.0) / d : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
    return t;
}

// Returns false for degenerate configurations.
bool dlt(const std::vector<KeypointMatch>& m, const std::vector<std::size_t>& idx, Eigen::Matrix3d& out) {
    std::vector<Point2> src, dst;
    for (std::size_t i : idx) {
        src.push_back(m[i].src);
        dst.push_back(m[i].dst);
    }
    const Eigen::Matrix3d ts = normaliser(src);
    const Eigen::Matrix3d td = normaliser(dst);
    Eigen::MatrixXd a(2 * idx.size(), 9);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Eigen::Vector3d s = ts * Eigen::Vector3d(src[k].x, src[k].y, 1.0);
        const Eigen::Vector3d d = td * Eigen::Vector3d(dst[k].x, dst[k].y, 1.0);
        const double x = s(0) / s(2), y = s(1) / s(2), u = d(0) / d(2), v = d(1) / d(2);
        a.row(2 * k) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
        a.row(2 * k + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    // A minimal sample whose second-smallest singular value vanishes has a
    // non-unique solution (collinear points).
    if (idx.size() == 4 && sv(sv.size() - 1) < 1e-8 * sv(0)) return false;
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    const Eigen::Matrix3d full = td.inverse() * hn * ts;
    if (std::abs(full(2, 2)) < 1e-15 || !full.allFinite()) return false;
    out = full / full(2, 2);
    return std::abs(out.determinant()) > 1e-10;
}

bool collinear(const Point2& a, const Point2& b, const Point2& c) {
    const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    const double scale = std::max({std::hypot(b.x - a.x, b.y - a.y), std::hypot(c.x - a.x, c.y - a.y), 1.0});
    return std::abs(cross) < 1e-6 * scale * scale;
}

bool degenerate_sample(const std::vector<KeypointMatch>& m, const std::vector<std::size_t>& s) {
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            for (int k = j + 1; k < 4; ++k) {
                if (collinear(m[s[i]].src, m[s[j]].src, m[s[k]].src)) return true;
                if (collinear(m[s[i]].dst, m[s[j]].dst, m[s[k]].dst)) return true;
            }
    return false;
}

double reprojection_error(const Eigen::Matrix3d& h, const KeypointMatch& m) {
    const double w = h(2, 0) * m.src.x + h(2, 1) * m.src.y + h(2, 2);
    if (std::abs(w) < 1e-12) return std::numeric_limits<double>::infinity();
    const double u = (h(0, 0) * m.src.x + h(0, 1) * m.src.y + h(0, 2)) / w;
    const double v = (h(1, 0) * m.src.x + h(1, 1) * m.src.y + h(1, 2)) / w;
    return std::hypot(u - m.dst.x, v - m.dst.y);
}

int score_model(const Eigen::Matrix3d& h, const std::vector<KeypointMatch>& m, double tol,
                std::vector<std::uint8_t>& mask, double& err_sum) {
    mask.assign(m.size(), 0);
    err_sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double e = reprojection_error(h, m[i]);
        if (e < tol) {
            mask[i] = 1;
            ++count;
            err_sum += e;
        }
    }
    return count;
}

} // namespace

std::vector<KeypointMatch> detect_and_match(const ImageTensor& mixed, const ImageTensor& transmission,
                                            const AlignConfig& cfg) {
    if (mixed.channels() != 3 || transmission.channels() != 3) {
        throw DimensionError("detect_and_match expects RGB images");
    }
    if (mixed.height() < 64 || mixed.width() < 64 || transmission.height() < 64 || transmission.width() < 64) {
        throw ValidationError("detect_and_match requires images of at least 64x64");
    }
    auto sift = cv::SIFT::create();
    std::vector<cv::KeyPoint> kp_m, kp_t;
    cv::Mat desc_m, desc_t;
    sift->detectAndCompute(to_gray8(mixed), cv::noArray(), kp_m, desc_m);
    sift->detectAndCompute(to_gray8(transmission), cv::noArray(), kp_t, desc_t);
    if (kp_m.size() < 4 || kp_t.size() < 2) {
        throw InsufficientFeaturesError("too few keypoints (" + std::to_string(kp_m.size()) + ", " +
                                        std::to_string(kp_t.size()) + ")");
    }
    cv::BFMatcher matcher(cv::NORM_L2);
    std::vector<std::vector<cv::DMatch>> knn;
    matcher.knnMatch(desc_m, desc_t, knn, 2);
    std::vector<KeypointMatch> out;
    for (const auto& pair : knn) {
        if (pair.size() < 2) continue;
        if (!(pair[0].distance < cfg.ratio_threshold * pair[1].distance)) continue;
        const auto& a = kp_m[pair[0].queryIdx].pt;
        const auto& b = kp_t[pair[0].trainIdx].pt;
        out.push_back({{a.x, a.y}, {b.x, b.y}, pair[0].distance});
    }
    std::stable_sort(out.begin(), out.end(), [](const KeypointMatch& l, const KeypointMatch& r) {
        return l.descriptor_distance < r.descriptor_distance;
    });
    if (out.size() < 4) {
        throw InsufficientFeaturesError(std::to_string(out.size()) + " matches survived the ratio test");
    }
    return out;
}

Homography fit_homography_dlt(const std::vector<KeypointMatch>& matches) {
    if (matches.size() < 4) throw ValidationError("DLT needs at least 4 correspondences");
    std::vector<std::size_t> idx(matches.size());
    std::iota(idx.begin(), idx.end(), 0);
    Eigen::Matrix3d h;
    if (!dlt(matches, idx, h)) throw AlignmentFailure("degenerate correspondence set");
    return Homography(h);
}

HomographyFit estimate_homography(const std::vector<KeypointMatch>& matches, Rng& rng, const AlignConfig& cfg) {
    const std::size_t n = matches.size();
    if (n < 4) throw ValidationError("estimate_homography needs at least 4 matches, got " + std::to_string(n));
    if (cfg.inlier_tol <= 0 || cfg.max_iters <= 0) throw ValidationError("bad RANSAC configuration");

    Eigen::Matrix3d best;
    int best_count = -1;
    double best_err = std::numeric_limits<double>::infinity();
    std::vector<std::uint8_t> mask;
    std::vector<std::size_t> sample(4);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    int needed = cfg.max_iters;

    for (int it = 0; it < needed; ++it) {
        for (int k = 0; k < 4; ++k) {
            std::size_t c;
            do {
                c = pick(rng);
            } while (std::find(sample.begin(), sample.begin() + k, c) != sample.begin() + k);
            sample[k] = c;
        }
        if (degenerate_sample(matches, sample)) continue;
        Eigen::Matrix3d h;
        if (!dlt(matches, sample, h)) continue;
        double err;
        const int count = score_model(h, matches, cfg.inlier_tol, mask, err);
        if (count > best_count || (count == best_count && err < best_err)) {
            best = h;
            best_count = count;
            best_err = err;
            const double ratio = double(count) / double(n);
            const double p_fail = 1.0 - std::pow(ratio, 4);
            if (p_fail <= 1e-12) {
                needed = std::min(needed, it + 1);
            } else {
                const double k = std::log(1.0 - cfg.confidence) / std::log(p_fail);
                needed = std::min(cfg.max_iters, std::max(it + 1, int(std::ceil(k))));
            }
        }
    }
    if (best_count < cfg.min_inliers) {
        throw AlignmentFailure("no model reached " + std::to_string(cfg.min_inliers) + " inliers");
    }

    // Refit on the consensus set until it stops growing.
    HomographyFit fit;
    double err;
    score_model(best, matches, cfg.inlier_tol, fit.inliers, err);
    Eigen::Matrix3d current = best;
    for (int round = 0; round < 5; ++round) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i)
            if (fit.inliers[i]) idx.push_back(i);
        Eigen::Matrix3d refit;
        if (idx.size() < 4 || !dlt(matches, idx, refit)) break;
        std::vector<std::uint8_t> next;
        const int count = score_model(refit, matches, cfg.inlier_tol, next, err);
        if (count < int(idx.size())) break;
        current = refit;
        const bool same = next == fit.inliers;
        fit.inliers = std::move(next);
        if (same) break;
    }
    fit.h = Homography(current);
    fit.n_inliers = int(std::count(fit.inliers.begin(), fit.inliers.end(), std::uint8_t{1}));
    if (fit.n_inliers < cfg.min_inliers) throw AlignmentFailure("refit lost the consensus set");
    return fit;
}

WarpResult warp_to_reference(const ImageTensor& mixed, const Homography& h, int out_height, int out_width) {
    if (std::abs(h.determinant()) <= 1e-10) throw ValidationError("singular homography");
    if (out_height <= 0 || out_width <= 0) throw DimensionError("empty output shape");
    const Homography inv = h.inverse();
    const int c_count = mixed.channels();
    const int ih = mixed.height(), iw = mixed.width();
    WarpResult r{ImageTensor(c_count, out_height, out_width), std::vector<std::uint8_t>(std::size_t(out_height) * out_width)};

#pragma omp parallel for schedule(static)
    for (int y = 0; y < out_height; ++y) {
        for (int x = 0; x < out_width; ++x) {
            const Point2 s = inv.apply({double(x), double(y)});
            const bool inside = s.x >= 0.0 && s.y >= 0.0 && s.x <= iw - 1 && s.y <= ih - 1;
            r.valid[std::size_t(y) * out_width + x] = inside ? 1 : 0;
            if (!inside) continue;
            const int x0 = std::min(int(std::floor(s.x)), iw - 1);
            const int y0 = std::min(int(std::floor(s.y)), ih - 1);
            const int x1 = std::min(x0 + 1, iw - 1);
            const int y1 = std::min(y0 + 1, ih - 1);
            const double fx = s.x - x0, fy = s.y - y0;
            for (int c = 0; c < c_count; ++c) {
                const double top = (1.0 - fx) * mixed.at(c, y0, x0) + fx * mixed.at(c, y0, x1);
                const double bot = (1.0 - fx) * mixed.at(c, y1, x0) + fx * mixed.at(c, y1, x1);
                r.image.at(c, y, x) = float((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return r;
}

namespace {
std::array<Point2, 4> corners(int height, int width) {
    return {Point2{0, 0}, Point2{double(width - 1), 0}, Point2{0, double(height - 1)},
            Point2{double(width - 1), double(height - 1)}};
}
} // namespace

double corner_shift(const Homography& h, int height, int width) {
    double worst = 0.0;
    for (const Point2& c : corners(height, width)) {
        const Point2 m = h.apply(c);
        worst = std::max(worst, std::hypot(m.x - c.x, m.y - c.y));
    }
    return worst;
}

double corner_error(const Homography& a, const Homography& b, int height, int width) {
    double worst = 0.0;
    for (const Point2& c : corners(height, width)) {
        const Point2 p = a.apply(c), q = b.apply(c);
        worst = std::max(worst, std::hypot(p.x - q.x, p.y - q.y));
    }
    return worst;
}

} // namespace dereflect::align
