#include "dereflect/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace dereflect::io {

namespace {

ImageTensor from_mat(const cv::Mat& src) {
    cv::Mat rgb;
    if (src.channels() == 1) {
        cv::cvtColor(src, rgb, cv::COLOR_GRAY2RGB);
    } else if (src.channels() == 4) {
        cv::cvtColor(src, rgb, cv::COLOR_BGRA2RGB);
    } else {
        cv::cvtColor(src, rgb, cv::COLOR_BGR2RGB);
    }
    double scale = 1.0;
    switch (rgb.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F:
    case CV_64F: scale = 1.0; break;
    default: throw ValidationError("unsupported image depth");
    }
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, scale);
    ImageTensor out(3, f.rows, f.cols);
    for (int y = 0; y < f.rows; ++y) {
        const auto* row = f.ptr<cv::Vec3f>(y);
        for (int x = 0; x < f.cols; ++x)
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = std::clamp(row[x][c], 0.0f, 1.0f);
    }
    return out;
}

cv::Mat to_mat(const ImageTensor& img) {
    cv::Mat f(img.height(), img.width(), CV_32FC3);
    for (int y = 0; y < img.height(); ++y) {
        auto* row = f.ptr<cv::Vec3f>(y);
        // BGR order for OpenCV
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) row[x][2 - c] = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
    }
    return f;
}

} // namespace

ImageTensor read_image(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw ValidationError("cannot decode image: " + path.string());
    return from_mat(m);
}

void write_png(const std::filesystem::path& path, const ImageTensor& img, BitDepth depth) {
    if (img.channels() != 3) throw DimensionError("write_png expects 3 channels");
    cv::Mat f = to_mat(img);
    cv::Mat q;
    if (depth == BitDepth::u16) {
        f.convertTo(q, CV_16UC3, 65535.0);
    } else {
        f.convertTo(q, CV_8UC3, 255.0);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), q)) throw std::runtime_error("cannot write " + path.string());
}

void write_mask_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, int height,
                    int width) {
    cv::Mat m(height, width, CV_8UC1);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) m.at<std::uint8_t>(y, x) = mask[std::size_t(y) * width + x] ? 255 : 0;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

ImageTensor fit_square(const ImageTensor& img, int side) {
    if (img.height() == side && img.width() == side) return img;
    cv::Mat f = to_mat(img);
    const int short_side = std::min(f.rows, f.cols);
    const cv::Rect roi((f.cols - short_side) / 2, (f.rows - short_side) / 2, short_side, short_side);
    cv::Mat resized;
    cv::resize(f(roi), resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
    cv::Mat bgr = resized;
    ImageTensor out(3, side, side);
    for (int y = 0; y < side; ++y) {
        const auto* row = bgr.ptr<cv::Vec3f>(y);
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = std::clamp(row[x][2 - c], 0.0f, 1.0f);
    }
    return out;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    static const std::set<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm", ".pgm"};
    if (!std::filesystem::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (exts.count(ext)) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace dereflect::io
