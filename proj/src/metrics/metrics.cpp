#include "dereflect/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

#include "dereflect/image_io.hpp"

namespace dereflect::metrics {

double psnr(const ImageTensor& pred, const ImageTensor& gt) {
    require_same_shape(pred, gt, "psnr");
    if (pred.size() == 0) throw DimensionError("psnr of empty images");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = double(pred[i]) - double(gt[i]);
        acc += d * d;
    }
    const double mse = acc / double(pred.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

std::vector<double> gaussian_taps(int window, double sigma) {
    std::vector<double> taps(window);
    const double c = (window - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        taps[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += taps[i];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

namespace {

struct Plane {
    int h = 0, w = 0;
    std::vector<double> v;
    Plane() = default;
    Plane(int h_, int w_) : h(h_), w(w_), v(std::size_t(h_) * w_, 0.0) {}
    double& at(int y, int x) { return v[std::size_t(y) * w + x]; }
    double at(int y, int x) const { return v[std::size_t(y) * w + x]; }
};

Plane luma(const ImageTensor& img) {
    Plane p(img.height(), img.width());
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x)
            p.at(y, x) = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
    return p;
}

// Valid separable filtering: output is (h-k+1) x (w-k+1).
Plane filter_valid(const Plane& in, const std::vector<double>& taps) {
    const int k = int(taps.size());
    Plane tmp(in.h, in.w - k + 1);
    for (int y = 0; y < tmp.h; ++y)
        for (int x = 0; x < tmp.w; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += taps[i] * in.at(y, x + i);
            tmp.at(y, x) = s;
        }
    Plane out(in.h - k + 1, tmp.w);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += taps[i] * tmp.at(y + i, x);
            out.at(y, x) = s;
        }
    return out;
}

// Adjoint of filter_valid: scatters a (h-k+1) x (w-k+1) map back to h x w.
Plane filter_adjoint(const Plane& g, const std::vector<double>& taps, int h, int w) {
    const int k = int(taps.size());
    Plane tmp(h, g.w);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            for (int i = 0; i < k; ++i) tmp.at(y + i, x) += taps[i] * g.at(y, x);
    Plane out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < g.w; ++x)
            for (int i = 0; i < k; ++i) out.at(y, x + i) += taps[i] * tmp.at(y, x);
    return out;
}

Plane product(const Plane& a, const Plane& b) {
    Plane p(a.h, a.w);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
    return p;
}

double ssim_impl(const ImageTensor& pred, const ImageTensor& gt, const SsimOptions& opt, Tensor* grad) {
    require_same_shape(pred, gt, "ssim");
    if (pred.channels() != 3) throw DimensionError("ssim expects RGB images");
    if (pred.height() < opt.window || pred.width() < opt.window) {
        throw DimensionError("ssim: image smaller than the " + std::to_string(opt.window) + "px window");
    }
    const auto taps = gaussian_taps(opt.window, opt.sigma);
    const double c1 = (opt.k1) * (opt.k1);
    const double c2 = (opt.k2) * (opt.k2);

    const Plane x = luma(pred), y = luma(gt);
    const Plane mx = filter_valid(x, taps), my = filter_valid(y, taps);
    const Plane sxx = filter_valid(product(x, x), taps);
    const Plane syy = filter_valid(product(y, y), taps);
    const Plane sxy = filter_valid(product(x, y), taps);

    const std::size_t n = mx.v.size();
    Plane da(mx.h, mx.w), db(mx.h, mx.w), dc(mx.h, mx.w);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ux = mx.v[i], uy = my.v[i];
        const double vx = sxx.v[i] - ux * ux;
        const double vy = syy.v[i] - uy * uy;
        const double cxy = sxy.v[i] - ux * uy;
        const double n1 = 2.0 * ux * uy + c1, n2 = 2.0 * cxy + c2;
        const double d1 = ux * ux + uy * uy + c1, d2 = vx + vy + c2;
        const double s = (n1 * n2) / (d1 * d2);
        total += s;
        if (grad) {
            const double ds_dux = s * (2.0 * uy / n1 - 2.0 * ux / d1);
            const double ds_dvx = -s / d2;
            const double ds_dcxy = 2.0 * s / n2;
            // Chain through vx = E[x^2] - ux^2 and cxy = E[xy] - ux*uy.
            da.v[i] = (ds_dux - 2.0 * ux * ds_dvx - uy * ds_dcxy) / double(n);
            db.v[i] = ds_dvx / double(n);
            dc.v[i] = ds_dcxy / double(n);
        }
    }
    if (grad) {
        const Plane ga = filter_adjoint(da, taps, x.h, x.w);
        const Plane gb = filter_adjoint(db, taps, x.h, x.w);
        const Plane gc = filter_adjoint(dc, taps, x.h, x.w);
        *grad = Tensor(pred.shape());
        static constexpr double kLuma[3] = {0.299, 0.587, 0.114};
        for (int r = 0; r < x.h; ++r)
            for (int c = 0; c < x.w; ++c) {
                const double gl = ga.at(r, c) + 2.0 * x.at(r, c) * gb.at(r, c) + y.at(r, c) * gc.at(r, c);
                for (int ch = 0; ch < 3; ++ch) grad->at(ch, r, c) = float(kLuma[ch] * gl);
            }
    }
    return total / double(n);
}

} // namespace

double ssim(const ImageTensor& pred, const ImageTensor& gt, const SsimOptions& opt) {
    return ssim_impl(pred, gt, opt, nullptr);
}

double ssim_with_grad(const ImageTensor& pred, const ImageTensor& gt, Tensor& grad_pred, const SsimOptions& opt) {
    return ssim_impl(pred, gt, opt, &grad_pred);
}

void aggregate(BenchmarkReport& report) {
    double p = 0.0, s = 0.0;
    for (const auto& r : report.records) {
        p += capped(r.psnr_db);
        s += r.ssim;
    }
    const double n = double(report.records.size());
    report.mean_psnr = n > 0 ? p / n : 0.0;
    report.mean_ssim = n > 0 ? s / n : 0.0;
}

BenchmarkReport evaluate_benchmark(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                   const std::string& benchmark) {
    BenchmarkReport report;
    report.benchmark = benchmark;
    std::map<std::string, std::filesystem::path> preds, gts;
    for (const auto& p : io::list_images(pred_dir)) preds[p.stem().string()] = p;
    for (const auto& p : io::list_images(gt_dir)) gts[p.stem().string()] = p;

    for (const auto& [id, gt_path] : gts) {
        auto it = preds.find(id);
        if (it == preds.end()) {
            report.errors.push_back({id, "missing prediction"});
            continue;
        }
        try {
            const ImageTensor pred = io::read_image(it->second);
            const ImageTensor gt = io::read_image(gt_path);
            report.records.push_back({benchmark, id, psnr(pred, gt), ssim(pred, gt)});
        } catch (const std::exception& e) {
            report.errors.push_back({id, e.what()});
        }
    }
    for (const auto& [id, _] : preds) {
        if (!gts.count(id)) report.errors.push_back({id, "missing ground truth"});
    }
    aggregate(report);
    return report;
}

std::string to_jsonl(const BenchmarkReport& report) {
    std::ostringstream out;
    for (const auto& r : report.records) {
        nlohmann::json j;
        j["benchmark"] = r.benchmark;
        j["scene_id"] = r.scene_id;
        j["psnr_db"] = capped(r.psnr_db);
        j["ssim"] = r.ssim;
        out << j.dump() << '\n';
    }
    for (const auto& e : report.errors) {
        nlohmann::json j;
        j["benchmark"] = report.benchmark;
        j["scene_id"] = e.scene_id;
        j["error"] = e.message;
        out << j.dump() << '\n';
    }
    nlohmann::json s;
    s["benchmark"] = report.benchmark;
    s["summary"] = true;
    s["n_images"] = report.records.size();
    s["n_errors"] = report.errors.size();
    s["mean_psnr_db"] = report.mean_psnr;
    s["mean_ssim"] = report.mean_ssim;
    out << s.dump() << '\n';
    return out.str();
}

std::string summary_table(const BenchmarkReport& report) {
    std::ostringstream out;
    out << std::fixed;
    out << std::left << std::setw(24) << "scene" << std::right << std::setw(10) << "PSNR" << std::setw(10) << "SSIM"
        << '\n';
    for (const auto& r : report.records) {
        out << std::left << std::setw(24) << r.scene_id << std::right << std::setw(10) << std::setprecision(2)
            << capped(r.psnr_db) << std::setw(10) << std::setprecision(4) << r.ssim << '\n';
    }
    for (const auto& e : report.errors) out << std::left << std::setw(24) << e.scene_id << "  error: " << e.message << '\n';
    out << std::left << std::setw(24) << ("mean (" + report.benchmark + ")") << std::right << std::setw(10)
        << std::setprecision(2) << report.mean_psnr << std::setw(10) << std::setprecision(4) << report.mean_ssim
        << '\n';
    return out.str();
}

} // namespace dereflect::metrics
