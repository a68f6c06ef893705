#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dereflect/tensor.hpp"

namespace dereflect::metrics {

// Serialised stand-in for the infinite PSNR of identical images.
inline constexpr double kPsnrCap = 100.0;

// 10*log10(1/MSE) over all pixels and channels; +inf when identical.
double psnr(const ImageTensor& pred, const ImageTensor& gt);

inline double capped(double psnr_db) { return psnr_db > kPsnrCap ? kPsnrCap : psnr_db; }

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

// Mean local SSIM of the luma channels (BT.601 weights) over all fully
// contained Gaussian windows; no padding.
double ssim(const ImageTensor& pred, const ImageTensor& gt, const SsimOptions& opt = {});

// SSIM together with d(SSIM)/d(pred) for every RGB value of pred.
double ssim_with_grad(const ImageTensor& pred, const ImageTensor& gt, Tensor& grad_pred, const SsimOptions& opt = {});

// Normalised 1-D Gaussian taps.
std::vector<double> gaussian_taps(int window, double sigma);

struct EvalRecord {
    std::string benchmark;
    std::string scene_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct EvalError {
    std::string scene_id;
    std::string message;
};

struct BenchmarkReport {
    std::string benchmark;
    std::vector<EvalRecord> records;
    std::vector<EvalError> errors;
    double mean_psnr = 0.0; // over capped per-image values
    double mean_ssim = 0.0;
};

// Pairs files by name across the two directories. Missing counterparts
// and unreadable or mismatched files become error entries; the rest are
// scored.
BenchmarkReport evaluate_benchmark(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                   const std::string& benchmark = "toy");

// Unweighted means over the records.
void aggregate(BenchmarkReport& report);

std::string to_jsonl(const BenchmarkReport& report);
std::string summary_table(const BenchmarkReport& report);

// Reference values from the published comparison table, kept as metadata
// for qualitative comparison only.
struct PublishedResult {
    const char* benchmark;
    double psnr_db;
    double ssim;
};
inline constexpr PublishedResult kPublishedNature{"Nature", 27.05, 0.846};

} // namespace dereflect::metrics
