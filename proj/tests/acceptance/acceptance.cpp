// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dereflect/align.hpp"
#include "dereflect/cli.hpp"
#include "dereflect/datagen.hpp"
#include "dereflect/diffusion.hpp"
#include "dereflect/kernels.hpp"
#include "dereflect/metrics.hpp"
#include "dereflect/network.hpp"
#include "dereflect/trainer.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace dereflect;
namespace fs = std::filesystem;
using net::Partition;
using train::Stage;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects failed sub-checks so the summary line names the first one.
struct Checker {
    int failed = 0;
    std::string first;
    void operator()(bool ok, const std::string& what) {
        if (ok) return;
        if (failed++ == 0) first = what;
    }
    Outcome done(const std::string& detail) const {
        if (failed == 0) return {true, detail};
        return {false, std::to_string(failed) + " failed, first: " + first + "; " + detail};
    }
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------- 1

Outcome mixing_formula() {
    Checker ck;
    Rng rng(101);
    double worst = 0.0;
    int cases = 0;
    auto compare = [&](const ImageTensor& t, const ImageTensor& r, const datagen::MixCoefficients& c) {
        const ImageTensor m = datagen::mix(t, r, c);
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double want = std::clamp(oracle::mix_scalar(t[i], r[i], c.gamma1, c.gamma2), 0.0, 1.0);
            worst = std::max(worst, std::abs(double(m[i]) - want));
        }
        ++cases;
    };
    for (int k = 0; k < 500; ++k) {
        const auto c = datagen::sample_coefficients(rng);
        compare(testutil::random_tensor({3, 1, 1}, rng), testutil::random_tensor({3, 1, 1}, rng), c);
    }
    for (int k = 0; k < 500; ++k) {
        const auto c = datagen::sample_coefficients(rng);
        const int h = 8 + int(rng() % 40), w = 8 + int(rng() % 40);
        compare(testutil::random_tensor({3, h, w}, rng), testutil::random_tensor({3, h, w}, rng), c);
    }
    ck(worst <= 1e-6, "max deviation " + fmt("%.3g", worst));
    return ck.done(fmt("%d cases, max |M - oracle| = %.3g (tol 1e-6)", cases, worst));
}

// ---------------------------------------------------------------- 2

Outcome filter_retention() {
    Checker ck;
    const std::size_t n = 69443;
    Rng rng(202);
    std::vector<datagen::ManifestRecord> stubs(n);
    std::set<double> distinct;
    for (std::size_t i = 0; i < n; ++i) {
        stubs[i].scene_id = fmt("scene%06zu", i / 3);
        stubs[i].name = fmt("scene%06zu_%zu", i / 3, i % 3);
        stubs[i].score = uniform(rng, -1.0, 1.0);
        distinct.insert(stubs[i].score);
    }
    ck(distinct.size() == n, "scores are not all distinct");
    const auto kept = datagen::filter_records(stubs, datagen::kReferenceKeepFraction);
    ck(kept.size() == 20833, "kept " + std::to_string(kept.size()));
    // the survivors are exactly the top scores
    std::vector<double> sorted;
    for (const auto& s : stubs) sorted.push_back(s.score);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double kept_min = 1e9;
    for (const auto& k : kept) kept_min = std::min(kept_min, k.score);
    ck(kept.size() == 20833 && kept_min == sorted[20832], "retained set is not the top-scored prefix");
    return ck.done(fmt("kept %zu of %zu (want 20833)", kept.size(), n));
}

// ---------------------------------------------------------------- 3

Outcome alignment() {
    Checker ck;
    const int size = 256, trials = 100;
    Rng rng(303);
    int good = 0;
    double worst = 0.0;
    align::AlignConfig cfg;
    cfg.inlier_tol = 2.0;
    for (int t = 0; t < trials; ++t) {
        const auto truth = synth::random_homography(rng, size);
        const auto matches = synth::matches_from(truth, rng, 200, size, 0.4, 0.25);
        Rng r = make_stream(303, "ransac", std::uint64_t(t));
        try {
            const auto fit = align::estimate_homography(matches, r, cfg);
            const double e = align::corner_error(fit.h, truth, size, size);
            worst = std::max(worst, e);
            if (e < 0.5) ++good;
        } catch (const std::exception&) {
        }
    }
    ck(good >= 95, fmt("%d of %d trials under 0.5 px", good, trials));
    return ck.done(fmt("%d/%d trials with corner error < 0.5 px (need 95); 40%% outliers, 0.25 px inlier noise, "
                       "worst %.3f px",
                       good, trials, worst));
}

// ---------------------------------------------------------------- 4

Outcome schedule_invariants() {
    Checker ck;
    for (int t_max : {16, 64, 1000}) {
        const diffusion::NoiseSchedule s(t_max);
        ck(s.alpha_bar(0) == 1.0, "alpha_bar(0) != 1");
        for (int t = 1; t <= t_max; ++t) ck(s.alpha_bar(t) < s.alpha_bar(t - 1), "not strictly decreasing");
    }
    const diffusion::NoiseSchedule s(64);
    Rng rng(404);
    const Tensor z = testutil::random_tensor({4, 8, 8}, rng, -1, 1);
    const Tensor e = gaussian_tensor(z.shape(), rng);
    ck(bitwise_equal(diffusion::add_noise(z, 0, e, s), z), "add_noise(z, 0) != z");
    const Tensor zero(z.shape());
    for (int t : {1, 32, 64}) {
        const Tensor o = diffusion::add_noise(zero, t, e, s);
        for (std::size_t i = 0; i < o.size(); ++i)
            ck(o[i] == float(std::sqrt(1 - s.alpha_bar(t)) * e[i]), "add_noise(0, t) != sqrt(1-ab) eps");
    }
    const Tensor terminal = diffusion::add_noise(z, 64, e, s);
    double signal = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = terminal[i] - std::sqrt(1 - s.alpha_bar(64)) * e[i];
        signal += d * d;
        noise += double(e[i]) * e[i];
    }
    ck(std::sqrt(signal / noise) < 0.1, "terminal step keeps too much signal");

    // E||z_t||^2 = ab ||z||^2 + (1 - ab) n
    const int t = 20, draws = 1000;
    const Tensor zs = testutil::random_tensor({4, 4, 4}, rng, -1, 1);
    const double ab = s.alpha_bar(t);
    double z2 = 0.0, var = 0.0;
    for (float v : zs.values()) {
        z2 += double(v) * v;
        var += 4 * ab * v * v * (1 - ab) + 2 * (1 - ab) * (1 - ab);
    }
    const double expected = ab * z2 + (1 - ab) * double(zs.size());
    double mean = 0.0;
    for (int k = 0; k < draws; ++k) {
        const Tensor x = diffusion::add_noise(zs, t, gaussian_tensor(zs.shape(), rng), s);
        double nrm = 0;
        for (float v : x.values()) nrm += double(v) * v;
        mean += nrm / draws;
    }
    const double sigma = std::sqrt(var / draws);
    ck(std::abs(mean - expected) <= 3 * sigma, "Monte Carlo norm outside 3 sigma");
    return ck.done(fmt("MC mean %.4f vs %.4f, |diff| = %.2f sigma", mean, expected, std::abs(mean - expected) / sigma));
}

// ---------------------------------------------------------------- 5

double fd(Tensor& x, std::size_t i, float h, const std::function<double()>& f) {
    const float saved = x[i];
    x[i] = saved + h;
    const float xp = x[i];
    const double up = f();
    x[i] = saved - h;
    const float xm = x[i];
    const double down = f();
    x[i] = saved;
    return (up - down) / (double(xp) - double(xm));
}

// Worst relative error over 64 coordinates, floored at 1e-4 of the largest
// gradient entry.
double grad_error(Tensor& x, const Tensor& grad, const std::function<double()>& f, Rng& rng, float h,
                  const std::function<bool(std::size_t)>& usable = {}) {
    double gmax = 0.0;
    for (float g : grad.values()) gmax = std::max(gmax, double(std::abs(g)));
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    double worst = 0.0;
    for (int checked = 0; checked < 64;) {
        const std::size_t i = pick(rng);
        if (usable && !usable(i)) continue;
        worst = std::max(worst, testutil::rel_err(grad[i], fd(x, i, h, f), 1e-4 * gmax));
        ++checked;
    }
    return worst;
}

Outcome loss_correctness() {
    using namespace diffusion;
    Checker ck;
    Rng rng(505);
    const Shape sh{4, 8, 8};
    Tensor a = testutil::random_tensor(sh, rng, -2, 2), b = testutil::random_tensor(sh, rng, -2, 2);
    Tensor c = testutil::random_tensor(sh, rng, -2, 2);
    const Tensor ta = testutil::random_tensor(sh, rng, -2, 2), tc = testutil::random_tensor(sh, rng, -2, 2);
    double oracle_err = 0.0, grad_err = 0.0;
    auto value = [&](double got, double want) { oracle_err = std::max(oracle_err, std::abs(got - want)); };

    value(loss_multistep_reference(a, b), oracle::mean_sq_diff(a, b));
    value(loss_one_step(a, b), oracle::mean_sq_diff(a, b));
    value(loss_consistency(a, c), oracle::mean_sq_diff(a, c));
    ck(loss_consistency(a, c) == loss_consistency(c, a), "consistency not symmetric");
    const Stage2Loss s2 = loss_stage2(a, ta, c, tc);
    value(s2.report.total, oracle::mean_sq_diff(a, ta) + oracle::mean_sq_diff(c, tc) + oracle::mean_sq_diff(a, c));

    const RandomPyramidDistance perc;
    std::vector<oracle::PyramidLevel> levels;
    for (const auto& l : perc.levels()) levels.push_back({l.in_ch, l.out_ch, l.stride, &l.weight, &l.bias});
    const ImageTensor gt = testutil::random_tensor({3, 24, 24}, rng, 0.1f, 0.8f);
    ImageTensor pred = testutil::random_tensor({3, 24, 24}, rng, 0.1f, 0.8f);
    const auto rec = loss_reconstruction(pred, gt, kDefaultLambdaRec, perc, true);
    value(rec.total, oracle::mean_abs_diff(pred, gt) +
                         kDefaultLambdaRec * (1.0 - oracle::ssim(pred, gt) + oracle::pyramid_distance(pred, gt, levels)));
    ck(oracle_err <= 1e-9, fmt("oracle deviation %.3g", oracle_err));

    auto g = [&](double e) { grad_err = std::max(grad_err, e); };
    g(grad_error(a, mse_grad(a, b), [&] { return loss_multistep_reference(a, b); }, rng, 1e-2f));
    g(grad_error(a, mse_grad(a, b), [&] { return loss_one_step(a, b); }, rng, 1e-2f));
    g(grad_error(a, mse_grad(a, c), [&] { return loss_consistency(a, c); }, rng, 1e-2f));
    g(grad_error(a, s2.grad_pred_1, [&] { return loss_stage2(a, ta, c, tc).report.total; }, rng, 1e-2f));
    g(grad_error(c, s2.grad_pred_2, [&] { return loss_stage2(a, ta, c, tc).report.total; }, rng, 1e-2f));
    const float h = 1e-3f;
    g(grad_error(pred, rec.grad, [&] { return loss_reconstruction(pred, gt, kDefaultLambdaRec, perc).total; }, rng, h,
                 [&](std::size_t i) { return std::abs(pred[i] - gt[i]) > 4 * h; }));
    ck(grad_err <= 1e-4, fmt("gradient rel error %.3g", grad_err));
    return ck.done(fmt("max oracle deviation %.2g (tol 1e-9), max gradient rel error %.2g (tol 1e-4)", oracle_err,
                       grad_err));
}

// ---------------------------------------------------------------- 6

Outcome zero_conv_identities() {
    Checker ck;
    for (std::uint64_t seed : {0ull, 7ull}) {
        net::ModelConfig cfg;
        cfg.init_seed = seed;
        const net::Model m(cfg);
        Rng rng(606 + seed);
        const auto e = m.encode(testutil::random_tensor({3, 64, 64}, rng));
        const Tensor z_T = gaussian_tensor(e.latent.shape(), rng);
        for (int t : {0, 17, cfg.t_max})
            ck(bitwise_equal(m.denoise_one_step(z_T, e.latent, t), m.denoise_unconditioned(z_T, t)),
               "conditioned != unconditioned");
        ck(bitwise_equal(m.decode_cross_latent(e.latent, e.skips), m.decode(e.latent)), "cross-latent != plain decode");
    }
    return ck.done("conditioned == unconditioned and cross-latent == plain decode, bitwise, 2 inits");
}

// ---------------------------------------------------------------- 7

net::ModelConfig small_config() {
    net::ModelConfig c;
    c.image_size = 32;
    c.codec.channels = {4, 8, 8};
    c.unet.widths = {8, 16, 32};
    c.unet.time_dim = 8;
    c.unet.cond_dim = 4;
    c.t_max = 16;
    c.init_seed = 3;
    return c;
}

train::StageConfig short_stage(Stage s, int steps) {
    auto c = train::StageConfig::defaults(s);
    c.steps = steps;
    c.codec_steps = steps;
    c.augment.crop = 32;
    c.seed = 5;
    return c;
}

std::set<Partition> changed(const net::Model& before, const net::Model& after) {
    std::set<Partition> out;
    for (Partition p : net::kAllPartitions)
        if (before.partition_hash(p) != after.partition_hash(p)) out.insert(p);
    return out;
}

Outcome freeze_contracts() {
    Checker ck;
    const auto data = datagen::procedural_corpus(6, 3, 32, 707);
    net::Model m(small_config());
    const std::set<Partition> want[] = {
        {Partition::codec, Partition::theta_down, Partition::theta_mid, Partition::theta_up, Partition::c,
         Partition::phi},
        {Partition::theta_up, Partition::phi},
        {Partition::theta_up, Partition::phi},
        {Partition::fusion},
    };
    int i = 0;
    net::Model after_foundation;
    for (Stage s : train::kAllStages) {
        const net::Model before = m;
        auto cfg = short_stage(s, 4);
        cfg.alternate_every = 2;
        train::run_stage(m, data, cfg);
        ck(changed(before, m) == want[i], std::string("stage ") + train::stage_name(s) + " changed the wrong set");
        if (s == Stage::foundation) after_foundation = m;
        ++i;
    }

    // steps == alternate_every: only phi moves
    {
        net::Model x = after_foundation;
        auto cfg = short_stage(Stage::invariant, 5);
        cfg.alternate_every = 5;
        const auto r = train::run_stage(x, data, cfg);
        ck(changed(after_foundation, x) == std::set<Partition>{Partition::phi}, "one window changed more than phi");
    }
    // one step past the boundary: theta_up moves too, on exactly that step
    {
        net::Model x = after_foundation;
        auto cfg = short_stage(Stage::invariant, 4);
        cfg.alternate_every = 3;
        const auto r = train::run_stage(x, data, cfg);
        const std::vector<Partition> seq{Partition::phi, Partition::phi, Partition::phi, Partition::theta_up};
        ck(r.active == seq, "alternation sequence");
        ck(changed(after_foundation, x) == std::set<Partition>{Partition::phi, Partition::theta_up},
           "boundary step did not update theta_up");
    }
    // a frozen partition modified mid-stage is reported
    {
        net::Model x = after_foundation;
        const train::LogSink tamper = [&](const train::LogRecord&) {
            x.partition(Partition::codec).front()->value[0] += 1.0f;
        };
        bool caught = false;
        try {
            train::run_stage(x, data, short_stage(Stage::invariant, 2), tamper);
        } catch (const InvariantViolation&) {
            caught = true;
        }
        ck(caught, "tampering not detected");
    }
    return ck.done("per-stage changed partitions exact; alternation boundary at alternate_every verified");
}

// ---------------------------------------------------------------- 8, 9

struct ToyRun {
    train::ToyEvaluation stage2, final;
    double consistency_1 = 0.0, consistency_2 = 0.0;
    double identity_psnr = 0.0;
    double seconds = 0.0;
};

const ToyRun& toy_run() {
    static std::optional<ToyRun> cache;
    if (cache) return *cache;
    const auto t0 = std::chrono::steady_clock::now();
    const auto train_set = datagen::procedural_corpus(200, 3, 64, 1);
    const auto test_set = datagen::procedural_corpus(20, 3, 64, 1, 100000);
    net::Model m;
    auto run = [&](Stage s, int steps, int codec_steps) {
        auto cfg = train::StageConfig::defaults(s);
        cfg.steps = steps;
        cfg.codec_steps = codec_steps;
        train::run_stage(m, train_set, cfg);
    };
    ToyRun r;
    run(Stage::prior, 2000, 4000);
    run(Stage::foundation, 3000, 0);
    r.consistency_1 = train::probe_consistency(m, test_set);
    run(Stage::invariant, 1000, 0);
    r.consistency_2 = train::probe_consistency(m, test_set);
    r.stage2 = train::evaluate_toy(m, test_set);
    run(Stage::decoder, 6000, 0);
    r.final = train::evaluate_toy(m, test_set);
    for (const auto& g : test_set)
        r.identity_psnr += metrics::capped(metrics::psnr(m.infer(g.transmission()).image, g.transmission()));
    r.identity_psnr /= double(test_set.size());
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    cache = r;
    return *cache;
}

Outcome toy_gain() {
    Checker ck;
    const ToyRun& r = toy_run();
    const double gain = r.final.psnr_output - r.final.psnr_mixed;
    ck(gain >= 2.0, fmt("gain %.2f dB", gain));
    ck(r.final.ssim_output > r.final.ssim_mixed, "SSIM did not improve");
    return ck.done(fmt("PSNR %.2f vs mixed %.2f (gain %+.2f dB, need +2), SSIM %.4f vs %.4f; %zu test images, %.0f s. "
                       "info: without fusion training %.2f dB / %.4f; clean-input PSNR %.2f dB",
                       r.final.psnr_output, r.final.psnr_mixed, gain, r.final.ssim_output, r.final.ssim_mixed,
                       r.final.count, r.seconds, r.stage2.psnr_output, r.stage2.ssim_output, r.identity_psnr));
}

Outcome invariance_effect() {
    Checker ck;
    const ToyRun& r = toy_run();
    ck(r.consistency_2 < r.consistency_1, "consistency did not drop");
    return ck.done(fmt("probe consistency %.5f after stage 1 -> %.5f after stage 2", r.consistency_1,
                       r.consistency_2));
}

// ---------------------------------------------------------------- 10

Outcome metric_references() {
    Checker ck;
    // 64 of 100 pixels off by 0.125 in every channel: MSE is exactly 0.01
    ImageTensor gt(3, 10, 10, 0.5f), pred = gt;
    for (int i = 0; i < 64; ++i)
        for (int c = 0; c < 3; ++c) pred.at(c, i / 10, i % 10) = 0.375f;
    const double p = metrics::psnr(pred, gt);
    ck(p == 20.0, fmt("PSNR %.17g", p));
    // every pixel off by 0.1 (float-rounded)
    ImageTensor u(3, 8, 8);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = i % 2 ? 0.6f : 0.4f;
    const double pu = metrics::psnr(u, ImageTensor(3, 8, 8, 0.5f));
    ck(std::abs(pu - 20.0) <= 1e-5, fmt("uniform PSNR %.10g", pu));

    Rng rng(1010);
    const ImageTensor img = testutil::random_tensor({3, 48, 48}, rng);
    ck(metrics::ssim(img, img) == 1.0, "SSIM(img, img) != 1");

    ImageTensor smooth(3, 48, 48);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) smooth.at(c, y, x) = float(0.5 + 0.3 * std::sin(0.3 * x + c) * std::cos(0.2 * y));
    const Tensor noise = gaussian_tensor(smooth.shape(), rng);
    double prev_s = 1.0, prev_p = 1e9;
    for (double sigma : {0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4}) {
        ImageTensor noisy = smooth;
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += float(sigma * noise[i]);
        const double s = metrics::ssim(noisy, smooth), q = metrics::psnr(noisy, smooth);
        ck(s < prev_s && q < prev_p, fmt("not monotone at sigma %.3f", sigma));
        prev_s = s;
        prev_p = q;
    }
    return ck.done(fmt("PSNR %.17g (exact 20), uniform case %.8f, SSIM(x,x) = 1, 7-level noise sweep monotone", p, pu));
}

// ---------------------------------------------------------------- 11

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
        out[fs::relative(e.path(), root).generic_string()] = file_bytes(e.path());
    }
    return out;
}

Outcome cli_determinism() {
    Checker ck;
    const fs::path root = fs::temp_directory_path() / "dereflect_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream cfg(root / "cfg.json");
        cfg << R"({"model": {"image_size": 32, "codec_channels": [4, 8, 8], "unet_widths": [8, 16, 32],
                   "time_dim": 8, "cond_dim": 4, "t_max": 16},
                   "stages": {"prior": {"steps": 20, "codec_steps": 20, "augment": {"crop": 32}},
                              "foundation": {"steps": 20, "augment": {"crop": 32}},
                              "invariant": {"steps": 20, "alternate_every": 5, "augment": {"crop": 32}},
                              "decoder": {"steps": 20, "augment": {"crop": 32}}}})";
    }
    std::ostringstream sink;
    auto call = [&](std::vector<std::string> args) {
        args.insert(args.end(), {"--jobs", "1"});
        const int code = cli::run(args, sink, sink);
        ck(code == 0, args.front() + " exited " + std::to_string(code));
    };
    for (const char* run : {"a", "b"}) {
        const fs::path d = root / run;
        call({"synth", "--n", "6", "--size", "32", "--seed", "11", "--out", (d / "data").string()});
        call({"train", "--stage", "all", "--data", (d / "data" / "manifest.jsonl").string(), "--config",
              (root / "cfg.json").string(), "--seed", "12", "--out", (d / "model").string()});
        call({"infer", "--ckpt", (d / "model" / "checkpoint.bin").string(), "--in", (d / "data" / "M").string(),
              "--out", (d / "pred").string()});
        call({"eval", "--pred", (d / "pred").string(), "--gt", (d / "data" / "GT").string(), "--out",
              (d / "eval").string()});
    }
    const auto a = snapshot(root / "a"), b = snapshot(root / "b");
    ck(!a.empty() && a == b, "pipeline outputs differ");
    std::size_t differing = 0;
    for (const auto& [k, v] : a)
        if (!b.count(k) || b.at(k) != v) ++differing;
    const bool has_ckpt = a.count("model/checkpoint.bin") > 0, has_report = a.count("eval/report.jsonl") > 0;
    ck(has_ckpt && has_report, "checkpoint or report missing");
    fs::remove_all(root);
    return ck.done(fmt("%zu files compared (checkpoints, predictions, logs, reports), %zu differ", a.size(),
                       differing));
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"mixing formula oracle", mixing_formula},
        {"filter retention", filter_retention},
        {"homography under outliers", alignment},
        {"schedule and noising invariants", schedule_invariants},
        {"loss oracles and gradients", loss_correctness},
        {"zero-conv identities", zero_conv_identities},
        {"freeze contracts", freeze_contracts},
        {"toy dereflection gain", toy_gain},
        {"reflection-invariance effect", invariance_effect},
        {"metric references", metric_references},
        {"end-to-end determinism", cli_determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
#ifdef _OPENMP
    kernels::set_num_threads(omp_get_max_threads());
#endif
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = int(i) + 1;
        if (!only.empty() && !only.count(n)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str(), s);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
