// Times the serial reference kernels against the OpenMP ones on network-sized
// convolutions and reports their agreement. `--quick` runs one small repetition
// and exits non-zero on disagreement, which is how ctest uses it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "dereflect/kernels.hpp"
#include "dereflect/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace dereflect;
namespace k = dereflect::kernels;

namespace {

double seconds(int reps, const std::function<void()>& fn) {
    fn(); // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

double max_abs(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
    return m;
}

} // namespace

int main(int argc, char** argv) {
    const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
    int max_threads = 1;
#ifdef _OPENMP
    max_threads = omp_get_max_threads();
#endif
    const std::vector<k::ConvGeometry> geoms = quick ? std::vector<k::ConvGeometry>{{16, 32, 32, 32, 3, 1}}
                                                     : std::vector<k::ConvGeometry>{{3, 32, 64, 64, 3, 1},
                                                                                    {32, 32, 64, 64, 3, 1},
                                                                                    {64, 64, 32, 32, 3, 1},
                                                                                    {64, 128, 32, 32, 3, 2},
                                                                                    {128, 128, 16, 16, 3, 1}};
    const int reps = quick ? 1 : 5;
    bool ok = true;
    std::printf("%-22s %8s %12s %12s %8s %10s\n", "geometry", "threads", "serial_ms", "omp_ms", "speedup", "max_diff");
    for (const auto& g : geoms) {
        Rng rng(7);
        std::uniform_real_distribution<float> u(-1, 1);
        auto vec = [&](std::size_t n) {
            std::vector<float> v(n);
            for (float& x : v) x = u(rng);
            return v;
        };
        const auto in = vec(g.in_size()), w = vec(g.weight_size()), b = vec(g.out_channels), go = vec(g.out_size());
        std::vector<float> out_r(g.out_size()), out_p(g.out_size()), gi_r(g.in_size()), gi_p(g.in_size());
        std::vector<float> gw_r(g.weight_size()), gw_p(g.weight_size()), gb_r(g.out_channels), gb_p(g.out_channels);

        const double t_ref = seconds(reps, [&] {
            k::reference::conv2d_forward<float>(g, in, w, b, out_r);
            k::reference::conv2d_backward_input<float>(g, go, w, gi_r);
            std::fill(gw_r.begin(), gw_r.end(), 0.0f);
            std::fill(gb_r.begin(), gb_r.end(), 0.0f);
            k::reference::conv2d_backward_params<float>(g, in, go, gw_r, gb_r);
        });
        for (int threads = 1; threads <= max_threads; threads *= 2) {
            k::set_num_threads(threads);
            const double t_par = seconds(reps, [&] {
                k::conv2d_forward<float>(g, in, w, b, out_p);
                k::conv2d_backward_input<float>(g, go, w, gi_p);
                std::fill(gw_p.begin(), gw_p.end(), 0.0f);
                std::fill(gb_p.begin(), gb_p.end(), 0.0f);
                k::conv2d_backward_params<float>(g, in, go, gw_p, gb_p);
            });
            const double diff = std::max({max_abs(out_r, out_p), max_abs(gi_r, gi_p), max_abs(gw_r, gw_p) / 64,
                                          max_abs(gb_r, gb_p) / 64});
            char name[64];
            std::snprintf(name, sizeof name, "%dx%d %dx%d s%d", g.in_channels, g.out_channels, g.in_height, g.in_width,
                          g.stride);
            std::printf("%-22s %8d %12.3f %12.3f %8.2f %10.2e\n", name, threads, 1e3 * t_ref, 1e3 * t_par,
                        t_ref / t_par, diff);
            if (!(diff <= 1e-3)) ok = false;
        }
    }
    k::set_num_threads(1);
    if (!ok) std::printf("serial and parallel kernels disagree\n");
    return ok ? 0 : 1;
}
