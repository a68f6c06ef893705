#include "doctest.h"

#include <fstream>
#include <set>

#include "dereflect/checkpoint.hpp"
#include "dereflect/network.hpp"
#include "test_util.hpp"

using namespace dereflect;
using namespace dereflect::net;
using testutil::random_tensor;
using testutil::rel_err;
using testutil::weighted_sum;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.image_size = 32;
    c.codec.channels = {4, 8, 8};
    c.unet.widths = {8, 16, 32};
    c.unet.time_dim = 8;
    c.unet.cond_dim = 4;
    c.t_max = 16;
    c.init_seed = 3;
    return c;
}

// Gives every parameter of a partition non-trivial values so gradients
// through zero-initialised layers are exercised.
void perturb(Model& m, Partition p, Rng& rng, float scale = 0.1f) {
    std::normal_distribution<float> d(0.0f, scale);
    for (Param* q : m.partition(p))
        for (float& v : q->value) v += d(rng);
}

// Directional-derivative check: analytic g.d against a central difference
// of the loss along random directions d over all of `params`.
void check_params(const std::vector<Param*>& params, const std::function<double()>& loss, Rng& rng,
                  int directions = 2, double tol = 2e-2) {
    std::normal_distribution<float> nd(0.0f, 1.0f);
    for (int k = 0; k < directions; ++k) {
        std::vector<std::vector<float>> dir, saved;
        double analytic = 0.0, norm2 = 0.0;
        for (Param* q : params) {
            dir.emplace_back(q->size());
            saved.push_back(q->value);
            for (std::size_t i = 0; i < q->size(); ++i) {
                dir.back()[i] = nd(rng);
                analytic += double(q->grad[i]) * dir.back()[i];
                norm2 += double(q->grad[i]) * q->grad[i];
            }
        }
        const float h = 2e-3f;
        auto shifted = [&](float s) {
            for (std::size_t j = 0; j < params.size(); ++j)
                for (std::size_t i = 0; i < params[j]->size(); ++i) params[j]->value[i] = saved[j][i] + s * dir[j][i];
            return loss();
        };
        // Richardson-extrapolated central difference
        const double d1 = (shifted(h) - shifted(-h)) / (2.0 * h);
        const double d2 = (shifted(h / 2) - shifted(-h / 2)) / double(h);
        const double numeric = (4.0 * d2 - d1) / 3.0;
        for (std::size_t j = 0; j < params.size(); ++j) params[j]->value = saved[j];
        INFO(params.front()->name << " analytic " << analytic << " numeric " << numeric);
        // |g.d| is typically |g|; tiny projections are judged against that scale
        CHECK(rel_err(analytic, numeric, std::max(1e-3, 0.05 * std::sqrt(norm2))) < tol);
    }
}

} // namespace

TEST_CASE("encode shapes and latent grid") {
    Model m;
    Rng rng(1);
    const Encoding e = m.encode(random_tensor({3, 64, 64}, rng));
    CHECK(e.latent.shape() == Shape{4, 16, 16});
    REQUIRE(e.skips.features.size() == 3);
    CHECK(e.skips.features[0].shape() == Shape{16, 64, 64});
    CHECK(e.skips.features[2].shape() == Shape{32, 16, 16});
    CHECK_THROWS_AS(m.encode(random_tensor({3, 62, 64}, rng)), ValidationError);
}

TEST_CASE("encode is deterministic and finite on a zero image") {
    Model m;
    const Tensor zero(3, 64, 64);
    const Encoding a = m.encode(zero), b = m.encode(zero);
    CHECK(bitwise_equal(a.latent, b.latent));
    CHECK(a.latent.all_finite());
}

TEST_CASE("zero-convolution identities hold at initialisation") {
    Model m;
    Rng rng(2);
    const Encoding e = m.encode(random_tensor({3, 64, 64}, rng));
    const Tensor z_T = gaussian_tensor(e.latent.shape(), rng);
    CHECK(bitwise_equal(m.denoise_one_step(z_T, e.latent, 5), m.denoise_unconditioned(z_T, 5)));
    CHECK(bitwise_equal(m.decode_cross_latent(e.latent, e.skips), m.decode(e.latent)));
}

TEST_CASE("decoder output stays in the unit range for random latents") {
    Model m;
    Rng rng(4);
    Tensor z = gaussian_tensor(m.latent_shape(), rng);
    for (float& v : z.values()) v *= 10.0f;
    const Tensor img = m.decode(z);
    for (float v : img.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("cross-latent decode rejects a wrong scale count") {
    Model m;
    Rng rng(5);
    Encoding e = m.encode(random_tensor({3, 64, 64}, rng));
    e.skips.features.pop_back();
    CHECK_THROWS_AS(m.decode_cross_latent(e.latent, e.skips), DimensionError);
}

TEST_CASE("denoiser rejects mismatched conditioning grid") {
    Model m;
    Rng rng(6);
    const Tensor z = gaussian_tensor(m.latent_shape(), rng);
    const Tensor cond = gaussian_tensor({4, 8, 8}, rng);
    CHECK_THROWS_AS(m.denoise_one_step(z, cond, 0), DimensionError);
}

TEST_CASE("partitions are disjoint and exhaustive") {
    Model m;
    std::set<const Param*> seen;
    std::size_t total = 0;
    for (Partition p : kAllPartitions) {
        for (const Param* q : std::as_const(m).partition(p)) {
            CHECK(seen.insert(q).second);
            ++total;
        }
    }
    // every parameter of every module is reachable through some partition
    std::vector<Param*> all = m.codec.trunk_params();
    for (Param* q : m.codec.fusion_params()) all.push_back(q);
    for (Param* q : m.unet.down_params()) all.push_back(q);
    for (Param* q : m.unet.mid_params()) all.push_back(q);
    for (Param* q : m.unet.up_params()) all.push_back(q);
    for (Param* q : m.control.params()) all.push_back(q);
    all.push_back(&m.cond);
    CHECK(all.size() == total);
}

TEST_CASE("conditioning branch starts from the U-Net encoder half") {
    Model m;
    CHECK(m.control.in_conv.weight.value == m.unet.in_conv.weight.value);
    CHECK(m.control.mid2.conv.weight.value == m.unet.mid2.conv.weight.value);
    for (const auto& z : m.control.zero_conv)
        for (float v : z.weight.value) CHECK(v == 0.0f);
}

TEST_CASE("codec gradients match finite differences") {
    Model m(small_config());
    Rng rng(7);
    perturb(m, Partition::fusion, rng);
    const Tensor img = random_tensor({3, 32, 32}, rng);
    const Tensor w = random_tensor({3, 32, 32}, rng, -1.0f, 1.0f);

    SUBCASE("plain round trip, trunk parameters") {
        auto loss = [&] { return weighted_sum(m.codec.decode(m.codec.encode(img).latent, nullptr), w); };
        m.zero_grad();
        EncoderTrace et;
        DecoderTrace dt;
        const Encoding e = m.codec.encode(img, &et);
        m.codec.decode(e.latent, nullptr, &dt);
        const Tensor gz = m.codec.decode_backward(w, dt, nullptr, true, false, true);
        m.codec.encode_backward(gz, et, true);
        check_params(m.codec.trunk_params(), loss, rng);
    }
    SUBCASE("fusion parameters with frozen trunk") {
        const Encoding e = m.codec.encode(img);
        auto loss = [&] { return weighted_sum(m.codec.decode(e.latent, &e.skips), w); };
        m.zero_grad();
        DecoderTrace dt;
        m.codec.decode(e.latent, &e.skips, &dt);
        m.codec.decode_backward(w, dt, &e.skips, false, true, false);
        check_params(m.codec.fusion_params(), loss, rng);
        for (const Param* q : m.codec.trunk_params())
            for (float g : q->grad) REQUIRE(g == 0.0f);
    }
}

TEST_CASE("denoiser and conditioning gradients match finite differences") {
    Model m(small_config());
    Rng rng(8);
    perturb(m, Partition::phi, rng);
    const Tensor z = gaussian_tensor({4, 8, 8}, rng);
    const Tensor cond = gaussian_tensor({4, 8, 8}, rng);
    const Tensor w = random_tensor({4, 8, 8}, rng, -1.0f, 1.0f);
    const int t = 3;
    auto loss = [&] {
        const auto emb = m.embedding(t);
        const ControlResiduals r = m.control.forward(z, cond, emb);
        return weighted_sum(m.unet.forward(z, emb, &r), w);
    };
    m.zero_grad();
    const auto emb = m.embedding(t);
    ControlTrace ct;
    UNetTrace ut;
    const ControlResiduals r = m.control.forward(z, cond, emb, &ct);
    m.unet.forward(z, emb, &r, &ut);
    const UNetGrads g = m.unet.backward(w, ut, true, true, true);
    m.control.backward(g.residuals, ct, true);

    check_params(m.partition(Partition::theta_up), loss, rng);
    check_params(m.partition(Partition::theta_mid), loss, rng);
    check_params(m.partition(Partition::theta_down), loss, rng);
    check_params(m.partition(Partition::phi), loss, rng);
}

TEST_CASE("condition vector gradient through the unconditioned denoiser") {
    Model m(small_config());
    Rng rng(11);
    const Tensor z = gaussian_tensor({4, 8, 8}, rng);
    const Tensor w = random_tensor({4, 8, 8}, rng, -1.0f, 1.0f);
    const int t = 7;
    auto loss = [&] { return weighted_sum(m.unet.forward(z, m.embedding(t), nullptr), w); };
    m.zero_grad();
    UNetTrace ut;
    m.unet.forward(z, m.embedding(t), nullptr, &ut);
    const UNetGrads g = m.unet.backward(w, ut, true, true, true);
    for (std::size_t i = 0; i < m.cond.size(); ++i) m.cond.grad[i] = g.emb[m.config().unet.time_dim + i];
    check_params(m.partition(Partition::c), loss, rng, 4);
}

TEST_CASE("inference is deterministic and flags untrained conditioning") {
    Model m;
    Rng rng(9);
    const Tensor img = random_tensor({3, 64, 64}, rng);
    const InferResult a = m.infer(img), b = m.infer(img);
    CHECK(bitwise_equal(a.image, b.image));
    CHECK(a.untrained_warning);
    m.stages_completed = {"prior", "foundation"};
    CHECK_FALSE(m.infer(img).untrained_warning);
}

TEST_CASE("checkpoint round trip is exact") {
    Model m(small_config());
    Rng rng(10);
    for (Partition p : kAllPartitions) perturb(m, p, rng);
    m.latent_scale = 0.731f;
    m.stages_completed = {"prior"};
    const auto path = std::filesystem::temp_directory_path() / "dereflect_ckpt_test.bin";
    save_checkpoint(m, path);
    const Model back = load_checkpoint(path);
    for (Partition p : kAllPartitions) CHECK(back.partition_hash(p) == m.partition_hash(p));
    CHECK(back.latent_scale == m.latent_scale);
    CHECK(back.stages_completed == m.stages_completed);
    CHECK(back.config().noise_seed == m.config().noise_seed);
    const auto header = read_checkpoint_header(path);
    CHECK(header.at("version") == kCheckpointVersion);
    CHECK(header.at("partitions").contains("theta_down"));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects foreign files") {
    const auto path = std::filesystem::temp_directory_path() / "dereflect_not_ckpt.bin";
    {
        std::ofstream out(path);
        out << "definitely not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
    std::filesystem::remove(path);
}
