#include "doctest.h"

#include <set>

#include "dereflect/metrics.hpp"
#include "dereflect/optim.hpp"
#include "dereflect/trainer.hpp"
#include "test_util.hpp"

using namespace dereflect;
using namespace dereflect::train;
using net::Partition;

namespace {

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

const std::vector<SceneGroup>& corpus() {
    static const auto data = datagen::procedural_corpus(6, 3, 32, 21);
    return data;
}

StageConfig cfg_for(Stage s, int steps) {
    StageConfig c = StageConfig::defaults(s);
    c.steps = steps;
    c.codec_steps = steps;
    c.augment.crop = 32;
    c.seed = 5;
    return c;
}

std::map<Partition, std::uint64_t> hashes(const net::Model& m) {
    std::map<Partition, std::uint64_t> h;
    for (Partition p : net::kAllPartitions) h[p] = m.partition_hash(p);
    return h;
}

std::set<Partition> changed(const std::map<Partition, std::uint64_t>& a, const std::map<Partition, std::uint64_t>& b) {
    std::set<Partition> out;
    for (auto& [p, h] : a)
        if (b.at(p) != h) out.insert(p);
    return out;
}

// A model that has been through every stage with a handful of steps.
net::Model staged_model(Stage upto) {
    net::Model m(small_config());
    for (Stage s : kAllStages) {
        run_stage(m, corpus(), cfg_for(s, 3));
        if (s == upto) break;
    }
    return m;
}

} // namespace

TEST_CASE("stage names and config round trip") {
    CHECK(stage_from_name("invariant_finetune") == Stage::invariant);
    CHECK(stage_from_name("decoder") == Stage::decoder);
    CHECK_THROWS_AS(stage_from_name("nope"), ValidationError);

    CHECK(StageConfig::defaults(Stage::foundation).lr == 3e-4);
    CHECK(StageConfig::defaults(Stage::decoder).lr == 3e-4);
    CHECK(StageConfig::defaults(Stage::invariant).lr == 1e-4);
    CHECK(StageConfig::defaults(Stage::invariant).alternate_every == 100);
    CHECK(StageConfig::defaults(Stage::foundation).steps == 2000);
    CHECK(StageConfig::defaults(Stage::invariant).steps == 1000);
    CHECK(StageConfig::defaults(Stage::decoder).steps == 1000);
    CHECK(StageConfig::defaults(Stage::decoder).lambda_rec == 0.2);

    StageConfig c = cfg_for(Stage::invariant, 17);
    c.alternate_every = 4;
    const StageConfig back = StageConfig::from_json(Stage::invariant, c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(StageConfig::from_json(Stage::decoder, {{"lr", 0.5}}).steps == 1000);

    StageConfig bad = c;
    bad.lr = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.alternate_every = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("stage ordering") {
    net::Model m(small_config());
    try {
        run_stage(m, corpus(), cfg_for(Stage::foundation, 1));
        FAIL("expected an ordering error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("'prior'") != std::string::npos);
    }
    CHECK_THROWS_AS(run_stage(m, corpus(), cfg_for(Stage::decoder, 1)), ValidationError);
    StageConfig c = cfg_for(Stage::foundation, 1);
    c.allow_out_of_order = true;
    CHECK_NOTHROW(run_stage(m, corpus(), c));
    CHECK(m.has_stage("foundation"));
}

TEST_CASE("data validation") {
    net::Model m = staged_model(Stage::foundation);
    CHECK_THROWS_AS(run_stage(m, {}, cfg_for(Stage::invariant, 1)), ValidationError);
    auto single = corpus();
    single[2].triples.resize(1);
    CHECK_THROWS_AS(run_stage(m, single, cfg_for(Stage::invariant, 1)), ValidationError);
    // one mixed image is enough outside the invariant stage
    net::Model m2 = staged_model(Stage::prior);
    CHECK_NOTHROW(run_stage(m2, single, cfg_for(Stage::foundation, 1)));
}

TEST_CASE("zero steps leave every partition unchanged") {
    for (Stage s : {Stage::foundation, Stage::invariant, Stage::decoder}) {
        net::Model m = staged_model(s == Stage::foundation ? Stage::prior
                                    : s == Stage::invariant ? Stage::foundation
                                                            : Stage::invariant);
        const auto before = hashes(m);
        const auto r = run_stage(m, corpus(), cfg_for(s, 0));
        CHECK(r.log.empty());
        CHECK(changed(before, hashes(m)).empty());
    }
}

TEST_CASE("each stage changes exactly its partitions") {
    net::Model m(small_config());
    auto h0 = hashes(m);
    run_stage(m, corpus(), cfg_for(Stage::prior, 4));
    auto h1 = hashes(m);
    CHECK(changed(h0, h1) == std::set<Partition>{Partition::codec, Partition::theta_down, Partition::theta_mid,
                                                  Partition::theta_up, Partition::c, Partition::phi});
    CHECK(m.latent_scale != 1.0f);

    run_stage(m, corpus(), cfg_for(Stage::foundation, 3));
    auto h2 = hashes(m);
    CHECK(changed(h1, h2) == std::set<Partition>{Partition::theta_up, Partition::phi});

    StageConfig inv = cfg_for(Stage::invariant, 4);
    inv.alternate_every = 2;
    run_stage(m, corpus(), inv);
    auto h3 = hashes(m);
    CHECK(changed(h2, h3) == std::set<Partition>{Partition::theta_up, Partition::phi});

    run_stage(m, corpus(), cfg_for(Stage::decoder, 3));
    CHECK(changed(h3, hashes(m)) == std::set<Partition>{Partition::fusion});
    CHECK(m.stages_completed == std::vector<std::string>{"prior", "foundation", "invariant", "decoder"});
}

TEST_CASE("alternation boundary") {
    const net::Model base = staged_model(Stage::foundation);
    {
        net::Model m = base;
        StageConfig c = cfg_for(Stage::invariant, 5);
        c.alternate_every = 5;
        const auto r = run_stage(m, corpus(), c);
        CHECK(changed(r.hash_before, r.hash_after) == std::set<Partition>{Partition::phi});
        for (Partition p : r.active) CHECK(p == Partition::phi);
    }
    {
        net::Model m = base;
        StageConfig c = cfg_for(Stage::invariant, 7);
        c.alternate_every = 3;
        const auto r = run_stage(m, corpus(), c);
        const std::vector<Partition> want{Partition::phi,      Partition::phi,      Partition::phi,
                                          Partition::theta_up, Partition::theta_up, Partition::theta_up,
                                          Partition::phi};
        CHECK(r.active == want);
        REQUIRE(r.log.size() == 7);
        for (const auto& l : r.log) {
            CHECK(l.l_diff_2.has_value());
            CHECK(l.l_con.has_value());
            CHECK(l.total() == doctest::Approx(*l.l_diff_1 + *l.l_diff_2 + *l.l_con));
        }
    }
}

TEST_CASE("a frozen partition mutated mid-stage is caught") {
    net::Model m = staged_model(Stage::prior);
    const LogSink tamper = [&](const LogRecord&) { m.partition(Partition::theta_down).front()->value[0] += 1.0f; };
    CHECK_THROWS_AS(run_stage(m, corpus(), cfg_for(Stage::foundation, 2), tamper), InvariantViolation);

    net::Model m2 = staged_model(Stage::foundation);
    StageConfig c = cfg_for(Stage::invariant, 4);
    c.alternate_every = 2;
    int calls = 0;
    // touches theta_up during the first (phi-only) window
    const LogSink tamper2 = [&](const LogRecord&) {
        if (calls++ == 0) m2.partition(Partition::theta_up).front()->value[0] += 1.0f;
    };
    CHECK_THROWS_AS(run_stage(m2, corpus(), c, tamper2), InvariantViolation);
}

TEST_CASE("training is reproducible") {
    net::Model a = staged_model(Stage::prior), b = staged_model(Stage::prior);
    const auto ra = run_stage(a, corpus(), cfg_for(Stage::foundation, 6));
    const auto rb = run_stage(b, corpus(), cfg_for(Stage::foundation, 6));
    REQUIRE(ra.log.size() == rb.log.size());
    for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(ra.log[i].to_json() == rb.log[i].to_json());
    CHECK(hashes(a) == hashes(b));

    net::Model c = staged_model(Stage::prior);
    StageConfig other = cfg_for(Stage::foundation, 6);
    other.seed = 6;
    run_stage(c, corpus(), other);
    CHECK(hashes(c) != hashes(a));
}

TEST_CASE("thread count does not change training") {
    net::Model a = staged_model(Stage::prior), b = staged_model(Stage::prior);
    run_stage(a, corpus(), cfg_for(Stage::foundation, 3));
    kernels::set_num_threads(4);
    run_stage(b, corpus(), cfg_for(Stage::foundation, 3));
    kernels::set_num_threads(1);
    CHECK(hashes(a) == hashes(b));
}

TEST_CASE("one foundation step reaches theta_up and phi; conditioning then matters") {
    net::Model m = staged_model(Stage::prior);
    const LatentTensor c1 = m.encode(corpus()[0].triples[0].mixed).latent;
    const LatentTensor c2 = m.encode(corpus()[1].triples[0].mixed).latent;
    const LatentTensor z = m.inference_noise(c1.shape());
    CHECK(bitwise_equal(m.denoise_one_step(z, c1, 0), m.denoise_one_step(z, c2, 0)));

    const auto r = run_stage(m, corpus(), cfg_for(Stage::foundation, 1));
    CHECK(r.hash_after.at(Partition::theta_up) != r.hash_before.at(Partition::theta_up));
    CHECK(r.hash_after.at(Partition::phi) != r.hash_before.at(Partition::phi));
    CHECK(diffusion::mse(m.denoise_one_step(z, c1, 0), m.denoise_one_step(z, c2, 0)) > 0.0);
}

TEST_CASE("decoder stage with lambda zero optimises pure L1") {
    net::Model m = staged_model(Stage::invariant);
    // a single triple and no augmentation pins the sample
    std::vector<SceneGroup> one{corpus()[0]};
    one[0].triples.resize(1);
    StageConfig c = cfg_for(Stage::decoder, 1);
    c.lambda_rec = 0.0;
    c.augment.enabled = false;
    const net::Model before = m;
    const auto r = run_stage(m, one, c);
    const ImageTensor out = before.infer(one[0].triples[0].mixed).image;
    double l1 = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) l1 += std::abs(double(out[i]) - one[0].transmission()[i]);
    l1 /= double(out.size());
    REQUIRE(r.log.size() == 1);
    CHECK(*r.log[0].l_rec == doctest::Approx(l1).epsilon(1e-6));
}

TEST_CASE("foundation loss falls on a toy corpus") {
    net::Model m(small_config());
    StageConfig p = cfg_for(Stage::prior, 150);
    run_stage(m, corpus(), p);
    const auto r = run_stage(m, corpus(), cfg_for(Stage::foundation, 300));
    CHECK(smoothed(r.log, 250, 300) < smoothed(r.log, 0, 50));
    CHECK_THROWS_AS(smoothed(r.log, 5, 5), ValidationError);
}

TEST_CASE("probe consistency and toy evaluation") {
    const net::Model m = staged_model(Stage::decoder);
    CHECK(probe_consistency(m, corpus()) >= 0.0);
    auto singles = corpus();
    for (auto& g : singles) g.triples.resize(1);
    CHECK_THROWS_AS(probe_consistency(m, singles), ValidationError);
    const ToyEvaluation e = evaluate_toy(m, corpus());
    CHECK(e.count == 18);
    CHECK(std::isfinite(e.psnr_output));
}

TEST_CASE("augmentation") {
    Rng rng(1);
    const ImageTensor t = testutil::random_tensor({3, 40, 40}, rng), m = testutil::random_tensor({3, 40, 40}, rng);
    const ImageTensor* group[] = {&t, &m};

    AugmentConfig off;
    off.enabled = false;
    const auto same = augment_group(group, rng, off);
    CHECK(bitwise_equal(same[0], t));
    CHECK(bitwise_equal(same[1], m));

    AugmentConfig on;
    on.crop = 32;
    Rng a(9), b(9);
    const auto ga = augment_group(group, a, on);
    const AugmentParams p = sample_augment(b, 40, 40, on);
    CHECK(bitwise_equal(ga[0], apply_augment(t, p)));
    CHECK(bitwise_equal(ga[1], apply_augment(m, p)));
    for (const auto& img : ga)
        for (float v : img.values()) REQUIRE((v >= 0.0f && v <= 1.0f));

    // geometry only: output is an exact (possibly mirrored) crop
    AugmentParams geo{3, 5, 8, true, 1.0, 1.0, 1.0, 0.0};
    const ImageTensor crop = apply_augment(t, geo);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(crop.at(1, y, x) == t.at(1, 5 + y, 3 + 7 - x));

    AugmentConfig big;
    big.crop = 48;
    CHECK_THROWS_AS(augment_group(group, rng, big), ValidationError);
    const ImageTensor odd(3, 40, 39);
    const ImageTensor* mismatched[] = {&t, &odd};
    CHECK_THROWS_AS(augment_group(mismatched, rng, on), DimensionError);
}

TEST_CASE("crop offsets are uniform") {
    Rng rng(12);
    AugmentConfig c;
    c.crop = 64;
    const int range = 9, n = 1000;
    std::vector<int> hx(range), hy(range);
    for (int i = 0; i < n; ++i) {
        const AugmentParams p = sample_augment(rng, 72, 72, c);
        ++hx[p.x0];
        ++hy[p.y0];
    }
    auto chi2 = [&](const std::vector<int>& h) {
        const double e = double(n) / range;
        double s = 0;
        for (int k : h) s += (k - e) * (k - e) / e;
        return s;
    };
    // 8 degrees of freedom, p = 0.001
    CHECK(chi2(hx) < 26.12);
    CHECK(chi2(hy) < 26.12);
}

TEST_CASE("adamw matches the update rule") {
    net::Param p("p", {3});
    p.value = {1.0f, -2.0f, 0.5f};
    AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.01});
    const std::vector<float> g1{0.5f, -1.0f, 0.0f}, g2{0.25f, 2.0f, 1.0f};
    std::vector<double> w(p.value.begin(), p.value.end()), m(3, 0.0), v(3, 0.0);
    int t = 0;
    for (const auto* g : {&g1, &g2}) {
        p.grad = *g;
        opt.step({&p});
        ++t;
        for (int i = 0; i < 3; ++i) {
            m[i] = 0.9 * m[i] + 0.1 * (*g)[i];
            v[i] = 0.999 * v[i] + 0.001 * (*g)[i] * (*g)[i];
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            w[i] = w[i] * (1 - 0.1 * 0.01) - 0.1 * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    for (int i = 0; i < 3; ++i) CHECK(p.value[i] == doctest::Approx(w[i]).epsilon(1e-5));
}

TEST_CASE("log records serialise absent components as null") {
    LogRecord r{4, "foundation", 0.5, std::nullopt, std::nullopt, std::nullopt, 3e-4};
    const auto j = r.to_json();
    CHECK(j["l_con"].is_null());
    CHECK(j["l_diff_1"] == 0.5);
    CHECK(r.total() == 0.5);
}
