#include "dereflect/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "dereflect/metrics.hpp"
#include "dereflect/optim.hpp"

namespace dereflect::train {

using net::Model;
using net::Partition;

const char* stage_name(Stage s) {
    switch (s) {
    case Stage::prior: return "prior";
    case Stage::foundation: return "foundation";
    case Stage::invariant: return "invariant";
    case Stage::decoder: return "decoder";
    }
    return "?";
}

Stage stage_from_name(const std::string& name) {
    if (name == "invariant_finetune") return Stage::invariant;
    for (Stage s : kAllStages)
        if (name == stage_name(s)) return s;
    throw ValidationError("unknown stage '" + name + "'");
}

StageConfig StageConfig::defaults(Stage s) {
    StageConfig c;
    c.stage = s;
    switch (s) {
    case Stage::prior:
        c.lr = 1e-3;
        c.steps = 2000;
        break;
    case Stage::foundation:
        c.lr = 3e-4;
        c.steps = 2000;
        break;
    case Stage::invariant:
        c.lr = 1e-4;
        c.steps = 1000;
        break;
    case Stage::decoder:
        c.lr = 3e-4;
        c.steps = 1000;
        break;
    }
    return c;
}

void StageConfig::validate() const {
    if (!(lr > 0.0) || !(codec_lr > 0.0)) throw ValidationError("learning rate must be positive");
    if (steps < 0 || codec_steps < 0) throw ValidationError("step counts must be non-negative");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (alternate_every < 1) throw ValidationError("alternate_every must be at least 1");
    if (!(lambda_rec >= 0.0)) throw ValidationError("lambda_rec must be non-negative");
    if (weight_decay < 0.0) throw ValidationError("weight_decay must be non-negative");
    augment.validate();
}

nlohmann::json StageConfig::to_json() const {
    nlohmann::json j = {{"stage", stage_name(stage)},
                        {"lr", lr},
                        {"steps", steps},
                        {"batch_size", batch_size},
                        {"alternate_every", alternate_every},
                        {"lambda_rec", lambda_rec},
                        {"weight_decay", weight_decay},
                        {"seed", seed},
                        {"allow_out_of_order", allow_out_of_order},
                        {"augment", augment.to_json()}};
    if (stage == Stage::prior) {
        j["codec_steps"] = codec_steps;
        j["codec_lr"] = codec_lr;
    }
    return j;
}

StageConfig StageConfig::from_json(Stage s, const nlohmann::json& j) {
    StageConfig c = defaults(s);
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.alternate_every = j.value("alternate_every", c.alternate_every);
    c.lambda_rec = j.value("lambda_rec", c.lambda_rec);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.codec_steps = j.value("codec_steps", c.codec_steps);
    c.codec_lr = j.value("codec_lr", c.codec_lr);
    c.allow_out_of_order = j.value("allow_out_of_order", c.allow_out_of_order);
    if (j.contains("augment")) c.augment = AugmentConfig::from_json(j.at("augment"));
    c.validate();
    return c;
}

double LogRecord::total() const {
    return l_diff_1.value_or(0.0) + l_diff_2.value_or(0.0) + l_con.value_or(0.0) + l_rec.value_or(0.0);
}

nlohmann::json LogRecord::to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"step", step},         {"stage", stage},   {"l_diff_1", opt(l_diff_1)}, {"l_diff_2", opt(l_diff_2)},
            {"l_con", opt(l_con)},  {"l_rec", opt(l_rec)}, {"lr", lr}};
}

std::vector<Partition> trainable_partitions(Stage s) {
    switch (s) {
    case Stage::prior:
        // phi receives the copied encoder half at the end of the stage
        return {Partition::codec, Partition::theta_down, Partition::theta_mid, Partition::theta_up, Partition::c,
                Partition::phi};
    case Stage::foundation:
    case Stage::invariant: return {Partition::theta_up, Partition::phi};
    case Stage::decoder: return {Partition::fusion};
    }
    return {};
}

double smoothed(const std::vector<LogRecord>& log, std::size_t begin, std::size_t end) {
    end = std::min(end, log.size());
    if (begin >= end) throw ValidationError("empty smoothing window");
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += log[i].total();
    return s / double(end - begin);
}

namespace {

struct Ctx {
    Model& model;
    const std::vector<SceneGroup>& data;
    const StageConfig& cfg;
    const LogSink& sink;
    StageResult& result;
    Rng data_rng;
    Rng noise_rng;
};

const SceneGroup& pick_group(Ctx& c) {
    const auto i = std::uniform_int_distribution<std::size_t>(0, c.data.size() - 1)(c.data_rng);
    return c.data[i];
}

std::size_t pick_index(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

int pick_t(Ctx& c, int lo) { return std::uniform_int_distribution<int>(lo, c.model.schedule().t_max())(c.noise_rng); }

void emit(Ctx& c, LogRecord r) {
    if (c.sink) c.sink(r);
    c.result.log.push_back(std::move(r));
}

std::vector<net::Param*> gather(Model& m, std::initializer_list<Partition> parts) {
    std::vector<net::Param*> out;
    for (Partition p : parts) {
        auto v = m.partition(p);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

void train_codec(Ctx& c) {
    Model& m = c.model;
    AdamW opt({c.cfg.codec_lr, 0.9, 0.999, 1e-8, c.cfg.weight_decay});
    const auto params = m.partition(Partition::codec);
    const float scale = 1.0f / float(c.cfg.batch_size);
    for (int step = 0; step < c.cfg.codec_steps; ++step) {
        m.zero_grad();
        double l1 = 0.0;
        for (int b = 0; b < c.cfg.batch_size; ++b) {
            const SceneGroup& g = pick_group(c);
            const std::size_t k = pick_index(c.data_rng, g.size() + 1);
            const ImageTensor* src = k == 0 ? &g.transmission() : &g.triples[k - 1].mixed;
            const ImageTensor* one[] = {src};
            const ImageTensor x = augment_group(one, c.data_rng, c.cfg.augment).front();
            net::EncoderTrace et;
            net::DecoderTrace dt;
            const net::Encoding e = m.codec.encode(x, &et);
            const ImageTensor y = m.codec.decode(e.latent, nullptr, &dt);
            Tensor grad(y.shape());
            const double n = double(y.size());
            double sum = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double d = double(y[i]) - double(x[i]);
                sum += std::abs(d);
                grad[i] = float((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n);
            }
            l1 += sum / n;
            const Tensor gz = m.codec.decode_backward(grad, dt, nullptr, true, false, true);
            m.codec.encode_backward(gz, et, true);
        }
        opt.step(params, scale);
        c.result.active.push_back(Partition::codec);
        emit(c, {step, "prior_codec", std::nullopt, std::nullopt, std::nullopt, l1 / c.cfg.batch_size,
                 c.cfg.codec_lr});
    }
}

float estimate_latent_scale(Model& m, const std::vector<SceneGroup>& data) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    const std::size_t groups = std::min<std::size_t>(data.size(), 64);
    for (std::size_t i = 0; i < groups; ++i) {
        const net::Encoding e = m.codec.encode(data[i].transmission());
        for (float v : e.latent.values()) {
            sum += v;
            sq += double(v) * v;
            ++n;
        }
    }
    const double mean = sum / double(n);
    const double var = sq / double(n) - mean * mean;
    if (!(var > 1e-12)) return 1.0f;
    return float(1.0 / std::sqrt(var));
}

void train_prior_denoiser(Ctx& c) {
    Model& m = c.model;
    AdamW opt({c.cfg.lr, 0.9, 0.999, 1e-8, c.cfg.weight_decay});
    const auto params = gather(m, {Partition::theta_down, Partition::theta_mid, Partition::theta_up, Partition::c});
    const int time_dim = m.config().unet.time_dim;
    for (int step = 0; step < c.cfg.steps; ++step) {
        m.zero_grad();
        double loss = 0.0;
        for (int b = 0; b < c.cfg.batch_size; ++b) {
            const SceneGroup& g = pick_group(c);
            const ImageTensor* one[] = {&g.transmission()};
            const ImageTensor t_img = augment_group(one, c.data_rng, c.cfg.augment).front();
            const LatentTensor z = m.encode(t_img).latent;
            const int t = pick_t(c, 1);
            const LatentTensor eps = gaussian_tensor(z.shape(), c.noise_rng);
            const LatentTensor zt = diffusion::add_noise(z, t, eps, m.schedule());
            const std::vector<float> emb = m.embedding(t);
            net::UNetTrace tr;
            const LatentTensor pred = m.unet.forward(zt, emb, nullptr, &tr);
            loss += diffusion::mse(pred, eps);
            const net::UNetGrads ug = m.unet.backward(diffusion::mse_grad(pred, eps), tr, true, true, true);
            for (std::size_t i = 0; i < m.cond.size(); ++i) m.cond.grad[i] += ug.emb[time_dim + i];
        }
        opt.step(params, 1.0f / float(c.cfg.batch_size));
        c.result.active.push_back(Partition::theta_down);
        emit(c, {step, "prior", loss / c.cfg.batch_size, std::nullopt, std::nullopt, std::nullopt, c.cfg.lr});
    }
}

struct Pass {
    LatentTensor pred;
    LatentTensor target;
    net::ControlTrace ct;
    net::UNetTrace ut;
};

// One conditioned forward pass at a sampled t; z_T and the target share eps.
void forward_pass(Model& m, const LatentTensor& z, const LatentTensor& cond, int t, const LatentTensor& eps,
                  Pass& p) {
    const LatentTensor z_T = diffusion::add_noise(z, m.schedule().t_max(), eps, m.schedule());
    p.target = diffusion::add_noise(z, t, eps, m.schedule());
    const std::vector<float> emb = m.embedding(t);
    const net::ControlResiduals r = m.control.forward(z_T, cond, emb, &p.ct);
    p.pred = m.unet.forward(z_T, emb, &r, &p.ut);
}

void backward_pass(Model& m, const Tensor& grad, Pass& p, bool up, bool phi) {
    const net::UNetGrads ug = m.unet.backward(grad, p.ut, false, false, up);
    if (phi) m.control.backward(ug.residuals, p.ct, true);
}

void train_foundation(Ctx& c) {
    Model& m = c.model;
    AdamW opt({c.cfg.lr, 0.9, 0.999, 1e-8, c.cfg.weight_decay});
    const auto params = gather(m, {Partition::theta_up, Partition::phi});
    for (int step = 0; step < c.cfg.steps; ++step) {
        m.zero_grad();
        double loss = 0.0;
        for (int b = 0; b < c.cfg.batch_size; ++b) {
            const SceneGroup& g = pick_group(c);
            const MixTriple& tri = g.triples[pick_index(c.data_rng, g.size())];
            const ImageTensor* imgs[] = {&g.transmission(), &tri.mixed};
            const auto aug = augment_group(imgs, c.data_rng, c.cfg.augment);
            const LatentTensor z = m.encode(aug[0]).latent;
            const LatentTensor cond = m.encode(aug[1]).latent;
            const int t = pick_t(c, 0);
            const LatentTensor eps = gaussian_tensor(z.shape(), c.noise_rng);
            Pass p;
            forward_pass(m, z, cond, t, eps, p);
            loss += diffusion::loss_one_step(p.pred, p.target);
            backward_pass(m, diffusion::mse_grad(p.pred, p.target), p, true, true);
        }
        opt.step(params, 1.0f / float(c.cfg.batch_size));
        c.result.active.push_back(Partition::theta_up);
        emit(c, {step, "foundation", loss / c.cfg.batch_size, std::nullopt, std::nullopt, std::nullopt, c.cfg.lr});
    }
}

void train_invariant(Ctx& c) {
    Model& m = c.model;
    AdamW opt({c.cfg.lr, 0.9, 0.999, 1e-8, c.cfg.weight_decay});
    const auto phi = m.partition(Partition::phi);
    const auto up = m.partition(Partition::theta_up);
    std::uint64_t idle_hash = m.partition_hash(Partition::theta_up);
    for (int step = 0; step < c.cfg.steps; ++step) {
        const bool phi_turn = (step / c.cfg.alternate_every) % 2 == 0;
        const Partition active = phi_turn ? Partition::phi : Partition::theta_up;
        const Partition idle = phi_turn ? Partition::theta_up : Partition::phi;
        if (step % c.cfg.alternate_every == 0) {
            if (step > 0 && m.partition_hash(active) != idle_hash) {
                throw InvariantViolation(std::string("partition ") + net::partition_name(active) +
                                         " changed while frozen");
            }
            idle_hash = m.partition_hash(idle);
        }
        m.zero_grad();
        double l1 = 0.0, l2 = 0.0, lc = 0.0;
        for (int b = 0; b < c.cfg.batch_size; ++b) {
            const SceneGroup& g = pick_group(c);
            const std::size_t i = pick_index(c.data_rng, g.size());
            std::size_t j = pick_index(c.data_rng, g.size() - 1);
            if (j >= i) ++j;
            const ImageTensor* imgs[] = {&g.transmission(), &g.triples[i].mixed, &g.triples[j].mixed};
            const auto aug = augment_group(imgs, c.data_rng, c.cfg.augment);
            const LatentTensor z = m.encode(aug[0]).latent;
            const int t = pick_t(c, 0);
            const LatentTensor eps = gaussian_tensor(z.shape(), c.noise_rng);
            Pass p1, p2;
            forward_pass(m, z, m.encode(aug[1]).latent, t, eps, p1);
            forward_pass(m, z, m.encode(aug[2]).latent, t, eps, p2);
            const diffusion::Stage2Loss s = diffusion::loss_stage2(p1.pred, p1.target, p2.pred, p2.target);
            l1 += s.report.l_diff_1;
            l2 += *s.report.l_diff_2;
            lc += *s.report.l_con;
            backward_pass(m, s.grad_pred_1, p1, !phi_turn, phi_turn);
            backward_pass(m, s.grad_pred_2, p2, !phi_turn, phi_turn);
        }
        opt.step(phi_turn ? phi : up, 1.0f / float(c.cfg.batch_size));
        c.result.active.push_back(active);
        const double n = c.cfg.batch_size;
        emit(c, {step, "invariant", l1 / n, l2 / n, lc / n, std::nullopt, c.cfg.lr});
    }
    if (c.cfg.steps > 0) {
        const bool phi_turn = ((c.cfg.steps - 1) / c.cfg.alternate_every) % 2 == 0;
        const Partition idle = phi_turn ? Partition::theta_up : Partition::phi;
        if (m.partition_hash(idle) != idle_hash) {
            throw InvariantViolation(std::string("partition ") + net::partition_name(idle) + " changed while frozen");
        }
    }
}

void train_decoder(Ctx& c) {
    Model& m = c.model;
    AdamW opt({c.cfg.lr, 0.9, 0.999, 1e-8, c.cfg.weight_decay});
    const auto params = m.partition(Partition::fusion);
    const diffusion::RandomPyramidDistance perceptual;
    for (int step = 0; step < c.cfg.steps; ++step) {
        m.zero_grad();
        double loss = 0.0;
        for (int b = 0; b < c.cfg.batch_size; ++b) {
            const SceneGroup& g = pick_group(c);
            const MixTriple& tri = g.triples[pick_index(c.data_rng, g.size())];
            const ImageTensor* imgs[] = {&g.transmission(), &tri.mixed};
            const auto aug = augment_group(imgs, c.data_rng, c.cfg.augment);
            const net::Encoding e = m.encode(aug[1]);
            LatentTensor z = m.denoise_one_step(m.inference_noise(e.latent.shape()), e.latent, 0);
            for (float& v : z.values()) v /= m.latent_scale;
            net::DecoderTrace dt;
            const ImageTensor out = m.codec.decode(z, &e.skips, &dt);
            const diffusion::ReconstructionLoss r =
                diffusion::loss_reconstruction(out, aug[0], c.cfg.lambda_rec, perceptual, true);
            loss += r.total;
            m.codec.decode_backward(r.grad, dt, &e.skips, false, true, false);
        }
        opt.step(params, 1.0f / float(c.cfg.batch_size));
        c.result.active.push_back(Partition::fusion);
        emit(c, {step, "decoder", std::nullopt, std::nullopt, std::nullopt, loss / c.cfg.batch_size, c.cfg.lr});
    }
}

std::optional<Stage> prerequisite(Stage s) {
    switch (s) {
    case Stage::prior: return std::nullopt;
    case Stage::foundation: return Stage::prior;
    case Stage::invariant: return Stage::foundation;
    case Stage::decoder: return Stage::invariant;
    }
    return std::nullopt;
}

} // namespace

StageResult run_stage(Model& model, const std::vector<SceneGroup>& data, const StageConfig& cfg,
                      const LogSink& sink) {
    cfg.validate();
    if (!cfg.allow_out_of_order) {
        if (auto pre = prerequisite(cfg.stage); pre && !model.has_stage(stage_name(*pre))) {
            throw ValidationError(std::string("stage '") + stage_name(cfg.stage) + "' requires a completed '" +
                                  stage_name(*pre) + "' stage in the checkpoint");
        }
    }
    if (data.empty()) throw ValidationError("training data is empty");
    for (const SceneGroup& g : data) {
        if (g.size() == 0) throw ValidationError("scene " + g.scene_id + " has no mixed images");
        if (cfg.stage == Stage::invariant && g.size() < 2) {
            throw ValidationError("scene " + g.scene_id + " has fewer than 2 mixed images for invariant fine-tuning");
        }
    }

    StageResult result;
    for (Partition p : net::kAllPartitions) result.hash_before[p] = model.partition_hash(p);

    const auto idx = static_cast<std::uint64_t>(cfg.stage);
    Ctx c{model, data, cfg, sink, result, make_stream(cfg.seed, "data", idx), make_stream(cfg.seed, "noise", idx)};
    switch (cfg.stage) {
    case Stage::prior:
        train_codec(c);
        model.latent_scale = estimate_latent_scale(model, data);
        train_prior_denoiser(c);
        model.control.copy_from(model.unet);
        break;
    case Stage::foundation: train_foundation(c); break;
    case Stage::invariant: train_invariant(c); break;
    case Stage::decoder: train_decoder(c); break;
    }

    const auto allowed = trainable_partitions(cfg.stage);
    for (Partition p : net::kAllPartitions) {
        result.hash_after[p] = model.partition_hash(p);
        const bool may_change = std::find(allowed.begin(), allowed.end(), p) != allowed.end();
        if (!may_change && result.hash_after[p] != result.hash_before[p]) {
            throw InvariantViolation(std::string("frozen partition ") + net::partition_name(p) + " changed during " +
                                     stage_name(cfg.stage));
        }
    }
    if (!model.has_stage(stage_name(cfg.stage))) model.stages_completed.push_back(stage_name(cfg.stage));
    return result;
}

double probe_consistency(const Model& model, const std::vector<SceneGroup>& probe) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const SceneGroup& g : probe) {
        if (g.size() < 2) continue;
        const LatentTensor c1 = model.encode(g.triples[0].mixed).latent;
        const LatentTensor c2 = model.encode(g.triples[1].mixed).latent;
        const LatentTensor z_T = model.inference_noise(c1.shape());
        sum += diffusion::loss_consistency(model.denoise_one_step(z_T, c1, 0), model.denoise_one_step(z_T, c2, 0));
        ++n;
    }
    if (n == 0) throw ValidationError("probe set has no scene with two mixed images");
    return sum / double(n);
}

ToyEvaluation evaluate_toy(const Model& model, const std::vector<SceneGroup>& groups) {
    ToyEvaluation e;
    for (const SceneGroup& g : groups) {
        for (const MixTriple& tri : g.triples) {
            const ImageTensor out = model.infer(tri.mixed).image;
            e.psnr_output += metrics::capped(metrics::psnr(out, tri.transmission));
            e.psnr_mixed += metrics::capped(metrics::psnr(tri.mixed, tri.transmission));
            e.ssim_output += metrics::ssim(out, tri.transmission);
            e.ssim_mixed += metrics::ssim(tri.mixed, tri.transmission);
            ++e.count;
        }
    }
    if (e.count == 0) throw ValidationError("nothing to evaluate");
    const double n = double(e.count);
    e.psnr_output /= n;
    e.psnr_mixed /= n;
    e.ssim_output /= n;
    e.ssim_mixed /= n;
    return e;
}

} // namespace dereflect::train
