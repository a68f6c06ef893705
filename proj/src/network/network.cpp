#include "dereflect/network.hpp"

#include <cmath>
#include <stdexcept>

namespace dereflect::net {

namespace {

std::string idx(const std::string& base, int i) { return base + std::to_string(i); }

void copy_values(std::vector<Param*> dst, std::vector<const Param*> src) {
    if (dst.size() != src.size()) throw std::logic_error("parameter lists differ in length");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i]->shape != src[i]->shape) throw std::logic_error("parameter shapes differ: " + dst[i]->name);
        dst[i]->value = src[i]->value;
    }
}

} // namespace

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
    if (codec.channels.size() < 2) throw ValidationError("codec needs at least two resolutions");
    if (unet.widths.size() < 2) throw ValidationError("U-Net needs at least two resolutions");
    if (codec.latent_channels <= 0 || unet.time_dim % 2 != 0 || unet.cond_dim <= 0) {
        throw ValidationError("bad latent/embedding dimensions");
    }
    const int multiple = codec.factor() << (int(unet.widths.size()) - 1);
    if (image_size % multiple != 0) {
        throw ValidationError("image_size must be divisible by " + std::to_string(multiple));
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"image_size", image_size},
            {"codec_channels", codec.channels},
            {"latent_channels", codec.latent_channels},
            {"unet_widths", unet.widths},
            {"time_dim", unet.time_dim},
            {"cond_dim", unet.cond_dim},
            {"t_max", t_max},
            {"beta_start", beta_start},
            {"beta_end", beta_end},
            {"init_seed", init_seed},
            {"noise_seed", noise_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.codec.channels = j.value("codec_channels", c.codec.channels);
    c.codec.latent_channels = j.value("latent_channels", c.codec.latent_channels);
    c.unet.widths = j.value("unet_widths", c.unet.widths);
    c.unet.time_dim = j.value("time_dim", c.unet.time_dim);
    c.unet.cond_dim = j.value("cond_dim", c.unet.cond_dim);
    c.t_max = j.value("t_max", c.t_max);
    c.beta_start = j.value("beta_start", c.beta_start);
    c.beta_end = j.value("beta_end", c.beta_end);
    c.init_seed = j.value("init_seed", c.init_seed);
    c.noise_seed = j.value("noise_seed", c.noise_seed);
    c.validate();
    return c;
}

// ---------------------------------------------------------------- codec

Codec::Codec(const CodecConfig& cfg) : cfg_(cfg) {
    const auto& c = cfg.channels;
    const int levels = cfg.levels();
    enc_in = ConvAct("codec.enc_in", 3, c[0], 3, 1, Activation::silu);
    for (int i = 1; i < levels; ++i) {
        enc_down.emplace_back(idx("codec.enc_down", i), c[i - 1], c[i], 3, 2, Activation::silu);
        enc_res.emplace_back(idx("codec.enc_res", i), c[i], c[i], 3, 1, Activation::silu);
    }
    enc_out = ConvAct("codec.enc_out", c.back(), cfg.latent_channels, 3, 1, Activation::none);
    dec_in = ConvAct("codec.dec_in", cfg.latent_channels, c.back(), 3, 1, Activation::silu);
    for (int i = 0; i < levels; ++i) {
        dec_res.emplace_back(idx("codec.dec_res", i), c[i], c[i], 3, 1, Activation::silu);
        fusion.emplace_back(idx("fusion.level", i), c[i], c[i], 3, 1);
    }
    for (int i = 0; i + 1 < levels; ++i) dec_up.emplace_back(idx("codec.dec_up", i), c[i + 1], c[i], 3, 1, Activation::silu);
    dec_out = ConvAct("codec.dec_out", c[0], 3, 3, 1, Activation::sigmoid);
}

void Codec::init(Rng& rng) {
    enc_in.init(rng);
    for (auto& l : enc_down) l.init(rng);
    for (auto& l : enc_res) l.init(rng);
    enc_out.init(rng, 0.5);
    dec_in.init(rng);
    for (auto& l : dec_res) l.init(rng);
    for (auto& l : dec_up) l.init(rng);
    dec_out.init(rng, 0.5);
    for (auto& f : fusion) f.init_zero();
}

Encoding Codec::encode(const ImageTensor& img, EncoderTrace* tr) const {
    if (img.channels() != 3) throw DimensionError("encode expects a 3-channel image");
    const int f = cfg_.factor();
    if (img.height() % f != 0 || img.width() % f != 0) {
        throw ValidationError("image " + to_string(img.shape()) + " not divisible by codec factor " +
                              std::to_string(f));
    }
    const int levels = cfg_.levels();
    if (tr) {
        tr->down.resize(levels - 1);
        tr->res.resize(levels - 1);
    }
    Encoding e;
    e.skips.features.resize(levels);
    Tensor h = enc_in.forward(img, {}, tr ? &tr->in : nullptr);
    e.skips.features[0] = h;
    for (int i = 1; i < levels; ++i) {
        h = enc_down[i - 1].forward(h, {}, tr ? &tr->down[i - 1] : nullptr);
        kernels::add_inplace(h.values(), enc_res[i - 1].forward(h, {}, tr ? &tr->res[i - 1] : nullptr).values());
        e.skips.features[i] = h;
    }
    e.latent = enc_out.forward(h, {}, tr ? &tr->out : nullptr);
    return e;
}

void Codec::encode_backward(const Tensor& grad_latent, const EncoderTrace& tr, bool pg) {
    Tensor g = enc_out.backward(grad_latent, tr.out, {}, {}, true, pg);
    for (int i = cfg_.levels() - 1; i >= 1; --i) {
        kernels::add_inplace(g.values(), enc_res[i - 1].backward(g, tr.res[i - 1], {}, {}, true, pg).values());
        g = enc_down[i - 1].backward(g, tr.down[i - 1], {}, {}, true, pg);
    }
    enc_in.backward(g, tr.in, {}, {}, false, pg);
}

ImageTensor Codec::decode(const LatentTensor& z, const SkipFeatureSet* skips, DecoderTrace* tr) const {
    const int levels = cfg_.levels();
    if (skips && int(skips->features.size()) != levels) {
        throw DimensionError("skip feature set has " + std::to_string(skips->features.size()) +
                             " scales, decoder has " + std::to_string(levels));
    }
    if (tr) {
        tr->up.resize(levels - 1);
        tr->res.resize(levels);
        tr->up_in_shape.resize(levels - 1);
    }
    Tensor h = dec_in.forward(z, {}, tr ? &tr->in : nullptr);
    for (int i = levels - 1; i >= 0; --i) {
        if (i < levels - 1) {
            if (tr) tr->up_in_shape[i] = h.shape();
            h = upsample2x(h);
            h = dec_up[i].forward(h, {}, tr ? &tr->up[i] : nullptr);
        }
        if (skips) {
            const Tensor& f = skips->features[i];
            if (f.height() != h.height() || f.width() != h.width() || f.channels() != h.channels()) {
                throw DimensionError("skip feature at level " + std::to_string(i) + " has shape " +
                                     to_string(f.shape()) + ", decoder expects " + to_string(h.shape()));
            }
            kernels::add_inplace(h.values(), fusion[i].forward(f).values());
        }
        kernels::add_inplace(h.values(), dec_res[i].forward(h, {}, tr ? &tr->res[i] : nullptr).values());
    }
    return dec_out.forward(h, {}, tr ? &tr->out : nullptr);
}

Tensor Codec::decode_backward(const Tensor& grad_img, const DecoderTrace& tr, const SkipFeatureSet* skips,
                              bool trunk_grads, bool fusion_grads, bool need_latent_grad) {
    const int levels = cfg_.levels();
    Tensor g = dec_out.backward(grad_img, tr.out, {}, {}, true, trunk_grads);
    for (int i = 0; i < levels; ++i) {
        kernels::add_inplace(g.values(), dec_res[i].backward(g, tr.res[i], {}, {}, true, trunk_grads).values());
        if (skips && fusion_grads) fusion[i].backward(skips->features[i], g, false, true);
        if (i < levels - 1) {
            const bool more = need_latent_grad || trunk_grads || (skips && fusion_grads);
            if (!more) return {};
            g = dec_up[i].backward(g, tr.up[i], {}, {}, true, trunk_grads);
            g = upsample2x_backward(g);
        }
    }
    if (!need_latent_grad && !trunk_grads) return {};
    return dec_in.backward(g, tr.in, {}, {}, need_latent_grad, trunk_grads);
}

std::vector<Param*> Codec::trunk_params() {
    std::vector<Param*> out;
    enc_in.collect(out);
    for (std::size_t i = 0; i < enc_down.size(); ++i) {
        enc_down[i].collect(out);
        enc_res[i].collect(out);
    }
    enc_out.collect(out);
    dec_in.collect(out);
    for (auto& l : dec_res) l.collect(out);
    for (auto& l : dec_up) l.collect(out);
    dec_out.collect(out);
    return out;
}

std::vector<const Param*> Codec::trunk_params() const {
    std::vector<const Param*> out;
    for (Param* p : const_cast<Codec*>(this)->trunk_params()) out.push_back(p);
    return out;
}

std::vector<Param*> Codec::fusion_params() {
    std::vector<Param*> out;
    for (auto& f : fusion) f.collect(out);
    return out;
}

std::vector<const Param*> Codec::fusion_params() const {
    std::vector<const Param*> out;
    for (const auto& f : fusion) f.collect(out);
    return out;
}

// ---------------------------------------------------------------- U-Net

UNet::UNet(const UNetConfig& cfg, int latent_channels) : cfg_(cfg), latent_channels_(latent_channels) {
    const auto& w = cfg.widths;
    const int k_levels = int(w.size()) - 1;
    const int e = cfg.emb_dim();
    in_conv = Conv2d("unet.in_conv", latent_channels, w[0], 3, 1);
    for (int k = 0; k < k_levels; ++k) {
        block.emplace_back(idx("unet.block", k), w[k], w[k], 3, 1, Activation::silu, e);
        down.emplace_back(idx("unet.down", k), w[k], w[k + 1], 3, 2, Activation::silu);
        upconv.emplace_back(idx("unet.upconv", k), w[k + 1], w[k], 3, 1, Activation::silu);
        merge.emplace_back(idx("unet.merge", k), 2 * w[k], w[k], 3, 1, Activation::silu, e);
    }
    mid1 = ConvAct("unet.mid1", w.back(), w.back(), 3, 1, Activation::silu, e);
    mid2 = ConvAct("unet.mid2", w.back(), w.back(), 3, 1, Activation::silu);
    out_conv = Conv2d("unet.out_conv", w[0], latent_channels, 3, 1);
}

void UNet::init(Rng& rng) {
    in_conv.init_he(rng);
    for (auto& l : block) l.init(rng);
    for (auto& l : down) l.init(rng);
    mid1.init(rng);
    mid2.init(rng);
    for (auto& l : upconv) l.init(rng);
    for (auto& l : merge) l.init(rng);
    out_conv.init_he(rng, 0.5);
}

LatentTensor UNet::forward(const LatentTensor& z, std::span<const float> emb, const ControlResiduals* control,
                           UNetTrace* tr) const {
    const int k_levels = int(block.size());
    if (control && (int(control->skips.size()) != k_levels)) throw DimensionError("control residual count mismatch");
    UNetTrace local;
    UNetTrace& t = tr ? *tr : local;
    t.emb.assign(emb.begin(), emb.end());
    t.block.resize(k_levels);
    t.down.resize(k_levels);
    t.upconv.resize(k_levels);
    t.merge.resize(k_levels);
    t.skips.resize(k_levels);
    t.up_in_shape.resize(k_levels);
    if (tr) t.in_conv_in = z;

    Tensor h = in_conv.forward(z);
    for (int k = 0; k < k_levels; ++k) {
        kernels::add_inplace(h.values(), block[k].forward(h, emb, tr ? &t.block[k] : nullptr).values());
        t.skips[k] = h;
        if (control) {
            require_same_shape(t.skips[k], control->skips[k], "control skip residual");
            kernels::add_inplace(t.skips[k].values(), control->skips[k].values());
        }
        h = down[k].forward(h, {}, tr ? &t.down[k] : nullptr);
    }
    kernels::add_inplace(h.values(), mid1.forward(h, emb, tr ? &t.mid1 : nullptr).values());
    kernels::add_inplace(h.values(), mid2.forward(h, {}, tr ? &t.mid2 : nullptr).values());
    if (control) {
        require_same_shape(h, control->mid, "control mid residual");
        kernels::add_inplace(h.values(), control->mid.values());
    }
    for (int k = k_levels - 1; k >= 0; --k) {
        t.up_in_shape[k] = h.shape();
        h = upsample2x(h);
        h = upconv[k].forward(h, {}, tr ? &t.upconv[k] : nullptr);
        h = merge[k].forward(concat_channels(h, t.skips[k]), emb, tr ? &t.merge[k] : nullptr);
    }
    if (tr) t.out_in = h;
    return out_conv.forward(h);
}

UNetGrads UNet::backward(const Tensor& grad_out, const UNetTrace& t, bool down_grads, bool mid_grads,
                         bool up_grads) {
    const int k_levels = int(block.size());
    UNetGrads out;
    out.emb.assign(t.emb.size(), 0.0f);
    out.residuals.skips.resize(k_levels);

    Tensor g = out_conv.backward(t.out_in, grad_out, true, up_grads);
    for (int k = 0; k < k_levels; ++k) {
        Tensor gcat = merge[k].backward(g, t.merge[k], t.emb, out.emb, true, up_grads);
        Tensor gh;
        split_channels(gcat, upconv[k].conv.out_channels, gh, out.residuals.skips[k]);
        g = upconv[k].backward(gh, t.upconv[k], {}, {}, true, up_grads);
        g = upsample2x_backward(g);
    }
    out.residuals.mid = g;
    if (!down_grads && !mid_grads) return out;

    kernels::add_inplace(g.values(), mid2.backward(g, t.mid2, {}, {}, true, mid_grads).values());
    kernels::add_inplace(g.values(), mid1.backward(g, t.mid1, t.emb, out.emb, true, mid_grads).values());
    for (int k = k_levels - 1; k >= 0; --k) {
        g = down[k].backward(g, t.down[k], {}, {}, true, down_grads);
        kernels::add_inplace(g.values(), out.residuals.skips[k].values());
        kernels::add_inplace(g.values(), block[k].backward(g, t.block[k], t.emb, out.emb, true, down_grads).values());
    }
    in_conv.backward(t.in_conv_in, g, false, down_grads);
    return out;
}

std::vector<Param*> UNet::down_params() {
    std::vector<Param*> out;
    in_conv.collect(out);
    for (std::size_t k = 0; k < block.size(); ++k) {
        block[k].collect(out);
        down[k].collect(out);
    }
    return out;
}

std::vector<Param*> UNet::mid_params() {
    std::vector<Param*> out;
    mid1.collect(out);
    mid2.collect(out);
    return out;
}

std::vector<Param*> UNet::up_params() {
    std::vector<Param*> out;
    for (std::size_t k = 0; k < upconv.size(); ++k) {
        upconv[k].collect(out);
        merge[k].collect(out);
    }
    out_conv.collect(out);
    return out;
}

// ---------------------------------------------------------------- control branch

ControlBranch::ControlBranch(const UNetConfig& cfg, int latent_channels) : cfg_(cfg) {
    const auto& w = cfg.widths;
    const int k_levels = int(w.size()) - 1;
    const int e = cfg.emb_dim();
    hint = Conv2d("phi.hint", latent_channels, w[0], 3, 1);
    in_conv = Conv2d("phi.in_conv", latent_channels, w[0], 3, 1);
    for (int k = 0; k < k_levels; ++k) {
        block.emplace_back(idx("phi.block", k), w[k], w[k], 3, 1, Activation::silu, e);
        down.emplace_back(idx("phi.down", k), w[k], w[k + 1], 3, 2, Activation::silu);
        zero_conv.emplace_back(idx("phi.zero_conv", k), w[k], w[k], 1, 1);
    }
    mid1 = ConvAct("phi.mid1", w.back(), w.back(), 3, 1, Activation::silu, e);
    mid2 = ConvAct("phi.mid2", w.back(), w.back(), 3, 1, Activation::silu);
    zero_conv_mid = Conv2d("phi.zero_conv_mid", w.back(), w.back(), 1, 1);
}

void ControlBranch::init(Rng& rng) {
    hint.init_he(rng);
    in_conv.init_he(rng);
    for (auto& l : block) l.init(rng);
    for (auto& l : down) l.init(rng);
    mid1.init(rng);
    mid2.init(rng);
    for (auto& z : zero_conv) z.init_zero();
    zero_conv_mid.init_zero();
}

void ControlBranch::copy_from(const UNet& unet) {
    auto grab = [](auto& layer) {
        std::vector<const Param*> v;
        layer.collect(v);
        return v;
    };
    auto mine = [](auto& layer) {
        std::vector<Param*> v;
        layer.collect(v);
        return v;
    };
    copy_values(mine(in_conv), grab(unet.in_conv));
    for (std::size_t k = 0; k < block.size(); ++k) {
        copy_values(mine(block[k]), grab(unet.block[k]));
        copy_values(mine(down[k]), grab(unet.down[k]));
    }
    copy_values(mine(mid1), grab(unet.mid1));
    copy_values(mine(mid2), grab(unet.mid2));
    for (auto& z : zero_conv) z.init_zero();
    zero_conv_mid.init_zero();
}

ControlResiduals ControlBranch::forward(const LatentTensor& z, const LatentTensor& cond, std::span<const float> emb,
                                        ControlTrace* tr) const {
    if (z.height() != cond.height() || z.width() != cond.width()) {
        throw DimensionError("z_T grid " + to_string(z.shape()) + " and conditioning grid " + to_string(cond.shape()) +
                             " differ");
    }
    const int k_levels = int(block.size());
    ControlResiduals r;
    r.skips.resize(k_levels);
    if (tr) {
        tr->emb.assign(emb.begin(), emb.end());
        tr->z_in = z;
        tr->cond_in = cond;
        tr->block.resize(k_levels);
        tr->down.resize(k_levels);
        tr->zc_in.resize(k_levels);
    }
    Tensor h = in_conv.forward(z);
    kernels::add_inplace(h.values(), hint.forward(cond).values());
    for (int k = 0; k < k_levels; ++k) {
        kernels::add_inplace(h.values(), block[k].forward(h, emb, tr ? &tr->block[k] : nullptr).values());
        if (tr) tr->zc_in[k] = h;
        r.skips[k] = zero_conv[k].forward(h);
        h = down[k].forward(h, {}, tr ? &tr->down[k] : nullptr);
    }
    kernels::add_inplace(h.values(), mid1.forward(h, emb, tr ? &tr->mid1 : nullptr).values());
    kernels::add_inplace(h.values(), mid2.forward(h, {}, tr ? &tr->mid2 : nullptr).values());
    if (tr) tr->zc_mid_in = h;
    r.mid = zero_conv_mid.forward(h);
    return r;
}

void ControlBranch::backward(const ControlResiduals& grads, const ControlTrace& t, bool pg) {
    std::vector<float> no_emb_grad;
    Tensor g = zero_conv_mid.backward(t.zc_mid_in, grads.mid, true, pg);
    kernels::add_inplace(g.values(), mid2.backward(g, t.mid2, {}, {}, true, pg).values());
    kernels::add_inplace(g.values(), mid1.backward(g, t.mid1, t.emb, {}, true, pg).values());
    for (int k = int(block.size()) - 1; k >= 0; --k) {
        g = down[k].backward(g, t.down[k], {}, {}, true, pg);
        kernels::add_inplace(g.values(), zero_conv[k].backward(t.zc_in[k], grads.skips[k], true, pg).values());
        kernels::add_inplace(g.values(), block[k].backward(g, t.block[k], t.emb, {}, true, pg).values());
    }
    in_conv.backward(t.z_in, g, false, pg);
    hint.backward(t.cond_in, g, false, pg);
}

std::vector<Param*> ControlBranch::params() {
    std::vector<Param*> out;
    hint.collect(out);
    in_conv.collect(out);
    for (std::size_t k = 0; k < block.size(); ++k) {
        block[k].collect(out);
        down[k].collect(out);
        zero_conv[k].collect(out);
    }
    mid1.collect(out);
    mid2.collect(out);
    zero_conv_mid.collect(out);
    return out;
}

// ---------------------------------------------------------------- model

const char* partition_name(Partition p) {
    switch (p) {
    case Partition::theta_down: return "theta_down";
    case Partition::theta_mid: return "theta_mid";
    case Partition::theta_up: return "theta_up";
    case Partition::phi: return "phi";
    case Partition::codec: return "codec";
    case Partition::fusion: return "fusion";
    case Partition::c: return "c";
    }
    return "?";
}

Partition partition_from_name(const std::string& name) {
    for (Partition p : kAllPartitions)
        if (name == partition_name(p)) return p;
    throw ValidationError("unknown partition " + name);
}

Model::Model(const ModelConfig& cfg)
    : codec((cfg.validate(), cfg.codec)),
      unet(cfg.unet, cfg.codec.latent_channels),
      control(cfg.unet, cfg.codec.latent_channels),
      cond("c", {cfg.unet.cond_dim}),
      cfg_(cfg),
      schedule_(cfg.t_max, cfg.beta_start, cfg.beta_end) {
    cfg_.validate();
    Rng rng = make_stream(cfg.init_seed, "init");
    codec.init(rng);
    unet.init(rng);
    control.init(rng);
    control.copy_from(unet);
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (float& v : cond.value) v = d(rng);
}

std::vector<Param*> Model::partition(Partition p) {
    switch (p) {
    case Partition::theta_down: return unet.down_params();
    case Partition::theta_mid: return unet.mid_params();
    case Partition::theta_up: return unet.up_params();
    case Partition::phi: return control.params();
    case Partition::codec: return codec.trunk_params();
    case Partition::fusion: return codec.fusion_params();
    case Partition::c: return {&cond};
    }
    return {};
}

std::vector<const Param*> Model::partition(Partition p) const {
    std::vector<const Param*> out;
    for (Param* q : const_cast<Model*>(this)->partition(p)) out.push_back(q);
    return out;
}

std::uint64_t Model::partition_hash(Partition p) const {
    std::uint64_t h = fnv1a(nullptr, 0);
    for (const Param* q : partition(p)) {
        h = fnv1a(q->name.data(), q->name.size(), h);
        h = fnv1a(q->value.data(), q->value.size() * sizeof(float), h);
    }
    return h;
}

void Model::zero_grad() {
    for (Partition p : kAllPartitions)
        for (Param* q : partition(p)) q->zero_grad();
}

std::vector<float> Model::embedding(int t) const {
    std::vector<float> e = diffusion::timestep_embedding(t, cfg_.t_max, cfg_.unet.time_dim);
    e.insert(e.end(), cond.value.begin(), cond.value.end());
    return e;
}

Shape Model::latent_shape() const {
    const int s = cfg_.image_size / cfg_.codec.factor();
    return {cfg_.codec.latent_channels, s, s};
}

bool Model::has_stage(const std::string& s) const {
    for (const auto& x : stages_completed)
        if (x == s) return true;
    return false;
}

Encoding Model::encode(const ImageTensor& img) const {
    Encoding e = codec.encode(img);
    for (float& v : e.latent.values()) v *= latent_scale;
    return e;
}

LatentTensor Model::denoise_one_step(const LatentTensor& z_T, const LatentTensor& cond_latent, int t) const {
    schedule_.alpha_bar(t);
    const std::vector<float> emb = embedding(t);
    const ControlResiduals r = control.forward(z_T, cond_latent, emb);
    return unet.forward(z_T, emb, &r);
}

LatentTensor Model::denoise_unconditioned(const LatentTensor& z_T, int t) const {
    schedule_.alpha_bar(t);
    return unet.forward(z_T, embedding(t), nullptr);
}

namespace {
LatentTensor unscale(const LatentTensor& z, float scale) {
    LatentTensor out = z;
    for (float& v : out.values()) v /= scale;
    return out;
}
} // namespace

ImageTensor Model::decode(const LatentTensor& z) const { return codec.decode(unscale(z, latent_scale), nullptr); }

ImageTensor Model::decode_cross_latent(const LatentTensor& z, const SkipFeatureSet& skips) const {
    return codec.decode(unscale(z, latent_scale), &skips);
}

LatentTensor Model::inference_noise(Shape latent) const {
    Rng rng(cfg_.noise_seed);
    const LatentTensor eps = gaussian_tensor(latent, rng);
    return diffusion::add_noise(LatentTensor(latent), schedule_.t_max(), eps, schedule_);
}

InferResult Model::infer(const ImageTensor& mixed) const {
    const Encoding e = encode(mixed);
    const LatentTensor z = denoise_one_step(inference_noise(e.latent.shape()), e.latent, 0);
    InferResult r;
    r.image = decode_cross_latent(z, e.skips);
    r.untrained_warning = !has_stage("foundation");
    return r;
}

} // namespace dereflect::net
