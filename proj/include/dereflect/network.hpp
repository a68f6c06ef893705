#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dereflect/diffusion.hpp"
#include "dereflect/layers.hpp"

namespace dereflect::net {

struct CodecConfig {
    // Channels per encoder resolution, full resolution first. The codec
    // factor is 2^(channels.size() - 1).
    std::vector<int> channels{16, 32, 32};
    int latent_channels = 4;

    int factor() const { return 1 << (int(channels.size()) - 1); }
    int levels() const { return int(channels.size()); }
};

struct UNetConfig {
    std::vector<int> widths{32, 64, 128};
    int time_dim = 32;
    int cond_dim = 32;

    int emb_dim() const { return time_dim + cond_dim; }
};

struct ModelConfig {
    int image_size = 64;
    CodecConfig codec;
    UNetConfig unet;
    int t_max = 64;
    double beta_start = -1.0;
    double beta_end = -1.0;
    std::uint64_t init_seed = 0;
    // Seed of the fixed z_T used at inference; stored with checkpoints.
    std::uint64_t noise_seed = 1234;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Multi-scale encoder features, one per decoder resolution (full
// resolution first).
struct SkipFeatureSet {
    std::vector<Tensor> features;
};

struct Encoding {
    LatentTensor latent;
    SkipFeatureSet skips;
};

struct EncoderTrace {
    ConvActTrace in;
    std::vector<ConvActTrace> down, res;
    ConvActTrace out;
};

struct DecoderTrace {
    ConvActTrace in;
    std::vector<ConvActTrace> up;  // index = level
    std::vector<ConvActTrace> res; // index = level
    std::vector<Shape> up_in_shape;
    ConvActTrace out;
};

// Image autoencoder. The decoder trunk optionally receives encoder skip
// features through zero-initialised fusion convolutions (the cross-latent
// path); the fusion layers are a separate parameter partition.
class Codec {
public:
    Codec() = default;
    explicit Codec(const CodecConfig& cfg);
    void init(Rng& rng);

    const CodecConfig& config() const { return cfg_; }

    Encoding encode(const ImageTensor& img, EncoderTrace* trace = nullptr) const;
    void encode_backward(const Tensor& grad_latent, const EncoderTrace& trace, bool param_grads);

    // skips == nullptr gives the plain decoder.
    ImageTensor decode(const LatentTensor& z, const SkipFeatureSet* skips, DecoderTrace* trace = nullptr) const;
    // Returns the latent gradient when need_latent_grad.
    Tensor decode_backward(const Tensor& grad_img, const DecoderTrace& trace, const SkipFeatureSet* skips,
                           bool trunk_grads, bool fusion_grads, bool need_latent_grad);

    std::vector<Param*> trunk_params();
    std::vector<Param*> fusion_params();
    std::vector<const Param*> trunk_params() const;
    std::vector<const Param*> fusion_params() const;

    ConvAct enc_in;
    std::vector<ConvAct> enc_down, enc_res;
    ConvAct enc_out;
    ConvAct dec_in;
    std::vector<ConvAct> dec_up;  // index = level 0..L-1, maps level+1 -> level
    std::vector<ConvAct> dec_res; // index = level 0..L
    ConvAct dec_out;
    std::vector<Conv2d> fusion;   // index = level 0..L

private:
    CodecConfig cfg_;
};

// Residuals produced by the conditioning branch: one per U-Net skip plus
// one for the bottleneck.
struct ControlResiduals {
    std::vector<Tensor> skips;
    Tensor mid;
};

struct UNetTrace {
    std::vector<float> emb;
    Tensor in_conv_in;
    std::vector<ConvActTrace> block, down;
    ConvActTrace mid1, mid2;
    std::vector<Tensor> skips; // skip features after residual injection
    std::vector<ConvActTrace> upconv, merge;
    std::vector<Shape> up_in_shape;
    Tensor out_in;
};

struct UNetGrads {
    ControlResiduals residuals; // d(loss)/d(residual)
    std::vector<float> emb;
};

class UNet {
public:
    UNet() = default;
    UNet(const UNetConfig& cfg, int latent_channels);
    void init(Rng& rng);

    LatentTensor forward(const LatentTensor& z, std::span<const float> emb, const ControlResiduals* control,
                         UNetTrace* trace = nullptr) const;
    // Accumulates gradients into the selected partitions and returns the
    // gradients with respect to the injected residuals and the embedding.
    UNetGrads backward(const Tensor& grad_out, const UNetTrace& trace, bool down_grads, bool mid_grads,
                       bool up_grads);

    std::vector<Param*> down_params();
    std::vector<Param*> mid_params();
    std::vector<Param*> up_params();

    Conv2d in_conv;
    std::vector<ConvAct> block, down;
    ConvAct mid1, mid2;
    std::vector<ConvAct> upconv, merge; // index = level k
    Conv2d out_conv;

private:
    UNetConfig cfg_;
    int latent_channels_ = 0;
};

struct ControlTrace {
    std::vector<float> emb;
    Tensor z_in, cond_in;
    std::vector<ConvActTrace> block, down;
    ConvActTrace mid1, mid2;
    std::vector<Tensor> zc_in;
    Tensor zc_mid_in;
};

// Trainable copy of the U-Net encoder half fed with the conditioning
// latent; outputs pass through zero-initialised 1x1 convolutions.
class ControlBranch {
public:
    ControlBranch() = default;
    ControlBranch(const UNetConfig& cfg, int latent_channels);
    void init(Rng& rng);
    // Copies the encoder-half weights from the U-Net and zeroes the output
    // convolutions.
    void copy_from(const UNet& unet);

    ControlResiduals forward(const LatentTensor& z, const LatentTensor& cond, std::span<const float> emb,
                             ControlTrace* trace = nullptr) const;
    void backward(const ControlResiduals& grads, const ControlTrace& trace, bool param_grads);

    std::vector<Param*> params();

    Conv2d hint;
    Conv2d in_conv;
    std::vector<ConvAct> block, down;
    ConvAct mid1, mid2;
    std::vector<Conv2d> zero_conv;
    Conv2d zero_conv_mid;

private:
    UNetConfig cfg_;
};

enum class Partition { theta_down, theta_mid, theta_up, phi, codec, fusion, c };

const char* partition_name(Partition p);
Partition partition_from_name(const std::string& name);
inline constexpr Partition kAllPartitions[] = {Partition::theta_down, Partition::theta_mid, Partition::theta_up,
                                               Partition::phi,        Partition::codec,     Partition::fusion,
                                               Partition::c};

struct InferResult {
    ImageTensor image;
    // Set when the conditioning path has never been trained.
    bool untrained_warning = false;
};

// Full model: codec (E, D), U-Net denoiser, conditioning branch, fusion
// layers and the learned condition vector.
class Model {
public:
    explicit Model(const ModelConfig& cfg = {});

    const ModelConfig& config() const { return cfg_; }
    const diffusion::NoiseSchedule& schedule() const { return schedule_; }

    std::vector<Param*> partition(Partition p);
    std::vector<const Param*> partition(Partition p) const;
    std::uint64_t partition_hash(Partition p) const;
    void zero_grad();

    // Embedding fed to every block: [sinusoid(t), c].
    std::vector<float> embedding(int t) const;

    Shape latent_shape() const;

    // Scaled latent of an image plus its skip features.
    Encoding encode(const ImageTensor& img) const;
    LatentTensor denoise_one_step(const LatentTensor& z_T, const LatentTensor& cond_latent, int t) const;
    LatentTensor denoise_unconditioned(const LatentTensor& z_T, int t) const;
    ImageTensor decode(const LatentTensor& z) const;
    ImageTensor decode_cross_latent(const LatentTensor& z, const SkipFeatureSet& skips) const;

    // The fixed noised input used at inference for a latent grid.
    LatentTensor inference_noise(Shape latent) const;
    InferResult infer(const ImageTensor& mixed) const;

    float latent_scale = 1.0f;
    std::vector<std::string> stages_completed;
    bool has_stage(const std::string& s) const;

    Codec codec;
    UNet unet;
    ControlBranch control;
    Param cond;

private:
    ModelConfig cfg_;
    diffusion::NoiseSchedule schedule_;
};

} // namespace dereflect::net
