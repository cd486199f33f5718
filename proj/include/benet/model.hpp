#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "benet/autograd.hpp"
#include "benet/tensor.hpp"

namespace benet {

struct ModelConfig {
    int image_size = 32;
    int in_channels = 3;
    int num_scales = 3;       // encoder/decoder stages
    int base_channels = 8;    // channels double per stage
    int bottleneck_channels = 32;
    int patch_size = 2;       // P, in pooled latent space
    int mlp_hidden = 32;
    uint64_t seed = 1;

    int bottleneck_side() const { return image_size >> num_scales; }
    int stage_channels(int k) const { return base_channels << k; }
    void validate() const;  // throws ConfigError
};

// Multi-scale latent taps. enc[k] and dec[k] share the spatial side
// image_size / 2^(k+1); z is the bottleneck map (C_z, side = image/2^n).
struct LatentPyramid {
    std::vector<ag::Var> enc;
    ag::Var z;
    std::vector<ag::Var> dec;
};

// Every intermediate of one forward pass, kept alive for loss wiring and tests.
struct ForwardBundle {
    ag::Var x;           // input (N,C,H,W)
    ag::Var x_o;         // reconstruction, sigmoid-squashed
    ag::Var xhat;        // bias |x - x_o|
    LatentPyramid pyramid;
    ag::Var s;           // fused attention map (N,C_z,S,S)
    ag::Var mask;        // sigmoid spatial mask (N,1,H,W)
    ag::Var v;           // mask .* xhat (N,C,H,W)
    ag::Var p;           // classifier probability (N)
};

// Auto-encoder with latent-space attention and an MLP head.
// All member ops build autograd graphs; wrap calls in ag::NoGradGuard for
// inference. Parameter layout is fixed by construction order, which the
// checkpoint format relies on.
class BENet {
public:
    explicit BENet(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    struct Recon {
        ag::Var x_o;
        LatentPyramid pyramid;
    };
    Recon reconstruct(const ag::Var& x) const;

    static ag::Var compute_bias(const ag::Var& x, const ag::Var& x_o);

    // s = sum_k LSA[pool(z_k), pool(z'_k)] + z, with learned 1x1 projections
    // taking each scale to bottleneck_channels.
    ag::Var lsa_fuse(const LatentPyramid& pyr) const;

    struct Attention {
        ag::Var mask;
        ag::Var v;
    };
    // Channel-mean of s, bilinear upsample to image size, sigmoid, then
    // broadcast-multiply with the bias image.
    static Attention apply_attention(const ag::Var& s, const ag::Var& xhat);

    ag::Var classify(const ag::Var& v) const;

    ForwardBundle forward(const ag::Var& x) const;
    ForwardBundle forward(const Tensor& batch) const;

    std::vector<ag::Var>& parameters() { return params_; }
    const std::vector<ag::Var>& parameters() const { return params_; }
    int64_t parameter_count() const;

    void set_all_parameters_zero();  // test hook
    void zero_lsa_projections();     // test hook: forces every s_k to 0
    void clear_grads();

    // Raw parameter values in layout order (checkpointing).
    std::vector<Tensor> export_parameters() const;
    void import_parameters(const std::vector<Tensor>& values);

    // Throws InvalidInputError/NumericalError per the forward contract.
    void check_input(const Tensor& batch) const;

private:
    ModelConfig cfg_;
    std::vector<ag::Var> params_;

    // encoder stages, 1x1 bottleneck projections, decoder stages
    std::vector<ag::Var> enc_w_, enc_b_;
    ag::Var enc_proj_w_, enc_proj_b_;
    ag::Var dec_proj_w_, dec_proj_b_;
    std::vector<ag::Var> dec_w_, dec_b_;
    // per-scale LSA projections (query from enc, key/value from dec)
    std::vector<ag::Var> lsa_q_w_, lsa_q_b_, lsa_kv_w_, lsa_kv_b_;
    ag::Var mlp1_w_, mlp1_b_, mlp2_w_, mlp2_b_;

    ag::Var reg(Tensor t);
};

// Builds an (N,C,H,W) batch tensor from per-sample (C,H,W) images.
Tensor stack_batch(const std::vector<Tensor>& images);

}  // namespace benet
