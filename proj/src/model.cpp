#include "benet/model.hpp"

#include <cmath>

#include "benet/rng.hpp"

namespace benet {

namespace {

// Stride-2 stages use a 4x4 kernel with padding 1: conv halves the side
// exactly and the mirrored transposed conv doubles it, no output padding.
constexpr int kKernel = 4;
constexpr int kStride = 2;
constexpr int kPad = 1;

Tensor he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = std * rng.normal();
    return t;
}

// Biases get a small random offset rather than zeros: with zero biases,
// positions where every input unit is dead sit exactly on the ReLU kink,
// which breaks derivative checks against central differences.
Tensor bias_init(int64_t n, Rng& rng) {
    Tensor t({n});
    for (int64_t i = 0; i < n; ++i) t[i] = 0.01 * rng.normal();
    return t;
}

}  // namespace

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
    };
    positive(image_size, "image_size");
    positive(in_channels, "in_channels");
    positive(num_scales, "num_scales");
    positive(base_channels, "base_channels");
    positive(bottleneck_channels, "bottleneck_channels");
    positive(patch_size, "patch_size");
    positive(mlp_hidden, "mlp_hidden");
    if (image_size % (1 << num_scales) != 0)
        throw ConfigError("model config: image_size " + std::to_string(image_size) +
                          " not divisible by 2^num_scales");
    if (bottleneck_side() % patch_size != 0)
        throw ConfigError("model config: patch_size " + std::to_string(patch_size) +
                          " does not divide bottleneck side " + std::to_string(bottleneck_side()));
}

ag::Var BENet::reg(Tensor t) {
    auto v = ag::leaf(std::move(t), true);
    params_.push_back(v);
    return v;
}

BENet::BENet(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed({cfg_.seed, 0xBE7E1ULL}));
    const int n = cfg_.num_scales;
    const int cz = cfg_.bottleneck_channels;

    int in_ch = cfg_.in_channels;
    for (int k = 0; k < n; ++k) {
        const int out_ch = cfg_.stage_channels(k);
        enc_w_.push_back(reg(he_normal({out_ch, in_ch, kKernel, kKernel},
                                       static_cast<int64_t>(in_ch) * kKernel * kKernel, rng)));
        enc_b_.push_back(reg(bias_init(out_ch, rng)));
        in_ch = out_ch;
    }
    const int top_ch = cfg_.stage_channels(n - 1);
    enc_proj_w_ = reg(he_normal({cz, top_ch, 1, 1}, top_ch, rng));
    enc_proj_b_ = reg(bias_init(cz, rng));
    dec_proj_w_ = reg(he_normal({top_ch, cz, 1, 1}, cz, rng));
    dec_proj_b_ = reg(bias_init(top_ch, rng));
    for (int k = n - 1; k >= 0; --k) {
        const int cur = cfg_.stage_channels(k);
        const int out = (k == 0) ? cfg_.in_channels : cfg_.stage_channels(k - 1);
        dec_w_.push_back(reg(he_normal({cur, out, kKernel, kKernel},
                                       static_cast<int64_t>(cur) * kKernel * kKernel, rng)));
        dec_b_.push_back(reg(bias_init(out, rng)));
    }
    for (int k = 0; k < n; ++k) {
        const int ch = cfg_.stage_channels(k);
        lsa_q_w_.push_back(reg(he_normal({cz, ch, 1, 1}, ch, rng)));
        lsa_q_b_.push_back(reg(bias_init(cz, rng)));
        lsa_kv_w_.push_back(reg(he_normal({cz, ch, 1, 1}, ch, rng)));
        lsa_kv_b_.push_back(reg(bias_init(cz, rng)));
    }
    const int64_t flat = static_cast<int64_t>(cfg_.in_channels) * cfg_.image_size * cfg_.image_size;
    mlp1_w_ = reg(he_normal({cfg_.mlp_hidden, flat}, flat, rng));
    mlp1_b_ = reg(bias_init(cfg_.mlp_hidden, rng));
    mlp2_w_ = reg(he_normal({1, cfg_.mlp_hidden}, cfg_.mlp_hidden, rng));
    mlp2_b_ = reg(bias_init(1, rng));
}

void BENet::check_input(const Tensor& batch) const {
    if (batch.ndim() != 4 || batch.dim(1) != cfg_.in_channels ||
        batch.dim(2) != cfg_.image_size || batch.dim(3) != cfg_.image_size)
        throw InvalidInputError("input batch " + batch.shape_str() + " does not match model (" +
                                std::to_string(cfg_.in_channels) + "," +
                                std::to_string(cfg_.image_size) + "," +
                                std::to_string(cfg_.image_size) + ")");
    for (const auto& p : params_)
        if (!p->val.all_finite()) throw NumericalError("model parameters are non-finite");
}

BENet::Recon BENet::reconstruct(const ag::Var& x) const {
    const int n = cfg_.num_scales;
    LatentPyramid pyr;
    ag::Var h = ag::add_scalar(x, -0.5);  // center unit-range input
    for (int k = 0; k < n; ++k) {
        h = ag::relu(ag::conv2d(h, enc_w_[static_cast<size_t>(k)],
                                enc_b_[static_cast<size_t>(k)], kStride, kPad));
        pyr.enc.push_back(h);
    }
    pyr.z = ag::conv2d(h, enc_proj_w_, enc_proj_b_, 1, 0);
    ag::Var d = ag::relu(ag::conv2d(pyr.z, dec_proj_w_, dec_proj_b_, 1, 0));
    pyr.dec.assign(static_cast<size_t>(n), nullptr);
    pyr.dec[static_cast<size_t>(n - 1)] = d;
    for (int k = n - 1; k >= 1; --k) {
        d = ag::relu(ag::conv_transpose2d(d, dec_w_[static_cast<size_t>(n - 1 - k)],
                                          dec_b_[static_cast<size_t>(n - 1 - k)], kStride, kPad));
        pyr.dec[static_cast<size_t>(k - 1)] = d;
    }
    ag::Var x_o = ag::sigmoid(ag::conv_transpose2d(d, dec_w_[static_cast<size_t>(n - 1)],
                                                   dec_b_[static_cast<size_t>(n - 1)], kStride,
                                                   kPad));
    return {x_o, std::move(pyr)};
}

ag::Var BENet::compute_bias(const ag::Var& x, const ag::Var& x_o) {
    if (!x->val.same_shape(x_o->val))
        throw InvalidInputError("compute_bias: shape mismatch " + x->val.shape_str() + " vs " +
                                x_o->val.shape_str());
    return ag::abs(ag::sub(x, x_o));
}

ag::Var BENet::lsa_fuse(const LatentPyramid& pyr) const {
    const int n = cfg_.num_scales;
    if (static_cast<int>(pyr.enc.size()) != n || static_cast<int>(pyr.dec.size()) != n)
        throw InvariantError("lsa_fuse: pyramid length mismatch");
    const int64_t side = cfg_.bottleneck_side();
    ag::Var s = pyr.z;
    for (int k = 0; k < n; ++k) {
        auto q = ag::conv2d(ag::avg_pool_to(pyr.enc[static_cast<size_t>(k)], side),
                            lsa_q_w_[static_cast<size_t>(k)], lsa_q_b_[static_cast<size_t>(k)], 1,
                            0);
        auto kv = ag::conv2d(ag::avg_pool_to(pyr.dec[static_cast<size_t>(k)], side),
                             lsa_kv_w_[static_cast<size_t>(k)], lsa_kv_b_[static_cast<size_t>(k)],
                             1, 0);
        s = ag::add(s, ag::patch_attention(q, kv, cfg_.patch_size));
    }
    return s;
}

BENet::Attention BENet::apply_attention(const ag::Var& s, const ag::Var& xhat) {
    const int64_t H = xhat->val.dim(2), W = xhat->val.dim(3);
    auto mask = ag::sigmoid(ag::upsample_bilinear(ag::channel_mean(s), H, W));
    return {mask, ag::broadcast_mul(mask, xhat)};
}

ag::Var BENet::classify(const ag::Var& v) const {
    auto h = ag::relu(ag::linear(ag::flatten2(v), mlp1_w_, mlp1_b_));
    auto logit = ag::linear(h, mlp2_w_, mlp2_b_);
    auto p = ag::sigmoid(ag::reshape(logit, {logit->val.dim(0)}));
    if (!p->val.all_finite()) throw NumericalError("classifier produced non-finite output");
    return p;
}

ForwardBundle BENet::forward(const ag::Var& x) const {
    ForwardBundle fb;
    fb.x = x;
    auto rec = reconstruct(x);
    fb.x_o = rec.x_o;
    fb.pyramid = std::move(rec.pyramid);
    fb.xhat = compute_bias(x, fb.x_o);
    fb.s = lsa_fuse(fb.pyramid);
    auto att = apply_attention(fb.s, fb.xhat);
    fb.mask = att.mask;
    fb.v = att.v;
    fb.p = classify(fb.v);
    return fb;
}

ForwardBundle BENet::forward(const Tensor& batch) const {
    check_input(batch);
    return forward(ag::constant(batch));
}

int64_t BENet::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->val.numel();
    return n;
}

void BENet::set_all_parameters_zero() {
    for (auto& p : params_)
        std::fill(p->val.data().begin(), p->val.data().end(), 0.0);
}

void BENet::zero_lsa_projections() {
    for (auto v : {&lsa_q_w_, &lsa_q_b_, &lsa_kv_w_, &lsa_kv_b_})
        for (auto& p : *v) std::fill(p->val.data().begin(), p->val.data().end(), 0.0);
}

void BENet::clear_grads() {
    for (auto& p : params_) p->grad = Tensor();
}

std::vector<Tensor> BENet::export_parameters() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->val);
    return out;
}

void BENet::import_parameters(const std::vector<Tensor>& values) {
    if (values.size() != params_.size())
        throw CheckpointError("parameter count mismatch: checkpoint has " +
                              std::to_string(values.size()) + ", model expects " +
                              std::to_string(params_.size()));
    for (size_t i = 0; i < values.size(); ++i) {
        if (!values[i].same_shape(params_[i]->val))
            throw CheckpointError("parameter shape mismatch at index " + std::to_string(i));
        params_[i]->val = values[i];
    }
}

Tensor stack_batch(const std::vector<Tensor>& images) {
    if (images.empty()) throw InvalidInputError("stack_batch: empty batch");
    const auto& s = images.front().shape();
    Tensor out({static_cast<int64_t>(images.size()), s[0], s[1], s[2]});
    const int64_t per = images.front().numel();
    for (size_t i = 0; i < images.size(); ++i) {
        if (!images[i].same_shape(images.front()))
            throw InvalidInputError("stack_batch: inconsistent image shapes");
        std::copy(images[i].data().begin(), images[i].data().end(),
                  out.data().begin() + static_cast<int64_t>(i) * per);
    }
    return out;
}

}  // namespace benet
