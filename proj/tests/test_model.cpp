#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "benet/model.hpp"
#include "benet/rng.hpp"
#include "oracles.hpp"

using namespace benet;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.in_channels = 3;
    cfg.num_scales = 2;
    cfg.base_channels = 4;
    cfg.bottleneck_channels = 8;
    cfg.patch_size = 2;
    cfg.mlp_hidden = 8;
    cfg.seed = 5;
    return cfg;
}

Tensor random_batch(int n, const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    return oracles::random_tensor({n, cfg.in_channels, cfg.image_size, cfg.image_size}, rng, 0.0,
                                  1.0);
}

}  // namespace

TEST_CASE("config validation rejects broken geometry") {
    ModelConfig cfg = tiny_config();
    cfg.image_size = 20;  // 20/4 = 5, patch 2 does not divide 5
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.image_size = 18;  // 18 % 4 != 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.base_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(tiny_config().validate());
}

TEST_CASE("zero-weight model reconstructs the constant 0.5 image") {
    BENet model(tiny_config());
    model.set_all_parameters_zero();
    ag::NoGradGuard ng;
    auto fb = model.forward(random_batch(2, model.config(), 7));
    for (int64_t i = 0; i < fb.x_o->val.numel(); ++i)
        CHECK(fb.x_o->val[i] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("pyramid sides follow stride-2 arithmetic") {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.num_scales = 3;
    cfg.base_channels = 4;
    cfg.bottleneck_channels = 8;
    cfg.patch_size = 2;
    cfg.mlp_hidden = 8;
    BENet model(cfg);
    ag::NoGradGuard ng;
    auto fb = model.forward(random_batch(2, cfg, 8));
    REQUIRE(fb.pyramid.enc.size() == 3);
    const int64_t sides[3] = {16, 8, 4};
    for (int k = 0; k < 3; ++k) {
        CHECK(fb.pyramid.enc[k]->val.dim(2) == sides[k]);
        CHECK(fb.pyramid.dec[k]->val.dim(2) == sides[k]);
        CHECK(fb.pyramid.enc[k]->val.dim(1) == fb.pyramid.dec[k]->val.dim(1));
    }
    CHECK(fb.pyramid.z->val.dim(2) == 4);
    CHECK(fb.pyramid.z->val.dim(1) == cfg.bottleneck_channels);
}

TEST_CASE("forward is deterministic for fixed seed, config and input") {
    ModelConfig cfg = tiny_config();
    Tensor x = random_batch(2, cfg, 11);
    ag::NoGradGuard ng;
    BENet m1(cfg), m2(cfg);
    auto a = m1.forward(x);
    auto b = m2.forward(x);
    REQUIRE(a.p->val.numel() == b.p->val.numel());
    for (int64_t i = 0; i < a.x_o->val.numel(); ++i) CHECK(a.x_o->val[i] == b.x_o->val[i]);
    for (int64_t i = 0; i < a.p->val.numel(); ++i) CHECK(a.p->val[i] == b.p->val[i]);
    for (int64_t i = 0; i < a.v->val.numel(); ++i) CHECK(a.v->val[i] == b.v->val[i]);
}

TEST_CASE("compute_bias basics") {
    Tensor x({1, 1, 1, 2}, {1.0, 0.3});
    Tensor same = x;
    auto zero = BENet::compute_bias(ag::constant(x), ag::constant(same));
    CHECK(zero->val[0] == 0.0);
    CHECK(zero->val[1] == 0.0);

    Tensor xo({1, 1, 1, 2}, {0.25, 0.3});
    auto b = BENet::compute_bias(ag::constant(x), ag::constant(xo));
    CHECK(b->val[0] == doctest::Approx(0.75));

    // |a-b| = |b-a|
    Rng rng(3);
    Tensor u = oracles::random_tensor({2, 3, 4, 4}, rng);
    Tensor v = oracles::random_tensor({2, 3, 4, 4}, rng);
    auto ab = BENet::compute_bias(ag::constant(u), ag::constant(v));
    auto ba = BENet::compute_bias(ag::constant(v), ag::constant(u));
    for (int64_t i = 0; i < ab->val.numel(); ++i) CHECK(ab->val[i] == ba->val[i]);

    Tensor bad({1, 1, 2, 2});
    CHECK_THROWS_AS(BENet::compute_bias(ag::constant(x), ag::constant(bad)), InvalidInputError);
}

TEST_CASE("patch attention: hand softmax case beta = ln(3)/2") {
    // One 2x2 patch, alpha = 1 everywhere, Z = [[0,0],[0,ln 3]]:
    // weights are [1/6,1/6,1/6,1/2], so beta = (ln 3)/2 at every position.
    Tensor q = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor kv({1, 1, 2, 2}, {0.0, 0.0, 0.0, std::log(3.0)});
    auto out = ag::patch_attention(ag::constant(q), ag::constant(kv), 2);
    for (int64_t i = 0; i < 4; ++i)
        CHECK(out->val[i] == doctest::Approx(std::log(3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("patch attention: zero query averages the patch, constant patch is fixed point") {
    Rng rng(21);
    Tensor kv = oracles::random_tensor({1, 2, 4, 4}, rng);
    auto out = ag::patch_attention(ag::constant(Tensor::zeros({1, 2, 4, 4})), ag::constant(kv), 2);
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t py = 0; py < 4; py += 2)
            for (int64_t px = 0; px < 4; px += 2) {
                double mean = 0.0;
                for (int64_t dy = 0; dy < 2; ++dy)
                    for (int64_t dx = 0; dx < 2; ++dx) mean += kv.at4(0, c, py + dy, px + dx);
                mean /= 4.0;
                for (int64_t dy = 0; dy < 2; ++dy)
                    for (int64_t dx = 0; dx < 2; ++dx)
                        CHECK(out->val.at4(0, c, py + dy, px + dx) ==
                              doctest::Approx(mean).epsilon(1e-12));
            }

    Tensor q = oracles::random_tensor({1, 1, 4, 4}, rng, -3.0, 3.0);
    auto fixed = ag::patch_attention(ag::constant(q), ag::constant(Tensor::full({1, 1, 4, 4}, 0.7)),
                                     2);
    for (int64_t i = 0; i < fixed->val.numel(); ++i)
        CHECK(fixed->val[i] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("patch attention matches the scalar triple-loop oracle and stays in patch bounds") {
    Rng rng(22);
    for (int iter = 0; iter < 10; ++iter) {
        const int64_t s = 2 * (1 + rng.below(3));  // 2,4,6
        const int p = (s % 4 == 0 && rng.coin()) ? 4 : 2;
        Tensor q = oracles::random_tensor({2, 3, s, s}, rng, -3.0, 3.0);
        Tensor kv = oracles::random_tensor({2, 3, s, s}, rng, -3.0, 3.0);
        auto got = ag::patch_attention(ag::constant(q), ag::constant(kv), p);
        Tensor want = oracles::loop_patch_attention(q, kv, p);
        for (int64_t i = 0; i < got->val.numel(); ++i)
            CHECK(std::fabs(got->val[i] - want[i]) < 1e-12);
        // convex combination of patch values
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t py = 0; py < s; py += p)
                    for (int64_t px = 0; px < s; px += p) {
                        double lo = 1e300, hi = -1e300;
                        for (int64_t dy = 0; dy < p; ++dy)
                            for (int64_t dx = 0; dx < p; ++dx) {
                                lo = std::min(lo, kv.at4(n, c, py + dy, px + dx));
                                hi = std::max(hi, kv.at4(n, c, py + dy, px + dx));
                            }
                        for (int64_t dy = 0; dy < p; ++dy)
                            for (int64_t dx = 0; dx < p; ++dx) {
                                const double b = got->val.at4(n, c, py + dy, px + dx);
                                CHECK(b >= lo - 1e-12);
                                CHECK(b <= hi + 1e-12);
                            }
                    }
    }
}

TEST_CASE("patch attention rejects a patch that does not divide the side") {
    Tensor t = Tensor::zeros({1, 1, 6, 6});
    CHECK_THROWS_AS(ag::patch_attention(ag::constant(t), ag::constant(t), 4), ConfigError);
}

TEST_CASE("lsa_fuse with zero projections reduces to the bottleneck z") {
    ModelConfig cfg = tiny_config();
    BENet model(cfg);
    model.zero_lsa_projections();
    ag::NoGradGuard ng;
    auto rec = model.reconstruct(ag::constant(random_batch(2, cfg, 13)));
    auto s = model.lsa_fuse(rec.pyramid);
    for (int64_t i = 0; i < s->val.numel(); ++i)
        CHECK(s->val[i] == doctest::Approx(rec.pyramid.z->val[i]).epsilon(1e-15));
}

TEST_CASE("lsa_fuse output shape across randomized configs") {
    Rng rng(31);
    for (int iter = 0; iter < 6; ++iter) {
        ModelConfig cfg;
        cfg.num_scales = 1 + static_cast<int>(rng.below(3));
        cfg.image_size = 8 << rng.below(2);  // 8 or 16
        if (cfg.image_size >> cfg.num_scales < 2) cfg.num_scales = 2;
        cfg.base_channels = 2 + static_cast<int>(rng.below(3));
        cfg.bottleneck_channels = 4 + static_cast<int>(rng.below(5));
        cfg.patch_size = (cfg.image_size >> cfg.num_scales) % 2 == 0 ? 2 : 1;
        cfg.mlp_hidden = 4;
        cfg.seed = 100 + iter;
        cfg.validate();
        BENet model(cfg);
        ag::NoGradGuard ng;
        auto rec = model.reconstruct(ag::constant(random_batch(1, cfg, 50 + iter)));
        auto s = model.lsa_fuse(rec.pyramid);
        const int64_t side = cfg.image_size >> cfg.num_scales;
        CHECK(s->val.shape() == std::vector<int64_t>{1, cfg.bottleneck_channels, side, side});
    }
}

TEST_CASE("apply_attention closed forms") {
    Rng rng(41);
    Tensor xhat_t = oracles::random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    auto xhat = ag::constant(xhat_t);

    // zero bias annihilates
    auto zero = BENet::apply_attention(ag::constant(oracles::random_tensor({2, 4, 2, 2}, rng)),
                                       ag::constant(Tensor::zeros({2, 3, 8, 8})));
    for (int64_t i = 0; i < zero.v->val.numel(); ++i) CHECK(zero.v->val[i] == 0.0);

    // constant s -> uniform mask sigmoid(c)
    const double c = 0.8;
    auto att = BENet::apply_attention(ag::constant(Tensor::full({2, 4, 2, 2}, c)), xhat);
    const double mask = 1.0 / (1.0 + std::exp(-c));
    for (int64_t i = 0; i < att.v->val.numel(); ++i)
        CHECK(att.v->val[i] == doctest::Approx(mask * xhat_t[i]).epsilon(1e-12));

    // v == mask .* xhat elementwise, mask in (0,1)
    auto s = ag::constant(oracles::random_tensor({2, 4, 2, 2}, rng, -2.0, 2.0));
    auto a2 = BENet::apply_attention(s, xhat);
    const int64_t hw = 64;
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t i = 0; i < hw; ++i) {
                const double m = a2.mask->val[n * hw + i];
                CHECK(m > 0.0);
                CHECK(m < 1.0);
                CHECK(a2.v->val[(n * 3 + ch) * hw + i] ==
                      doctest::Approx(m * xhat_t[(n * 3 + ch) * hw + i]).epsilon(1e-12));
            }

    // an all-ones mask is the multiplicative identity
    auto ones = ag::broadcast_mul(ag::constant(Tensor::full({2, 1, 8, 8}, 1.0)), xhat);
    for (int64_t i = 0; i < ones->val.numel(); ++i) CHECK(ones->val[i] == xhat_t[i]);
}

TEST_CASE("classifier head: zero weights give 0.5, output strictly in (0,1)") {
    ModelConfig cfg = tiny_config();
    BENet model(cfg);
    ag::NoGradGuard ng;
    Tensor batch = random_batch(3, cfg, 17);
    {
        BENet zeroed(cfg);
        zeroed.set_all_parameters_zero();
        auto p = zeroed.classify(ag::constant(batch));
        for (int64_t i = 0; i < p->val.numel(); ++i) CHECK(p->val[i] == 0.5);
    }
    auto p = model.classify(ag::constant(batch));
    for (int64_t i = 0; i < p->val.numel(); ++i) {
        CHECK(p->val[i] > 0.0);
        CHECK(p->val[i] < 1.0);
    }
    auto p2 = model.classify(ag::constant(batch));
    for (int64_t i = 0; i < p->val.numel(); ++i) CHECK(p->val[i] == p2->val[i]);
}

TEST_CASE("forward bundle invariants hold on random input") {
    ModelConfig cfg = tiny_config();
    BENet model(cfg);
    ag::NoGradGuard ng;
    Tensor x = random_batch(4, cfg, 19);
    auto fb = model.forward(x);
    for (int64_t i = 0; i < fb.xhat->val.numel(); ++i) {
        CHECK(fb.xhat->val[i] >= 0.0);
        CHECK(fb.xhat->val[i] ==
              doctest::Approx(std::fabs(x[i] - fb.x_o->val[i])).epsilon(1e-15));
    }
    const int64_t hw = cfg.image_size * cfg.image_size;
    for (int64_t n = 0; n < 4; ++n)
        for (int64_t ch = 0; ch < cfg.in_channels; ++ch)
            for (int64_t i = 0; i < hw; ++i)
                CHECK(fb.v->val[(n * cfg.in_channels + ch) * hw + i] ==
                      doctest::Approx(fb.mask->val[n * hw + i] *
                                      fb.xhat->val[(n * cfg.in_channels + ch) * hw + i])
                          .epsilon(1e-15));
}

TEST_CASE("single-sample forward equals the matching row of a batched forward") {
    ModelConfig cfg = tiny_config();
    BENet model(cfg);
    ag::NoGradGuard ng;
    Tensor batch = random_batch(4, cfg, 23);
    auto full = model.forward(batch);
    const int64_t per = batch.numel() / 4;
    for (int64_t row = 0; row < 4; ++row) {
        Tensor one({1, cfg.in_channels, cfg.image_size, cfg.image_size});
        std::copy(batch.data().begin() + row * per, batch.data().begin() + (row + 1) * per,
                  one.data().begin());
        auto fb = model.forward(one);
        CHECK(fb.p->val[0] == full.p->val[row]);
        for (int64_t i = 0; i < per; ++i)
            CHECK(fb.xhat->val[i] == full.xhat->val[row * per + i]);
    }
}

TEST_CASE("forward rejects wrong shapes and non-finite parameters") {
    ModelConfig cfg = tiny_config();
    BENet model(cfg);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({2, 3, 8, 8})), InvalidInputError);
    model.parameters()[0]->val[0] = std::nan("");
    CHECK_THROWS_AS(model.forward(random_batch(1, cfg, 29)), NumericalError);
}

TEST_CASE("shape chain holds over randomized configs") {
    Rng rng(61);
    for (int iter = 0; iter < 8; ++iter) {
        ModelConfig cfg;
        cfg.num_scales = 1 + static_cast<int>(rng.below(3));
        cfg.image_size = (1 << cfg.num_scales) * (2 + static_cast<int>(rng.below(3)) * 2);
        cfg.in_channels = 1 + static_cast<int>(rng.below(3));
        cfg.base_channels = 2 + static_cast<int>(rng.below(4));
        cfg.bottleneck_channels = 3 + static_cast<int>(rng.below(6));
        const int side = cfg.image_size >> cfg.num_scales;
        cfg.patch_size = side % 2 == 0 ? 2 : 1;
        cfg.mlp_hidden = 4;
        cfg.seed = iter;
        cfg.validate();
        BENet model(cfg);
        ag::NoGradGuard ng;
        const int n = 1 + static_cast<int>(rng.below(3));
        auto fb = model.forward(random_batch(n, cfg, 70 + iter));
        CHECK(fb.x_o->val.shape() ==
              std::vector<int64_t>{n, cfg.in_channels, cfg.image_size, cfg.image_size});
        CHECK(fb.s->val.shape() ==
              std::vector<int64_t>{n, cfg.bottleneck_channels, side, side});
        CHECK(fb.mask->val.shape() ==
              std::vector<int64_t>{n, 1, cfg.image_size, cfg.image_size});
        CHECK(fb.p->val.shape() == std::vector<int64_t>{n});
        for (int k = 0; k < cfg.num_scales; ++k) {
            CHECK(fb.pyramid.enc[k]->val.dim(2) == cfg.image_size >> (k + 1));
            CHECK(fb.pyramid.dec[k]->val.dim(2) == cfg.image_size >> (k + 1));
        }
    }
}
