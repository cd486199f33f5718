#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "benet/config.hpp"
#include "benet/training.hpp"
#include "oracles.hpp"

using namespace benet;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.num_scales = 2;
    cfg.base_channels = 4;
    cfg.bottleneck_channels = 8;
    cfg.patch_size = 2;
    cfg.mlp_hidden = 8;
    return cfg;
}

synth::Dataset tiny_data(int n_train = 24, int n_val = 8, int n_test = 8) {
    synth::SyntheticSpec spec;
    spec.image_size = 16;
    spec.n_train = n_train;
    spec.n_val = n_val;
    spec.n_test = n_test;
    spec.families = {synth::Family::splice, synth::Family::warp};
    spec.seed = 33;
    return synth::generate_dataset(spec);
}

TrainConfig quick_train(int epochs, uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg.train_family = "splice";
    return cfg;
}

bool same_params(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].shape() != b[i].shape()) return false;
        for (int64_t j = 0; j < a[i].numel(); ++j)
            if (a[i][j] != b[i][j]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("arm table switches exactly the documented components") {
    auto full = arm_spec(Arm::full);
    CHECK(full.use_ae);
    CHECK(full.use_bias);
    CHECK(full.use_lsa);
    CHECK(full.use_detector);
    CHECK(full.losses.l1);
    CHECK(full.losses.l2);
    CHECK(full.losses.l3);
    CHECK(full.losses.lc);

    auto no_ae = arm_spec(Arm::no_ae);
    CHECK_FALSE(no_ae.use_ae);
    CHECK_FALSE(no_ae.use_detector);
    CHECK_FALSE(no_ae.losses.l1);
    CHECK(no_ae.losses.lc);

    auto rl = arm_spec(Arm::ae_lsa_rl);
    CHECK(rl.losses.l1);
    CHECK_FALSE(rl.losses.l2);
    CHECK_FALSE(rl.losses.l3);

    auto cd = arm_spec(Arm::ae_lsa_cd);
    CHECK(cd.use_detector);
    CHECK_FALSE(cd.losses.l1);

    CHECK(all_arms().size() == 8);
    for (Arm a : all_arms()) CHECK(arm_from_name(arm_name(a)) == a);
    CHECK_THROWS_AS(arm_from_name("bogus"), ConfigError);
}

TEST_CASE("forward_arm routes the classifier input per arm") {
    ModelConfig mc = tiny_model();
    mc.seed = 9;
    BENet model(mc);
    ag::NoGradGuard ng;
    Rng rng(10);
    Tensor x = oracles::random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
    auto cx = ag::constant(x);

    auto raw = forward_arm(model, cx, arm_spec(Arm::no_ae));
    CHECK(raw.v == cx);
    CHECK(raw.xhat == nullptr);
    CHECK(raw.x_o == nullptr);

    auto recon = forward_arm(model, cx, arm_spec(Arm::ae_no_bias));
    CHECK(recon.v == recon.x_o);
    CHECK(recon.xhat == nullptr);

    auto bias = forward_arm(model, cx, arm_spec(Arm::ae));
    CHECK(bias.v == bias.xhat);

    auto lsa = forward_arm(model, cx, arm_spec(Arm::ae_lsa));
    CHECK(lsa.v != lsa.xhat);
    CHECK(lsa.v->val.shape() == x.shape());

    // all arms share the classifier geometry
    for (Arm a : all_arms()) {
        auto fwd = forward_arm(model, cx, arm_spec(a));
        CHECK(fwd.p->val.shape() == std::vector<int64_t>{2});
    }
}

TEST_CASE("zero epochs returns the initialization") {
    auto data = tiny_data();
    auto ckpt = train(tiny_model(), LossConfig{}, quick_train(0), data);
    BENet reference(ckpt.model_config);
    CHECK(same_params(ckpt.params, reference.export_parameters()));
    CHECK(ckpt.best_epoch == -1);
    CHECK(ckpt.detector.calibrated());  // full arm calibrates even at init
}

TEST_CASE("a gradient step with lr = 0 leaves parameters unchanged") {
    auto data = tiny_data();
    TrainConfig cfg = quick_train(1);
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    auto ckpt = train(tiny_model(), LossConfig{}, cfg, data);
    BENet reference(ckpt.model_config);
    CHECK(same_params(ckpt.params, reference.export_parameters()));
}

TEST_CASE("weight decay alone strictly shrinks the parameter norm") {
    ModelConfig mc = tiny_model();
    mc.seed = 4;
    BENet model(mc);
    double before = 0.0;
    for (const auto& p : model.parameters())
        for (int64_t i = 0; i < p->val.numel(); ++i) before += p->val[i] * p->val[i];

    // zero loss gradients, positive lr: only the decay term acts
    for (auto& p : model.parameters()) p->grad = Tensor::zeros(p->val.shape());
    Adam opt(2e-4, 1e-2);
    opt.step(model.parameters());

    double after = 0.0;
    for (const auto& p : model.parameters())
        for (int64_t i = 0; i < p->val.numel(); ++i) after += p->val[i] * p->val[i];
    CHECK(after < before);
}

TEST_CASE("training is deterministic per (seed, config, data)") {
    auto data = tiny_data();
    auto a = train(tiny_model(), LossConfig{}, quick_train(2, 7), data);
    auto b = train(tiny_model(), LossConfig{}, quick_train(2, 7), data);
    CHECK(same_params(a.params, b.params));
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].loss.total == b.history[i].loss.total);
        CHECK(a.history[i].val_auc == b.history[i].val_auc);
    }
    CHECK(a.detector.tau == b.detector.tau);

    auto c = train(tiny_model(), LossConfig{}, quick_train(2, 8), data);
    CHECK_FALSE(same_params(a.params, c.params));
}

TEST_CASE("checkpoint save/load reproduces probe outputs bit-exactly") {
    auto data = tiny_data();
    auto ckpt = train(tiny_model(), LossConfig{}, quick_train(2, 3), data);

    const fs::path dir = fs::temp_directory_path() / "benet_ckpt_test";
    fs::remove_all(dir);
    save_checkpoint(ckpt, dir);
    auto loaded = load_checkpoint(dir);
    CHECK(same_params(ckpt.params, loaded.params));
    CHECK(loaded.detector.tau == ckpt.detector.tau);
    CHECK(loaded.train_config.arm == Arm::full);
    CHECK(loaded.config_hash() == ckpt.config_hash());

    BENet m1 = ckpt.instantiate();
    BENet m2 = loaded.instantiate();
    ag::NoGradGuard ng;
    std::vector<Tensor> probe;
    for (int i = 0; i < 4; ++i) probe.push_back(data.test[static_cast<size_t>(i)].image);
    Tensor batch = stack_batch(probe);
    auto f1 = m1.forward(batch);
    auto f2 = m2.forward(batch);
    for (int64_t i = 0; i < f1.p->val.numel(); ++i) CHECK(f1.p->val[i] == f2.p->val[i]);
    for (int64_t i = 0; i < f1.v->val.numel(); ++i) CHECK(f1.v->val[i] == f2.v->val[i]);
    fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected") {
    CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "benet_no_such_ckpt"),
                    CheckpointError);

    auto data = tiny_data();
    auto ckpt = train(tiny_model(), LossConfig{}, quick_train(1, 3), data);
    const fs::path dir = fs::temp_directory_path() / "benet_ckpt_corrupt";
    fs::remove_all(dir);
    save_checkpoint(ckpt, dir);
    {
        std::ofstream f(dir / "params.bin", std::ios::binary | std::ios::trunc);
        f << "garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(dir), CheckpointError);
    fs::remove_all(dir);
}

TEST_CASE("divergent training aborts with a numerical error") {
    auto data = tiny_data();
    TrainConfig cfg = quick_train(3);
    cfg.lr = 1e308;
    CHECK_THROWS_AS(train(tiny_model(), LossConfig{}, cfg, data), NumericalError);
}

TEST_CASE("detector calibration covers the training split") {
    auto data = tiny_data(40, 8, 8);
    TrainConfig cfg = quick_train(2);
    auto ckpt = train(tiny_model(), LossConfig{}, cfg, data);
    REQUIRE(ckpt.detector.calibrated());

    BENet model = ckpt.instantiate();
    auto train_set = filter_family(data.train, cfg.train_family);
    auto ev = evaluate(model, arm_spec(Arm::full), ckpt.detector, train_set, cfg.batch_size);
    const auto it = ev.report.route_counts.find("rejected");
    const int64_t rejected = it == ev.report.route_counts.end() ? 0 : it->second;
    CHECK(static_cast<double>(rejected) / static_cast<double>(train_set.size()) <=
          1.0 - cfg.coverage + 1e-12);
}

TEST_CASE("training loss decreases on the tiny task") {
    auto data = tiny_data(40, 8, 8);
    TrainConfig cfg = quick_train(8);
    auto ckpt = train(tiny_model(), LossConfig{}, cfg, data);
    REQUIRE(ckpt.history.size() == 8);
    const double first = ckpt.history.front().loss.total;
    double best = first;
    for (const auto& e : ckpt.history) best = std::min(best, e.loss.total);
    CHECK(best < first);
}

TEST_CASE("ablation matrix returns one cell per (arm, seed)") {
    auto data = tiny_data(16, 6, 6);
    TrainConfig base = quick_train(1);
    auto res = run_ablation_matrix(tiny_model(), LossConfig{}, base, data,
                                   {Arm::full, Arm::ae_lsa}, {1, 2}, 2);
    CHECK(res.cells.size() == 4);
    for (Arm a : {Arm::full, Arm::ae_lsa})
        for (uint64_t s : {1, 2}) {
            const AblationCell* c = res.find(a, static_cast<uint64_t>(s));
            REQUIRE(c != nullptr);
            CHECK(c->cross_auc.count("warp") == 1);
            CHECK(c->cross_auc.count("splice") == 0);
        }
    // parallel and serial execution agree
    auto serial = run_ablation_matrix(tiny_model(), LossConfig{}, base, data,
                                      {Arm::full, Arm::ae_lsa}, {1, 2}, 1);
    for (size_t i = 0; i < res.cells.size(); ++i) {
        CHECK(res.cells[i].intra_auc == serial.cells[i].intra_auc);
        CHECK(res.cells[i].cross_mean == serial.cells[i].cross_mean);
    }
}

TEST_CASE("run config parsing, overrides and unknown keys") {
    const fs::path cfg_path = fs::temp_directory_path() / "benet_cfg_test.cfg";
    {
        std::ofstream f(cfg_path);
        f << "# comment line\n"
          << "image_size = 16\n"
          << "model.num_scales = 2\n"
          << "model.base_channels = 4\n"
          << "loss.margin = 2.0\n"
          << "train.arm = ae_lsa_be\n"
          << "data.families = splice, warp\n"
          << "seed = 42\n";
    }
    RunConfig cfg = parse_config_file(cfg_path);
    CHECK(cfg.model.image_size == 16);
    CHECK(cfg.data.image_size == 16);
    CHECK(cfg.loss.margin == 2.0);
    CHECK(cfg.train.arm == Arm::ae_lsa_be);
    CHECK(cfg.train.seed == 42);
    CHECK(cfg.model.seed == 42);
    CHECK(cfg.data.families.size() == 2);

    apply_override(cfg, "loss.lambda=0.25");
    CHECK(cfg.loss.lambda == 0.25);
    CHECK_THROWS_AS(apply_override(cfg, "loss.bogus=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "train.arm=unknown_arm"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "data.families=splice,morph"), ConfigError);

    // resolved text reparses to the same configuration
    const std::string text = resolved_text(cfg);
    const fs::path echo_path = fs::temp_directory_path() / "benet_cfg_echo.cfg";
    {
        std::ofstream f(echo_path);
        f << text;
    }
    RunConfig echo = parse_config_file(echo_path);
    CHECK(resolved_text(echo) == text);
    fs::remove(cfg_path);
    fs::remove(echo_path);
}
