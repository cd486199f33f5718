// Acceptance suite: one criterion per case, one PASS/FAIL line each.
// Criteria 6-9 share one synthetic dataset and one set of trained runs.
//
//   acceptance [--only N] [--jobs J]
//
// Exit code 0 iff every executed criterion passes.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include "benet/config.hpp"
#include "benet/detector.hpp"
#include "benet/metrics.hpp"
#include "benet/training.hpp"
#include "oracles.hpp"

using namespace benet;

namespace {

int g_jobs = 2;

// ---------------------------------------------------------------------------
// shared trained state for criteria 6-9
// ---------------------------------------------------------------------------

struct TrainedRuns {
    synth::Dataset data;
    AblationResult matrix;       // {full, ae_lsa_be, ae_lsa_rl, ae_lsa} x seeds
    AblationResult lambda_zero;  // full arm, lambda = 0
    AblationResult lambda_one;   // full arm, lambda = 1
    std::vector<uint64_t> seeds{1, 2, 3};
};

ModelConfig desk_model() {
    return ModelConfig{};  // 32px, 3 scales, base 8, C_z 32, P 2
}

TrainConfig desk_train(uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = seed;
    cfg.train_family = "splice";
    return cfg;
}

const TrainedRuns& trained_runs() {
    static const TrainedRuns runs = [] {
        TrainedRuns r;
        synth::SyntheticSpec spec;  // 32px, 400/100/100 per class per family
        spec.seed = 1;
        std::cerr << "[setup] generating synthetic dataset...\n";
        r.data = synth::generate_dataset(spec);

        const std::vector<Arm> arms = {Arm::full, Arm::ae_lsa_be, Arm::ae_lsa_rl, Arm::ae_lsa};
        auto progress = [](const AblationCell& c) {
            std::cerr << "[setup] trained arm=" << arm_name(c.arm) << " seed=" << c.seed
                      << " intra=" << c.intra_auc << " cross=" << c.cross_mean << "\n";
        };
        std::cerr << "[setup] training ablation matrix (" << arms.size() << " arms x "
                  << r.seeds.size() << " seeds, jobs=" << g_jobs << ")...\n";
        r.matrix = run_ablation_matrix(desk_model(), LossConfig{}, desk_train(1), r.data, arms,
                                       r.seeds, g_jobs, progress);

        LossConfig lam0;
        lam0.lambda = 0.0;
        std::cerr << "[setup] training lambda = 0 endpoints...\n";
        r.lambda_zero = run_ablation_matrix(desk_model(), lam0, desk_train(1), r.data,
                                            {Arm::full}, r.seeds, g_jobs, progress);
        LossConfig lam1;
        lam1.lambda = 1.0;
        std::cerr << "[setup] training lambda = 1 endpoints...\n";
        r.lambda_one = run_ablation_matrix(desk_model(), lam1, desk_train(1), r.data,
                                           {Arm::full}, r.seeds, g_jobs, progress);
        return r;
    }();
    return runs;
}

// ---------------------------------------------------------------------------
// criteria; each returns "" on pass, else a failure description
// ---------------------------------------------------------------------------

std::string criterion_loss_oracles() {
    Rng rng(2024);
    LossConfig base;
    for (int iter = 0; iter < 100; ++iter) {
        const int64_t n = 2 + rng.below(15);  // N <= 16
        const int64_t d = 1 + rng.below(48);
        Tensor xhat = oracles::random_tensor({n, d}, rng, 0.0, 1.3);
        Tensor p = oracles::random_tensor({n}, rng, 0.02, 0.98);
        std::vector<int> y(static_cast<size_t>(n));
        for (auto& v : y) v = rng.coin() ? 1 : 0;
        const double m = rng.uniform(0.5, 2.0);
        const double t = rng.uniform(0.5, 2.0);

        auto xv = ag::constant(xhat);
        const double l1 = loss_real_invariance(xv, y)->val.item();
        const double l2 = loss_fake_margin(xv, y, m)->val.item();
        const double l3 = loss_alignment(xv, y, t)->val.item();
        std::vector<double> pv(p.data().begin(), p.data().end());
        const double lc = loss_cross_entropy(ag::constant(p), y)->val.item();

        if (std::fabs(l1 - oracles::loop_l1(xhat, y)) > 1e-10)
            return "L1 mismatch at batch " + std::to_string(iter);
        if (std::fabs(l2 - oracles::loop_l2(xhat, y, m)) > 1e-10)
            return "L2 mismatch at batch " + std::to_string(iter);
        if (std::fabs(l3 - oracles::loop_l3(xhat, y, t)) > 1e-10)
            return "L3 mismatch at batch " + std::to_string(iter);
        if (std::fabs(lc - oracles::loop_cross_entropy(pv, y)) > 1e-10)
            return "L_c mismatch at batch " + std::to_string(iter);
    }
    return "";
}

std::string criterion_gradient_verification() {
    // <= 5k parameter configuration at 64-bit precision
    ModelConfig mc;
    mc.image_size = 8;
    mc.in_channels = 3;
    mc.num_scales = 2;
    mc.base_channels = 2;
    mc.bottleneck_channels = 4;
    mc.patch_size = 2;
    mc.mlp_hidden = 8;
    mc.seed = 7;
    BENet model(mc);
    if (model.parameter_count() > 5000)
        return "config has " + std::to_string(model.parameter_count()) + " params (> 5000)";

    LossConfig lc;  // lambda = 0.5, margin = 1
    const ArmSpec spec = arm_spec(Arm::full);
    int checked = 0;
    double worst = 0.0;
    for (int batch_i = 0; batch_i < 5; ++batch_i) {
        Rng rng(500 + batch_i);
        Tensor x = oracles::random_tensor({6, 3, 8, 8}, rng, 0.02, 0.98);
        std::vector<int> y = {0, 1, 0, 1, 1, 0};

        auto loss_value = [&]() {
            ag::NoGradGuard ng;
            auto fwd = forward_arm(model, ag::constant(x), spec);
            return total_loss(fwd.xhat, fwd.p, y, lc, spec.losses).values.total;
        };
        model.clear_grads();
        {
            auto fwd = forward_arm(model, ag::constant(x), spec);
            auto loss = total_loss(fwd.xhat, fwd.p, y, lc, spec.losses);
            ag::backward(loss.total);
        }
        for (size_t pi = 0; pi < model.parameters().size(); ++pi) {
            auto& p = model.parameters()[pi];
            if (!p->has_grad()) return "a parameter received no gradient";
            Tensor analytic = p->grad;
            for (int64_t i = 0; i < p->val.numel(); ++i) {
                const double h = 1e-5 * std::max(1.0, std::fabs(p->val[i]));
                const double fd = oracles::central_diff(loss_value, p->val[i], h);
                const double err = oracles::rel_err(analytic[i], fd);
                worst = std::max(worst, err);
                ++checked;
                if (err > 1e-4) {
                    std::ostringstream os;
                    os << "rel err " << err << " (analytic " << analytic[i] << ", fd " << fd
                       << ") at batch " << batch_i << " param " << pi << " "
                       << p->val.shape_str() << " elem " << i;
                    return os.str();
                }
            }
        }
    }
    std::cerr << "[c2] " << checked << " derivatives checked, worst rel err " << worst << "\n";
    return "";
}

std::string criterion_patch_attention_oracle() {
    // hand case: alpha = 1, Z = [[0,0],[0,ln 3]] -> beta = ln(3)/2
    {
        Tensor q = Tensor::full({1, 1, 2, 2}, 1.0);
        Tensor kv({1, 1, 2, 2}, {0.0, 0.0, 0.0, std::log(3.0)});
        auto out = ag::patch_attention(ag::constant(q), ag::constant(kv), 2);
        for (int64_t i = 0; i < 4; ++i)
            if (std::fabs(out->val[i] - std::log(3.0) / 2.0) > 1e-12)
                return "hand case beta != ln(3)/2";
    }
    Rng rng(31337);
    for (int iter = 0; iter < 60; ++iter) {
        const int64_t n = 1 + rng.below(3);
        const int64_t c = 1 + rng.below(4);
        const int64_t s = 2 * (1 + rng.below(4));  // 2..8
        const int p = (s % 4 == 0 && rng.coin()) ? 4 : 2;
        Tensor q = oracles::random_tensor({n, c, s, s}, rng, -3.0, 3.0);
        Tensor kv = oracles::random_tensor({n, c, s, s}, rng, -3.0, 3.0);
        auto got = ag::patch_attention(ag::constant(q), ag::constant(kv), p);
        Tensor want = oracles::loop_patch_attention(q, kv, p);
        for (int64_t i = 0; i < got->val.numel(); ++i)
            if (std::fabs(got->val[i] - want[i]) > 1e-12)
                return "triple-loop mismatch at iter " + std::to_string(iter);
    }
    return "";
}

std::string criterion_detector_calibration() {
    Rng rng(8899);
    std::vector<double> biases;
    for (int i = 0; i < 1000; ++i) biases.push_back(rng.uniform(0.0, 1.0));
    auto det = calibrate_threshold(biases, 0.95);

    int64_t rejected = 0;
    double next_lower = -1.0;
    int64_t le_lower = 0;
    for (double b : biases) {
        if (b > det.tau) ++rejected;
        if (b < det.tau) next_lower = std::max(next_lower, b);
    }
    for (double b : biases)
        if (b <= next_lower) ++le_lower;
    if (static_cast<double>(rejected) / 1000.0 > 0.05)
        return "rejected fraction " + std::to_string(rejected / 1000.0) + " > 5%";
    if (static_cast<double>(le_lower) / 1000.0 >= 0.95)
        return "tau is not minimal: the next-lower value still covers 95%";
    return "";
}

std::string criterion_auc_oracle() {
    Rng rng(777);
    for (int iter = 0; iter < 100; ++iter) {
        const int n = 2 + static_cast<int>(rng.below(199));  // n <= 200
        std::vector<int> labels(static_cast<size_t>(n));
        std::vector<double> scores(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            labels[static_cast<size_t>(i)] = rng.coin() ? 1 : 0;
            scores[static_cast<size_t>(i)] =
                rng.coin() ? rng.below(10) / 9.0 : rng.uniform(0.0, 1.0);
        }
        labels[0] = 1;
        labels[static_cast<size_t>(n - 1)] = 0;
        if (auc(labels, scores) != oracles::pairwise_auc(labels, scores))
            return "fast AUC != pairwise oracle at instance " + std::to_string(iter);
    }
    return "";
}

std::string criterion_intra_training() {
    const TrainedRuns& runs = trained_runs();
    int passing = 0;
    std::ostringstream detail;
    for (uint64_t s : runs.seeds) {
        const AblationCell* c = runs.matrix.find(Arm::full, s);
        detail << "seed " << s << " intra AUC " << c->intra_auc << "; ";
        if (c->intra_auc >= 0.95) ++passing;
    }
    if (passing < 2) return "intra AUC >= 0.95 on only " + std::to_string(passing) +
                            "/3 seeds (" + detail.str() + ")";
    std::cerr << "[c6] " << detail.str() << "\n";
    return "";
}

std::string criterion_ablation_ordering() {
    const TrainedRuns& runs = trained_runs();
    int passing = 0;
    std::ostringstream detail;
    for (size_t i = 0; i < runs.seeds.size(); ++i) {
        const uint64_t s = runs.seeds[i];
        const double full = runs.matrix.find(Arm::full, s)->cross_mean;
        const double be = runs.matrix.find(Arm::ae_lsa_be, s)->cross_mean;
        const double rl = runs.matrix.find(Arm::ae_lsa_rl, s)->cross_mean;
        const double lsa = runs.matrix.find(Arm::ae_lsa, s)->cross_mean;
        const bool chain = full >= be && be >= rl && rl >= lsa;
        const bool gap = full - lsa >= 0.03;
        detail << "seed " << s << ": full " << full << " >= be " << be << " >= rl " << rl
               << " >= lsa " << lsa << " chain=" << chain << " gap=" << gap << "; ";
        if (chain && gap) ++passing;
    }
    std::cerr << "[c7] " << detail.str() << "\n";
    if (passing < 2)
        return "ordering holds on only " + std::to_string(passing) + "/3 seeds (" +
               detail.str() + ")";
    return "";
}

std::string criterion_bias_separation() {
    const TrainedRuns& runs = trained_runs();
    int passing = 0;
    std::ostringstream detail;
    for (uint64_t s : runs.seeds) {
        const AblationCell* c = runs.matrix.find(Arm::full, s);
        const double ratio =
            c->test_real_bias > 0 ? c->test_fake_bias / c->test_real_bias : 0.0;
        detail << "seed " << s << " fake/real bias " << c->test_fake_bias << "/"
               << c->test_real_bias << " = " << ratio << "; ";
        if (ratio >= 2.0) ++passing;
    }
    std::cerr << "[c8] " << detail.str() << "\n";
    if (passing < 2)
        return "bias ratio >= 2 on only " + std::to_string(passing) + "/3 seeds (" +
               detail.str() + ")";
    return "";
}

std::string criterion_lambda_endpoints() {
    const TrainedRuns& runs = trained_runs();
    int passing = 0;
    std::ostringstream detail;
    for (uint64_t s : runs.seeds) {
        const double mid = runs.matrix.find(Arm::full, s)->val_pipeline_auc;
        const double lo = runs.lambda_zero.find(Arm::full, s)->val_pipeline_auc;
        const double hi = runs.lambda_one.find(Arm::full, s)->val_pipeline_auc;
        detail << "seed " << s << ": val AUC lambda 0.5 " << mid << " vs 0 " << lo << " vs 1 "
               << hi << "; ";
        if (mid >= lo && mid >= hi) ++passing;
    }
    std::cerr << "[c9] " << detail.str() << "\n";
    if (passing < 2)
        return "lambda = 0.5 dominates on only " + std::to_string(passing) + "/3 seeds (" +
               detail.str() + ")";
    return "";
}

std::string criterion_determinism() {
    synth::SyntheticSpec spec;
    spec.n_train = 60;
    spec.n_val = 20;
    spec.n_test = 20;
    spec.families = {synth::Family::splice};
    spec.seed = 5;
    auto data = synth::generate_dataset(spec);

    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 42;
    tc.train_family = "splice";
    auto a = train(ModelConfig{}, LossConfig{}, tc, data);
    auto b = train(ModelConfig{}, LossConfig{}, tc, data);

    if (a.history.size() != b.history.size()) return "history length differs between runs";
    for (size_t i = 0; i < a.history.size(); ++i)
        if (a.history[i].loss.total != b.history[i].loss.total ||
            a.history[i].val_auc != b.history[i].val_auc)
            return "epoch metrics differ between identical runs";
    for (size_t i = 0; i < a.params.size(); ++i)
        for (int64_t j = 0; j < a.params[i].numel(); ++j)
            if (a.params[i][j] != b.params[i][j]) return "parameters differ between runs";
    if (a.detector.tau != b.detector.tau) return "tau differs between runs";

    // save -> load -> bit-exact probe forward
    const auto dir = std::filesystem::temp_directory_path() / "benet_acceptance_ckpt";
    std::filesystem::remove_all(dir);
    save_checkpoint(a, dir);
    auto loaded = load_checkpoint(dir);
    BENet m1 = a.instantiate();
    BENet m2 = loaded.instantiate();
    ag::NoGradGuard ng;
    std::vector<Tensor> probe;
    for (int i = 0; i < 8; ++i) probe.push_back(data.test[static_cast<size_t>(i)].image);
    Tensor batch = stack_batch(probe);
    auto f1 = m1.forward(batch);
    auto f2 = m2.forward(batch);
    for (int64_t i = 0; i < f1.p->val.numel(); ++i)
        if (f1.p->val[i] != f2.p->val[i]) return "restored probe probabilities differ";
    for (int64_t i = 0; i < f1.v->val.numel(); ++i)
        if (f1.v->val[i] != f2.v->val[i]) return "restored probe features differ";
    std::filesystem::remove_all(dir);
    return "";
}

struct CriterionSpec {
    int id;
    const char* name;
    std::function<std::string()> run;
};

}  // namespace

int main(int argc, char** argv) {
    int only = -1;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
        if (std::strcmp(argv[i], "--jobs") == 0 && i + 1 < argc) g_jobs = std::atoi(argv[++i]);
    }

    const std::vector<CriterionSpec> criteria = {
        {1, "loss-oracle equivalence (100 batches, 1e-10)", criterion_loss_oracles},
        {2, "gradient verification vs central differences (<= 5k params)",
         criterion_gradient_verification},
        {3, "patch-attention triple-loop oracle + hand case", criterion_patch_attention_oracle},
        {4, "detector calibration coverage and minimality", criterion_detector_calibration},
        {5, "fast AUC equals pairwise Mann-Whitney oracle", criterion_auc_oracle},
        {6, "intra-family training reaches AUC >= 0.95", criterion_intra_training},
        {7, "ablation ordering full >= be >= rl >= lsa with gap >= 0.03",
         criterion_ablation_ordering},
        {8, "bias statistic separates classes by factor >= 2", criterion_bias_separation},
        {9, "lambda = 0.5 dominates both endpoints on validation AUC",
         criterion_lambda_endpoints},
        {10, "determinism and checkpoint persistence", criterion_determinism},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (only > 0 && c.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        try {
            detail = c.run();
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (detail.empty()) {
            std::printf("[PASS] criterion %2d: %s (%.1fs)\n", c.id, c.name, secs);
        } else {
            std::printf("[FAIL] criterion %2d: %s (%.1fs) -- %s\n", c.id, c.name, secs,
                        detail.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
