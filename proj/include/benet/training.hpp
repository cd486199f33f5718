#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "benet/detector.hpp"
#include "benet/losses.hpp"
#include "benet/metrics.hpp"
#include "benet/model.hpp"
#include "benet/synth.hpp"

namespace benet {

// Ablation arms; one per ablation-table row.
enum class Arm { full, no_ae, ae_no_bias, ae, ae_lsa, ae_lsa_rl, ae_lsa_be, ae_lsa_cd };

std::string arm_name(Arm a);
Arm arm_from_name(const std::string& name);  // throws ConfigError
const std::vector<Arm>& all_arms();

// What an arm switches on. The classifier consumes raw x (no_ae), the
// reconstruction x_o (ae_no_bias), the bias (ae), or the attention-masked
// bias (everything with lsa).
struct ArmSpec {
    bool use_ae = true;
    bool use_bias = true;
    bool use_lsa = true;
    LossSet losses;
    bool use_detector = true;
};
ArmSpec arm_spec(Arm a);

struct TrainConfig {
    int batch_size = 8;
    double lr = 2e-4;
    double weight_decay = 1e-5;
    int epochs = 30;
    Arm arm = Arm::full;
    uint64_t seed = 1;
    double coverage = 0.95;
    bool calibrate_on_reals_only = false;
    bool augment = true;
    std::string train_family;  // empty = all families present in the split

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    LossBreakdown loss;  // epoch means
    double val_acc = 0.0;
    double val_auc = 0.0;
};

struct Checkpoint {
    ModelConfig model_config;
    LossConfig loss_config;
    TrainConfig train_config;
    std::vector<Tensor> params;
    DetectorState detector;  // passthrough (tau = +inf) for arms without CD
    int best_epoch = -1;
    double best_val_auc = 0.0;
    std::vector<EpochLog> history;

    uint64_t config_hash() const;
    BENet instantiate() const;  // model with these parameters loaded
};

// Arm-aware forward: returns the classifier input v, probability p, and the
// intermediates the arm actually produces (null Vars otherwise).
struct ArmForward {
    ag::Var v;
    ag::Var p;
    ag::Var xhat;  // null for no_ae / ae_no_bias
    ag::Var x_o;   // null for no_ae
};
ArmForward forward_arm(const BENet& model, const ag::Var& x, const ArmSpec& spec);

// Adam with L2 weight decay folded into the gradient. Parameters whose grad
// was never touched by the backward pass are left unchanged.
class Adam {
public:
    Adam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step(std::vector<ag::Var>& params);

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Shuffled mini-batch training with the configured arm's losses; keeps the
// best-validation-AUC parameters; calibrates the detector afterwards for
// arms that use it. Throws NumericalError on divergence.
Checkpoint train(const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                 const TrainConfig& train_cfg, const synth::Dataset& data,
                 const EpochCallback& on_epoch = nullptr);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);  // throws CheckpointError

// Reals plus fakes of one family ("" = everything).
std::vector<synth::Sample> filter_family(const std::vector<synth::Sample>& samples,
                                         const std::string& family);

struct EvalResult {
    MetricsReport report;
    std::vector<int> labels;
    std::vector<int> predictions;
    std::vector<double> scores;
    std::vector<double> bias_stats;  // empty when the arm has no bias path
};

// Batched inference with the arm's routing; the detector rejects when it is
// calibrated and the arm produces a bias image.
EvalResult evaluate(const BENet& model, const ArmSpec& spec, const DetectorState& det,
                    const std::vector<synth::Sample>& samples, int batch_size);

struct AblationCell {
    Arm arm{};
    uint64_t seed = 0;
    double intra_auc = 0.0;
    std::map<std::string, double> cross_auc;  // per held-out family
    double cross_mean = 0.0;
    double val_auc = 0.0;           // best classifier-route validation AUC
    double val_pipeline_auc = 0.0;  // validation AUC through the full pipeline
    double test_fake_bias = 0.0;    // mean bias statistic, intra-family test fakes
    double test_real_bias = 0.0;
};

struct AblationResult {
    std::vector<AblationCell> cells;
    std::vector<uint64_t> seeds;
    std::vector<Arm> arms;
    // Per seed, on mean cross-family AUC: full >= ae_lsa_be >= ae_lsa_rl >= ae_lsa,
    // and full - ae_lsa >= 0.03. Only filled when those arms were run.
    std::vector<bool> chain_ok;
    std::vector<bool> gap_ok;

    const AblationCell* find(Arm arm, uint64_t seed) const;
};

AblationResult run_ablation_matrix(const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                                   const TrainConfig& base_cfg, const synth::Dataset& data,
                                   const std::vector<Arm>& arms,
                                   const std::vector<uint64_t>& seeds, int jobs = 1,
                                   const std::function<void(const AblationCell&)>& on_cell =
                                       nullptr);

}  // namespace benet
