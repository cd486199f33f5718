#pragma once

#include <functional>
#include <vector>

#include "benet/autograd.hpp"

namespace benet {

struct LossConfig {
    double margin = 1.0;        // m, hinge margin on fake bias norms
    double lambda = 0.5;        // weight of the cross-entropy term
    double l3_temperature = 1.0;
    // The printed form of the fake-margin term carries a leading minus sign;
    // minimizing it would shrink fake bias, so the default uses the positive
    // sign. The printed variant stays available for comparison.
    bool l2_printed_sign = false;

    void validate() const;  // throws ConfigError
};

struct LossBreakdown {
    double l1 = 0.0;
    double l2 = 0.0;
    double l3 = 0.0;
    double l_be = 0.0;
    double l_c = 0.0;
    double total = 0.0;
};

// Which terms participate in a training objective (ablation arms).
struct LossSet {
    bool l1 = true;
    bool l2 = true;
    bool l3 = true;
    bool lc = true;
};

// All losses are graph ops: they return scalar Vars differentiable through
// their inputs. xhat is an (N,...) bias batch, flattened internally per
// sample; labels are 0 = real, 1 = fake.

// L1 = (1/N) sum_i (1 - y_i) ||xhat_i||_2^2
ag::Var loss_real_invariance(const ag::Var& xhat, const std::vector<int>& labels);

// L2 = (1/N) sum_i y_i max(m - ||xhat_i||_2, 0)^2  (positive-sign form)
ag::Var loss_fake_margin(const ag::Var& xhat, const std::vector<int>& labels, double margin,
                         bool printed_sign = false);

// Supervised-contrastive alignment over L2-normalized flattened biases.
// Anchors without a same-class partner are skipped; if every anchor is
// skipped the loss is zero. Zero-norm biases normalize to the zero vector
// and raise the optional warning flag.
ag::Var loss_alignment(const ag::Var& xhat, const std::vector<int>& labels, double temperature,
                       bool* zero_norm_warning = nullptr);

// L_c = -(1/N) sum_i [y log p + (1-y) log(1-p)], p clamped to [1e-7, 1-1e-7].
ag::Var loss_cross_entropy(const ag::Var& p, const std::vector<int>& labels);

struct TotalLoss {
    ag::Var total;  // lambda * L_c + (1 - lambda) * (L1 + L2 + L3) over active terms
    LossBreakdown values;
};

// Assembles the weighted objective from a forward pass. Inactive terms are
// zero and excluded from the graph; total is always
// lambda * L_c + (1 - lambda) * (L1 + L2 + L3) over the active terms.
TotalLoss total_loss(const ag::Var& xhat_or_null, const ag::Var& p,
                     const std::vector<int>& labels, const LossConfig& cfg,
                     const LossSet& active = LossSet{});

inline double clamped_epsilon() { return 1e-7; }

}  // namespace benet
