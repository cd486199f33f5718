#include "benet/losses.hpp"

#include <cmath>

#include "benet/common.hpp"

namespace benet {

namespace {

void check_batch(const ag::Var& t, const std::vector<int>& labels, const char* op) {
    if (labels.empty()) throw InvalidInputError(std::string(op) + ": empty batch");
    if (t->val.dim(0) != static_cast<int64_t>(labels.size()))
        throw InvalidInputError(std::string(op) + ": batch/label size mismatch");
    for (int y : labels)
        if (y != 0 && y != 1) throw InvalidInputError(std::string(op) + ": labels must be 0/1");
}

}  // namespace

void LossConfig::validate() const {
    if (margin <= 0.0) throw ConfigError("loss config: margin must be > 0");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("loss config: lambda must be in [0,1]");
    if (l3_temperature <= 0.0) throw ConfigError("loss config: l3_temperature must be > 0");
}

ag::Var loss_real_invariance(const ag::Var& xhat, const std::vector<int>& labels) {
    check_batch(xhat, labels, "loss_real_invariance");
    const int64_t n = static_cast<int64_t>(labels.size());
    auto sumsq = ag::row_sumsq(ag::flatten2(xhat));
    Tensor w({n});
    for (int64_t i = 0; i < n; ++i)
        w[i] = (labels[static_cast<size_t>(i)] == 0) ? 1.0 / static_cast<double>(n) : 0.0;
    return ag::weighted_sum(sumsq, std::move(w));
}

ag::Var loss_fake_margin(const ag::Var& xhat, const std::vector<int>& labels, double margin,
                         bool printed_sign) {
    check_batch(xhat, labels, "loss_fake_margin");
    if (margin <= 0.0) throw ConfigError("loss_fake_margin: margin must be > 0");
    const int64_t n = static_cast<int64_t>(labels.size());
    auto norms = ag::row_l2norm(ag::flatten2(xhat));
    auto hinge = ag::relu(ag::mul_scalar(ag::add_scalar(norms, -margin), -1.0));  // max(m-||.||,0)
    auto sq = ag::mul(hinge, hinge);
    Tensor w({n});
    const double sign = printed_sign ? -1.0 : 1.0;
    for (int64_t i = 0; i < n; ++i)
        w[i] = (labels[static_cast<size_t>(i)] == 1) ? sign / static_cast<double>(n) : 0.0;
    return ag::weighted_sum(sq, std::move(w));
}

ag::Var loss_alignment(const ag::Var& xhat, const std::vector<int>& labels, double temperature,
                       bool* zero_norm_warning) {
    check_batch(xhat, labels, "loss_alignment");
    if (temperature <= 0.0) throw ConfigError("loss_alignment: temperature must be > 0");
    const int64_t n = static_cast<int64_t>(labels.size());
    if (n < 2) throw InvalidInputError("loss_alignment: needs at least 2 samples");

    std::vector<int64_t> partners(static_cast<size_t>(n), 0);  // M_i
    int64_t n_valid = 0;
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j)
            if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
                ++partners[static_cast<size_t>(i)];
        if (partners[static_cast<size_t>(i)] > 0) ++n_valid;
    }
    if (n_valid == 0) return ag::constant(Tensor::scalar(0.0));

    auto u = ag::row_l2_normalize(ag::flatten2(xhat), zero_norm_warning);
    auto g = ag::mul_scalar(ag::gram(u), 1.0 / temperature);
    auto lse = ag::row_logsumexp_offdiag(g);

    // L3 = (1/N_valid) sum_{i: M_i>0} (-1/M_i) sum_{j in P_i} [g_ij - lse_i]
    //    = sum_ij A_ij g_ij + sum_i B_i lse_i   with constant weights.
    Tensor a({n, n});
    Tensor b({n});
    for (int64_t i = 0; i < n; ++i) {
        const int64_t mi = partners[static_cast<size_t>(i)];
        if (mi == 0) continue;
        b[i] = 1.0 / static_cast<double>(n_valid);
        const double aij = -1.0 / static_cast<double>(n_valid * mi);
        for (int64_t j = 0; j < n; ++j)
            if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
                a.at2(i, j) = aij;
    }
    return ag::add(ag::weighted_sum(g, std::move(a)), ag::weighted_sum(lse, std::move(b)));
}

ag::Var loss_cross_entropy(const ag::Var& p, const std::vector<int>& labels) {
    check_batch(p, labels, "loss_cross_entropy");
    const int64_t n = static_cast<int64_t>(labels.size());
    const double eps = clamped_epsilon();
    auto pc = ag::clamp(p, eps, 1.0 - eps);
    // -(1/N) [ sum_{y=1} log p + sum_{y=0} log(1-p) ]
    auto log_p = ag::log(pc);
    auto log_q = ag::log(ag::mul_scalar(ag::add_scalar(pc, -1.0), -1.0));
    Tensor wp({n}), wq({n});
    for (int64_t i = 0; i < n; ++i) {
        const double w = -1.0 / static_cast<double>(n);
        if (labels[static_cast<size_t>(i)] == 1)
            wp[i] = w;
        else
            wq[i] = w;
    }
    return ag::add(ag::weighted_sum(log_p, std::move(wp)),
                   ag::weighted_sum(log_q, std::move(wq)));
}

TotalLoss total_loss(const ag::Var& xhat, const ag::Var& p, const std::vector<int>& labels,
                     const LossConfig& cfg, const LossSet& active) {
    cfg.validate();
    TotalLoss out;
    const bool any_be = (active.l1 || active.l2 || active.l3) && xhat != nullptr;
    ag::Var l_be;
    if (any_be) {
        if (active.l1) {
            auto l1 = loss_real_invariance(xhat, labels);
            out.values.l1 = l1->val.item();
            l_be = l1;
        }
        if (active.l2) {
            auto l2 = loss_fake_margin(xhat, labels, cfg.margin, cfg.l2_printed_sign);
            out.values.l2 = l2->val.item();
            l_be = l_be ? ag::add(l_be, l2) : l2;
        }
        if (active.l3 && labels.size() >= 2) {
            auto l3 = loss_alignment(xhat, labels, cfg.l3_temperature);
            out.values.l3 = l3->val.item();
            l_be = l_be ? ag::add(l_be, l3) : l3;
        }
        out.values.l_be = out.values.l1 + out.values.l2 + out.values.l3;
    }
    ag::Var l_c;
    if (active.lc) {
        l_c = loss_cross_entropy(p, labels);
        out.values.l_c = l_c->val.item();
    }
    // total = lambda * L_c + (1 - lambda) * L_be, with inactive parts absent.
    if (l_be && l_c) {
        out.total = ag::add(ag::mul_scalar(l_c, cfg.lambda),
                            ag::mul_scalar(l_be, 1.0 - cfg.lambda));
    } else if (l_be) {
        out.total = ag::mul_scalar(l_be, 1.0 - cfg.lambda);
    } else if (l_c) {
        out.total = ag::mul_scalar(l_c, cfg.lambda);
    } else {
        throw ConfigError("total_loss: no active loss terms");
    }
    out.values.total = out.total->val.item();
    return out;
}

}  // namespace benet
