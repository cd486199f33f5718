#include "benet/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "benet/common.hpp"

namespace benet {

namespace {

void check_labels(const std::vector<int>& labels, size_t other, const char* op) {
    if (labels.empty() || labels.size() != other)
        throw InvalidInputError(std::string(op) + ": empty or mismatched inputs");
    for (int y : labels)
        if (y != 0 && y != 1) throw InvalidInputError(std::string(op) + ": labels must be 0/1");
}

}  // namespace

double accuracy(const std::vector<int>& labels, const std::vector<int>& predictions) {
    check_labels(labels, predictions.size(), "accuracy");
    int64_t hit = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == predictions[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double auc(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_labels(labels, scores.size(), "auc");
    int64_t n_pos = 0, n_neg = 0;
    for (int y : labels) (y == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw InvalidInputError("auc: needs both classes present");

    const size_t n = labels.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tie groups; rank sums stay exact in doubles
    // (multiples of 0.5 well below 2^53), so this matches the O(n^2)
    // pairwise count bit for bit.
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        i = j + 1;
    }
    const double num =
        pos_rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::pair<double, double> apcer_bpcer(const std::vector<int>& labels,
                                      const std::vector<int>& predictions) {
    check_labels(labels, predictions.size(), "apcer_bpcer");
    int64_t n_fake = 0, n_real = 0, fake_as_real = 0, real_as_fake = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            ++n_fake;
            if (predictions[i] == 0) ++fake_as_real;
        } else {
            ++n_real;
            if (predictions[i] == 1) ++real_as_fake;
        }
    }
    if (n_fake == 0 || n_real == 0)
        throw InvalidInputError("apcer_bpcer: needs both classes present");
    return {static_cast<double>(fake_as_real) / static_cast<double>(n_fake),
            static_cast<double>(real_as_fake) / static_cast<double>(n_real)};
}

MetricsReport build_report(const std::vector<int>& labels, const std::vector<int>& predictions,
                           const std::vector<double>& scores) {
    MetricsReport r;
    r.acc = accuracy(labels, predictions);
    r.auc = auc(labels, scores);
    auto [apcer, bpcer] = apcer_bpcer(labels, predictions);
    r.apcer = apcer;
    r.bpcer = bpcer;
    for (int y : labels) (y == 1 ? r.n_fake : r.n_real)++;
    return r;
}

}  // namespace benet
