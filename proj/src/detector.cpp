#include "benet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "benet/common.hpp"

namespace benet {

DetectorState DetectorState::passthrough() {
    DetectorState d;
    d.tau = std::numeric_limits<double>::infinity();
    d.coverage = 1.0;
    return d;
}

double bias_statistic(const Tensor& xhat) {
    if (xhat.numel() == 0) throw InvalidInputError("bias_statistic: empty tensor");
    double acc = 0.0;
    for (int64_t i = 0; i < xhat.numel(); ++i) acc += xhat[i];
    return acc / static_cast<double>(xhat.numel());
}

std::vector<double> bias_statistics(const Tensor& xhat_batch) {
    const int64_t n = xhat_batch.dim(0);
    const int64_t per = xhat_batch.numel() / n;
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const double* p = xhat_batch.ptr() + i * per;
        for (int64_t j = 0; j < per; ++j) acc += p[j];
        out[static_cast<size_t>(i)] = acc / static_cast<double>(per);
    }
    return out;
}

DetectorState calibrate_threshold(std::vector<double> biases, double coverage) {
    if (biases.empty()) throw InvalidInputError("calibrate_threshold: empty calibration set");
    if (coverage <= 0.0 || coverage > 1.0)
        throw ConfigError("calibrate_threshold: coverage must be in (0, 1]");
    const int64_t k = static_cast<int64_t>(biases.size());
    std::sort(biases.begin(), biases.end());
    // Smallest index i (1-based) with i/K >= coverage. The epsilon absorbs
    // binary round-off in coverage * K for exact-integer cases like 0.95 * 60.
    int64_t idx = static_cast<int64_t>(
        std::ceil(coverage * static_cast<double>(k) - 1e-9));
    idx = std::max<int64_t>(1, std::min(idx, k));
    DetectorState det;
    det.tau = biases[static_cast<size_t>(idx - 1)];
    det.coverage = coverage;
    det.calibration_size = k;
    return det;
}

Prediction decide(double p, double bias_stat, const DetectorState& det) {
    if (!det.calibrated()) throw StateError("detector is not calibrated");
    Prediction out;
    out.bias_stat = bias_stat;
    out.p = p;
    if (bias_stat > det.tau) {
        out.label = 1;
        out.score = 1.0;
        out.route = "rejected";
    } else {
        out.label = p > 0.5 ? 1 : 0;
        out.score = p;
        out.route = "classifier";
    }
    return out;
}

Prediction predict(const BENet& model, const Tensor& image, const DetectorState& det) {
    if (!det.calibrated()) throw StateError("detector is not calibrated");
    if (image.ndim() != 3)
        throw InvalidInputError("predict: expected a single (C,H,W) image");
    Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)}, image.data());
    ag::NoGradGuard ng;
    auto fb = model.forward(batch);
    return decide(fb.p->val[0], bias_statistic(fb.xhat->val), det);
}

}  // namespace benet
