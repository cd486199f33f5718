#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "benet/model.hpp"
#include "benet/tensor.hpp"

namespace benet {

// Open-set rejection state: samples whose bias statistic exceeds tau are
// forced to the fake label regardless of the classifier.
struct DetectorState {
    double tau = -1.0;  // < 0 means uncalibrated
    std::string statistic = "mean_abs_bias";
    double coverage = 0.95;
    int64_t calibration_size = 0;

    bool calibrated() const { return tau >= 0.0; }

    // Classifier-only behaviour (the "w/o CD" arm): nothing is ever rejected.
    static DetectorState passthrough();
};

// Mean of all elements of the (nonnegative) bias image. A per-element mean
// rather than the raw L1 sum, so tau is comparable across resolutions; at
// fixed resolution the two differ by a constant factor and make identical
// decisions once tau is calibrated on the same statistic.
double bias_statistic(const Tensor& xhat);

// Per-sample statistics for an (N,C,H,W) bias batch.
std::vector<double> bias_statistics(const Tensor& xhat_batch);

// tau = the ceil(coverage * K)-th order statistic: the smallest calibration
// value covering at least the requested fraction.
DetectorState calibrate_threshold(std::vector<double> biases, double coverage);

struct Prediction {
    int label = 0;          // 0 real, 1 fake
    double score = 0.0;     // classifier probability, or 1.0 on rejection
    std::string route;      // "classifier" or "rejected"
    double bias_stat = 0.0;
    double p = 0.0;         // raw classifier probability
};

// Alg-style prediction: reject as fake when the bias statistic exceeds tau,
// otherwise trust the classifier with threshold 0.5.
Prediction decide(double p, double bias_stat, const DetectorState& det);

// Single-image convenience path (image is (C,H,W)).
Prediction predict(const BENet& model, const Tensor& image, const DetectorState& det);

}  // namespace benet
