#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace benet {

struct MetricsReport {
    double acc = 0.0;
    double auc = 0.0;
    double apcer = 0.0;  // fraction of fakes predicted real
    double bpcer = 0.0;  // fraction of reals predicted fake
    int64_t n_real = 0;
    int64_t n_fake = 0;
    double threshold_used = 0.5;
    std::map<std::string, int64_t> route_counts;
};

double accuracy(const std::vector<int>& labels, const std::vector<int>& predictions);

// Probability that a random fake outranks a random real; ties credit 0.5
// (Mann-Whitney). O(n log n) via average ranks; exactly equal to the
// pairwise formulation.
double auc(const std::vector<int>& labels, const std::vector<double>& scores);

// (apcer, bpcer); requires both classes present.
std::pair<double, double> apcer_bpcer(const std::vector<int>& labels,
                                      const std::vector<int>& predictions);

MetricsReport build_report(const std::vector<int>& labels, const std::vector<int>& predictions,
                           const std::vector<double>& scores);

}  // namespace benet
