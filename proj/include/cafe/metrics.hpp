#pragma once

#include <map>
#include <span>
#include <vector>

// Post-hoc fairness and performance evaluation. Group tags are consumed here
// and nowhere else; training code never reads them.

namespace cafe::fair {

struct PredictionRecord {
    int y_true;  // 0/1
    int y_pred;  // 0/1
    int group;
};

struct EoGap {
    double value;         // |TPR_hi - TPR_lo|, the headline number
    double signed_value;  // TPR of the higher group id minus the lower
};

// Equal-opportunity gap between exactly two groups. Every group must have at
// least one positive-label record, otherwise the TPR is undefined.
EoGap eo_gap(std::span<const PredictionRecord> records);

// (perf_m - perf_b)/perf_b - (eo_m - eo_b)/eo_b. Baselines must be nonzero.
double fate(double perf_m, double perf_b, double eo_m, double eo_b);

struct F1Acc {
    double f1;
    double accuracy;
};

// Binary F1 with class 1 positive; F1 = 0 by convention when precision and
// recall are both undefined.
F1Acc f1_accuracy(std::span<const PredictionRecord> records);

struct GroupMetrics {
    double f1;
    double accuracy;
    int support;
};

std::map<int, GroupMetrics> per_group_metrics(std::span<const PredictionRecord> records);

// Everything the evaluator reports for one prediction set. eo_gap carries NaN
// when undefined for the record pool (fewer than two groups, or a group
// without positives).
struct MetricsReport {
    double f1 = 0.0;
    double accuracy = 0.0;
    double eo_gap = 0.0;
    double eo_gap_signed = 0.0;
    std::map<int, GroupMetrics> per_group;
};

MetricsReport compute_metrics(std::span<const PredictionRecord> records);

}  // namespace cafe::fair
