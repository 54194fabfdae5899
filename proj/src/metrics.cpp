#include "cafe/metrics.hpp"

#include <limits>
#include <set>
#include <string>

#include "cafe/error.hpp"

namespace cafe::fair {

EoGap eo_gap(std::span<const PredictionRecord> records) {
    if (records.empty()) throw MetricError("eo_gap: no records");
    std::set<int> groups;
    for (const auto& r : records) groups.insert(r.group);
    if (groups.size() != 2) {
        throw MetricError("eo_gap: need exactly 2 groups, got " +
                          std::to_string(groups.size()));
    }
    int g_lo = *groups.begin();
    int g_hi = *groups.rbegin();

    auto tpr = [&](int g) {
        long positives = 0, hits = 0;
        for (const auto& r : records) {
            if (r.group == g && r.y_true == 1) {
                ++positives;
                if (r.y_pred == 1) ++hits;
            }
        }
        if (positives == 0) {
            throw MetricError("eo_gap: group " + std::to_string(g) +
                              " has no positive-label records");
        }
        return static_cast<double>(hits) / static_cast<double>(positives);
    };

    double s = tpr(g_hi) - tpr(g_lo);
    return EoGap{s < 0 ? -s : s, s};
}

double fate(double perf_m, double perf_b, double eo_m, double eo_b) {
    if (perf_b == 0.0) throw MetricError("fate: zero performance baseline");
    if (eo_b == 0.0) throw MetricError("fate: zero EO-gap baseline");
    return (perf_m - perf_b) / perf_b - (eo_m - eo_b) / eo_b;
}

F1Acc f1_accuracy(std::span<const PredictionRecord> records) {
    if (records.empty()) throw MetricError("f1_accuracy: no records");
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& r : records) {
        if (r.y_pred == 1) {
            (r.y_true == 1 ? tp : fp)++;
        } else {
            (r.y_true == 1 ? fn : tn)++;
        }
    }
    double precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall)
                                           : 0.0;
    double acc = static_cast<double>(tp + tn) / static_cast<double>(records.size());
    return F1Acc{f1, acc};
}

std::map<int, GroupMetrics> per_group_metrics(std::span<const PredictionRecord> records) {
    std::map<int, std::vector<PredictionRecord>> by_group;
    for (const auto& r : records) by_group[r.group].push_back(r);
    std::map<int, GroupMetrics> out;
    for (const auto& [g, recs] : by_group) {
        F1Acc m = f1_accuracy(recs);
        out[g] = GroupMetrics{m.f1, m.accuracy, static_cast<int>(recs.size())};
    }
    return out;
}

MetricsReport compute_metrics(std::span<const PredictionRecord> records) {
    MetricsReport rep;
    F1Acc overall = f1_accuracy(records);
    rep.f1 = overall.f1;
    rep.accuracy = overall.accuracy;
    rep.per_group = per_group_metrics(records);
    try {
        EoGap eo = eo_gap(records);
        rep.eo_gap = eo.value;
        rep.eo_gap_signed = eo.signed_value;
    } catch (const MetricError&) {
        rep.eo_gap = std::numeric_limits<double>::quiet_NaN();
        rep.eo_gap_signed = rep.eo_gap;
    }
    return rep;
}

}  // namespace cafe::fair
