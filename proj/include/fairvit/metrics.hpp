#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairvit/tensor.hpp"

namespace fairvit {

// One evaluated sample: ground truth y, prediction, protected attribute.
struct PredRow {
    std::string id;
    double y = 0.0;
    double pred = 0.0;
    int attr = 0;
};

struct ProbeConfig {
    size_t hidden = 32;
    size_t epochs = 200;
    double lr = 0.5;
    uint64_t seed = 0;

    void validate() const;
};

struct MetricsReport {
    double pc = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    std::map<int, double> group_mae;
    double performance_gap = 0.0;
    double probe_accuracy = 0.0;
    std::optional<double> inline_adversary_accuracy;
    std::map<int, size_t> n_per_group;
};

// Sample Pearson correlation. Throws DomainError on constant input.
double pearson(const std::vector<double>& pred, const std::vector<double>& target);
double mae(const std::vector<double>& pred, const std::vector<double>& target);
double rmse(const std::vector<double>& pred, const std::vector<double>& target);

// Per-group MAE and the absolute gap |MAE_0 - MAE_1| (binary groups).
std::pair<std::map<int, double>, double> performance_gap(const std::vector<PredRow>& rows);

// Trains a fresh classifier (one hidden layer, full-batch gradient descent) on
// a stratified 70/30 split of the given frozen features; returns held-out
// accuracy. Near 1/C indicates the features carry no attribute information.
double probe_accuracy(const Tensor& features, const std::vector<int>& attrs, const ProbeConfig& cfg);

// 100 * (gap_baseline - gap_fair) / gap_baseline
double bias_reduction(double gap_baseline, double gap_fair);

MetricsReport compute_metrics(const std::vector<PredRow>& rows, const Tensor& features,
                              const ProbeConfig& probe_cfg,
                              std::optional<double> inline_adversary_accuracy = std::nullopt);

std::string metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const std::string& text);

}  // namespace fairvit
