// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stip/metrics.hpp"

namespace stip::harness {

struct RunReport {
    std::string name;
    std::string config_snapshot;
    std::vector<double> epoch_losses;
    std::vector<double> val_accuracies;
    Metrics final_metrics;
    std::uint64_t seed = 0;
    std::int64_t repeat_index = 0;
    double wall_ms = 0;  // excluded from deterministic CSVs
};

struct RepeatSummary {
    std::vector<RunReport> runs;
    Metrics mean;          // derived fields hold per-metric means
    double std_accuracy = 0, std_precision = 0, std_recall = 0, std_f1 = 0;
};

RepeatSummary summarize_repeats(const std::vector<RunReport>& runs);

struct ScaledSeries {
    std::vector<double> scaled;
    double raw_min = 0;
    double raw_max = 0;
};

// Affine map of a series onto [lo, hi]; a constant series maps to lo.
ScaledSeries minmax_scale(const std::vector<double>& raw, double lo = 0.04, double hi = 0.5);

// Reference scores reported for comparison against user-supplied real data;
// never gating.
struct PaperReference {
    double average_f1 = 91.16;
    double post_reentrancy_acc = 89.58;
    double post_reentrancy_recall = 89.58;
    double post_reentrancy_precision = 89.74;
    double post_reentrancy_f1 = 89.65;
    double transfer_accuracy = 91.02;
    double transfer_f1 = 90.46;
};

void write_metrics_csv(const std::vector<std::pair<std::string, Metrics>>& rows,
                       const std::string& path);
void write_curves_csv(const std::vector<RunReport>& reports, const std::string& path);

// Pre/post-distillation loss comparison: the pre column is additionally
// min-max scaled onto [0.04, 0.5]; raw values are retained so the scaling is
// invertible from the stored min/max.
void write_distill_comparison_csv(const std::vector<double>& pre_losses,
                                  const std::vector<double>& post_losses, const std::string& path);

struct DistillHistoryRow {
    std::int64_t step = 0;
    double l_mse = 0, l_kl = 0, l_clf = 0, l_concat = 0;
};
void write_distill_history_csv(const std::vector<DistillHistoryRow>& rows,
                               const std::string& path);

// Writes the full report bundle plus a manifest.json index into out_dir.
void emit_report(const std::vector<RunReport>& reports,
                 const std::vector<double>& pre_distill_losses,
                 const std::vector<DistillHistoryRow>& distill_history,
                 const std::string& config_snapshot, const std::string& out_dir);

}  // namespace stip::harness
