// SPDX-License-Identifier: Apache-2.0
#include "stip/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "stip/common.hpp"

namespace stip::harness {

RepeatSummary summarize_repeats(const std::vector<RunReport>& runs) {
    if (runs.empty()) throw ConfigError("summarize_repeats: no runs");
    RepeatSummary s;
    s.runs = runs;
    const auto n = static_cast<double>(runs.size());
    double acc = 0, prec = 0, rec = 0, f1 = 0;
    for (const auto& r : runs) {
        acc += r.final_metrics.accuracy;
        prec += r.final_metrics.precision;
        rec += r.final_metrics.recall;
        f1 += r.final_metrics.f1;
    }
    s.mean.accuracy = acc / n;
    s.mean.precision = prec / n;
    s.mean.recall = rec / n;
    s.mean.f1 = f1 / n;
    if (runs.size() > 1) {
        double va = 0, vp = 0, vr = 0, vf = 0;
        for (const auto& r : runs) {
            va += std::pow(r.final_metrics.accuracy - s.mean.accuracy, 2);
            vp += std::pow(r.final_metrics.precision - s.mean.precision, 2);
            vr += std::pow(r.final_metrics.recall - s.mean.recall, 2);
            vf += std::pow(r.final_metrics.f1 - s.mean.f1, 2);
        }
        // sample standard deviation
        s.std_accuracy = std::sqrt(va / (n - 1));
        s.std_precision = std::sqrt(vp / (n - 1));
        s.std_recall = std::sqrt(vr / (n - 1));
        s.std_f1 = std::sqrt(vf / (n - 1));
    }
    return s;
}

ScaledSeries minmax_scale(const std::vector<double>& raw, double lo, double hi) {
    if (raw.empty()) throw ConfigError("minmax_scale: empty series");
    ScaledSeries out;
    out.raw_min = *std::min_element(raw.begin(), raw.end());
    out.raw_max = *std::max_element(raw.begin(), raw.end());
    out.scaled.reserve(raw.size());
    const double range = out.raw_max - out.raw_min;
    for (double v : raw) {
        // Degenerate (constant) series maps to the lower bound.
        out.scaled.push_back(range == 0 ? lo : lo + (v - out.raw_min) * (hi - lo) / range);
    }
    return out;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

}  // namespace

void write_metrics_csv(const std::vector<std::pair<std::string, Metrics>>& rows,
                       const std::string& path) {
    auto out = open_out(path);
    out << "run,tp,tn,fp,fn,accuracy,precision,recall,f1\n";
    for (const auto& [name, m] : rows) out << name << "," << m.to_csv_row() << "\n";
}

void write_curves_csv(const std::vector<RunReport>& reports, const std::string& path) {
    auto out = open_out(path);
    out << "run,epoch,train_loss,val_accuracy\n";
    for (const auto& r : reports)
        for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
            out << r.name << "," << e << "," << format_float(r.epoch_losses[e]) << ",";
            if (e < r.val_accuracies.size()) out << format_float(r.val_accuracies[e]);
            out << "\n";
        }
}

void write_distill_comparison_csv(const std::vector<double>& pre_losses,
                                  const std::vector<double>& post_losses,
                                  const std::string& path) {
    if (pre_losses.empty()) throw ConfigError("distill comparison: empty pre-distillation series");
    const auto scaled = minmax_scale(pre_losses);
    auto out = open_out(path);
    out << "# pre_raw_min=" << format_float(scaled.raw_min)
        << " pre_raw_max=" << format_float(scaled.raw_max) << "\n";
    out << "index,pre_loss_raw,pre_loss_scaled,post_loss\n";
    const std::size_t rows = std::max(pre_losses.size(), post_losses.size());
    for (std::size_t i = 0; i < rows; ++i) {
        out << i << ",";
        if (i < pre_losses.size())
            out << format_float(pre_losses[i]) << "," << format_float(scaled.scaled[i]);
        else
            out << ",";
        out << ",";
        if (i < post_losses.size()) out << format_float(post_losses[i]);
        out << "\n";
    }
}

void write_distill_history_csv(const std::vector<DistillHistoryRow>& rows,
                               const std::string& path) {
    auto out = open_out(path);
    out << "step,l_mse,l_kl,l_clf,l_concat\n";
    for (const auto& r : rows)
        out << r.step << "," << format_float(r.l_mse) << "," << format_float(r.l_kl) << ","
            << format_float(r.l_clf) << "," << format_float(r.l_concat) << "\n";
}

void emit_report(const std::vector<RunReport>& reports,
                 const std::vector<double>& pre_distill_losses,
                 const std::vector<DistillHistoryRow>& distill_history,
                 const std::string& config_snapshot, const std::string& out_dir) {
    if (reports.empty()) throw ConfigError("emit_report: no reports");
    std::filesystem::create_directories(out_dir);

    std::vector<std::pair<std::string, Metrics>> rows;
    for (const auto& r : reports) rows.emplace_back(r.name, r.final_metrics);
    write_metrics_csv(rows, join_path(out_dir, "metrics.csv"));
    write_curves_csv(reports, join_path(out_dir, "curves.csv"));

    std::vector<double> post;
    for (const auto& h : distill_history) post.push_back(h.l_concat);
    if (!pre_distill_losses.empty())
        write_distill_comparison_csv(pre_distill_losses, post,
                                     join_path(out_dir, "distill_comparison.csv"));
    if (!distill_history.empty())
        write_distill_history_csv(distill_history, join_path(out_dir, "distill_history.csv"));

    PaperReference ref;
    nlohmann::json manifest;
    manifest["files"] = {"metrics.csv", "curves.csv"};
    if (!pre_distill_losses.empty()) manifest["files"].push_back("distill_comparison.csv");
    if (!distill_history.empty()) manifest["files"].push_back("distill_history.csv");
    manifest["config"] = nlohmann::json::parse(config_snapshot.empty() ? "{}" : config_snapshot);
    manifest["reference_scores"] = {
        {"average_f1", ref.average_f1},
        {"post_reentrancy",
         {{"accuracy", ref.post_reentrancy_acc},
          {"recall", ref.post_reentrancy_recall},
          {"precision", ref.post_reentrancy_precision},
          {"f1", ref.post_reentrancy_f1}}},
        {"transfer", {{"accuracy", ref.transfer_accuracy}, {"f1", ref.transfer_f1}}},
        {"gating", false},
    };
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : reports) {
        runs.push_back({{"name", r.name},
                        {"seed", r.seed},
                        {"repeat_index", r.repeat_index},
                        {"epochs", r.epoch_losses.size()},
                        {"wall_ms", r.wall_ms}});
    }
    manifest["runs"] = runs;
    auto out = open_out(join_path(out_dir, "manifest.json"));
    out << manifest.dump(2) << "\n";
}

}  // namespace stip::harness
