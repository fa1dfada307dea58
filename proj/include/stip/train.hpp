// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <functional>
#include <string>

#include "stip/dataset.hpp"
#include "stip/layers.hpp"
#include "stip/params.hpp"
#include "stip/report.hpp"

namespace stip::harness {

template <typename T>
using ForwardFn =
    std::function<nn::Var<T>(nn::ParameterStore<T>&, const nn::Var<T>&, nn::Mode)>;

struct TrainHyper {
    nn::OptimizerConfig opt;
    std::int64_t epochs = 20;
    std::int64_t batch = 64;
};

// Argmax predictions over the manifest; positives are flag==1 (class index 1).
template <typename T>
Metrics evaluate(nn::ParameterStore<T>& store, const ForwardFn<T>& forward,
                 const embed::AssembledDataset& ds, const DatasetManifest& manifest,
                 std::int64_t batch = 64) {
    if (manifest.indices.empty()) throw ConfigError("evaluate: empty test set");
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t at = 0; at < manifest.indices.size();) {
        const std::size_t take =
            std::min<std::size_t>(static_cast<std::size_t>(batch), manifest.indices.size() - at);
        auto [x, labels] = make_batch<T>(ds, manifest.indices, at, take);
        auto probs = forward(store, nn::constant(std::move(x)), nn::Mode::Infer);
        const auto pred = nn::argmax_rows(probs->value);
        for (std::size_t b = 0; b < take; ++b) {
            const bool is_pos = labels[b] == 1;
            const bool said_pos = pred[b] == 1;
            if (said_pos && is_pos) ++tp;
            if (said_pos && !is_pos) ++fp;
            if (!said_pos && is_pos) ++fn;
            if (!said_pos && !is_pos) ++tn;
        }
        at += take;
    }
    return Metrics::from_counts(tp, tn, fp, fn);
}

// Cross-entropy training on true labels; per-epoch train loss and validation
// accuracy are recorded. Deterministic per seed.
template <typename T>
RunReport train_classifier(nn::ParameterStore<T>& store, const ForwardFn<T>& forward,
                           const embed::AssembledDataset& ds, const DatasetManifest& train_set,
                           const DatasetManifest& test_set, const TrainHyper& hyper,
                           std::uint64_t seed, const std::string& name) {
    hyper.opt.validate();
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(seed);
    RunReport report;
    report.name = name;
    report.seed = seed;

    std::vector<std::int32_t> order = train_set.indices;
    for (std::int64_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0;
        std::int64_t seen = 0;
        for (std::size_t at = 0; at < order.size();) {
            const std::size_t take =
                std::min<std::size_t>(static_cast<std::size_t>(hyper.batch), order.size() - at);
            if (take < 2) break;  // batchnorm needs at least two samples
            auto [x, labels] = make_batch<T>(ds, order, at, take);
            at += take;
            store.zero_grad();
            auto probs = forward(store, nn::constant(std::move(x)), nn::Mode::Train);
            nn::Tensor<T> onehot({static_cast<std::int64_t>(take), 2});
            for (std::size_t b = 0; b < take; ++b)
                onehot.at(static_cast<std::int64_t>(b), labels[b]) = T(1);
            auto loss = nn::scale(nn::sum_all(nn::mul(nn::constant(std::move(onehot)),
                                                      nn::vlog(probs))),
                                  -1.0 / static_cast<double>(take));
            nn::backward(loss);
            nn::optimizer_step(store, hyper.opt);
            loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(take);
            seen += static_cast<std::int64_t>(take);
        }
        if (seen == 0) throw ConfigError("train_classifier: no trainable batch (need >= 2 samples)");
        report.epoch_losses.push_back(loss_sum / static_cast<double>(seen));
        report.val_accuracies.push_back(
            evaluate(store, forward, ds, test_set, hyper.batch).accuracy);
    }
    report.final_metrics = evaluate(store, forward, ds, test_set, hyper.batch);
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t0)
                         .count();
    return report;
}

// Runs the workflow with seeds base_seed..base_seed+n-1 and aggregates.
inline RepeatSummary run_repeats(const std::function<RunReport(std::uint64_t)>& workflow,
                                 std::int64_t n, std::uint64_t base_seed) {
    if (n < 1) throw ConfigError("run_repeats: n must be >= 1");
    std::vector<RunReport> runs;
    for (std::int64_t i = 0; i < n; ++i) {
        RunReport r = workflow(base_seed + static_cast<std::uint64_t>(i));
        r.repeat_index = i;
        runs.push_back(std::move(r));
    }
    return summarize_repeats(runs);
}

}  // namespace stip::harness
