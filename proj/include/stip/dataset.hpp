// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "stip/embed.hpp"
#include "stip/rng.hpp"

namespace stip::harness {

// A selection over an AssembledDataset: balancing and splitting never copy
// sample matrices, only index them.
struct DatasetManifest {
    std::string cls;
    std::uint64_t seed = 0;
    std::vector<std::int32_t> indices;  // into AssembledDataset::samples
};

// Undersamples the majority class uniformly at random to the minority count.
inline DatasetManifest load_and_balance(const embed::AssembledDataset& ds, std::uint64_t seed) {
    std::vector<std::int32_t> pos, neg;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        (ds.samples[i].label_flag == 1 ? pos : neg).push_back(static_cast<std::int32_t>(i));
    if (pos.empty() || neg.empty())
        throw ConfigError("load_and_balance: dataset must contain both classes");
    Rng rng(seed);
    auto& majority = pos.size() > neg.size() ? pos : neg;
    const std::size_t keep = std::min(pos.size(), neg.size());
    if (majority.size() > keep) {
        rng.shuffle(majority);
        majority.resize(keep);
    }
    DatasetManifest m;
    m.cls = ds.cls;
    m.seed = seed;
    m.indices.reserve(2 * keep);
    m.indices.insert(m.indices.end(), pos.begin(), pos.end());
    m.indices.insert(m.indices.end(), neg.begin(), neg.end());
    std::sort(m.indices.begin(), m.indices.end());
    return m;
}

// Stratified seeded split; both sides keep the 1:1 ratio within one sample.
inline std::pair<DatasetManifest, DatasetManifest> split(const embed::AssembledDataset& ds,
                                                         const DatasetManifest& manifest,
                                                         double ratio, std::uint64_t seed) {
    if (manifest.indices.size() < 5) throw ConfigError("split: need at least 5 samples");
    if (ratio <= 0 || ratio >= 1) throw ConfigError("split: ratio must be in (0,1)");
    std::vector<std::int32_t> pos, neg;
    for (auto i : manifest.indices)
        (ds.samples[static_cast<std::size_t>(i)].label_flag == 1 ? pos : neg).push_back(i);
    Rng rng(seed);
    rng.shuffle(pos);
    rng.shuffle(neg);
    DatasetManifest train, test;
    train.cls = test.cls = manifest.cls;
    train.seed = test.seed = seed;
    auto take = [&](std::vector<std::int32_t>& src) {
        const auto k = static_cast<std::size_t>(
            std::llround(ratio * static_cast<double>(src.size())));
        for (std::size_t i = 0; i < src.size(); ++i)
            (i < k ? train : test).indices.push_back(src[i]);
    };
    take(pos);
    take(neg);
    if (test.indices.empty() || train.indices.empty())
        throw ConfigError("split: one side of the split is empty; dataset too small");
    std::sort(train.indices.begin(), train.indices.end());
    std::sort(test.indices.begin(), test.indices.end());
    return {std::move(train), std::move(test)};
}

// Materializes a batch as a [B, N*K, C] tensor plus its labels.
template <typename T>
std::pair<nn::Tensor<T>, std::vector<int>> make_batch(const embed::AssembledDataset& ds,
                                                      const std::vector<std::int32_t>& indices,
                                                      std::size_t from, std::size_t count) {
    const std::int64_t L = ds.seq_tokens * ds.repeat, C = ds.channels;
    nn::Tensor<T> x({static_cast<std::int64_t>(count), L, C});
    std::vector<int> labels(count);
    for (std::size_t b = 0; b < count; ++b) {
        const auto& s = ds.samples[static_cast<std::size_t>(indices[from + b])];
        for (std::int64_t i = 0; i < L * C; ++i)
            x.data[static_cast<std::int64_t>(b) * L * C + i] = static_cast<T>(s.matrix.data[i]);
        labels[b] = s.label_flag;
    }
    return {std::move(x), std::move(labels)};
}

}  // namespace stip::harness
