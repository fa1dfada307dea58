// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stip/preprocess.hpp"
#include "stip/tensor.hpp"

namespace stip::embed {

struct CbowConfig {
    std::int64_t dim = 300;
    std::int64_t window = 5;
    std::int64_t negatives = 5;
    std::int64_t epochs = 5;
    double lr = 0.025;  // decays linearly to lr * 1e-4
    std::uint64_t seed = 1;
};

// CBOW word vectors. The PAD row stays zero and is never touched by training.
struct EmbeddingMatrix {
    nn::Tensor<float> vectors;  // [V, C]
    std::uint64_t vocab_hash = 0;
    CbowConfig meta;
    std::vector<double> epoch_losses;  // mean negative-sampling loss per epoch
    // Count-weighted first/second moments of embedding entries, computed at
    // training time from the vocabulary frequencies.
    double entry_mean = 0;
    double entry_var = 0;
};

// Negative-sampling CBOW over the tokenized corpus; windows never cross
// contract boundaries. Deterministic given the seed.
EmbeddingMatrix train_cbow(const std::vector<text::TokenizedContract>& corpus,
                           const text::Vocabulary& vocab, const CbowConfig& cfg);

// Sinusoidal positional table: PE[p, 2i] = sin(p / 10000^(2i/C)),
// PE[p, 2i+1] = cos(p / 10000^(2i/C)). C must be even.
template <typename T>
nn::Tensor<T> positional_encoding(std::int64_t n_eff, std::int64_t channels) {
    if (channels % 2 != 0)
        throw ConfigError("positional_encoding: channel dimension must be even");
    if (n_eff < 1) throw ConfigError("positional_encoding: length must be >= 1");
    nn::Tensor<T> pe({n_eff, channels});
    for (std::int64_t pos = 0; pos < n_eff; ++pos)
        for (std::int64_t i = 0; i < channels / 2; ++i) {
            const double angle =
                pos / std::pow(10000.0, (2.0 * i) / static_cast<double>(channels));
            pe.at(pos, 2 * i) = static_cast<T>(std::sin(angle));
            pe.at(pos, 2 * i + 1) = static_cast<T>(std::cos(angle));
        }
    return pe;
}

enum class RepeatMode {
    Tile,     // [A,B] -> [A,B,A,B]
    Element,  // [A,B] -> [A,A,B,B]
};

// Sequence expansion by factor K along the sequence axis, [N,C] -> [N*K,C].
template <typename T>
nn::Tensor<T> expand_repeat(const nn::Tensor<T>& x, std::int64_t k,
                            RepeatMode mode = RepeatMode::Tile) {
    if (k < 1) throw ConfigError("expand_repeat: K must be >= 1");
    if (x.rank() != 2) throw ShapeError("expand_repeat expects [N,C], got " + nn::shape_str(x.shape));
    const std::int64_t n = x.dim(0), c = x.dim(1);
    nn::Tensor<T> out({n * k, c});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < k; ++j) {
            const std::int64_t row = mode == RepeatMode::Tile ? j * n + i : i * k + j;
            for (std::int64_t cc = 0; cc < c; ++cc) out.at(row, cc) = x.at(i, cc);
        }
    return out;
}

struct AssembleOptions {
    std::int64_t seq_tokens = 256;  // N
    std::int64_t repeat = 2;        // K
    bool pe_after_repeat = false;
    RepeatMode mode = RepeatMode::Tile;
    bool span_only = false;  // use only annotated tokens instead of the full stream
};

struct EmbeddedSample {
    nn::Tensor<float> matrix;  // [N*K, C]
    int label_flag = 0;
    std::string id;
};

// Token indices -> first N tokens (starting at the first annotated span when
// present) -> embedding rows -> positional encoding -> repeat expansion.
EmbeddedSample assemble(const text::TokenizedContract& contract, const EmbeddingMatrix& emb,
                        const text::Vocabulary& vocab, const AssembleOptions& opts);

struct AssembledDataset {
    std::int64_t seq_tokens = 0;  // N
    std::int64_t repeat = 0;      // K
    std::int64_t channels = 0;    // C
    std::string cls;
    std::vector<EmbeddedSample> samples;
};

struct InputScaleStats {
    double mean = 0;
    double sigma = 1;
};

// Scalar mean/deviation of assembled model inputs, derived from the model
// artifacts alone: an input entry is an embedding entry (uniform over
// non-PAD rows) plus a positional-encoding entry. Used as the default noise
// prior for pseudo-sample synthesis, keeping the distillation loop free of
// any dataset access.
inline InputScaleStats assembled_input_stats(const EmbeddingMatrix& emb, std::int64_t positions) {
    const std::int64_t V = emb.vectors.dim(0), C = emb.vectors.dim(1);
    double e_mean = emb.entry_mean;
    double e_var = emb.entry_var;
    if (e_var == 0) {
        // No stored moments (hand-built matrix): fall back to a uniform scan.
        double sq = 0;
        e_mean = 0;
        const std::int64_t e_n = (V - 1) * C;  // PAD row excluded
        for (std::int64_t r = 1; r < V; ++r)
            for (std::int64_t c = 0; c < C; ++c) {
                const double v = emb.vectors.at(r, c);
                e_mean += v;
                sq += v * v;
            }
        e_mean /= static_cast<double>(e_n);
        e_var = sq / static_cast<double>(e_n) - e_mean * e_mean;
    }

    const auto pe = positional_encoding<double>(positions, C);
    double p_mean = 0, p_sq = 0;
    for (const double v : pe.data) {
        p_mean += v;
        p_sq += v * v;
    }
    p_mean /= static_cast<double>(pe.numel());
    const double p_var = p_sq / static_cast<double>(pe.numel()) - p_mean * p_mean;

    InputScaleStats stats;
    stats.mean = e_mean + p_mean;
    stats.sigma = std::sqrt(std::max(0.0, e_var + p_var));
    return stats;
}

AssembledDataset assemble_class(const std::vector<text::TokenizedContract>& corpus,
                                const EmbeddingMatrix& emb, const text::Vocabulary& vocab,
                                const std::string& cls, const AssembleOptions& opts);

// Manifest + little-endian float32 blob pairs.
void save_embedding(const EmbeddingMatrix& emb, const std::string& path_base);
EmbeddingMatrix load_embedding(const std::string& path_base);
void save_dataset(const AssembledDataset& ds, const std::string& path_base);
AssembledDataset load_dataset(const std::string& path_base);

}  // namespace stip::embed
