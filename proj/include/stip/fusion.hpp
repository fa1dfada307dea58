// SPDX-License-Identifier: Apache-2.0
#pragma once

// The adaptive fusion module: three parallel mechanisms over an embedded
// sequence (grouped-KV multi-head attention, learnable external memory,
// staged convolutional downsampling) plus the student's pyramid-split
// attention block. Everything is a pure function of a ParameterStore so the
// whole module stays differentiable end to end.

#include <cmath>
#include <string>
#include <vector>

#include "stip/layers.hpp"

namespace stip::fusion {

using nn::Var;

struct FusionConfig {
    std::int64_t numhead = 4;
    std::int64_t groups = 4;        // K/V channel groups
    std::int64_t memory_slots = 64; // S
    std::int64_t stages = 2;
    std::int64_t mb_expansion = 4;
    std::int64_t mlp_ratio = 2;     // MLP hidden width = mlp_ratio * C

    void validate(std::int64_t channels) const {
        if (numhead < 1 || channels % numhead != 0)
            throw ConfigError("fusion: channels must divide by numhead");
        if (groups < 1 || channels % groups != 0)
            throw ConfigError("fusion: channels must divide by groups");
        if (numhead % groups != 0)
            throw ConfigError("fusion: groups must divide numhead");
        if (memory_slots < 1) throw ConfigError("fusion: memory_slots must be >= 1");
        if (stages < 1) throw ConfigError("fusion: stages must be >= 1");
        if (mb_expansion < 1) throw ConfigError("fusion: mb_expansion must be >= 1");
    }
};

// Values of every softmax weight tensor produced during a forward pass;
// used by the row-stochasticity checks.
template <typename T>
struct FusionTrace {
    std::vector<nn::Tensor<T>> softmax_weights;
};

// ---- multi-dimensional query enhancement ------------------------------------

template <typename T>
void init_mdqe(nn::ParameterStore<T>& store, const std::string& prefix, std::int64_t channels,
               Rng& rng) {
    store.add(prefix + "/wq", nn::he_normal<T>(rng, {channels, channels}, channels));
    store.add(prefix + "/wk", nn::he_normal<T>(rng, {channels, channels}, channels));
    store.add(prefix + "/wv", nn::he_normal<T>(rng, {channels, channels}, channels));
    store.add(prefix + "/wo", nn::he_normal<T>(rng, {channels, channels}, channels));
}

namespace detail {

template <typename T>
Var<T> project(nn::ParameterStore<T>& store, const std::string& name, const Var<T>& x) {
    const auto& sh = x->value.shape;  // [B,L,C]
    auto flat = nn::reshape(x, {sh[0] * sh[1], sh[2]});
    return nn::reshape(nn::matmul(flat, store.var(name)), sh);
}

// Replaces each channel group by the mean block across groups, so heads whose
// channels land in different groups see the same fine-grained pattern.
// groups == 1 is the identity.
template <typename T>
Var<T> group_share(const Var<T>& x, std::int64_t groups) {
    if (groups == 1) return x;
    const std::int64_t C = x->value.shape.back();
    const std::int64_t Cg = C / groups;
    Var<T> mean = nn::slice_last(x, 0, Cg);
    for (std::int64_t g = 1; g < groups; ++g)
        mean = nn::add(mean, nn::slice_last(x, g * Cg, Cg));
    mean = nn::scale(mean, 1.0 / static_cast<double>(groups));
    std::vector<Var<T>> blocks(static_cast<std::size_t>(groups), mean);
    return nn::concat_last(blocks);
}

}  // namespace detail

// Eqs 7-9: learned Q/K/V channel projections, grouped K/V sharing, per-head
// scaled dot-product attention, head concat and output projection. Shape
// preserving.
template <typename T>
Var<T> mdqe(nn::ParameterStore<T>& store, const std::string& prefix, const Var<T>& x,
            const FusionConfig& cfg, FusionTrace<T>* trace = nullptr) {
    const auto& sh = x->value.shape;
    if (sh.size() != 3) throw ShapeError("mdqe expects [B,L,C], got " + nn::shape_str(sh));
    const std::int64_t C = sh[2];
    cfg.validate(C);
    const std::int64_t H = cfg.numhead, dh = C / H;

    auto q = detail::project(store, prefix + "/wq", x);
    auto k = detail::group_share(detail::project(store, prefix + "/wk", x), cfg.groups);
    auto v = detail::group_share(detail::project(store, prefix + "/wv", x), cfg.groups);

    std::vector<Var<T>> heads;
    heads.reserve(static_cast<std::size_t>(H));
    for (std::int64_t h = 0; h < H; ++h) {
        auto qh = nn::slice_last(q, h * dh, dh);
        auto kh = nn::slice_last(k, h * dh, dh);
        auto vh = nn::slice_last(v, h * dh, dh);
        auto scores = nn::scale(nn::bmm(qh, nn::transpose_last(kh)),
                                1.0 / std::sqrt(static_cast<double>(dh)));
        auto weights = nn::softmax_last(scores);
        if (trace) trace->softmax_weights.push_back(weights->value);
        heads.push_back(nn::bmm(weights, vh));
    }
    auto concat = nn::concat_last(heads);
    return detail::project(store, prefix + "/wo", concat);
}

// ---- external memory modelling -----------------------------------------------

template <typename T>
void init_external_memory(nn::ParameterStore<T>& store, const std::string& prefix,
                          std::int64_t channels, std::int64_t slots, Rng& rng) {
    store.add(prefix + "/m", nn::normal_init<T>(rng, {slots, channels}, 0.0,
                                                1.0 / std::sqrt(static_cast<double>(channels))));
    store.add(prefix + "/win", nn::he_normal<T>(rng, {channels, channels}, channels));
    store.add(prefix + "/wout", nn::he_normal<T>(rng, {channels, channels}, channels));
}

template <typename T>
struct MemoryOut {
    Var<T> y_prime;  // [B,L,C]
    Var<T> m_new;    // [B,L,C], per-position convex combination of slots
};

// Eq 10: A = softmax over slots of <project-in(y), M_i>; Eq 11: M_new is the
// attention-weighted slot sum per position, mapped back and added residually.
template <typename T>
MemoryOut<T> external_memory(nn::ParameterStore<T>& store, const std::string& prefix,
                             const Var<T>& y, FusionTrace<T>* trace = nullptr) {
    const auto& sh = y->value.shape;
    if (sh.size() != 3) throw ShapeError("external_memory expects [B,L,C]");
    auto m = store.var(prefix + "/m");
    const std::int64_t S = m->value.dim(0), C = m->value.dim(1);
    if (sh[2] != C)
        throw ShapeError("external_memory: channels " + std::to_string(sh[2]) + " != memory dim " +
                         std::to_string(C));

    auto flat = nn::reshape(y, {sh[0] * sh[1], C});
    auto projected = nn::matmul(flat, store.var(prefix + "/win"));
    auto scores = nn::matmul(projected, nn::transpose_last(m));  // [B*L, S]
    auto weights = nn::softmax_last(scores);
    if (trace) {
        auto shaped = nn::reshape(weights, {sh[0], sh[1], S});
        trace->softmax_weights.push_back(shaped->value);
    }
    auto m_new_flat = nn::matmul(weights, m);  // [B*L, C]
    auto back = nn::matmul(m_new_flat, store.var(prefix + "/wout"));
    MemoryOut<T> out;
    out.m_new = nn::reshape(m_new_flat, sh);
    out.y_prime = nn::add(y, nn::reshape(back, sh));
    return out;
}

// ---- multi-stage convolutional fusion -----------------------------------------

template <typename T>
void init_mbconv(nn::ParameterStore<T>& store, const std::string& prefix, std::int64_t channels,
                 std::int64_t expansion, Rng& rng) {
    const std::int64_t e = channels * expansion;
    nn::init_conv1d(store, prefix + "/expand", 1, channels, e, rng);
    store.add(prefix + "/dw/w", nn::he_normal<T>(rng, {3, e}, 3));
    store.add(prefix + "/dw/b", nn::Tensor<T>::zeros({e}));
    nn::init_conv1d(store, prefix + "/project", 1, e, channels, rng);
}

// Inverted bottleneck: pointwise expand -> depthwise k3 -> pointwise project,
// with the residual connection (shapes always match at stride 1).
template <typename T>
Var<T> mbconv(nn::ParameterStore<T>& store, const std::string& prefix, const Var<T>& x) {
    auto h = nn::relu(nn::conv1d_layer(store, prefix + "/expand", x));
    h = nn::relu(nn::dwconv1d(h, store.var(prefix + "/dw/w"), store.var(prefix + "/dw/b")));
    h = nn::conv1d_layer(store, prefix + "/project", h);
    return nn::add(x, h);
}

template <typename T>
void init_mlp(nn::ParameterStore<T>& store, const std::string& prefix, std::int64_t channels,
              std::int64_t ratio, Rng& rng) {
    nn::init_dense(store, prefix + "/fc1", channels, channels * ratio, rng);
    nn::init_dense(store, prefix + "/fc2", channels * ratio, channels, rng);
}

template <typename T>
Var<T> mlp_positionwise(nn::ParameterStore<T>& store, const std::string& prefix, const Var<T>& x) {
    const auto& sh = x->value.shape;
    auto flat = nn::reshape(x, {sh[0] * sh[1], sh[2]});
    auto h = nn::dense(store, prefix + "/fc2", nn::relu(nn::dense(store, prefix + "/fc1", flat)));
    return nn::reshape(h, sh);
}

template <typename T>
void init_multistage(nn::ParameterStore<T>& store, const std::string& prefix,
                     std::int64_t channels, const FusionConfig& cfg, Rng& rng) {
    nn::init_conv1d(store, prefix + "/z0", 3, channels, channels, rng);
    for (std::int64_t s = 0; s < cfg.stages; ++s) {
        const std::string sp = prefix + "/s" + std::to_string(s);
        if (s == 0) {
            init_mbconv(store, sp + "/mb", channels, cfg.mb_expansion, rng);
        } else {
            store.add(sp + "/attn/wq", nn::he_normal<T>(rng, {channels, channels}, channels));
            store.add(sp + "/attn/wk", nn::he_normal<T>(rng, {channels, channels}, channels));
            store.add(sp + "/attn/wv", nn::he_normal<T>(rng, {channels, channels}, channels));
        }
        init_mlp(store, sp + "/mlp", channels, cfg.mlp_ratio, rng);
    }
}

// Eq 12/13: Z0 = Conv1D, stage 1 = MBConv, later stages = single-head scaled
// dot-product attention; every stage ends in MLP + MaxPool1D(2,2), halving
// the sequence length.
template <typename T>
Var<T> multistage_fusion(nn::ParameterStore<T>& store, const std::string& prefix, const Var<T>& x,
                         const FusionConfig& cfg, FusionTrace<T>* trace = nullptr) {
    const auto& sh = x->value.shape;
    if (sh.size() != 3) throw ShapeError("multistage_fusion expects [B,L,C]");
    const std::int64_t L = sh[1], C = sh[2];
    const std::int64_t div = std::int64_t(1) << cfg.stages;
    if (L % div != 0)
        throw ShapeError("multistage_fusion: length " + std::to_string(L) +
                         " not divisible by 2^stages = " + std::to_string(div) + "; pad input by " +
                         std::to_string(div - L % div) + " positions");

    auto z = nn::relu(nn::conv1d_layer(store, prefix + "/z0", x));
    for (std::int64_t s = 0; s < cfg.stages; ++s) {
        const std::string sp = prefix + "/s" + std::to_string(s);
        if (s == 0) {
            z = mbconv(store, sp + "/mb", z);
        } else {
            auto q = detail::project(store, sp + "/attn/wq", z);
            auto k = detail::project(store, sp + "/attn/wk", z);
            auto v = detail::project(store, sp + "/attn/wv", z);
            auto scores = nn::scale(nn::bmm(q, nn::transpose_last(k)),
                                    1.0 / std::sqrt(static_cast<double>(C)));
            auto weights = nn::softmax_last(scores);
            if (trace) trace->softmax_weights.push_back(weights->value);
            z = nn::bmm(weights, v);
        }
        z = mlp_positionwise(store, sp + "/mlp", z);
        z = nn::maxpool1d(z, 2, 2);
    }
    return z;
}

// ---- fusion of the three branches ---------------------------------------------

// X' and Y' are max-pooled along the sequence down to Z_top's length, then
// the three branches concatenate on channels: F in [B, L_z, 3C].
template <typename T>
Var<T> fuse(const Var<T>& x_prime, const Var<T>& y_prime, const Var<T>& z_top) {
    const std::int64_t L = x_prime->value.dim(1);
    const std::int64_t Lz = z_top->value.dim(1);
    if (y_prime->value.dim(1) != L)
        throw ShapeError("fuse: X' and Y' lengths differ");
    if (L % Lz != 0)
        throw ShapeError("fuse: branch length " + std::to_string(L) +
                         " does not pool down to " + std::to_string(Lz));
    const std::int64_t pool = L / Lz;
    auto xp = pool > 1 ? nn::maxpool1d(x_prime, pool, pool) : x_prime;
    auto yp = pool > 1 ? nn::maxpool1d(y_prime, pool, pool) : y_prime;
    return nn::concat_last(std::vector<Var<T>>{xp, yp, z_top});
}

// Whole module: X' = mdqe(X), Y' = external_memory(X'), Z = multistage(X).
template <typename T>
void init_fusion_module(nn::ParameterStore<T>& store, const std::string& prefix,
                        std::int64_t channels, const FusionConfig& cfg, Rng& rng) {
    cfg.validate(channels);
    init_mdqe(store, prefix + "/mdqe", channels, rng);
    init_external_memory(store, prefix + "/memory", channels, cfg.memory_slots, rng);
    init_multistage(store, prefix + "/stack", channels, cfg, rng);
}

template <typename T>
Var<T> fusion_forward(nn::ParameterStore<T>& store, const std::string& prefix, const Var<T>& x,
                      const FusionConfig& cfg, FusionTrace<T>* trace = nullptr) {
    auto x_prime = mdqe(store, prefix + "/mdqe", x, cfg, trace);
    auto mem = external_memory(store, prefix + "/memory", x_prime, trace);
    auto z_top = multistage_fusion(store, prefix + "/stack", x, cfg, trace);
    return fuse(x_prime, mem.y_prime, z_top);
}

// Closed-form parameter count of the full fusion module; regression-tested
// against the store.
inline std::int64_t fusion_param_count(std::int64_t c, const FusionConfig& cfg) {
    const std::int64_t mdqe_params = 4 * c * c;
    const std::int64_t memory_params = cfg.memory_slots * c + 2 * c * c;
    const std::int64_t e = c * cfg.mb_expansion;
    const std::int64_t z0 = 3 * c * c + c;
    const std::int64_t mb = (c * e + e) + (3 * e + e) + (e * c + c);
    const std::int64_t mlp = (c * cfg.mlp_ratio * c + cfg.mlp_ratio * c) +
                             (cfg.mlp_ratio * c * c + c);
    const std::int64_t attn_stage = 3 * c * c;
    std::int64_t stack = z0;
    for (std::int64_t s = 0; s < cfg.stages; ++s) stack += (s == 0 ? mb : attn_stage) + mlp;
    return mdqe_params + memory_params + stack;
}

// ---- pyramid split attention ---------------------------------------------------

inline const std::int64_t kPsaKernels[4] = {3, 5, 7, 9};

template <typename T>
void init_psa(nn::ParameterStore<T>& store, const std::string& prefix, std::int64_t channels,
              std::int64_t s_groups, Rng& rng) {
    if (s_groups < 1 || s_groups > 4) throw ConfigError("psa: s_groups must be in 1..4");
    if (channels % s_groups != 0) throw ConfigError("psa: channels must divide by s_groups");
    const std::int64_t cg = channels / s_groups;
    const std::int64_t hidden = std::max<std::int64_t>(1, cg / 4);
    for (std::int64_t g = 0; g < s_groups; ++g) {
        const std::string gp = prefix + "/g" + std::to_string(g);
        nn::init_conv1d(store, gp + "/conv", kPsaKernels[g], cg, cg, rng);
        nn::init_dense(store, gp + "/se/fc1", cg, hidden, rng);
        nn::init_dense(store, gp + "/se/fc2", hidden, cg, rng);
    }
}

// Channel groups pass multi-scale convolutions; per-group squeeze-excitation
// weights (GAP -> bottleneck -> sigmoid) are softmax-normalized across groups
// and applied multiplicatively together with the sigmoid gate, so a single
// group degenerates to plain conv + SE.
template <typename T>
Var<T> psa(nn::ParameterStore<T>& store, const std::string& prefix, const Var<T>& x,
           std::int64_t s_groups, FusionTrace<T>* trace = nullptr) {
    const auto& sh = x->value.shape;
    if (sh.size() != 3) throw ShapeError("psa expects [B,L,C]");
    const std::int64_t B = sh[0], C = sh[2];
    if (C % s_groups != 0) throw ConfigError("psa: channels must divide by s_groups");
    const std::int64_t cg = C / s_groups;

    std::vector<Var<T>> feats, gates;
    for (std::int64_t g = 0; g < s_groups; ++g) {
        const std::string gp = prefix + "/g" + std::to_string(g);
        auto xg = nn::slice_last(x, g * cg, cg);
        auto fg = nn::conv1d_layer(store, gp + "/conv", xg);
        feats.push_back(fg);
        auto squeezed = nn::seq_mean(fg);  // [B, cg]
        auto w = nn::sigmoid(nn::dense(store, gp + "/se/fc2",
                                       nn::relu(nn::dense(store, gp + "/se/fc1", squeezed))));
        gates.push_back(w);
    }

    // Softmax across the group axis, per (batch, within-group channel).
    auto stacked = nn::reshape(nn::concat_last(gates), {B, s_groups, cg});
    auto normalized = nn::softmax_last(nn::transpose_last(stacked));  // [B, cg, G]
    if (trace) trace->softmax_weights.push_back(normalized->value);
    auto per_group = nn::reshape(nn::transpose_last(normalized), {B, s_groups * cg});

    std::vector<Var<T>> outs;
    for (std::int64_t g = 0; g < s_groups; ++g) {
        auto gate = nn::mul(gates[static_cast<std::size_t>(g)],
                            nn::slice_last(per_group, g * cg, cg));
        outs.push_back(nn::mul_rows(feats[static_cast<std::size_t>(g)], gate));
    }
    return nn::concat_last(outs);
}

inline std::int64_t psa_param_count(std::int64_t c, std::int64_t s_groups) {
    const std::int64_t cg = c / s_groups;
    const std::int64_t hidden = std::max<std::int64_t>(1, cg / 4);
    std::int64_t total = 0;
    for (std::int64_t g = 0; g < s_groups; ++g) {
        total += kPsaKernels[g] * cg * cg + cg;          // conv
        total += cg * hidden + hidden + hidden * cg + cg;  // SE bottleneck
    }
    return total;
}

}  // namespace stip::fusion
