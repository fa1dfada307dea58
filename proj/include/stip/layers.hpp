// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "stip/autograd.hpp"
#include "stip/params.hpp"

namespace stip::nn {

enum class Mode { Train, Infer };

// Batch mean/variance of a batchnorm input, left on the tape so that losses
// over activation statistics stay differentiable w.r.t. the network input.
template <typename T>
struct BnStatCapture {
    std::string name;
    Var<T> batch_mean;
    Var<T> batch_var;
};

template <typename T>
void init_dense(ParameterStore<T>& store, const std::string& prefix, std::int64_t in,
                std::int64_t out, Rng& rng) {
    store.add(prefix + "/w", he_normal<T>(rng, {in, out}, in));
    store.add(prefix + "/b", Tensor<T>::zeros({out}));
}

template <typename T>
Var<T> dense(ParameterStore<T>& store, const std::string& prefix, const Var<T>& x) {
    const auto& sh = x->value.shape;
    if (sh.size() != 2) throw ShapeError("dense expects [B,Din], got " + shape_str(sh));
    auto w = store.var(prefix + "/w");
    if (w->value.dim(0) != sh[1])
        throw ShapeError("dense " + prefix + ": input dim " + std::to_string(sh[1]) +
                         " != weight rows " + std::to_string(w->value.dim(0)));
    return add_channels(matmul(x, w), store.var(prefix + "/b"));
}

template <typename T>
void init_conv1d(ParameterStore<T>& store, const std::string& prefix, std::int64_t k,
                 std::int64_t cin, std::int64_t cout, Rng& rng) {
    store.add(prefix + "/w", he_normal<T>(rng, {k, cin, cout}, k * cin));
    store.add(prefix + "/b", Tensor<T>::zeros({cout}));
}

template <typename T>
Var<T> conv1d_layer(ParameterStore<T>& store, const std::string& prefix, const Var<T>& x,
                    Padding padding = Padding::Same, std::int64_t stride = 1) {
    return conv1d(x, store.var(prefix + "/w"), store.var(prefix + "/b"), padding, stride);
}

template <typename T>
void init_batchnorm(ParameterStore<T>& store, const std::string& prefix, std::int64_t channels) {
    store.add(prefix + "/gamma", Tensor<T>::full({channels}, T(1)));
    store.add(prefix + "/beta", Tensor<T>::zeros({channels}));
    store.add(prefix + "/running_mean", Tensor<T>::zeros({channels}), /*trainable=*/false);
    store.add(prefix + "/running_var", Tensor<T>::full({channels}, T(1)), /*trainable=*/false);
    store.add(prefix + "/batches", Tensor<T>::zeros({1}), /*trainable=*/false);
}

// Normalizes per channel over every leading axis. Train mode uses the biased
// (1/n) batch variance and folds it into the running estimates as
//   running <- momentum * running + (1 - momentum) * batch.
// Infer mode normalizes with the stored running statistics. When `capture`
// is given the batch statistics are additionally computed on the tape (used
// by pseudo-sample synthesis against stored statistics).
template <typename T>
Var<T> batchnorm(ParameterStore<T>& store, const std::string& prefix, const Var<T>& x, Mode mode,
                 double momentum = 0.9, double eps = 1e-5, BnStatCapture<T>* capture = nullptr) {
    const auto& sh = x->value.shape;
    if (sh.size() < 2) throw ShapeError("batchnorm expects rank >= 2, got " + shape_str(sh));
    auto gamma = store.var(prefix + "/gamma");
    auto beta = store.var(prefix + "/beta");
    const std::int64_t C = gamma->value.numel();
    if (sh.back() != C)
        throw ShapeError("batchnorm " + prefix + ": channels " + std::to_string(sh.back()) +
                         " != " + std::to_string(C));

    auto batch_stats = [&](Var<T>& m, Var<T>& v) {
        m = mean_channels(x);
        auto centered = sub(x, broadcast_channels(m, sh));
        v = mean_channels(mul(centered, centered));
    };

    if (mode == Mode::Train) {
        if (sh[0] < 2) throw ConfigError("batchnorm train mode requires batch size >= 2");
        Var<T> m, v;
        batch_stats(m, v);
        auto centered = sub(x, broadcast_channels(m, sh));
        auto inv = rsqrt(add_scalar(v, eps));
        auto y = add_channels(mul_channels(mul(centered, broadcast_channels(inv, sh)), gamma), beta);
        // Fold batch statistics into the running estimates.
        auto& rm = store.at(prefix + "/running_mean");
        auto& rv = store.at(prefix + "/running_var");
        for (std::int64_t c = 0; c < C; ++c) {
            rm.value.data[c] = static_cast<T>(momentum * rm.value.data[c] +
                                              (1.0 - momentum) * m->value.data[c]);
            rv.value.data[c] = static_cast<T>(momentum * rv.value.data[c] +
                                              (1.0 - momentum) * v->value.data[c]);
        }
        store.at(prefix + "/batches").value.data[0] += T(1);
        if (capture) *capture = {prefix, m, v};
        return y;
    }

    if (capture) {
        Var<T> m, v;
        batch_stats(m, v);
        *capture = {prefix, m, v};
    }
    auto rm = constant(store.at(prefix + "/running_mean").value);
    auto rv = constant(store.at(prefix + "/running_var").value);
    auto inv = rsqrt(add_scalar(rv, eps));
    auto centered = sub(x, broadcast_channels(rm, sh));
    return add_channels(mul_channels(mul(centered, broadcast_channels(inv, sh)), gamma), beta);
}

// Softmax over the last axis with optional temperature division.
template <typename T>
Var<T> softmax(const Var<T>& x, double temperature = 1.0) {
    if (temperature <= 0) throw ConfigError("softmax temperature must be > 0");
    return temperature == 1.0 ? softmax_last(x) : softmax_last(scale(x, 1.0 / temperature));
}

// Host-side argmax over the last axis.
template <typename T>
std::vector<std::int64_t> argmax_rows(const Tensor<T>& t) {
    const std::int64_t C = t.shape.back();
    const std::int64_t rows = t.numel() / C;
    std::vector<std::int64_t> out(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < C; ++c)
            if (t.data[r * C + c] > t.data[r * C + best]) best = c;
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

}  // namespace stip::nn
