// SPDX-License-Identifier: Apache-2.0
#pragma once

// Teacher and student network assembly. The teacher runs the adaptive fusion
// module into a three-layer conv stack (filters 64/128/256, kernel 3, each
// conv -> batchnorm -> relu -> maxpool(2,2)) and a softmax head; the
// activation tap for distillation is the post-pool output of conv-3. The
// student is conv(64) -> PSA -> conv(128) -> global max pool -> two dense
// layers with batchnorm -> softmax.

#include <string>
#include <utility>
#include <vector>

#include "stip/fusion.hpp"
#include "stip/layers.hpp"

namespace stip::model {

using nn::Var;

inline constexpr std::int64_t kTeacherFilters[3] = {64, 128, 256};
inline constexpr std::int64_t kStudentFilters[2] = {64, 128};
inline constexpr std::int64_t kClasses = 2;

struct TeacherConfig {
    fusion::FusionConfig fusion;
    double bn_momentum = 0.9;
};

struct StudentConfig {
    std::int64_t hidden = 64;
    std::int64_t psa_groups = 4;
    double bn_momentum = 0.9;
};

using ShapeTable = std::vector<std::pair<std::string, nn::Shape>>;

// Closed-form per-layer output shapes (sequence x channels per sample).
inline ShapeTable teacher_shape_table(std::int64_t seq_len, std::int64_t channels,
                                      const TeacherConfig& cfg) {
    const std::int64_t lz = seq_len >> cfg.fusion.stages;
    ShapeTable t;
    t.push_back({"input", {seq_len, channels}});
    t.push_back({"fusion", {lz, 3 * channels}});
    std::int64_t l = lz;
    for (int i = 0; i < 3; ++i) {
        t.push_back({"conv" + std::to_string(i + 1), {l, kTeacherFilters[i]}});
        l /= 2;
        t.push_back({"pool" + std::to_string(i + 1), {l, kTeacherFilters[i]}});
    }
    t.push_back({"flatten", {l * kTeacherFilters[2]}});
    t.push_back({"probs", {kClasses}});
    return t;
}

inline void validate_teacher_shape(std::int64_t seq_len, std::int64_t channels,
                                   const TeacherConfig& cfg) {
    cfg.fusion.validate(channels);
    const std::int64_t div = std::int64_t(1) << cfg.fusion.stages;
    if (seq_len % div != 0)
        throw ConfigError("teacher: sequence length " + std::to_string(seq_len) +
                          " not divisible by 2^stages = " + std::to_string(div));
    const std::int64_t lz = seq_len / div;
    if (lz % 8 != 0 || lz < 8)
        throw ConfigError("teacher: fusion output length " + std::to_string(lz) +
                          " must be a positive multiple of 8 for the three pooling layers");
}

template <typename T>
void teacher_init(nn::ParameterStore<T>& store, const std::string& prefix, std::int64_t seq_len,
                  std::int64_t channels, const TeacherConfig& cfg, Rng& rng) {
    validate_teacher_shape(seq_len, channels, cfg);
    fusion::init_fusion_module(store, prefix + "/fusion", channels, cfg.fusion, rng);
    std::int64_t cin = 3 * channels;
    for (int i = 0; i < 3; ++i) {
        const std::string cp = prefix + "/conv" + std::to_string(i + 1);
        nn::init_conv1d(store, cp, 3, cin, kTeacherFilters[i], rng);
        nn::init_batchnorm(store, cp + "/bn", kTeacherFilters[i]);
        cin = kTeacherFilters[i];
    }
    const std::int64_t lz = seq_len >> cfg.fusion.stages;
    nn::init_dense(store, prefix + "/head", (lz / 8) * kTeacherFilters[2], kClasses, rng);
}

template <typename T>
struct TeacherOut {
    Var<T> probs;
    Var<T> logits;
    Var<T> tap;  // post-pool conv-3 output, the distillation prior
    std::vector<nn::BnStatCapture<T>> bn_caps;
};

template <typename T>
TeacherOut<T> teacher_forward(nn::ParameterStore<T>& store, const std::string& prefix,
                              const Var<T>& x, nn::Mode mode, const TeacherConfig& cfg,
                              bool capture_stats = false,
                              fusion::FusionTrace<T>* trace = nullptr,
                              ShapeTable* shapes = nullptr) {
    const auto& sh = x->value.shape;
    if (sh.size() != 3) throw ShapeError("teacher_forward expects [B,L,C]");
    auto record = [&](const char* name, const Var<T>& v) {
        if (shapes)
            shapes->push_back({name, nn::Shape(v->value.shape.begin() + 1, v->value.shape.end())});
    };

    TeacherOut<T> out;
    auto f = fusion::fusion_forward(store, prefix + "/fusion", x, cfg.fusion, trace);
    record("fusion", f);
    auto h = f;
    for (int i = 0; i < 3; ++i) {
        const std::string cp = prefix + "/conv" + std::to_string(i + 1);
        h = nn::conv1d_layer(store, cp, h);
        record(("conv" + std::to_string(i + 1)).c_str(), h);
        nn::BnStatCapture<T> cap;
        h = nn::batchnorm(store, cp + "/bn", h, mode, cfg.bn_momentum, 1e-5,
                          capture_stats ? &cap : nullptr);
        if (capture_stats) out.bn_caps.push_back(std::move(cap));
        h = nn::maxpool1d(nn::relu(h), 2, 2);
        record(("pool" + std::to_string(i + 1)).c_str(), h);
    }
    out.tap = h;
    const auto& hs = h->value.shape;
    auto flat = nn::reshape(h, {hs[0], hs[1] * hs[2]});
    record("flatten", flat);
    out.logits = nn::dense(store, prefix + "/head", flat);
    out.probs = nn::softmax(out.logits);
    record("probs", out.probs);
    return out;
}

template <typename T>
void student_init(nn::ParameterStore<T>& store, const std::string& prefix, std::int64_t channels,
                  const StudentConfig& cfg, Rng& rng) {
    if (kStudentFilters[0] % cfg.psa_groups != 0)
        throw ConfigError("student: psa_groups must divide 64");
    nn::init_conv1d(store, prefix + "/conv1", 3, channels, kStudentFilters[0], rng);
    fusion::init_psa(store, prefix + "/psa", kStudentFilters[0], cfg.psa_groups, rng);
    nn::init_conv1d(store, prefix + "/conv2", 3, kStudentFilters[0], kStudentFilters[1], rng);
    nn::init_dense(store, prefix + "/fc1", kStudentFilters[1], cfg.hidden, rng);
    nn::init_batchnorm(store, prefix + "/fc1/bn", cfg.hidden);
    nn::init_dense(store, prefix + "/fc2", cfg.hidden, kClasses, rng);
}

template <typename T>
struct StudentOut {
    Var<T> probs;
    Var<T> logits;
};

template <typename T>
StudentOut<T> student_forward(nn::ParameterStore<T>& store, const std::string& prefix,
                              const Var<T>& x, nn::Mode mode, const StudentConfig& cfg,
                              fusion::FusionTrace<T>* trace = nullptr) {
    const auto& sh = x->value.shape;
    if (sh.size() != 3) throw ShapeError("student_forward expects [B,L,C]");
    auto h = nn::relu(nn::conv1d_layer(store, prefix + "/conv1", x));
    h = fusion::psa(store, prefix + "/psa", h, cfg.psa_groups, trace);
    h = nn::relu(nn::conv1d_layer(store, prefix + "/conv2", h));
    // Global average pooling keeps the head independent of sequence length
    // and stable under the pseudo/real distribution shift of distillation.
    h = nn::seq_mean(h);
    h = nn::dense(store, prefix + "/fc1", h);
    h = nn::relu(nn::batchnorm(store, prefix + "/fc1/bn", h, mode, cfg.bn_momentum));
    StudentOut<T> out;
    out.logits = nn::dense(store, prefix + "/fc2", h);
    out.probs = nn::softmax(out.logits);
    return out;
}

// Closed-form trainable parameter counts (documented invariants: the student
// stays under half the teacher under the default configuration).
inline std::int64_t teacher_param_count(std::int64_t seq_len, std::int64_t channels,
                                        const TeacherConfig& cfg) {
    std::int64_t total = fusion::fusion_param_count(channels, cfg.fusion);
    std::int64_t cin = 3 * channels;
    for (int i = 0; i < 3; ++i) {
        total += 3 * cin * kTeacherFilters[i] + kTeacherFilters[i];  // conv w + b
        total += 2 * kTeacherFilters[i];                             // bn gamma + beta
        cin = kTeacherFilters[i];
    }
    const std::int64_t lz = seq_len >> cfg.fusion.stages;
    total += (lz / 8) * kTeacherFilters[2] * kClasses + kClasses;
    return total;
}

inline std::int64_t student_param_count(std::int64_t channels, const StudentConfig& cfg) {
    std::int64_t total = 3 * channels * kStudentFilters[0] + kStudentFilters[0];
    total += fusion::psa_param_count(kStudentFilters[0], cfg.psa_groups);
    total += 3 * kStudentFilters[0] * kStudentFilters[1] + kStudentFilters[1];
    total += kStudentFilters[1] * cfg.hidden + cfg.hidden;
    total += 2 * cfg.hidden;  // bn
    total += cfg.hidden * kClasses + kClasses;
    return total;
}

}  // namespace stip::model
