// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-free knowledge distillation. Pseudo-samples start as Gaussian noise
// and are optimized so the teacher's batch activation statistics match the
// statistics stored in its batchnorm layers; the student then learns from
// the teacher's outputs on those pseudo-samples alone. Nothing in this
// header takes a dataset argument.

#include <string>
#include <vector>

#include "stip/embed.hpp"
#include "stip/models.hpp"
#include "stip/report.hpp"

namespace stip::distill {

using nn::Var;

// How the noise variable parameterizes pseudo-samples. Direct optimizes the
// input tensor itself; TokenMixture optimizes logits over the vocabulary and
// maps them through the model's own embedding/positional-encoding/repeat
// stack, so pseudo-samples share the real inputs' structure by construction.
enum class SynthSpace { Direct, TokenMixture };

struct DistillConfig {
    double mu = 0.0;
    double sigma = 1.0;
    double eta = 0.05;             // synthesis step size
    std::int64_t synth_steps = 200;
    double temperature = 4.0;
    double alpha = 0.2;            // Eq 6 weight on the KL term
    std::int64_t batch = 64;
    std::int64_t steps = 60;       // distillation optimizer steps
    std::int64_t refresh_every = 10;
    SynthSpace space = SynthSpace::TokenMixture;
    double logit_sigma = 3.0;      // logit noise scale (token-mixture mode)
    double adversarial_weight = 0; // student-aware synthesis weight (0 = plain Eq 3)

    void validate() const {
        if (sigma < 0) throw ConfigError("distill: sigma must be >= 0");
        if (alpha < 0 || alpha > 1) throw ConfigError("distill: alpha must be in [0,1]");
        if (temperature <= 0) throw ConfigError("distill: temperature must be > 0");
        if (eta <= 0) throw ConfigError("distill: eta must be > 0");
        if (batch < 2) throw ConfigError("distill: batch must be >= 2");
        if (refresh_every < 1) throw ConfigError("distill: refresh_every must be >= 1");
    }
};

// Differentiable map from mixture logits [B, N, V] to assembled inputs
// [B, N*K, C], mirroring the assembly pipeline (embedding lookup becomes a
// soft mixture; positional encoding and repeat expansion are identical).
template <typename T>
struct MixtureMapper {
    nn::Tensor<T> embedding;  // [V, C]
    std::int64_t seq_tokens = 0;
    std::int64_t repeat = 1;
    embed::RepeatMode mode = embed::RepeatMode::Tile;
    bool pe_after_repeat = false;

    static MixtureMapper from(const embed::EmbeddingMatrix& emb, std::int64_t seq_tokens,
                              std::int64_t repeat, embed::RepeatMode mode, bool pe_after) {
        MixtureMapper m;
        m.embedding = emb.vectors.template cast<T>();
        m.seq_tokens = seq_tokens;
        m.repeat = repeat;
        m.mode = mode;
        m.pe_after_repeat = pe_after;
        return m;
    }

    std::int64_t vocab() const { return embedding.dim(0); }
    std::int64_t channels() const { return embedding.dim(1); }

    Var<T> map(const Var<T>& logits) const {
        const auto& sh = logits->value.shape;
        if (sh.size() != 3 || sh[1] != seq_tokens || sh[2] != vocab())
            throw ShapeError("MixtureMapper: logits must be [B,N,V], got " + nn::shape_str(sh));
        const std::int64_t B = sh[0], N = seq_tokens, C = channels(), K = repeat;
        auto weights = nn::softmax_last(nn::reshape(logits, {B * N, vocab()}));
        auto rows = nn::reshape(nn::matmul(weights, nn::constant(embedding)), {B, N, C});
        auto add_pe = [&](Var<T> x, std::int64_t positions) {
            const auto pe = embed::positional_encoding<T>(positions, C);
            nn::Tensor<T> tiled({B, positions, C});
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t i = 0; i < positions * C; ++i)
                    tiled.data[b * positions * C + i] = pe.data[i];
            return nn::add(x, nn::constant(std::move(tiled)));
        };
        if (!pe_after_repeat) rows = add_pe(rows, N);
        if (K > 1) {
            // Constant expansion matrix: out[r] = in[src(r)].
            nn::Tensor<T> expand({B, N * K, N});
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t r = 0; r < N * K; ++r) {
                    const std::int64_t src =
                        mode == embed::RepeatMode::Tile ? r % N : r / K;
                    expand.data[(b * N * K + r) * N + src] = T(1);
                }
            rows = nn::bmm(nn::constant(std::move(expand)), rows);
        }
        if (pe_after_repeat) rows = add_pe(rows, N * K);
        return rows;
    }
};

// Per-channel running statistics of the teacher's batchnorm layers up to and
// including the tap layer. No real data is touched; these are the only
// real-data trace inside a trained teacher.
template <typename T>
struct TargetStats {
    struct Layer {
        std::string name;
        nn::Tensor<T> mean;
        nn::Tensor<T> variance;
    };
    std::vector<Layer> layers;
};

template <typename T>
TargetStats<T> capture_target_stats(const nn::ParameterStore<T>& store,
                                    const std::string& prefix) {
    TargetStats<T> stats;
    for (int i = 1; i <= 3; ++i) {
        const std::string bn = prefix + "/conv" + std::to_string(i) + "/bn";
        if (store.at(bn + "/batches").value.data[0] <= T(0))
            throw ConfigError("capture_target_stats: teacher batchnorm '" + bn +
                              "' has never seen a batch (untrained teacher)");
        stats.layers.push_back({bn, store.at(bn + "/running_mean").value,
                                store.at(bn + "/running_var").value});
    }
    return stats;
}

// Eq 2 over the captured batchnorm layers: per layer,
// (1/C) * (||mean - mean*||^2 + ||var - var*||^2), summed across layers.
template <typename T>
Var<T> stat_match_loss(const std::vector<nn::BnStatCapture<T>>& caps,
                       const TargetStats<T>& target) {
    if (caps.size() != target.layers.size())
        throw ShapeError("stat_match_loss: capture/target layer count mismatch");
    Var<T> total;
    for (std::size_t i = 0; i < caps.size(); ++i) {
        const auto& cap = caps[i];
        const auto& tgt = target.layers[i];
        const auto C = static_cast<double>(tgt.mean.numel());
        auto dm = nn::sub(cap.batch_mean, nn::constant(tgt.mean));
        auto dv = nn::sub(cap.batch_var, nn::constant(tgt.variance));
        auto term = nn::scale(
            nn::add(nn::sum_all(nn::mul(dm, dm)), nn::sum_all(nn::mul(dv, dv))), 1.0 / C);
        total = total ? nn::add(total, term) : term;
    }
    return total;
}

template <typename T>
struct SynthesisResult {
    double initial_loss = 0;
    double final_loss = 0;
    std::vector<double> loss_history;
};

// Eq 3 core: z <- z - eta * dL/dz with per-step backtracking (halve eta for
// the step while the candidate does not improve; a step that cannot improve
// leaves z unchanged, so the final loss never exceeds the initial one).
// loss_and_grad(z, grad_out) evaluates the matching loss and, when grad_out
// is non-null, writes dL/dz into it.
template <typename T, typename LossAndGrad>
SynthesisResult<T> synthesize_match(LossAndGrad&& loss_and_grad, const DistillConfig& dc,
                                    nn::Tensor<T>& z) {
    dc.validate();
    SynthesisResult<T> res;
    try {
        res.initial_loss = loss_and_grad(z, nullptr);
        double current = res.initial_loss;
        for (std::int64_t step = 0; step < dc.synth_steps; ++step) {
            nn::Tensor<T> grad;
            loss_and_grad(z, &grad);
            double eta = dc.eta;
            nn::Tensor<T> candidate = z;
            double cand_loss = current;
            bool improved = false;
            for (int halving = 0; halving < 12; ++halving) {
                for (std::int64_t i = 0; i < z.numel(); ++i)
                    candidate.data[i] = z.data[i] - static_cast<T>(eta) * grad.data[i];
                cand_loss = loss_and_grad(candidate, nullptr);
                if (cand_loss <= current) {
                    improved = true;
                    break;
                }
                eta *= 0.5;
            }
            if (improved) {
                z = std::move(candidate);
                current = cand_loss;
            }
            res.loss_history.push_back(current);
        }
        res.final_loss = current;
    } catch (const NumericError& e) {
        throw NumericError(std::string("pseudo-sample synthesis diverged: ") + e.what() +
                           "; reduce eta (currently " + format_float(dc.eta) + ")");
    }
    return res;
}

// Teacher-driven synthesis: matches the pseudo-batch's activation statistics
// at the teacher's batchnorm layers against the stored target statistics.
// Teacher parameters are never updated.
template <typename T>
SynthesisResult<T> synthesize_pseudo(nn::ParameterStore<T>& teacher, const std::string& prefix,
                                     const model::TeacherConfig& cfg,
                                     const TargetStats<T>& target, const DistillConfig& dc,
                                     nn::Tensor<T>& z) {
    auto loss_and_grad = [&](const nn::Tensor<T>& zt, nn::Tensor<T>* grad_out) {
        auto zv = nn::input(zt, /*requires_grad=*/grad_out != nullptr);
        auto out = model::teacher_forward(teacher, prefix, zv, nn::Mode::Infer, cfg,
                                          /*capture_stats=*/true);
        auto loss = stat_match_loss(out.bn_caps, target);
        if (grad_out) {
            nn::backward(loss);
            *grad_out = zv->grad;
            teacher.zero_grad();  // discard parameter gradients from the tap path
        }
        return static_cast<double>(loss->value.data[0]);
    };
    return synthesize_match<T>(loss_and_grad, dc, z);
}

// Optional student-aware synthesis: weight > 0 subtracts the teacher/student
// KL from the matching loss, steering pseudo-samples toward regions where
// the student still disagrees with the teacher.
template <typename T>
struct StudentHook {
    nn::ParameterStore<T>* store = nullptr;
    std::string prefix;
    model::StudentConfig cfg;
    double weight = 0;
};

namespace detail {

template <typename T>
Var<T> disagreement_kl(const Var<T>& teacher_probs, const Var<T>& student_probs) {
    constexpr double kFloor = 1e-12;
    nn::Tensor<T> p = teacher_probs->value;
    for (auto& v : p.data) v = std::max(v, static_cast<T>(kFloor));
    nn::Tensor<T> logp = p;
    for (auto& v : logp.data) v = static_cast<T>(std::log(static_cast<double>(v)));
    auto terms = nn::mul(nn::constant(p), nn::sub(nn::constant(logp), nn::vlog(student_probs)));
    return nn::scale(nn::sum_all(terms), 1.0 / static_cast<double>(p.shape[0]));
}

}  // namespace detail

// Token-mixture synthesis: the noise variable is a logit tensor over the
// vocabulary; the mapped pseudo-batch is returned through `x_out`.
template <typename T>
SynthesisResult<T> synthesize_pseudo_tokens(nn::ParameterStore<T>& teacher,
                                            const std::string& prefix,
                                            const model::TeacherConfig& cfg,
                                            const TargetStats<T>& target,
                                            const DistillConfig& dc,
                                            const MixtureMapper<T>& mapper,
                                            nn::Tensor<T>& logits, nn::Tensor<T>* x_out,
                                            const StudentHook<T>* hook = nullptr) {
    auto loss_and_grad = [&](const nn::Tensor<T>& zt, nn::Tensor<T>* grad_out) {
        auto zv = nn::input(zt, /*requires_grad=*/grad_out != nullptr);
        auto x = mapper.map(zv);
        auto out = model::teacher_forward(teacher, prefix, x, nn::Mode::Infer, cfg,
                                          /*capture_stats=*/true);
        auto loss = stat_match_loss(out.bn_caps, target);
        if (hook && hook->weight > 0) {
            auto student_out =
                model::student_forward(*hook->store, hook->prefix, x, nn::Mode::Infer, hook->cfg);
            auto kl = detail::disagreement_kl(out.probs, student_out.probs);
            loss = nn::sub(loss, nn::scale(kl, hook->weight));
        }
        if (grad_out) {
            nn::backward(loss);
            *grad_out = zv->grad;
            teacher.zero_grad();
            if (hook && hook->weight > 0) hook->store->zero_grad();
        }
        return static_cast<double>(loss->value.data[0]);
    };
    auto res = synthesize_match<T>(loss_and_grad, dc, logits);
    if (x_out) {
        auto zv = nn::input(logits, false);
        *x_out = mapper.map(zv)->value;
    }
    return res;
}

template <typename T>
struct KdLosses {
    Var<T> kl;
    Var<T> clf;
    Var<T> concat;
    bool teacher_probs_clamped = false;
};

// Eq 4-6. KL(P_teacher || P_student) with the student softened by T, hard
// pseudo-label cross-entropy on the T=1 path, and the convex combination
// L = alpha * KL + (1 - alpha) * CLF.
template <typename T>
KdLosses<T> kd_losses(const nn::Tensor<T>& teacher_probs, const Var<T>& student_logits,
                      double temperature, double alpha) {
    if (temperature <= 0) throw ConfigError("kd_losses: temperature must be > 0");
    if (alpha < 0 || alpha > 1) throw ConfigError("kd_losses: alpha must be in [0,1]");
    const auto& sh = teacher_probs.shape;
    if (sh.size() != 2 || !(student_logits->value.shape == sh))
        throw ShapeError("kd_losses: teacher probs and student logits must both be [B,n]");
    const std::int64_t B = sh[0], N = sh[1];

    KdLosses<T> out;
    nn::Tensor<T> p = teacher_probs;
    for (auto& v : p.data) {
        if (v < T(1e-12)) {
            v = T(1e-12);
            out.teacher_probs_clamped = true;
        }
    }
    nn::Tensor<T> logp = p;
    for (auto& v : logp.data) v = static_cast<T>(std::log(static_cast<double>(v)));

    auto p_const = nn::constant(p);
    auto student_soft = nn::softmax_last(nn::scale(student_logits, 1.0 / temperature));
    auto kl_terms = nn::mul(p_const, nn::sub(nn::constant(logp), nn::vlog(student_soft)));
    out.kl = nn::scale(nn::sum_all(kl_terms), 1.0 / static_cast<double>(B));

    // Hard pseudo-labels from the teacher's argmax.
    nn::Tensor<T> onehot({B, N});
    const auto labels = nn::argmax_rows(teacher_probs);
    for (std::int64_t b = 0; b < B; ++b) onehot.at(b, labels[static_cast<std::size_t>(b)]) = T(1);
    auto student_hard = nn::softmax_last(student_logits);
    out.clf = nn::scale(nn::sum_all(nn::mul(nn::constant(onehot), nn::vlog(student_hard))),
                        -1.0 / static_cast<double>(B));

    out.concat = nn::add(nn::scale(out.kl, alpha), nn::scale(out.clf, 1.0 - alpha));
    return out;
}

template <typename T>
struct DistillRun {
    std::vector<harness::DistillHistoryRow> history;
    SynthesisResult<T> last_synthesis;
};

// The whole distillation loop. By construction it takes no dataset: the
// student sees only synthesized pseudo-samples and teacher outputs. In
// TokenMixture mode the model's own embedding artifact parameterizes the
// pseudo-samples (pass it via `mapper`); Direct mode optimizes the input
// tensor itself.
template <typename T>
DistillRun<T> distill_student(nn::ParameterStore<T>& teacher, const std::string& teacher_prefix,
                              const model::TeacherConfig& teacher_cfg,
                              nn::ParameterStore<T>& student, const std::string& student_prefix,
                              const model::StudentConfig& student_cfg, std::int64_t seq_len,
                              std::int64_t channels, const DistillConfig& dc,
                              const nn::OptimizerConfig& sgd, std::uint64_t seed,
                              const MixtureMapper<T>* mapper = nullptr) {
    dc.validate();
    sgd.validate();
    if (dc.space == SynthSpace::TokenMixture) {
        if (!mapper)
            throw ConfigError("distill_student: token-mixture synthesis needs the embedding "
                              "artifact (MixtureMapper)");
        if (mapper->seq_tokens * mapper->repeat != seq_len || mapper->channels() != channels)
            throw ShapeError("distill_student: mapper shape does not match the model input");
    }
    const auto target = capture_target_stats(teacher, teacher_prefix);
    Rng rng(seed);

    DistillRun<T> run;
    nn::Tensor<T> z({dc.batch, seq_len, channels});
    nn::Tensor<T> logits;
    if (dc.space == SynthSpace::TokenMixture)
        logits = nn::Tensor<T>({dc.batch, mapper->seq_tokens, mapper->vocab()});
    double current_mse = 0;
    for (std::int64_t step = 0; step < dc.steps; ++step) {
        if (step % dc.refresh_every == 0) {
            if (dc.space == SynthSpace::TokenMixture) {
                for (auto& v : logits.data) v = static_cast<T>(rng.normal(0.0, dc.logit_sigma));
                StudentHook<T> hook{&student, student_prefix, student_cfg,
                                    dc.adversarial_weight};
                run.last_synthesis = synthesize_pseudo_tokens(teacher, teacher_prefix,
                                                              teacher_cfg, target, dc, *mapper,
                                                              logits, &z, &hook);
                // Report the pure matching loss regardless of the synthesis
                // objective's extra terms.
                auto out = model::teacher_forward(teacher, teacher_prefix, nn::constant(z),
                                                  nn::Mode::Infer, teacher_cfg, true);
                current_mse =
                    static_cast<double>(stat_match_loss(out.bn_caps, target)->value.data[0]);
            } else {
                for (auto& v : z.data) v = static_cast<T>(rng.normal(dc.mu, dc.sigma));
                run.last_synthesis = synthesize_pseudo(teacher, teacher_prefix, teacher_cfg,
                                                       target, dc, z);
                current_mse = run.last_synthesis.final_loss;
            }
        }
        // Teacher prediction on the pseudo-batch, detached.
        auto teacher_out = model::teacher_forward(teacher, teacher_prefix, nn::constant(z),
                                                  nn::Mode::Infer, teacher_cfg);
        const nn::Tensor<T> probs = teacher_out.probs->value;

        student.zero_grad();
        auto student_out =
            model::student_forward(student, student_prefix, nn::constant(z), nn::Mode::Train,
                                   student_cfg);
        auto losses = kd_losses(probs, student_out.logits, dc.temperature, dc.alpha);
        nn::backward(losses.concat);
        nn::optimizer_step(student, sgd);

        run.history.push_back({step, current_mse,
                               static_cast<double>(losses.kl->value.data[0]),
                               static_cast<double>(losses.clf->value.data[0]),
                               static_cast<double>(losses.concat->value.data[0])});
        teacher.zero_grad();
    }
    return run;
}

}  // namespace stip::distill
