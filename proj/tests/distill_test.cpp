// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck_util.hpp"
#include "oracles.hpp"
#include "stip/distill.hpp"

using namespace stip;
using namespace stip::nn;
using namespace stip::model;
using namespace stip::distill;

namespace {

TeacherConfig small_teacher_cfg(std::int64_t stages = 1) {
    TeacherConfig cfg;
    cfg.fusion.numhead = 4;
    cfg.fusion.groups = 4;
    cfg.fusion.memory_slots = 4;
    cfg.fusion.stages = stages;
    cfg.fusion.mb_expansion = 2;
    return cfg;
}

constexpr std::int64_t kL = 32;  // sequence length for the small teacher
constexpr std::int64_t kC = 8;

}  // namespace

TEST(Models, TeacherForwardOnZerosIsValidDistribution) {
    Rng rng(61);
    const auto cfg = small_teacher_cfg();
    ParameterStore<double> store;
    teacher_init(store, "teacher", kL, kC, cfg, rng);
    auto x = input(Tensor<double>::zeros({3, kL, kC}));
    auto out = teacher_forward(store, "teacher", x, Mode::Infer, cfg);
    ASSERT_EQ(out.probs->value.shape, (Shape{3, 2}));
    for (std::int64_t b = 0; b < 3; ++b) {
        double sum = 0;
        for (std::int64_t c = 0; c < 2; ++c) {
            EXPECT_GE(out.probs->value.at(b, c), 0.0);
            sum += out.probs->value.at(b, c);
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
}

TEST(Models, ShapeTableMatchesForwardProbes) {
    Rng rng(62);
    for (std::int64_t stages : {1, 2}) {
        const auto cfg = small_teacher_cfg(stages);
        const std::int64_t L = stages == 1 ? 32 : 64;
        ParameterStore<double> store;
        teacher_init(store, "teacher", L, kC, cfg, rng);
        auto x = input(normal_init<double>(rng, {2, L, kC}, 0, 1));
        ShapeTable probes;
        teacher_forward(store, "teacher", x, Mode::Train, cfg, false,
                        static_cast<fusion::FusionTrace<double>*>(nullptr), &probes);
        const auto expected = teacher_shape_table(L, kC, cfg);
        // The closed-form table covers input + every probe.
        ASSERT_EQ(probes.size() + 1, expected.size());
        for (std::size_t i = 0; i < probes.size(); ++i) {
            EXPECT_EQ(probes[i].first, expected[i + 1].first);
            EXPECT_EQ(probes[i].second, expected[i + 1].second) << probes[i].first;
        }
    }
}

TEST(Models, ShapeInfeasibleConfigsRejectedAtBuildTime) {
    Rng rng(63);
    const auto cfg = small_teacher_cfg(2);
    ParameterStore<double> store;
    // L=40: divisible by 4 but fusion output 10 is not a multiple of 8.
    EXPECT_THROW(teacher_init(store, "t1", 40, kC, cfg, rng), ConfigError);
    // L=34: not divisible by 2^stages.
    EXPECT_THROW(teacher_init(store, "t2", 34, kC, cfg, rng), ConfigError);
}

TEST(Models, ParamCountsMatchClosedFormAndStudentIsLighter) {
    Rng rng(64);
    const auto tcfg = small_teacher_cfg();
    StudentConfig scfg;
    ParameterStore<double> store;
    teacher_init(store, "teacher", kL, kC, tcfg, rng);
    student_init(store, "student", kC, scfg, rng);
    EXPECT_EQ(store.count_trainable("teacher"), teacher_param_count(kL, kC, tcfg));
    EXPECT_EQ(store.count_trainable("student"), student_param_count(kC, scfg));
    EXPECT_LT(store.count_trainable("student"), store.count_trainable("teacher"));
}

TEST(Models, DefaultConfigStudentUnderHalfTeacher) {
    // Closed-form counts at the paper-default configuration (N=256, K=2,
    // C=300, stages=2): no tensors are allocated here.
    TeacherConfig tcfg;
    tcfg.fusion = fusion::FusionConfig{};
    StudentConfig scfg;
    const auto teacher = teacher_param_count(512, 300, tcfg);
    const auto student = student_param_count(300, scfg);
    EXPECT_LT(student * 2, teacher);
}

TEST(Models, StudentForwardShapeAndDistribution) {
    Rng rng(65);
    StudentConfig scfg;
    ParameterStore<double> store;
    student_init(store, "student", kC, scfg, rng);
    auto x = input(normal_init<double>(rng, {4, kL, kC}, 0, 1));
    auto out = student_forward(store, "student", x, Mode::Train, scfg);
    ASSERT_EQ(out.probs->value.shape, (Shape{4, 2}));
    for (std::int64_t b = 0; b < 4; ++b)
        EXPECT_NEAR(out.probs->value.at(b, 0) + out.probs->value.at(b, 1), 1.0, 1e-6);
    // Sequence-length independence of the head (global pooling).
    auto x2 = input(normal_init<double>(rng, {4, 2 * kL, kC}, 0, 1));
    auto out2 = student_forward(store, "student", x2, Mode::Train, scfg);
    EXPECT_EQ(out2.probs->value.shape, (Shape{4, 2}));
}

TEST(TargetStats, CaptureShapesAndUntrainedRejection) {
    Rng rng(66);
    const auto cfg = small_teacher_cfg();
    ParameterStore<double> store;
    teacher_init(store, "teacher", kL, kC, cfg, rng);
    EXPECT_THROW(capture_target_stats(store, "teacher"), ConfigError);

    auto x = input(normal_init<double>(rng, {4, kL, kC}, 0, 1));
    teacher_forward(store, "teacher", x, Mode::Train, cfg);
    const auto stats = capture_target_stats(store, "teacher");
    ASSERT_EQ(stats.layers.size(), 3u);
    EXPECT_EQ(stats.layers[0].mean.numel(), 64);
    EXPECT_EQ(stats.layers[1].mean.numel(), 128);
    EXPECT_EQ(stats.layers[2].mean.numel(), 256);
    for (const auto& l : stats.layers) EXPECT_EQ(l.mean.shape, l.variance.shape);
}

TEST(TargetStats, CaptureIsReadOnly) {
    Rng rng(67);
    const auto cfg = small_teacher_cfg();
    ParameterStore<double> store;
    teacher_init(store, "teacher", kL, kC, cfg, rng);
    auto x = input(normal_init<double>(rng, {4, kL, kC}, 0, 1));
    teacher_forward(store, "teacher", x, Mode::Train, cfg);

    auto probe = input(normal_init<double>(rng, {2, kL, kC}, 0, 1));
    const auto before = teacher_forward(store, "teacher", probe, Mode::Infer, cfg).probs->value;
    const auto checksum_before = store.checksum();
    capture_target_stats(store, "teacher");
    const auto after = teacher_forward(store, "teacher", probe, Mode::Infer, cfg).probs->value;
    EXPECT_EQ(before.data, after.data);
    EXPECT_EQ(store.checksum(), checksum_before);
}

// Scalar propagation on a single conv+bn layer: with momentum 0 the stored
// running mean equals the batch mean of the conv output, which a direct
// convolution oracle reproduces.
TEST(TargetStats, RunningMeanMatchesScalarPropagation) {
    Rng rng(68);
    ParameterStore<double> store;
    init_conv1d(store, "conv", 3, 2, 4, rng);
    init_batchnorm(store, "conv/bn", 4);
    const double c0 = 0.37;
    auto x = input(Tensor<double>::full({2, 6, 2}, c0));
    auto y = conv1d_layer(store, "conv", x);
    batchnorm(store, "conv/bn", y, Mode::Train, /*momentum=*/0.0);

    int lout = 0;
    const auto ref = oracle::conv1d(x->value.data, 2, 6, 2, store.at("conv/w").value.data, 3, 4,
                                    store.at("conv/b").value.data, 1, 1, &lout);
    for (std::int64_t c = 0; c < 4; ++c) {
        double mean = 0;
        for (int r = 0; r < 2 * lout; ++r) mean += ref[static_cast<std::size_t>(r) * 4 + c];
        mean /= 2 * lout;
        EXPECT_NEAR(store.at("conv/bn/running_mean").value.data[c], mean, 1e-12);
    }
}

TEST(Synthesis, SigmaZeroInitializesToMuExactly) {
    Rng rng(69);
    const double mu = 0.8;
    Tensor<double> z({4, 8, 2});
    for (auto& v : z.data) v = rng.normal(mu, 0.0);
    for (double v : z.data) EXPECT_DOUBLE_EQ(v, mu);
}

TEST(Synthesis, FirstStepDecreasesLoss) {
    // Quadratic toy: loss = ||mean(z) - target||^2; gradient descent must
    // strictly improve on the first step at a nonzero gradient.
    DistillConfig dc;
    dc.synth_steps = 1;
    dc.eta = 0.5;
    Tensor<double> z({4, 4, 1});
    Rng rng(70);
    for (auto& v : z.data) v = rng.normal(0, 1);
    const double target = 3.0;
    auto loss_and_grad = [&](const Tensor<double>& zt, Tensor<double>* grad) {
        auto zv = input(zt, grad != nullptr);
        auto m = mean_all(zv);
        auto d = add_scalar(m, -target);
        auto loss = mul(d, d);
        if (grad) {
            backward(loss);
            *grad = zv->grad;
        }
        return loss->value.data[0];
    };
    const auto res = synthesize_match<double>(loss_and_grad, dc, z);
    EXPECT_LT(res.final_loss, res.initial_loss);
}

TEST(Synthesis, LinearToyTeacherReachesAnalyticMean) {
    // 1-channel linear teacher: tap activation = w * z. Matching the batch
    // mean of the activation to mu* forces mean(z) -> mu* / w (closed-form
    // least squares). Variance is matched simultaneously.
    const double w = 2.0, target_mean = 1.2, target_var = 0.5;
    DistillConfig dc;
    dc.synth_steps = 400;
    dc.eta = 0.2;
    Tensor<double> z({8, 4, 1});
    Rng rng(71);
    for (auto& v : z.data) v = rng.normal(0, 1);
    auto loss_and_grad = [&](const Tensor<double>& zt, Tensor<double>* grad) {
        auto zv = input(zt, grad != nullptr);
        auto act = scale(zv, w);
        auto m = mean_all(act);
        auto centered = add_scalar(act, -static_cast<double>(m->value.data[0]));
        auto var = mean_all(mul(centered, centered));
        auto dm = add_scalar(m, -target_mean);
        auto dv = add_scalar(var, -target_var);
        auto loss = add(mul(dm, dm), mul(dv, dv));
        if (grad) {
            backward(loss);
            *grad = zv->grad;
        }
        return loss->value.data[0];
    };
    const auto res = synthesize_match<double>(loss_and_grad, dc, z);
    EXPECT_LE(res.final_loss, res.initial_loss);
    double mean = 0;
    for (double v : z.data) mean += v;
    mean /= static_cast<double>(z.numel());
    EXPECT_NEAR(mean, target_mean / w, 1e-3);
}

TEST(Synthesis, TeacherDrivenSynthesisReducesLossAndPreservesTeacher) {
    Rng rng(72);
    const auto cfg = small_teacher_cfg();
    ParameterStore<double> store;
    teacher_init(store, "teacher", kL, kC, cfg, rng);
    // Give the teacher some batch history so stats are meaningful.
    for (int i = 0; i < 3; ++i) {
        auto x = input(normal_init<double>(rng, {4, kL, kC}, 0.5, 1.5));
        teacher_forward(store, "teacher", x, Mode::Train, cfg);
    }
    const auto target = capture_target_stats(store, "teacher");
    const auto checksum = store.checksum();

    DistillConfig dc;
    dc.synth_steps = 20;
    dc.eta = 0.05;
    dc.batch = 4;
    Tensor<double> z({4, kL, kC});
    for (auto& v : z.data) v = rng.normal(0, 1);
    const auto res = synthesize_pseudo(store, "teacher", cfg, target, dc, z);
    EXPECT_LE(res.final_loss, res.initial_loss);
    EXPECT_LT(res.final_loss, res.initial_loss * 0.9);  // measurable progress
    EXPECT_EQ(store.checksum(), checksum);
}

TEST(KdLosses, IdenticalDistributionsGiveZeroKl) {
    Tensor<double> p({2, 2}, {0.7, 0.3, 0.2, 0.8});
    Tensor<double> logits({2, 2});
    for (std::int64_t i = 0; i < 4; ++i) logits.data[i] = std::log(p.data[i]);
    auto lv = input(logits);
    const auto out = kd_losses(p, lv, /*temperature=*/1.0, /*alpha=*/0.5);
    EXPECT_NEAR(out.kl->value.data[0], 0.0, 1e-12);
}

TEST(KdLosses, HandComputedKlValue) {
    // P_teacher = [0.9, 0.1], P_student = [0.5, 0.5] at T=1:
    // KL = 0.9 ln(0.9/0.5) + 0.1 ln(0.1/0.5) ~ 0.3681 (direct summation).
    Tensor<double> p({1, 2}, {0.9, 0.1});
    auto logits = input(Tensor<double>::from({1, 2}, {0.0, 0.0}));
    const auto out = kd_losses(p, logits, 1.0, 0.2);
    const double expected = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    EXPECT_NEAR(out.kl->value.data[0], expected, 1e-12);
    EXPECT_NEAR(out.kl->value.data[0], 0.3681, 1e-4);
}

TEST(KdLosses, AlphaEndpointsAreExactAtSixtyFourBit) {
    Rng rng(73);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<double> p({3, 2});
        for (std::int64_t b = 0; b < 3; ++b) {
            const double q = rng.uniform(0.05, 0.95);
            p.at(b, 0) = q;
            p.at(b, 1) = 1 - q;
        }
        auto logits = input(normal_init<double>(rng, {3, 2}, 0, 2));
        const auto at1 = kd_losses(p, logits, 3.0, 1.0);
        EXPECT_EQ(at1.concat->value.data[0], at1.kl->value.data[0]);  // bitwise
        const auto at0 = kd_losses(p, logits, 3.0, 0.0);
        EXPECT_EQ(at0.concat->value.data[0], at0.clf->value.data[0]);  // bitwise
    }
}

TEST(KdLosses, ConvexCombinationBound) {
    Rng rng(74);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor<double> p({2, 2});
        for (std::int64_t b = 0; b < 2; ++b) {
            const double q = rng.uniform(0.01, 0.99);
            p.at(b, 0) = q;
            p.at(b, 1) = 1 - q;
        }
        auto logits = input(normal_init<double>(rng, {2, 2}, 0, 3));
        const double alpha = rng.uniform(0, 1);
        const auto out = kd_losses(p, logits, rng.uniform(0.5, 8.0), alpha);
        const double kl = out.kl->value.data[0], clf = out.clf->value.data[0],
                     concat = out.concat->value.data[0];
        EXPECT_GE(concat, std::min(kl, clf) - 1e-12);
        EXPECT_LE(concat, std::max(kl, clf) + 1e-12);
    }
}

TEST(KdLosses, ClampsDegenerateTeacherRows) {
    Tensor<double> p({1, 2}, {1.0, 0.0});  // zero probability gets clamped
    auto logits = input(Tensor<double>::from({1, 2}, {0.0, 0.0}));
    const auto out = kd_losses(p, logits, 1.0, 0.5);
    EXPECT_TRUE(out.teacher_probs_clamped);
    EXPECT_TRUE(std::isfinite(out.kl->value.data[0]));
}

TEST(KdLosses, GradCheckThroughStudentLogits) {
    Rng rng(75);
    ParameterStore<double> store;
    init_dense(store, "fc", 6, 2, rng);
    const auto x64 = normal_init<double>(rng, {4, 6}, 0, 1);
    Tensor<double> teacher_probs({4, 2});
    for (std::int64_t b = 0; b < 4; ++b) {
        const double q = rng.uniform(0.1, 0.9);
        teacher_probs.at(b, 0) = q;
        teacher_probs.at(b, 1) = 1 - q;
    }
    auto build = [&](auto& s) {
        using S = typename std::decay_t<decltype(s)>::scalar;
        auto x = input(x64.template cast<S>());
        auto logits = dense(s, "fc", x);
        Tensor<S> p = teacher_probs.template cast<S>();
        return kd_losses(p, logits, 4.0, 0.3).concat;
    };
    Rng pick(7);
    const auto res = gradcheck::check(store, build, pick);
    EXPECT_LT(res.max_rel_f64, 1e-5) << res.worst_name;
    EXPECT_LT(res.max_rel_f32, 1e-3);
}

TEST(GradCheck, FullTeacherForwardAgainstFiniteDifferences) {
    // Central finite-difference oracle (eps 1e-4, 64-bit) over a 2-sample
    // batch through the entire teacher graph.
    Rng rng(76);
    const auto cfg = small_teacher_cfg();
    ParameterStore<double> store;
    teacher_init(store, "teacher", kL, kC, cfg, rng);
    gradcheck::jitter(store, rng, 0.05);
    const auto x64 = normal_init<double>(rng, {2, kL, kC}, 0, 1);
    Tensor<double> onehot64({2, 2});
    onehot64.at(0, 0) = 1;
    onehot64.at(1, 1) = 1;
    auto build = [&](auto& s) {
        using S = typename std::decay_t<decltype(s)>::scalar;
        auto x = input(x64.template cast<S>());
        auto out = teacher_forward(s, "teacher", x, Mode::Train, cfg);
        auto onehot = constant(onehot64.template cast<S>());
        return scale(sum_all(mul(onehot, vlog(out.probs))), -0.5);
    };
    Rng pick(8);
    const auto res = gradcheck::check(store, build, pick, /*max_slots_per_tensor=*/3);
    EXPECT_LT(res.max_rel_f64, 1e-5) << res.worst_name;
    EXPECT_LT(res.max_rel_f32, 1e-3);
}

namespace {

// Interface pin: the distillation loop admits no dataset anywhere in its
// signature; the student can only ever see synthesized pseudo-samples.
using DistillFn = DistillRun<double> (*)(ParameterStore<double>&, const std::string&,
                                         const TeacherConfig&, ParameterStore<double>&,
                                         const std::string&, const StudentConfig&, std::int64_t,
                                         std::int64_t, const DistillConfig&,
                                         const OptimizerConfig&, std::uint64_t,
                                         const MixtureMapper<double>*);
[[maybe_unused]] constexpr DistillFn kDistillInterface = &distill_student<double>;

}  // namespace

TEST(DistillLoop, HistoryLengthAndLnTwoStart) {
    Rng rng(77);
    const auto tcfg = small_teacher_cfg();
    StudentConfig scfg;
    scfg.hidden = 8;
    ParameterStore<double> teacher;
    teacher_init(teacher, "teacher", kL, kC, tcfg, rng);
    for (int i = 0; i < 2; ++i) {
        auto x = input(normal_init<double>(rng, {4, kL, kC}, 0, 1));
        teacher_forward(teacher, "teacher", x, Mode::Train, tcfg);
    }
    // Uniform teacher outputs: zero the head.
    auto& head_w = teacher.at("teacher/head/w").value;
    std::fill(head_w.data.begin(), head_w.data.end(), 0.0);

    ParameterStore<double> student;
    student_init(student, "student", kC, scfg, rng);
    // Untrained-symmetric student: zero final layer -> uniform outputs.
    std::fill(student.at("student/fc2/w").value.data.begin(),
              student.at("student/fc2/w").value.data.end(), 0.0);

    DistillConfig dc;
    dc.space = SynthSpace::Direct;
    dc.steps = 3;
    dc.synth_steps = 2;
    dc.batch = 4;
    dc.alpha = 0.0;
    const auto run = distill_student(teacher, "teacher", tcfg, student, "student", scfg, kL, kC,
                                     dc, OptimizerConfig::sgd_momentum(0.01, 0.9), 5);
    ASSERT_EQ(run.history.size(), 3u);
    EXPECT_NEAR(run.history[0].l_clf, std::log(2.0), 1e-9);
    EXPECT_NEAR(run.history[0].l_concat, std::log(2.0), 1e-9);  // alpha = 0
}

namespace {

embed::EmbeddingMatrix tiny_embedding(std::int64_t vocab, std::int64_t channels,
                                      std::uint64_t seed) {
    embed::EmbeddingMatrix emb;
    Rng rng(seed);
    emb.vectors = normal_init<float>(rng, {vocab, channels}, 0.2, 0.8);
    for (std::int64_t c = 0; c < channels; ++c) emb.vectors.at(0, c) = 0;  // PAD row
    return emb;
}

}  // namespace

TEST(MixtureMapper, UniformLogitsGiveMeanEmbeddingPlusPe) {
    const std::int64_t V = 5, C = 4, N = 3, B = 2;
    const auto emb = tiny_embedding(V, C, 91);
    const auto mapper = MixtureMapper<double>::from(emb, N, /*repeat=*/1,
                                                    embed::RepeatMode::Tile, false);
    auto logits = input(Tensor<double>::zeros({B, N, V}));
    const auto x = mapper.map(logits);
    ASSERT_EQ(x->value.shape, (Shape{B, N, C}));
    const auto pe = embed::positional_encoding<double>(N, C);
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t l = 0; l < N; ++l)
            for (std::int64_t c = 0; c < C; ++c) {
                double mean = 0;
                for (std::int64_t v = 0; v < V; ++v) mean += emb.vectors.at(v, c);
                mean /= V;
                EXPECT_NEAR(x->value.at(b, l, c), mean + pe.at(l, c), 1e-6);
            }
}

TEST(MixtureMapper, SharpLogitsRecoverAssembledRow) {
    // A strongly peaked logit behaves like a hard token lookup.
    const std::int64_t V = 6, C = 4, N = 2;
    const auto emb = tiny_embedding(V, C, 92);
    const auto mapper = MixtureMapper<double>::from(emb, N, /*repeat=*/2,
                                                    embed::RepeatMode::Tile, false);
    Tensor<double> logits({1, N, V});
    logits.at(0, 0, 3) = 50.0;  // token 3 at position 0
    logits.at(0, 1, 5) = 50.0;  // token 5 at position 1
    const auto x = mapper.map(input(logits));
    ASSERT_EQ(x->value.shape, (Shape{1, 4, C}));
    const auto pe = embed::positional_encoding<double>(N, C);
    const std::int64_t rows[] = {3, 5};
    for (std::int64_t rep = 0; rep < 2; ++rep)
        for (std::int64_t l = 0; l < N; ++l)
            for (std::int64_t c = 0; c < C; ++c)
                EXPECT_NEAR(x->value.at(0, rep * N + l, c),
                            static_cast<double>(emb.vectors.at(rows[l], c)) + pe.at(l, c), 1e-6);
}

TEST(MixtureMapper, GradientFlowsToLogits) {
    const auto emb = tiny_embedding(6, 4, 93);
    const auto mapper = MixtureMapper<double>::from(emb, 3, 2, embed::RepeatMode::Tile, false);
    Rng rng(94);
    Tensor<double> logits0 = normal_init<double>(rng, {2, 3, 6}, 0, 1);
    auto make_loss = [&](const Tensor<double>& lt, Var<double>* lv) {
        auto l = input(lt, lv != nullptr);
        if (lv) *lv = l;
        auto x = mapper.map(l);
        return mean_all(mul(x, x));
    };
    Var<double> lvar;
    auto loss = make_loss(logits0, &lvar);
    backward(loss);
    Rng pick(95);
    for (int probe = 0; probe < 10; ++probe) {
        const auto i = static_cast<std::int64_t>(pick.uniform_index(logits0.numel()));
        const double eps = 1e-5, orig = logits0.data[i];
        logits0.data[i] = orig + eps;
        const double lp = make_loss(logits0, nullptr)->value.data[0];
        logits0.data[i] = orig - eps;
        const double lm = make_loss(logits0, nullptr)->value.data[0];
        logits0.data[i] = orig;
        EXPECT_LT(gradcheck::rel_err(lvar->grad.data[i], (lp - lm) / (2 * eps), 1e-8), 1e-5);
    }
}

TEST(DistillLoop, TokenMixtureModeRunsAndRecordsHistory) {
    Rng rng(96);
    const auto tcfg = small_teacher_cfg();
    StudentConfig scfg;
    scfg.hidden = 8;
    ParameterStore<double> teacher;
    teacher_init(teacher, "teacher", kL, kC, tcfg, rng);
    for (int i = 0; i < 2; ++i) {
        auto x = input(normal_init<double>(rng, {4, kL, kC}, 0.3, 1.2));
        teacher_forward(teacher, "teacher", x, Mode::Train, tcfg);
    }
    ParameterStore<double> student;
    student_init(student, "student", kC, scfg, rng);

    const auto emb = tiny_embedding(10, kC, 97);
    const auto mapper = MixtureMapper<double>::from(emb, kL, 1, embed::RepeatMode::Tile, false);
    DistillConfig dc;
    dc.space = SynthSpace::TokenMixture;
    dc.steps = 3;
    dc.synth_steps = 2;
    dc.batch = 4;
    const auto run = distill_student(teacher, "teacher", tcfg, student, "student", scfg, kL, kC,
                                     dc, OptimizerConfig::sgd_momentum(0.01, 0.9), 5, &mapper);
    ASSERT_EQ(run.history.size(), 3u);
    EXPECT_LE(run.last_synthesis.final_loss, run.last_synthesis.initial_loss);

    // Token-mixture mode without the embedding artifact is rejected.
    EXPECT_THROW(distill_student(teacher, "teacher", tcfg, student, "student", scfg, kL, kC, dc,
                                 OptimizerConfig::sgd_momentum(0.01, 0.9), 5),
                 ConfigError);
}

TEST(DistillLoop, TeacherImmutableDuringDistillation) {
    Rng rng(78);
    const auto tcfg = small_teacher_cfg();
    StudentConfig scfg;
    scfg.hidden = 8;
    ParameterStore<double> teacher;
    teacher_init(teacher, "teacher", kL, kC, tcfg, rng);
    for (int i = 0; i < 2; ++i) {
        auto x = input(normal_init<double>(rng, {4, kL, kC}, 0.3, 1.1));
        teacher_forward(teacher, "teacher", x, Mode::Train, tcfg);
    }
    ParameterStore<double> student;
    student_init(student, "student", kC, scfg, rng);

    const auto checksum = teacher.checksum();
    DistillConfig dc;
    dc.space = SynthSpace::Direct;
    dc.steps = 4;
    dc.synth_steps = 3;
    dc.batch = 4;
    distill_student(teacher, "teacher", tcfg, student, "student", scfg, kL, kC, dc,
                    OptimizerConfig::sgd_momentum(0.01, 0.9), 6);
    EXPECT_EQ(teacher.checksum(), checksum);
}
