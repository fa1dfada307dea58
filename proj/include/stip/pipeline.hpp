// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end workflows: preprocess -> embed -> train teacher -> data-free
// distillation -> evaluation -> optional transfer, with every artifact
// written under an output directory. All stage seeds derive from one base
// seed, so a whole run is reproducible from (inputs, config, seed).

#include <filesystem>
#include <optional>
#include <string>

#include "stip/checkpoint.hpp"
#include "stip/config.hpp"
#include "stip/dataset.hpp"
#include "stip/distill.hpp"
#include "stip/embed.hpp"
#include "stip/preprocess.hpp"
#include "stip/report.hpp"
#include "stip/synth.hpp"
#include "stip/train.hpp"

namespace stip::harness {

inline std::uint64_t subseed(std::uint64_t base, std::string_view tag) {
    return fnv1a(tag.data(), tag.size(), base * 0x9e3779b97f4a7c15ULL + 0xcbf29ce484222325ULL);
}

// RunReport JSON persistence (consumed by the `report` subcommand).
void save_run_report(const RunReport& report, const std::string& path);
RunReport load_run_report(const std::string& path);

struct PreprocessResult {
    std::vector<text::TokenizedContract> corpus;
    text::Vocabulary vocab;
    std::vector<text::Warning> warnings;
};

PreprocessResult run_preprocess(const std::string& data_dir, const PipelineConfig& cfg,
                                const std::string& out_dir);

struct EmbedResult {
    embed::EmbeddingMatrix embedding;
    std::vector<embed::AssembledDataset> datasets;  // one per class present
};

EmbedResult run_embed(const PreprocessResult& pre, const PipelineConfig& cfg, std::uint64_t seed,
                      const std::string& out_dir);

inline embed::AssembleOptions assemble_options(const PipelineConfig& cfg) {
    embed::AssembleOptions opts;
    opts.seq_tokens = cfg.seq_tokens;
    opts.repeat = cfg.repeat_factor;
    opts.pe_after_repeat = cfg.pe_after_repeat;
    opts.mode = cfg.repeat_mode == "tile" ? embed::RepeatMode::Tile : embed::RepeatMode::Element;
    opts.span_only = cfg.span_only;
    return opts;
}

inline model::TeacherConfig teacher_config(const PipelineConfig& cfg) {
    model::TeacherConfig t;
    t.fusion.numhead = cfg.fusion_heads;
    t.fusion.groups = cfg.fusion_groups;
    t.fusion.memory_slots = cfg.memory_slots;
    t.fusion.stages = cfg.fusion_stages;
    t.fusion.mb_expansion = cfg.mb_expansion;
    return t;
}

inline model::StudentConfig student_config(const PipelineConfig& cfg) {
    model::StudentConfig s;
    s.hidden = cfg.student_hidden;
    s.psa_groups = cfg.psa_groups;
    return s;
}

inline distill::DistillConfig distill_config(const PipelineConfig& cfg) {
    distill::DistillConfig d;
    d.space = cfg.synthesis_space == "direct" ? distill::SynthSpace::Direct
                                              : distill::SynthSpace::TokenMixture;
    d.logit_sigma = cfg.logit_sigma;
    d.adversarial_weight = cfg.adversarial_weight;
    d.mu = cfg.noise_mu;
    d.sigma = cfg.noise_sigma;
    d.eta = cfg.synth_eta;
    d.synth_steps = cfg.synth_steps;
    d.temperature = cfg.kd_temperature;
    d.alpha = cfg.kd_alpha;
    d.batch = cfg.distill_batch;
    d.steps = cfg.distill_steps;
    d.refresh_every = cfg.refresh_every;
    return d;
}

template <typename T>
ForwardFn<T> teacher_forward_fn(const model::TeacherConfig& cfg, std::string prefix) {
    return [cfg, prefix = std::move(prefix)](nn::ParameterStore<T>& s, const nn::Var<T>& x,
                                             nn::Mode m) {
        return model::teacher_forward(s, prefix, x, m, cfg).probs;
    };
}

template <typename T>
ForwardFn<T> student_forward_fn(const model::StudentConfig& cfg, std::string prefix) {
    return [cfg, prefix = std::move(prefix)](nn::ParameterStore<T>& s, const nn::Var<T>& x,
                                             nn::Mode m) {
        return model::student_forward(s, prefix, x, m, cfg).probs;
    };
}

template <typename T>
struct RunAllResult {
    RunReport teacher;
    RunReport student_distilled;
    RunReport student_scratch;
    std::vector<DistillHistoryRow> distill_history;
    std::optional<Metrics> transfer_before;
    std::optional<RunReport> transfer_after;
    double distilled_minus_scratch_f1 = 0;  // distillation delta, sign reported
};

// Full pipeline over a labeled contract directory. `main_class` drives
// training and distillation; `transfer_class`, when given, drives the
// checkpoint-reload fine-tuning workflow.
template <typename T>
RunAllResult<T> run_all(const std::string& data_dir, const std::string& main_class,
                        const std::optional<std::string>& transfer_class,
                        const PipelineConfig& cfg, std::uint64_t seed,
                        const std::string& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const auto pre = run_preprocess(data_dir, cfg, out_dir);
    const auto emb = run_embed(pre, cfg, subseed(seed, "cbow"), out_dir);

    auto dataset_of = [&](const std::string& cls) -> const embed::AssembledDataset& {
        for (const auto& ds : emb.datasets)
            if (ds.cls == cls) return ds;
        throw ConfigError("run_all: no samples of class '" + cls + "' in " + data_dir);
    };

    const auto& main_ds = dataset_of(main_class);
    const auto balanced = load_and_balance(main_ds, subseed(seed, "balance"));
    const auto [train_set, test_set] = split(main_ds, balanced, cfg.split_ratio,
                                             subseed(seed, "split"));

    const auto tcfg = teacher_config(cfg);
    const auto scfg = student_config(cfg);
    const std::int64_t L = cfg.seq_tokens * cfg.repeat_factor;
    const std::int64_t C = cfg.embed_dim;

    RunAllResult<T> result;

    // Teacher on real data.
    nn::ParameterStore<T> teacher(seed);
    {
        Rng rng(subseed(seed, "teacher-init"));
        model::teacher_init(teacher, "teacher", L, C, tcfg, rng);
    }
    TrainHyper teacher_hyper{nn::OptimizerConfig::adam_amsgrad(cfg.train_lr), cfg.train_epochs,
                             cfg.train_batch};
    result.teacher =
        train_classifier(teacher, teacher_forward_fn<T>(tcfg, "teacher"), main_ds, train_set,
                         test_set, teacher_hyper, subseed(seed, "teacher-train"), "teacher");
    save_checkpoint(teacher, join_path(out_dir, "teacher"));

    // Data-free distillation into a fresh student.
    nn::ParameterStore<T> student(seed);
    {
        Rng rng(subseed(seed, "student-init"));
        model::student_init(student, "student", C, scfg, rng);
    }
    auto dc = distill_config(cfg);
    if (dc.space == distill::SynthSpace::Direct && cfg.noise_prior_from_embedding) {
        const auto stats = embed::assembled_input_stats(emb.embedding, L);
        dc.mu = stats.mean;
        dc.sigma = stats.sigma;
    }
    const auto opts = assemble_options(cfg);
    const auto mapper = distill::MixtureMapper<T>::from(emb.embedding, cfg.seq_tokens,
                                                        cfg.repeat_factor, opts.mode,
                                                        opts.pe_after_repeat);
    const auto run = distill::distill_student(
        teacher, "teacher", tcfg, student, "student", scfg, L, C, dc,
        nn::OptimizerConfig::sgd_momentum(cfg.distill_lr, cfg.distill_momentum),
        subseed(seed, "distill"), &mapper);
    result.distill_history = run.history;
    result.student_distilled.name = "student-distilled";
    result.student_distilled.seed = seed;
    for (const auto& h : run.history) result.student_distilled.epoch_losses.push_back(h.l_concat);
    result.student_distilled.final_metrics = evaluate(
        student, student_forward_fn<T>(scfg, "student"), main_ds, test_set, cfg.train_batch);
    save_checkpoint(student, join_path(out_dir, "student_distilled"));

    // Student trained from scratch on the same real data, for the
    // distillation delta.
    nn::ParameterStore<T> scratch(seed);
    {
        Rng rng(subseed(seed, "student-init"));  // same init as the distilled student
        model::student_init(scratch, "student", C, scfg, rng);
    }
    result.student_scratch =
        train_classifier(scratch, student_forward_fn<T>(scfg, "student"), main_ds, train_set,
                         test_set, teacher_hyper, subseed(seed, "scratch-train"),
                         "student-scratch");
    save_checkpoint(scratch, join_path(out_dir, "student_scratch"));
    result.distilled_minus_scratch_f1 =
        result.student_distilled.final_metrics.f1 - result.student_scratch.final_metrics.f1;

    // Transfer to a new vulnerability class from the distilled checkpoint.
    if (transfer_class) {
        const auto& tds = dataset_of(*transfer_class);
        const auto tbal = load_and_balance(tds, subseed(seed, "transfer-balance"));
        const auto [ttrain, ttest] = split(tds, tbal, cfg.split_ratio,
                                           subseed(seed, "transfer-split"));
        nn::ParameterStore<T> transferred(seed);
        {
            Rng rng(subseed(seed, "student-init"));
            model::student_init(transferred, "student", C, scfg, rng);
        }
        load_checkpoint(transferred, join_path(out_dir, "student_distilled"));
        result.transfer_before = evaluate(
            transferred, student_forward_fn<T>(scfg, "student"), tds, ttest, cfg.train_batch);
        TrainHyper transfer_hyper{nn::OptimizerConfig::adam_amsgrad(cfg.train_lr),
                                  cfg.transfer_epochs, cfg.train_batch};
        result.transfer_after = train_classifier(
            transferred, student_forward_fn<T>(scfg, "student"), tds, ttrain, ttest,
            transfer_hyper, subseed(seed, "transfer-train"), "student-transfer");
        save_checkpoint(transferred, join_path(out_dir, "student_transferred"));
    }

    // Reports: the scratch student's loss curve is the pre-distillation
    // series the comparison file scales onto [0.04, 0.5].
    std::vector<RunReport> reports{result.teacher, result.student_distilled,
                                   result.student_scratch};
    if (result.transfer_after) reports.push_back(*result.transfer_after);
    const std::string runs_dir = join_path(out_dir, "runs");
    std::filesystem::create_directories(runs_dir);
    for (const auto& r : reports)
        save_run_report(r, join_path(runs_dir, r.name + ".json"));
    emit_report(reports, result.student_scratch.epoch_losses, result.distill_history,
                cfg.to_json(), out_dir);
    return result;
}

}  // namespace stip::harness
