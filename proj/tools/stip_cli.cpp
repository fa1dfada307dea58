// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the full pipeline: preprocessing, embedding,
// teacher training, data-free distillation, evaluation, transfer, and
// reporting. See README.md for usage examples.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "stip/pipeline.hpp"

using namespace stip;

namespace {

struct GlobalArgs {
    std::uint64_t seed = 7;
    std::string config_path;
    std::string out_dir = "out";
    std::string precision;  // overrides config when set
};

harness::PipelineConfig load_config(const GlobalArgs& g) {
    harness::PipelineConfig cfg;
    if (!g.config_path.empty()) cfg = harness::PipelineConfig::from_json_file(g.config_path);
    if (!g.precision.empty()) cfg.precision = g.precision;
    cfg.validate();
    return cfg;
}

template <typename Fn>
void with_precision(const harness::PipelineConfig& cfg, Fn&& fn) {
    if (cfg.precision == "f64")
        fn(double{});
    else
        fn(float{});
}

std::vector<std::string> split_csv_arg(const std::string& s) {
    std::vector<std::string> out;
    std::size_t at = 0;
    while (at <= s.size()) {
        const auto comma = s.find(',', at);
        const auto end = comma == std::string::npos ? s.size() : comma;
        if (end > at) out.push_back(s.substr(at, end - at));
        if (comma == std::string::npos) break;
        at = comma + 1;
    }
    return out;
}

void print_metrics(const std::string& name, const harness::Metrics& m) {
    std::cout << name << ": accuracy=" << format_float(m.accuracy)
              << " precision=" << format_float(m.precision)
              << " recall=" << format_float(m.recall) << " f1=" << format_float(m.f1)
              << " (tp=" << m.tp << " tn=" << m.tn << " fp=" << m.fp << " fn=" << m.fn << ")\n";
}

template <typename T>
harness::Metrics eval_checkpoint(const std::string& ckpt, const std::string& kind,
                                 const embed::AssembledDataset& ds,
                                 const harness::PipelineConfig& cfg) {
    const std::int64_t L = ds.seq_tokens * ds.repeat;
    harness::DatasetManifest all;
    all.cls = ds.cls;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        all.indices.push_back(static_cast<std::int32_t>(i));
    nn::ParameterStore<T> store;
    Rng rng(1);
    if (kind == "teacher") {
        const auto tcfg = harness::teacher_config(cfg);
        model::teacher_init(store, "teacher", L, ds.channels, tcfg, rng);
        nn::load_checkpoint(store, ckpt);
        return harness::evaluate(store, harness::teacher_forward_fn<T>(tcfg, "teacher"), ds, all,
                                 cfg.train_batch);
    }
    const auto scfg = harness::student_config(cfg);
    model::student_init(store, "student", ds.channels, scfg, rng);
    nn::load_checkpoint(store, ckpt);
    return harness::evaluate(store, harness::student_forward_fn<T>(scfg, "student"), ds, all,
                             cfg.train_batch);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AF-STip pipeline: contract preprocessing, CBOW embedding, adaptive-fusion "
                 "teacher, PSA student, data-free distillation"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--seed", g.seed, "base seed for every stage");
    app.add_option("--config", g.config_path, "JSON config file");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--precision", g.precision, "f32 or f64 (overrides config)");

    // synth-corpus
    auto* synth = app.add_subcommand("synth-corpus", "generate a labeled synthetic corpus");
    std::string synth_classes = "reentrancy";
    std::int64_t synth_count = 400;
    synth->add_option("--classes", synth_classes, "comma-separated class list");
    synth->add_option("--count", synth_count, "samples per class (50/50 split)");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "normalize, annotate and tokenize contracts");
    std::string pre_data;
    pre->add_option("--data", pre_data, ".sol directory with labels.csv")->required();

    // embed
    auto* emb = app.add_subcommand("embed", "train CBOW and assemble model inputs");
    std::string emb_corpus, emb_vocab;
    emb->add_option("--corpus", emb_corpus, "corpus.jsonl from preprocess")->required();
    emb->add_option("--vocab", emb_vocab, "vocab.tsv from preprocess")->required();

    // train-teacher
    auto* tt = app.add_subcommand("train-teacher", "train the fusion teacher on one class");
    std::string tt_dataset;
    tt->add_option("--dataset", tt_dataset, "dataset_<class> path base")->required();

    // distill
    auto* dist = app.add_subcommand("distill", "data-free distillation into the student");
    std::string dist_teacher, dist_shape_dataset, dist_embedding;
    dist->add_option("--teacher", dist_teacher, "teacher checkpoint path base")->required();
    dist->add_option("--dataset", dist_shape_dataset,
                     "dataset path base (shapes + held-out evaluation only; "
                     "the distillation loop itself never reads samples)")
        ->required();
    dist->add_option("--embedding", dist_embedding,
                     "embedding path base, used to derive the noise prior");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ev_model, ev_kind = "student", ev_dataset;
    ev->add_option("--model", ev_model, "checkpoint path base")->required();
    ev->add_option("--kind", ev_kind, "teacher|student");
    ev->add_option("--dataset", ev_dataset, "dataset path base")->required();

    // transfer
    auto* tr = app.add_subcommand("transfer", "fine-tune a student checkpoint on a new class");
    std::string tr_student, tr_dataset;
    tr->add_option("--student", tr_student, "student checkpoint path base")->required();
    tr->add_option("--dataset", tr_dataset, "new-class dataset path base")->required();

    // report
    auto* rep = app.add_subcommand("report", "re-emit the report bundle from stored run JSONs");
    std::string rep_runs;
    rep->add_option("--runs", rep_runs, "directory of run report JSON files")->required();

    // run-all
    auto* ra = app.add_subcommand("run-all", "whole pipeline end to end");
    std::string ra_data, ra_class = "reentrancy", ra_transfer;
    std::int64_t ra_synth = 0;
    ra->add_option("--data", ra_data, ".sol directory with labels.csv");
    ra->add_option("--class", ra_class, "main vulnerability class");
    ra->add_option("--transfer-class", ra_transfer, "optional transfer class");
    ra->add_option("--synth", ra_synth, "generate a synthetic corpus of this size first");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = load_config(g);
        std::filesystem::create_directories(g.out_dir);

        if (synth->parsed()) {
            std::vector<harness::SynthSpec> specs;
            for (const auto& cls : split_csv_arg(synth_classes)) specs.push_back({cls, synth_count});
            const auto corpus = harness::make_synthetic_corpus(specs, g.seed);
            harness::write_synthetic_corpus(corpus, g.out_dir);
            std::cout << "wrote " << corpus.contracts.size() << " contracts to " << g.out_dir
                      << "\n";
        } else if (pre->parsed()) {
            const auto res = harness::run_preprocess(pre_data, cfg, g.out_dir);
            std::cout << "preprocessed " << res.corpus.size() << " contracts; vocabulary size "
                      << res.vocab.size() << "; " << res.warnings.size() << " warnings\n";
        } else if (emb->parsed()) {
            harness::PreprocessResult p;
            p.corpus = text::load_corpus(emb_corpus);
            p.vocab = text::Vocabulary::load(emb_vocab);
            const auto res = harness::run_embed(p, cfg, harness::subseed(g.seed, "cbow"),
                                                g.out_dir);
            std::cout << "embedding " << res.embedding.vectors.dim(0) << "x"
                      << res.embedding.vectors.dim(1) << "; " << res.datasets.size()
                      << " class datasets\n";
        } else if (tt->parsed()) {
            const auto ds = embed::load_dataset(tt_dataset);
            with_precision(cfg, [&](auto tag) {
                using T = decltype(tag);
                const auto tcfg = harness::teacher_config(cfg);
                const std::int64_t L = ds.seq_tokens * ds.repeat;
                nn::ParameterStore<T> store(g.seed);
                Rng rng(harness::subseed(g.seed, "teacher-init"));
                model::teacher_init(store, "teacher", L, ds.channels, tcfg, rng);
                const auto balanced = harness::load_and_balance(ds,
                                                                harness::subseed(g.seed, "balance"));
                const auto [train_set, test_set] =
                    harness::split(ds, balanced, cfg.split_ratio, harness::subseed(g.seed, "split"));
                harness::TrainHyper hyper{nn::OptimizerConfig::adam_amsgrad(cfg.train_lr),
                                          cfg.train_epochs, cfg.train_batch};
                const auto report = harness::train_classifier(
                    store, harness::teacher_forward_fn<T>(tcfg, "teacher"), ds, train_set,
                    test_set, hyper, harness::subseed(g.seed, "teacher-train"), "teacher");
                nn::save_checkpoint(store, join_path(g.out_dir, "teacher"));
                harness::save_run_report(report, join_path(g.out_dir, "teacher_run.json"));
                print_metrics("teacher", report.final_metrics);
            });
        } else if (dist->parsed()) {
            const auto ds = embed::load_dataset(dist_shape_dataset);
            with_precision(cfg, [&](auto tag) {
                using T = decltype(tag);
                const auto tcfg = harness::teacher_config(cfg);
                const auto scfg = harness::student_config(cfg);
                const std::int64_t L = ds.seq_tokens * ds.repeat;
                nn::ParameterStore<T> teacher(g.seed);
                Rng trng(harness::subseed(g.seed, "teacher-init"));
                model::teacher_init(teacher, "teacher", L, ds.channels, tcfg, trng);
                nn::load_checkpoint(teacher, dist_teacher);
                nn::ParameterStore<T> student(g.seed);
                Rng srng(harness::subseed(g.seed, "student-init"));
                model::student_init(student, "student", ds.channels, scfg, srng);
                auto dc = harness::distill_config(cfg);
                std::optional<distill::MixtureMapper<T>> mapper;
                if (dc.space == distill::SynthSpace::TokenMixture || cfg.noise_prior_from_embedding) {
                    if (dist_embedding.empty())
                        throw ConfigError(
                            "distill: pass --embedding (or choose synthesis_space=direct with "
                            "manual noise_mu/noise_sigma)");
                    const auto emb_matrix = embed::load_embedding(dist_embedding);
                    if (dc.space == distill::SynthSpace::Direct) {
                        const auto stats = embed::assembled_input_stats(emb_matrix, L);
                        dc.mu = stats.mean;
                        dc.sigma = stats.sigma;
                    } else {
                        const auto opts = harness::assemble_options(cfg);
                        mapper = distill::MixtureMapper<T>::from(emb_matrix, ds.seq_tokens,
                                                                 ds.repeat, opts.mode,
                                                                 opts.pe_after_repeat);
                    }
                }
                const auto run = distill::distill_student(
                    teacher, "teacher", tcfg, student, "student", scfg, L, ds.channels, dc,
                    nn::OptimizerConfig::sgd_momentum(cfg.distill_lr, cfg.distill_momentum),
                    harness::subseed(g.seed, "distill"), mapper ? &*mapper : nullptr);
                nn::save_checkpoint(student, join_path(g.out_dir, "student_distilled"));
                harness::write_distill_history_csv(run.history,
                                                   join_path(g.out_dir, "distill_history.csv"));
                harness::DatasetManifest all;
                for (std::size_t i = 0; i < ds.samples.size(); ++i)
                    all.indices.push_back(static_cast<std::int32_t>(i));
                print_metrics("student-distilled (whole dataset)",
                              harness::evaluate(student,
                                                harness::student_forward_fn<T>(scfg, "student"),
                                                ds, all, cfg.train_batch));
            });
        } else if (ev->parsed()) {
            const auto ds = embed::load_dataset(ev_dataset);
            with_precision(cfg, [&](auto tag) {
                using T = decltype(tag);
                print_metrics(ev_kind, eval_checkpoint<T>(ev_model, ev_kind, ds, cfg));
            });
        } else if (tr->parsed()) {
            const auto ds = embed::load_dataset(tr_dataset);
            with_precision(cfg, [&](auto tag) {
                using T = decltype(tag);
                const auto scfg = harness::student_config(cfg);
                nn::ParameterStore<T> store(g.seed);
                Rng rng(harness::subseed(g.seed, "student-init"));
                model::student_init(store, "student", ds.channels, scfg, rng);
                nn::load_checkpoint(store, tr_student);
                const auto balanced =
                    harness::load_and_balance(ds, harness::subseed(g.seed, "transfer-balance"));
                const auto [train_set, test_set] = harness::split(
                    ds, balanced, cfg.split_ratio, harness::subseed(g.seed, "transfer-split"));
                const auto before = harness::evaluate(
                    store, harness::student_forward_fn<T>(scfg, "student"), ds, test_set,
                    cfg.train_batch);
                print_metrics("frozen checkpoint", before);
                harness::TrainHyper hyper{nn::OptimizerConfig::adam_amsgrad(cfg.train_lr),
                                          cfg.transfer_epochs, cfg.train_batch};
                const auto report = harness::train_classifier(
                    store, harness::student_forward_fn<T>(scfg, "student"), ds, train_set,
                    test_set, hyper, harness::subseed(g.seed, "transfer-train"),
                    "student-transfer");
                nn::save_checkpoint(store, join_path(g.out_dir, "student_transferred"));
                harness::save_run_report(report, join_path(g.out_dir, "transfer_run.json"));
                print_metrics("after transfer", report.final_metrics);
            });
        } else if (rep->parsed()) {
            std::vector<harness::RunReport> reports;
            std::vector<std::string> files;
            for (const auto& entry : std::filesystem::directory_iterator(rep_runs))
                if (entry.path().extension() == ".json") files.push_back(entry.path().string());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) reports.push_back(harness::load_run_report(f));
            if (reports.empty()) throw ConfigError("report: no run JSONs in " + rep_runs);
            std::vector<double> pre_losses;
            std::vector<harness::DistillHistoryRow> history;
            for (const auto& r : reports)
                if (r.name == "student-scratch") pre_losses = r.epoch_losses;
            harness::emit_report(reports, pre_losses, history, cfg.to_json(), g.out_dir);
            std::cout << "report bundle written to " << g.out_dir << "\n";
        } else if (ra->parsed()) {
            std::string data_dir = ra_data;
            if (ra_synth > 0) {
                data_dir = join_path(g.out_dir, "corpus");
                std::vector<harness::SynthSpec> specs{{ra_class, ra_synth}};
                if (!ra_transfer.empty()) specs.push_back({ra_transfer, ra_synth});
                harness::write_synthetic_corpus(harness::make_synthetic_corpus(specs, g.seed),
                                                data_dir);
            }
            if (data_dir.empty())
                throw ConfigError("run-all: provide --data or --synth");
            const std::optional<std::string> transfer =
                ra_transfer.empty() ? std::nullopt : std::optional<std::string>(ra_transfer);
            with_precision(cfg, [&](auto tag) {
                using T = decltype(tag);
                const auto res =
                    harness::run_all<T>(data_dir, ra_class, transfer, cfg, g.seed, g.out_dir);
                print_metrics("teacher", res.teacher.final_metrics);
                print_metrics("student-distilled", res.student_distilled.final_metrics);
                print_metrics("student-scratch", res.student_scratch.final_metrics);
                std::cout << "distillation F1 delta vs scratch: "
                          << format_float(res.distilled_minus_scratch_f1) << "\n";
                if (res.transfer_before) print_metrics("transfer (frozen)", *res.transfer_before);
                if (res.transfer_after)
                    print_metrics("transfer (fine-tuned)", res.transfer_after->final_metrics);
            });
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
