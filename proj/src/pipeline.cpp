// SPDX-License-Identifier: Apache-2.0
#include "stip/pipeline.hpp"

#include <fstream>

#include <json.hpp>

namespace stip::harness {

void save_run_report(const RunReport& report, const std::string& path) {
    nlohmann::json j;
    j["name"] = report.name;
    j["seed"] = report.seed;
    j["repeat_index"] = report.repeat_index;
    j["epoch_losses"] = report.epoch_losses;
    j["val_accuracies"] = report.val_accuracies;
    j["metrics"] = {{"tp", report.final_metrics.tp},
                    {"tn", report.final_metrics.tn},
                    {"fp", report.final_metrics.fp},
                    {"fn", report.final_metrics.fn}};
    j["wall_ms"] = report.wall_ms;
    if (!report.config_snapshot.empty())
        j["config"] = nlohmann::json::parse(report.config_snapshot);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

RunReport load_run_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    RunReport r;
    r.name = j.at("name").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.repeat_index = j.value("repeat_index", std::int64_t{0});
    r.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    r.val_accuracies = j.at("val_accuracies").get<std::vector<double>>();
    r.final_metrics = Metrics::from_counts(
        j["metrics"]["tp"].get<std::int64_t>(), j["metrics"]["tn"].get<std::int64_t>(),
        j["metrics"]["fp"].get<std::int64_t>(), j["metrics"]["fn"].get<std::int64_t>());
    r.wall_ms = j.value("wall_ms", 0.0);
    if (j.contains("config")) r.config_snapshot = j["config"].dump();
    return r;
}

PreprocessResult run_preprocess(const std::string& data_dir, const PipelineConfig& cfg,
                                const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto labels = text::load_labels(join_path(data_dir, "labels.csv"));
    const auto patterns = cfg.patterns_path.empty() ? text::default_patterns()
                                                    : text::load_patterns(cfg.patterns_path);
    PreprocessResult result;
    result.corpus = text::preprocess_directory(data_dir, labels, patterns, &result.warnings);
    result.vocab = text::Vocabulary::build(result.corpus, cfg.min_count);

    text::save_corpus(result.corpus, join_path(out_dir, "corpus.jsonl"));
    result.vocab.save(join_path(out_dir, "vocab.tsv"));
    if (!result.warnings.empty()) {
        std::ofstream wf(join_path(out_dir, "preprocess_warnings.log"));
        for (const auto& w : result.warnings) wf << w.code << ": " << w.message << "\n";
    }
    return result;
}

EmbedResult run_embed(const PreprocessResult& pre, const PipelineConfig& cfg, std::uint64_t seed,
                      const std::string& out_dir) {
    embed::CbowConfig cc;
    cc.dim = cfg.embed_dim;
    cc.window = cfg.cbow_window;
    cc.negatives = cfg.cbow_negatives;
    cc.epochs = cfg.cbow_epochs;
    cc.lr = cfg.cbow_lr;
    cc.seed = seed;

    EmbedResult result;
    result.embedding = embed::train_cbow(pre.corpus, pre.vocab, cc);
    embed::save_embedding(result.embedding, join_path(out_dir, "embedding"));

    const auto opts = assemble_options(cfg);
    std::vector<std::string> classes;
    for (const auto& c : pre.corpus)
        if (std::find(classes.begin(), classes.end(), c.label_class) == classes.end())
            classes.push_back(c.label_class);
    for (const auto& cls : classes) {
        auto ds = embed::assemble_class(pre.corpus, result.embedding, pre.vocab, cls, opts);
        embed::save_dataset(ds, join_path(out_dir, "dataset_" + cls));
        result.datasets.push_back(std::move(ds));
    }
    return result;
}

}  // namespace stip::harness
