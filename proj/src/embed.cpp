// SPDX-License-Identifier: Apache-2.0
#include "stip/embed.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "stip/rng.hpp"

namespace stip::embed {

namespace {

constexpr std::size_t kUnigramTableSize = 1 << 20;
constexpr double kUnigramPower = 0.75;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double log_clamped(double x) { return std::log(std::max(x, 1e-10)); }

// count^0.75 unigram table over all non-PAD entries with positive counts.
std::vector<std::int32_t> build_unigram_table(const text::Vocabulary& vocab) {
    const auto& entries = vocab.entries();
    double total = 0.0;
    for (std::size_t i = 1; i < entries.size(); ++i)
        if (entries[i].count > 0) total += std::pow(entries[i].count, kUnigramPower);
    std::vector<std::int32_t> table;
    if (total == 0.0) return table;
    table.resize(kUnigramTableSize);
    std::size_t i = 1;
    while (entries[i].count == 0) ++i;
    double cum = std::pow(entries[i].count, kUnigramPower) / total;
    for (std::size_t t = 0; t < kUnigramTableSize; ++t) {
        table[t] = static_cast<std::int32_t>(i);
        if (static_cast<double>(t) / kUnigramTableSize > cum && i + 1 < entries.size()) {
            do {
                ++i;
            } while (i + 1 < entries.size() && entries[i].count == 0);
            cum += std::pow(entries[i].count, kUnigramPower) / total;
        }
    }
    return table;
}

}  // namespace

EmbeddingMatrix train_cbow(const std::vector<text::TokenizedContract>& corpus,
                           const text::Vocabulary& vocab, const CbowConfig& cfg) {
    if (cfg.window < 1) throw ConfigError("train_cbow: window must be >= 1");
    if (cfg.negatives < 1) throw ConfigError("train_cbow: negatives must be >= 1");
    if (cfg.epochs < 1) throw ConfigError("train_cbow: epochs must be >= 1");

    // Index the corpus once.
    std::vector<std::vector<std::int32_t>> docs;
    std::int64_t total_tokens = 0;
    for (const auto& c : corpus) {
        std::vector<std::int32_t> doc;
        doc.reserve(c.tokens.size());
        for (const auto& t : c.tokens) {
            const auto idx = vocab.lookup(t);
            if (idx == text::Vocabulary::kPad) continue;
            doc.push_back(idx);
        }
        total_tokens += static_cast<std::int64_t>(doc.size());
        docs.push_back(std::move(doc));
    }
    if (total_tokens < 2 * cfg.window + 1)
        throw ConfigError("train_cbow: corpus shorter than 2*window+1 tokens");

    const auto V = static_cast<std::int64_t>(vocab.size());
    const std::int64_t C = cfg.dim;
    Rng rng(cfg.seed);

    EmbeddingMatrix emb;
    emb.meta = cfg;
    emb.vocab_hash = vocab.content_hash();
    emb.vectors = nn::Tensor<float>({V, C});
    std::vector<float>& syn0 = emb.vectors.data;
    // Standard word2vec init; PAD row (index 0) stays zero.
    for (std::int64_t r = 1; r < V; ++r)
        for (std::int64_t c = 0; c < C; ++c)
            syn0[static_cast<std::size_t>(r * C + c)] =
                static_cast<float>(rng.uniform(-0.5, 0.5) / static_cast<double>(C));
    std::vector<float> syn1(static_cast<std::size_t>(V * C), 0.0f);

    const auto table = build_unigram_table(vocab);
    const double lr_floor = cfg.lr * 1e-4;
    const double total_steps = static_cast<double>(cfg.epochs) * total_tokens;

    std::vector<float> h(static_cast<std::size_t>(C));
    std::vector<float> neu1e(static_cast<std::size_t>(C));
    std::int64_t processed = 0;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::int64_t centers = 0;
        for (const auto& doc : docs) {
            const auto len = static_cast<std::int64_t>(doc.size());
            for (std::int64_t t = 0; t < len; ++t, ++processed) {
                const double lr =
                    std::max(lr_floor, cfg.lr * (1.0 - processed / std::max(1.0, total_steps)));
                const std::int32_t target = doc[static_cast<std::size_t>(t)];
                // Average the context vectors.
                std::fill(h.begin(), h.end(), 0.0f);
                std::int64_t n_ctx = 0;
                for (std::int64_t j = std::max<std::int64_t>(0, t - cfg.window);
                     j <= std::min(len - 1, t + cfg.window); ++j) {
                    if (j == t) continue;
                    const std::int32_t w = doc[static_cast<std::size_t>(j)];
                    const float* row = &syn0[static_cast<std::size_t>(w) * C];
                    for (std::int64_t c = 0; c < C; ++c) h[static_cast<std::size_t>(c)] += row[c];
                    ++n_ctx;
                }
                if (n_ctx == 0) continue;
                for (auto& v : h) v /= static_cast<float>(n_ctx);

                std::fill(neu1e.begin(), neu1e.end(), 0.0f);
                double loss = 0.0;
                for (std::int64_t neg = 0; neg <= cfg.negatives; ++neg) {
                    std::int32_t w;
                    double label;
                    if (neg == 0) {
                        w = target;
                        label = 1.0;
                    } else {
                        if (table.empty()) continue;
                        w = table[static_cast<std::size_t>(rng.uniform_index(table.size()))];
                        if (w == target) continue;
                        label = 0.0;
                    }
                    float* out = &syn1[static_cast<std::size_t>(w) * C];
                    double dot = 0.0;
                    for (std::int64_t c = 0; c < C; ++c)
                        dot += static_cast<double>(h[static_cast<std::size_t>(c)]) * out[c];
                    const double f = sigmoid(dot);
                    loss -= label == 1.0 ? log_clamped(f) : log_clamped(1.0 - f);
                    const auto g = static_cast<float>((label - f) * lr);
                    for (std::int64_t c = 0; c < C; ++c) {
                        neu1e[static_cast<std::size_t>(c)] += g * out[c];
                        out[c] += g * h[static_cast<std::size_t>(c)];
                    }
                }
                // Exact mean gradient: each context vector moves by neu1e / n_ctx.
                for (std::int64_t j = std::max<std::int64_t>(0, t - cfg.window);
                     j <= std::min(len - 1, t + cfg.window); ++j) {
                    if (j == t) continue;
                    const std::int32_t w = doc[static_cast<std::size_t>(j)];
                    float* row = &syn0[static_cast<std::size_t>(w) * C];
                    for (std::int64_t c = 0; c < C; ++c)
                        row[c] += neu1e[static_cast<std::size_t>(c)] / static_cast<float>(n_ctx);
                }
                epoch_loss += loss;
                ++centers;
            }
        }
        emb.epoch_losses.push_back(centers > 0 ? epoch_loss / centers : 0.0);
    }
    // Count-weighted entry moments; these ship with the embedding so the
    // distillation noise prior can be derived without data access.
    {
        double wsum = 0, wm = 0, wsq = 0;
        const auto& entries = vocab.entries();
        for (std::size_t i = 1; i < entries.size(); ++i) {
            const auto w = static_cast<double>(entries[i].count);
            if (w <= 0) continue;
            const float* row = &syn0[i * static_cast<std::size_t>(C)];
            for (std::int64_t c = 0; c < C; ++c) {
                wm += w * row[c];
                wsq += w * static_cast<double>(row[c]) * row[c];
            }
            wsum += w * static_cast<double>(C);
        }
        if (wsum > 0) {
            emb.entry_mean = wm / wsum;
            emb.entry_var = std::max(0.0, wsq / wsum - emb.entry_mean * emb.entry_mean);
        }
    }
    nn::check_finite(emb.vectors, "train_cbow");
    return emb;
}

EmbeddedSample assemble(const text::TokenizedContract& contract, const EmbeddingMatrix& emb,
                        const text::Vocabulary& vocab, const AssembleOptions& opts) {
    if (opts.seq_tokens < 1) throw ConfigError("assemble: N must be >= 1");
    if (opts.repeat < 1) throw ConfigError("assemble: K must be >= 1");
    const std::int64_t N = opts.seq_tokens, K = opts.repeat, C = emb.vectors.dim(1);

    // Token selection: annotated spans win over the plain head of the stream.
    std::vector<std::int32_t> indices;
    indices.reserve(static_cast<std::size_t>(N));
    if (opts.span_only && !contract.spans.empty()) {
        for (const auto& span : contract.spans) {
            for (std::int64_t i = span.begin;
                 i <= span.end && indices.size() < static_cast<std::size_t>(N); ++i)
                indices.push_back(vocab.lookup(contract.tokens[static_cast<std::size_t>(i)]));
            if (indices.size() >= static_cast<std::size_t>(N)) break;
        }
    } else {
        std::int64_t start = 0;
        if (!contract.spans.empty()) start = contract.spans.front().begin;
        for (std::int64_t i = start;
             i < static_cast<std::int64_t>(contract.tokens.size()) &&
             indices.size() < static_cast<std::size_t>(N);
             ++i)
            indices.push_back(vocab.lookup(contract.tokens[static_cast<std::size_t>(i)]));
    }
    while (indices.size() < static_cast<std::size_t>(N))
        indices.push_back(text::Vocabulary::kPad);

    nn::Tensor<float> base({N, C});
    for (std::int64_t i = 0; i < N; ++i) {
        const std::int32_t idx = indices[static_cast<std::size_t>(i)];
        const float* row = &emb.vectors.data[static_cast<std::size_t>(idx) * C];
        for (std::int64_t c = 0; c < C; ++c) base.at(i, c) = row[c];
    }

    EmbeddedSample sample;
    sample.id = contract.id;
    sample.label_flag = contract.label_flag;
    if (opts.pe_after_repeat) {
        auto expanded = expand_repeat(base, K, opts.mode);
        const auto pe = positional_encoding<float>(N * K, C);
        for (std::int64_t i = 0; i < expanded.numel(); ++i) expanded.data[i] += pe.data[i];
        sample.matrix = std::move(expanded);
    } else {
        const auto pe = positional_encoding<float>(N, C);
        for (std::int64_t i = 0; i < base.numel(); ++i) base.data[i] += pe.data[i];
        sample.matrix = expand_repeat(base, K, opts.mode);
    }
    return sample;
}

AssembledDataset assemble_class(const std::vector<text::TokenizedContract>& corpus,
                                const EmbeddingMatrix& emb, const text::Vocabulary& vocab,
                                const std::string& cls, const AssembleOptions& opts) {
    AssembledDataset ds;
    ds.seq_tokens = opts.seq_tokens;
    ds.repeat = opts.repeat;
    ds.channels = emb.vectors.dim(1);
    ds.cls = cls;
    for (const auto& c : corpus) {
        if (c.label_class != cls) continue;
        ds.samples.push_back(assemble(c, emb, vocab, opts));
    }
    return ds;
}

// ---- file formats -------------------------------------------------------------

namespace {

void write_f32_blob(const std::vector<float>& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
}

std::vector<float> read_f32_blob(const std::string& path, std::size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::vector<float> data(expected);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(expected * sizeof(float)));
    if (!in) throw IoError("truncated blob: " + path);
    return data;
}

}  // namespace

void save_embedding(const EmbeddingMatrix& emb, const std::string& path_base) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["vocab_size"] = emb.vectors.dim(0);
    j["dim"] = emb.vectors.dim(1);
    j["vocab_hash"] = emb.vocab_hash;
    j["training_meta"] = {{"window", emb.meta.window}, {"negatives", emb.meta.negatives},
                          {"epochs", emb.meta.epochs}, {"lr", emb.meta.lr},
                          {"seed", emb.meta.seed}};
    j["epoch_losses"] = emb.epoch_losses;
    j["entry_mean"] = emb.entry_mean;
    j["entry_var"] = emb.entry_var;
    std::ofstream mf(path_base + ".json");
    if (!mf) throw IoError("cannot write " + path_base + ".json");
    mf << j.dump(2) << "\n";
    write_f32_blob(emb.vectors.data, path_base + ".bin");
}

EmbeddingMatrix load_embedding(const std::string& path_base) {
    std::ifstream mf(path_base + ".json");
    if (!mf) throw IoError("cannot read " + path_base + ".json");
    nlohmann::json j = nlohmann::json::parse(mf);
    if (j.at("format_version").get<int>() != 1)
        throw IoError("unsupported embedding format: " + path_base);
    EmbeddingMatrix emb;
    const auto V = j.at("vocab_size").get<std::int64_t>();
    const auto C = j.at("dim").get<std::int64_t>();
    emb.vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
    emb.meta.dim = C;
    emb.meta.window = j["training_meta"]["window"].get<std::int64_t>();
    emb.meta.negatives = j["training_meta"]["negatives"].get<std::int64_t>();
    emb.meta.epochs = j["training_meta"]["epochs"].get<std::int64_t>();
    emb.meta.lr = j["training_meta"]["lr"].get<double>();
    emb.meta.seed = j["training_meta"]["seed"].get<std::uint64_t>();
    emb.epoch_losses = j.value("epoch_losses", std::vector<double>{});
    emb.entry_mean = j.value("entry_mean", 0.0);
    emb.entry_var = j.value("entry_var", 0.0);
    emb.vectors = nn::Tensor<float>({V, C},
                                    read_f32_blob(path_base + ".bin",
                                                  static_cast<std::size_t>(V * C)));
    return emb;
}

void save_dataset(const AssembledDataset& ds, const std::string& path_base) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["count"] = ds.samples.size();
    j["N"] = ds.seq_tokens;
    j["K"] = ds.repeat;
    j["C"] = ds.channels;
    j["class"] = ds.cls;
    auto ids = nlohmann::json::array();
    auto flags = nlohmann::json::array();
    for (const auto& s : ds.samples) {
        ids.push_back(s.id);
        flags.push_back(s.label_flag);
    }
    j["ids"] = ids;
    j["flags"] = flags;
    std::ofstream mf(path_base + ".json");
    if (!mf) throw IoError("cannot write " + path_base + ".json");
    mf << j.dump(2) << "\n";

    std::vector<float> blob;
    blob.reserve(ds.samples.size() * static_cast<std::size_t>(ds.seq_tokens * ds.repeat * ds.channels));
    for (const auto& s : ds.samples)
        blob.insert(blob.end(), s.matrix.data.begin(), s.matrix.data.end());
    write_f32_blob(blob, path_base + ".bin");
}

AssembledDataset load_dataset(const std::string& path_base) {
    std::ifstream mf(path_base + ".json");
    if (!mf) throw IoError("cannot read " + path_base + ".json");
    nlohmann::json j = nlohmann::json::parse(mf);
    if (j.at("format_version").get<int>() != 1)
        throw IoError("unsupported dataset format: " + path_base);
    AssembledDataset ds;
    ds.seq_tokens = j.at("N").get<std::int64_t>();
    ds.repeat = j.at("K").get<std::int64_t>();
    ds.channels = j.at("C").get<std::int64_t>();
    ds.cls = j.at("class").get<std::string>();
    const auto count = j.at("count").get<std::size_t>();
    const auto ids = j.at("ids").get<std::vector<std::string>>();
    const auto flags = j.at("flags").get<std::vector<int>>();
    if (ids.size() != count || flags.size() != count)
        throw IoError("dataset manifest is inconsistent: " + path_base);
    const std::int64_t per = ds.seq_tokens * ds.repeat * ds.channels;
    const auto blob = read_f32_blob(path_base + ".bin", count * static_cast<std::size_t>(per));
    for (std::size_t i = 0; i < count; ++i) {
        EmbeddedSample s;
        s.id = ids[i];
        s.label_flag = flags[i];
        s.matrix = nn::Tensor<float>({ds.seq_tokens * ds.repeat, ds.channels},
                                     std::vector<float>(blob.begin() + static_cast<std::ptrdiff_t>(i * per),
                                                        blob.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace stip::embed
