// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "stip/embed.hpp"
#include "stip/rng.hpp"

using namespace stip;
using namespace stip::embed;
using text::TokenizedContract;
using text::Vocabulary;

namespace {

TokenizedContract doc(std::vector<std::string> tokens) {
    TokenizedContract c;
    c.tokens = std::move(tokens);
    c.label_class = "reentrancy";
    return c;
}

double cosine(const nn::Tensor<float>& m, std::int32_t a, std::int32_t b) {
    const std::int64_t C = m.dim(1);
    double dot = 0, na = 0, nb = 0;
    for (std::int64_t c = 0; c < C; ++c) {
        dot += static_cast<double>(m.at(a, c)) * m.at(b, c);
        na += static_cast<double>(m.at(a, c)) * m.at(a, c);
        nb += static_cast<double>(m.at(b, c)) * m.at(b, c);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

}  // namespace

TEST(Cbow, CooccurrenceStructure) {
    // a,b only ever co-occur; c,d only ever co-occur; ~10k tokens total.
    std::vector<std::string> ab, cd;
    for (int i = 0; i < 2500; ++i) {
        ab.push_back("a");
        ab.push_back("b");
        cd.push_back("c");
        cd.push_back("d");
    }
    const std::vector<TokenizedContract> corpus = {doc(ab), doc(cd)};
    const auto vocab = Vocabulary::build(corpus, 1);
    CbowConfig cfg;
    cfg.dim = 16;
    cfg.window = 2;
    cfg.negatives = 3;
    cfg.epochs = 3;
    cfg.seed = 9;
    const auto emb = train_cbow(corpus, vocab, cfg);

    const auto ia = vocab.lookup("a"), ib = vocab.lookup("b"), ic = vocab.lookup("c"),
               id = vocab.lookup("d");
    EXPECT_GT(cosine(emb.vectors, ia, ib), cosine(emb.vectors, ia, ic));
    EXPECT_GT(cosine(emb.vectors, ic, id), cosine(emb.vectors, ic, ia));
}

TEST(Cbow, LossDecreasesAcrossEpochs) {
    Rng rng(3);
    std::vector<std::string> tokens;
    const char* pool[] = {"transfer", "require", "balance", "msg.sender", "value", "owner"};
    for (int i = 0; i < 4000; ++i) tokens.push_back(pool[rng.uniform_index(6)]);
    const std::vector<TokenizedContract> corpus = {doc(tokens)};
    const auto vocab = Vocabulary::build(corpus, 1);
    CbowConfig cfg;
    cfg.dim = 12;
    cfg.window = 3;
    cfg.negatives = 4;
    cfg.epochs = 4;
    cfg.seed = 1;
    const auto emb = train_cbow(corpus, vocab, cfg);
    ASSERT_EQ(emb.epoch_losses.size(), 4u);
    EXPECT_LT(emb.epoch_losses.back(), emb.epoch_losses.front());
}

TEST(Cbow, SingleDistinctTokenCorpus) {
    std::vector<std::string> tokens(200, "only");
    const std::vector<TokenizedContract> corpus = {doc(tokens)};
    const auto vocab = Vocabulary::build(corpus, 1);
    CbowConfig cfg;
    cfg.dim = 8;
    cfg.window = 2;
    cfg.negatives = 2;
    cfg.epochs = 2;
    const auto emb = train_cbow(corpus, vocab, cfg);
    for (float v : emb.vectors.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Cbow, DeterministicUnderFrozenSeed) {
    Rng rng(8);
    std::vector<std::string> tokens;
    const char* pool[] = {"x", "y", "z", "w"};
    for (int i = 0; i < 500; ++i) tokens.push_back(pool[rng.uniform_index(4)]);
    const std::vector<TokenizedContract> corpus = {doc(tokens)};
    const auto vocab = Vocabulary::build(corpus, 1);
    CbowConfig cfg;
    cfg.dim = 10;
    cfg.window = 2;
    cfg.negatives = 3;
    cfg.epochs = 2;
    cfg.seed = 77;
    const auto e1 = train_cbow(corpus, vocab, cfg);
    const auto e2 = train_cbow(corpus, vocab, cfg);
    EXPECT_EQ(e1.vectors.data, e2.vectors.data);
}

TEST(Cbow, PadRowStaysZero) {
    std::vector<std::string> tokens(100, "tok");
    for (int i = 0; i < 100; ++i) tokens.push_back("other");
    const std::vector<TokenizedContract> corpus = {doc(tokens)};
    const auto vocab = Vocabulary::build(corpus, 1);
    CbowConfig cfg;
    cfg.dim = 6;
    cfg.window = 2;
    cfg.negatives = 2;
    cfg.epochs = 1;
    const auto emb = train_cbow(corpus, vocab, cfg);
    for (std::int64_t c = 0; c < 6; ++c) EXPECT_EQ(emb.vectors.at(Vocabulary::kPad, c), 0.0f);
}

TEST(Cbow, TooShortCorpusRejected) {
    const std::vector<TokenizedContract> corpus = {doc({"a", "b"})};
    const auto vocab = Vocabulary::build(corpus, 1);
    CbowConfig cfg;
    cfg.window = 5;
    EXPECT_THROW(train_cbow(corpus, vocab, cfg), ConfigError);
}

TEST(PositionalEncoding, FirstRowAlternatesZeroOne) {
    const auto pe = positional_encoding<double>(4, 8);
    for (std::int64_t i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(pe.at(0, 2 * i), 0.0);
        EXPECT_DOUBLE_EQ(pe.at(0, 2 * i + 1), 1.0);
    }
}

TEST(PositionalEncoding, BoundedAndKnownValue) {
    const auto pe = positional_encoding<double>(32, 10);
    for (double v : pe.data) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_NEAR(pe.at(1, 0), std::sin(1.0), 1e-12);
    EXPECT_NEAR(pe.at(1, 0), 0.84147, 1e-5);
}

TEST(PositionalEncoding, OddChannelsRejected) {
    EXPECT_THROW(positional_encoding<double>(4, 7), ConfigError);
}

TEST(ExpandRepeat, IdentityAtKOne) {
    const auto x = nn::Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    const auto y = expand_repeat(x, 1);
    EXPECT_EQ(y.data, x.data);
}

TEST(ExpandRepeat, TileSemantics) {
    const auto x = nn::Tensor<double>::from({2, 1}, {1, 2});  // [A,B]
    const auto y = expand_repeat(x, 2, RepeatMode::Tile);
    EXPECT_EQ(y.data, (std::vector<double>{1, 2, 1, 2}));  // [A,B,A,B]
    const auto z = expand_repeat(x, 2, RepeatMode::Element);
    EXPECT_EQ(z.data, (std::vector<double>{1, 1, 2, 2}));  // [A,A,B,B]
}

TEST(ExpandRepeat, TileBlockPropertyFuzz) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_index(6));
        const std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform_index(4));
        const std::int64_t k = 1 + static_cast<std::int64_t>(rng.uniform_index(4));
        const auto x = nn::normal_init<double>(rng, {n, c}, 0, 1);
        const auto y = expand_repeat(x, k, RepeatMode::Tile);
        ASSERT_EQ(y.dim(0), n * k);
        for (std::int64_t j = 0; j < k; ++j)
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t cc = 0; cc < c; ++cc)
                    EXPECT_EQ(y.at(j * n + i, cc), x.at(i, cc));
    }
}

TEST(ExpandRepeat, InvalidKRejected) {
    const auto x = nn::Tensor<double>::from({1, 1}, {1});
    EXPECT_THROW(expand_repeat(x, 0), ConfigError);
}

namespace {

// Toy embedding with hand-set rows for the assembly fixtures.
EmbeddingMatrix toy_embedding() {
    EmbeddingMatrix emb;
    emb.vectors = nn::Tensor<float>({4, 4});
    for (std::int64_t r = 1; r < 4; ++r)
        for (std::int64_t c = 0; c < 4; ++c)
            emb.vectors.at(r, c) = static_cast<float>(10 * r + c);
    return emb;
}

Vocabulary toy_vocab() {
    TokenizedContract c;
    c.tokens = {"aa", "aa", "bb"};  // aa -> 2, bb -> 3
    return Vocabulary::build({c}, 1);
}

}  // namespace

TEST(Assemble, EmptyTokenListIsPurePositionalEncoding) {
    const auto emb = toy_embedding();
    const auto vocab = toy_vocab();
    TokenizedContract c;
    c.label_flag = 1;
    AssembleOptions opts;
    opts.seq_tokens = 3;
    opts.repeat = 1;
    const auto s = assemble(c, emb, vocab, opts);
    const auto pe = positional_encoding<float>(3, 4);
    ASSERT_EQ(s.matrix.shape, (nn::Shape{3, 4}));
    for (std::int64_t i = 0; i < s.matrix.numel(); ++i)
        EXPECT_FLOAT_EQ(s.matrix.data[i], pe.data[i]);
}

TEST(Assemble, HandCheckedFixture) {
    const auto emb = toy_embedding();
    const auto vocab = toy_vocab();
    TokenizedContract c;
    c.tokens = {"aa", "zz", "bb"};  // zz is OOV -> UNK (row 1)
    AssembleOptions opts;
    opts.seq_tokens = 3;
    opts.repeat = 2;
    const auto s = assemble(c, emb, vocab, opts);
    ASSERT_EQ(s.matrix.shape, (nn::Shape{6, 4}));
    const auto pe = positional_encoding<float>(3, 4);
    const std::int32_t rows[] = {2, 1, 3};  // aa, UNK, bb
    for (std::int64_t rep = 0; rep < 2; ++rep)
        for (std::int64_t i = 0; i < 3; ++i)
            for (std::int64_t cc = 0; cc < 4; ++cc)
                EXPECT_FLOAT_EQ(s.matrix.at(rep * 3 + i, cc),
                                emb.vectors.at(rows[i], cc) + pe.at(i, cc));
}

TEST(Assemble, ShapeIsAlwaysNKByC) {
    const auto emb = toy_embedding();
    const auto vocab = toy_vocab();
    Rng rng(2);
    for (int len : {0, 1, 2, 3, 10, 50}) {
        TokenizedContract c;
        for (int i = 0; i < len; ++i) c.tokens.push_back(rng.uniform() < 0.5 ? "aa" : "bb");
        AssembleOptions opts;
        opts.seq_tokens = 4;
        opts.repeat = 3;
        const auto s = assemble(c, emb, vocab, opts);
        EXPECT_EQ(s.matrix.shape, (nn::Shape{12, 4}));
    }
}

TEST(Assemble, TruncationStartsAtFirstSpan) {
    const auto emb = toy_embedding();
    const auto vocab = toy_vocab();
    TokenizedContract c;
    for (int i = 0; i < 10; ++i) c.tokens.push_back("aa");
    c.tokens.push_back("bb");  // index 10, inside the span
    c.spans = {{10, 10, "p"}};
    AssembleOptions opts;
    opts.seq_tokens = 1;
    opts.repeat = 1;
    const auto s = assemble(c, emb, vocab, opts);
    const auto pe = positional_encoding<float>(1, 4);
    for (std::int64_t cc = 0; cc < 4; ++cc)
        EXPECT_FLOAT_EQ(s.matrix.at(0, cc), emb.vectors.at(3, cc) + pe.at(0, cc));
}

TEST(Assemble, PeBeforeRepeatGivesIdenticalBlocks) {
    const auto emb = toy_embedding();
    const auto vocab = toy_vocab();
    TokenizedContract c;
    c.tokens = {"aa", "bb", "aa"};
    AssembleOptions opts;
    opts.seq_tokens = 3;
    opts.repeat = 3;
    const auto s = assemble(c, emb, vocab, opts);
    for (std::int64_t rep = 1; rep < 3; ++rep)
        for (std::int64_t i = 0; i < 3; ++i)
            for (std::int64_t cc = 0; cc < 4; ++cc)
                EXPECT_EQ(s.matrix.at(rep * 3 + i, cc), s.matrix.at(i, cc));

    // With pe-after-repeat the blocks differ (fresh positions per copy).
    opts.pe_after_repeat = true;
    const auto s2 = assemble(c, emb, vocab, opts);
    bool any_diff = false;
    for (std::int64_t i = 0; i < 3 && !any_diff; ++i)
        for (std::int64_t cc = 0; cc < 4; ++cc)
            if (s2.matrix.at(3 + i, cc) != s2.matrix.at(i, cc)) any_diff = true;
    EXPECT_TRUE(any_diff);
}

TEST(EmbeddingIo, RoundTripIsBitExact) {
    Rng rng(4);
    std::vector<std::string> tokens;
    const char* pool[] = {"p", "q", "r"};
    for (int i = 0; i < 300; ++i) tokens.push_back(pool[rng.uniform_index(3)]);
    const std::vector<TokenizedContract> corpus = {doc(tokens)};
    const auto vocab = Vocabulary::build(corpus, 1);
    CbowConfig cfg;
    cfg.dim = 8;
    cfg.window = 2;
    cfg.negatives = 2;
    cfg.epochs = 1;
    const auto emb = train_cbow(corpus, vocab, cfg);

    const std::string base = testing::TempDir() + "emb_roundtrip";
    save_embedding(emb, base);
    const auto loaded = load_embedding(base);
    EXPECT_EQ(loaded.vectors.shape, emb.vectors.shape);
    EXPECT_EQ(loaded.vectors.data, emb.vectors.data);  // bit-exact
    EXPECT_EQ(loaded.vocab_hash, emb.vocab_hash);
    EXPECT_EQ(loaded.meta.window, cfg.window);
}

TEST(DatasetIo, RoundTrip) {
    const auto emb = toy_embedding();
    const auto vocab = toy_vocab();
    std::vector<TokenizedContract> corpus;
    for (int i = 0; i < 6; ++i) {
        TokenizedContract c;
        c.id = "c" + std::to_string(i) + ".sol";
        c.label_class = "timestamp";
        c.label_flag = i % 2;
        c.tokens = {"aa", "bb"};
        corpus.push_back(std::move(c));
    }
    AssembleOptions opts;
    opts.seq_tokens = 4;
    opts.repeat = 2;
    const auto ds = assemble_class(corpus, emb, vocab, "timestamp", opts);
    ASSERT_EQ(ds.samples.size(), 6u);

    const std::string base = testing::TempDir() + "ds_roundtrip";
    save_dataset(ds, base);
    const auto loaded = load_dataset(base);
    EXPECT_EQ(loaded.cls, "timestamp");
    EXPECT_EQ(loaded.samples.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(loaded.samples[i].id, ds.samples[i].id);
        EXPECT_EQ(loaded.samples[i].label_flag, ds.samples[i].label_flag);
        EXPECT_EQ(loaded.samples[i].matrix.data, ds.samples[i].matrix.data);
    }
}
