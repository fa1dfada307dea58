// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "stip/config.hpp"
#include "stip/dataset.hpp"
#include "stip/metrics.hpp"
#include "stip/report.hpp"
#include "stip/synth.hpp"
#include "stip/train.hpp"

using namespace stip;
using namespace stip::harness;

namespace {

embed::AssembledDataset fake_dataset(std::int64_t positives, std::int64_t negatives,
                                     std::uint64_t seed = 1) {
    Rng rng(seed);
    embed::AssembledDataset ds;
    ds.seq_tokens = 2;
    ds.repeat = 1;
    ds.channels = 2;
    ds.cls = "reentrancy";
    for (std::int64_t i = 0; i < positives + negatives; ++i) {
        embed::EmbeddedSample s;
        s.id = "s" + std::to_string(i);
        s.label_flag = i < positives ? 1 : 0;
        s.matrix = nn::normal_init<float>(rng, {2, 2}, s.label_flag, 0.1);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace

TEST(Balance, UndersamplesMajorityToMinority) {
    const auto ds = fake_dataset(100, 300);
    const auto m = load_and_balance(ds, 42);
    std::int64_t pos = 0, neg = 0;
    for (auto i : m.indices)
        (ds.samples[static_cast<std::size_t>(i)].label_flag == 1 ? pos : neg)++;
    EXPECT_EQ(pos, 100);
    EXPECT_EQ(neg, 100);
}

TEST(Balance, AlreadyBalancedUnchanged) {
    const auto ds = fake_dataset(50, 50);
    const auto m = load_and_balance(ds, 42);
    EXPECT_EQ(m.indices.size(), 100u);
    for (std::size_t i = 0; i < 100; ++i)
        EXPECT_EQ(m.indices[i], static_cast<std::int32_t>(i));
}

TEST(Balance, DeterministicPerSeed) {
    const auto ds = fake_dataset(40, 160);
    const auto a = load_and_balance(ds, 7);
    const auto b = load_and_balance(ds, 7);
    EXPECT_EQ(a.indices, b.indices);
    const auto c = load_and_balance(ds, 8);
    EXPECT_NE(a.indices, c.indices);
}

TEST(Balance, SingleClassRejected) {
    const auto ds = fake_dataset(10, 0);
    EXPECT_THROW(load_and_balance(ds, 1), ConfigError);
}

TEST(Split, EightyTwentyAndStratified) {
    const auto ds = fake_dataset(5, 5);
    const auto m = load_and_balance(ds, 1);
    const auto [train, test] = split(ds, m, 0.8, 2);
    EXPECT_EQ(train.indices.size(), 8u);
    EXPECT_EQ(test.indices.size(), 2u);
    auto count_pos = [&](const DatasetManifest& s) {
        std::int64_t p = 0;
        for (auto i : s.indices) p += ds.samples[static_cast<std::size_t>(i)].label_flag;
        return p;
    };
    EXPECT_LE(std::abs(2 * count_pos(train) - static_cast<std::int64_t>(train.indices.size())), 1);
    EXPECT_LE(std::abs(2 * count_pos(test) - static_cast<std::int64_t>(test.indices.size())), 1);
}

TEST(Split, DisjointAndExhaustive) {
    const auto ds = fake_dataset(30, 80);
    const auto m = load_and_balance(ds, 3);
    const auto [train, test] = split(ds, m, 0.8, 4);
    std::set<std::int32_t> train_ids(train.indices.begin(), train.indices.end());
    std::set<std::int32_t> test_ids(test.indices.begin(), test.indices.end());
    for (auto i : test_ids) EXPECT_EQ(train_ids.count(i), 0u);
    EXPECT_EQ(train_ids.size() + test_ids.size(), m.indices.size());
}

TEST(Split, DeterministicPerSeedAndTooSmallRejected) {
    const auto ds = fake_dataset(10, 10);
    const auto m = load_and_balance(ds, 1);
    const auto [a_train, a_test] = split(ds, m, 0.8, 9);
    const auto [b_train, b_test] = split(ds, m, 0.8, 9);
    EXPECT_EQ(a_train.indices, b_train.indices);
    EXPECT_EQ(a_test.indices, b_test.indices);

    const auto tiny = fake_dataset(2, 2);
    const auto tm = load_and_balance(tiny, 1);
    EXPECT_THROW(split(tiny, tm, 0.8, 1), ConfigError);
}

TEST(MetricsTest, PerfectClassifier) {
    const auto m = Metrics::from_counts(1, 1, 0, 0);
    EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(m.precision, 1.0);
    EXPECT_DOUBLE_EQ(m.recall, 1.0);
    EXPECT_DOUBLE_EQ(m.f1, 1.0);
}

TEST(MetricsTest, ConfusionMatrixFormulaExample) {
    // TP=80, FN=20, FP=10, TN=90 -> precision 0.8889, recall 0.8, F1 0.8421,
    // accuracy 0.85 (confusion-matrix formula oracle).
    const auto m = Metrics::from_counts(80, 90, 10, 20);
    EXPECT_NEAR(m.precision, 0.8889, 1e-4);
    EXPECT_NEAR(m.recall, 0.8000, 1e-12);
    EXPECT_NEAR(m.f1, 0.8421, 1e-4);
    EXPECT_NEAR(m.accuracy, 0.8500, 1e-12);
}

TEST(MetricsTest, AllOneClassOnBalancedDataIsHalfAccuracy) {
    const auto m = Metrics::from_counts(50, 0, 50, 0);
    EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
}

TEST(MetricsTest, ZeroDenominatorsFlagged) {
    const auto m = Metrics::from_counts(0, 10, 0, 5);
    EXPECT_TRUE(m.precision_undefined);
    EXPECT_DOUBLE_EQ(m.precision, 0.0);
    EXPECT_DOUBLE_EQ(m.recall, 0.0);
    EXPECT_TRUE(m.f1_undefined);
    EXPECT_DOUBLE_EQ(m.f1, 0.0);
}

TEST(MetricsTest, RandomCountsMatchIndependentOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 10000; ++trial) {
        const auto tp = static_cast<std::int64_t>(rng.uniform_index(100));
        const auto tn = static_cast<std::int64_t>(rng.uniform_index(100));
        const auto fp = static_cast<std::int64_t>(rng.uniform_index(100));
        const auto fn = static_cast<std::int64_t>(rng.uniform_index(100));
        if (tp + tn + fp + fn == 0) continue;
        const auto m = Metrics::from_counts(tp, tn, fp, fn);
        // Independent recomputation straight from the formulas.
        const double acc = double(tp + tn) / double(tp + tn + fp + fn);
        EXPECT_EQ(m.accuracy, acc);
        if (tp + fp > 0) EXPECT_EQ(m.precision, double(tp) / double(tp + fp));
        if (tp + fn > 0) EXPECT_EQ(m.recall, double(tp) / double(tp + fn));
        if (m.precision + m.recall > 0)
            EXPECT_EQ(m.f1, 2.0 * m.precision * m.recall / (m.precision + m.recall));
        EXPECT_GE(m.accuracy, 0.0);
        EXPECT_LE(m.accuracy, 1.0);
        EXPECT_LE(m.f1, 1.0);
    }
}

TEST(Repeats, SingleRunEqualsItsAverage) {
    RunReport r;
    r.name = "only";
    r.final_metrics = Metrics::from_counts(8, 7, 2, 3);
    const auto s = summarize_repeats({r});
    EXPECT_DOUBLE_EQ(s.mean.accuracy, r.final_metrics.accuracy);
    EXPECT_DOUBLE_EQ(s.std_accuracy, 0.0);
    EXPECT_DOUBLE_EQ(s.std_f1, 0.0);
}

TEST(Repeats, IdenticalRunsZeroDeviationAndMeanMatchesArithmetic) {
    RunReport a, b, c;
    a.final_metrics = Metrics::from_counts(5, 5, 0, 0);
    b.final_metrics = Metrics::from_counts(4, 4, 1, 1);
    c.final_metrics = a.final_metrics;
    const auto same = summarize_repeats({a, a, a});
    EXPECT_DOUBLE_EQ(same.std_accuracy, 0.0);

    const auto mixed = summarize_repeats({a, b, c});
    // Arithmetic oracle recomputed by hand.
    const double mean_acc =
        (a.final_metrics.accuracy + b.final_metrics.accuracy + c.final_metrics.accuracy) / 3.0;
    EXPECT_NEAR(mixed.mean.accuracy, mean_acc, 1e-15);
    double var = 0;
    for (const auto* r : {&a, &b, &c})
        var += (r->final_metrics.accuracy - mean_acc) * (r->final_metrics.accuracy - mean_acc);
    EXPECT_NEAR(mixed.std_accuracy, std::sqrt(var / 2.0), 1e-15);
}

TEST(MinMaxScale, MapsExtremesToBounds) {
    const auto s = minmax_scale({3.0, 1.0, 2.0});
    EXPECT_DOUBLE_EQ(s.scaled[0], 0.5);
    EXPECT_DOUBLE_EQ(s.scaled[1], 0.04);
    EXPECT_NEAR(s.scaled[2], 0.27, 1e-12);
}

TEST(MinMaxScale, ConstantSeriesMapsToLowerBound) {
    const auto s = minmax_scale({2.5, 2.5, 2.5});
    for (double v : s.scaled) EXPECT_DOUBLE_EQ(v, 0.04);
}

TEST(MinMaxScale, InverseAffineRecoversRaw) {
    Rng rng(12);
    std::vector<double> raw;
    for (int i = 0; i < 40; ++i) raw.push_back(rng.uniform(0.3, 9.0));
    const auto s = minmax_scale(raw);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double unscaled =
            s.raw_min + (s.scaled[i] - 0.04) * (s.raw_max - s.raw_min) / (0.5 - 0.04);
        EXPECT_NEAR(unscaled, raw[i], 1e-9);
    }
}

TEST(SynthCorpus, TriggerTokensOnlyInVulnerableSamples) {
    const auto corpus = make_synthetic_corpus({{"reentrancy", 40}}, 3);
    ASSERT_EQ(corpus.contracts.size(), 40u);
    std::int64_t vulnerable = 0;
    for (const auto& c : corpus.contracts) {
        const auto tokens = text::tokenize(text::strip_noise(c.source).text);
        const bool has_call =
            std::find(tokens.begin(), tokens.end(), "call") != tokens.end();
        if (c.label_flag == 1) {
            ++vulnerable;
            EXPECT_TRUE(has_call) << c.path;
        } else {
            EXPECT_FALSE(has_call) << c.path;
        }
    }
    EXPECT_EQ(vulnerable, 20);  // 50/50 balance
}

TEST(SynthCorpus, TooFewSamplesRejected) {
    EXPECT_THROW(make_synthetic_corpus({{"timestamp", 10}}, 1), ConfigError);
}

TEST(SynthCorpus, BagOfWordsLogisticOracleCertifiesSeparability) {
    for (const char* cls : {"reentrancy", "timestamp", "delegatecall",
                            "integer-overflow-underflow", "cdav"}) {
        const auto corpus = make_synthetic_corpus({{cls, 60}}, 11);
        // Build bag-of-words features over the joint vocabulary.
        std::vector<text::TokenizedContract> toks;
        for (const auto& c : corpus.contracts)
            toks.push_back(text::preprocess_contract(c, text::default_patterns()));
        const auto vocab = text::Vocabulary::build(toks, 1);
        std::vector<std::vector<double>> xs;
        std::vector<int> ys;
        for (const auto& t : toks) {
            // Binary presence features.
            std::vector<double> bow(static_cast<std::size_t>(vocab.size()), 0.0);
            for (const auto& tok : t.tokens)
                bow[static_cast<std::size_t>(vocab.lookup(tok))] = 1.0;
            xs.push_back(std::move(bow));
            ys.push_back(t.label_flag);
        }
        // Interleave classes so plain SGD sees both throughout.
        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < xs.size() / 2; ++i) {
            order.push_back(i);
            order.push_back(xs.size() / 2 + i);
        }
        std::vector<std::vector<double>> xs2;
        std::vector<int> ys2;
        for (auto i : order) {
            xs2.push_back(xs[i]);
            ys2.push_back(ys[i]);
        }
        oracle::LogisticOracle lr;
        lr.fit(xs2, ys2, /*epochs=*/200, /*lr=*/0.1);
        EXPECT_GE(lr.f1(xs2, ys2), 0.99) << cls;
    }
}

TEST(SynthCorpus, WriteProducesLabelsCsv) {
    const auto corpus = make_synthetic_corpus({{"delegatecall", 20}}, 5);
    const std::string dir = testing::TempDir() + "synth_out";
    write_synthetic_corpus(corpus, dir);
    const auto labels = text::load_labels(dir + "/labels.csv");
    EXPECT_EQ(labels.size(), 20u);
    for (const auto& row : labels) {
        EXPECT_EQ(row.cls, "delegatecall");
        EXPECT_TRUE(std::filesystem::exists(dir + "/" + row.filename));
    }
}

TEST(Config, JsonRoundTripAndUnknownKeyRejected) {
    PipelineConfig cfg;
    cfg.embed_dim = 16;
    cfg.seq_tokens = 16;
    const auto js = cfg.to_json();
    PipelineConfig other;
    other.apply_json(js);
    EXPECT_EQ(other.embed_dim, 16);
    EXPECT_EQ(other.seq_tokens, 16);
    EXPECT_THROW(other.apply_json("{\"bogus_key\": 1}"), ConfigError);
    EXPECT_THROW(other.apply_json("{\"kd_alpha\": 1.5}"), ConfigError);
}

TEST(Report, DistillComparisonKeepsRawAndScaledColumns) {
    const std::string path = testing::TempDir() + "cmp.csv";
    write_distill_comparison_csv({2.0, 4.0, 3.0}, {0.9, 0.8}, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // min/max header comment
    EXPECT_EQ(line.find("# pre_raw_min=2 pre_raw_max=4"), 0u);
    std::getline(in, line);
    EXPECT_EQ(line, "index,pre_loss_raw,pre_loss_scaled,post_loss");
    std::getline(in, line);
    EXPECT_EQ(line, "0,2,0.04,0.9");
    std::getline(in, line);
    EXPECT_EQ(line, "1,4,0.5,0.8");
    std::getline(in, line);
    EXPECT_EQ(line, "2,3,0.27,");  // raw+scaled always present, post may be empty
}
