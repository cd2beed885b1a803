#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "esc/analysis.hpp"

using namespace esc;
using namespace esc::analysis;

namespace {

const StrategyLabel Q = Strategy::question;
const StrategyLabel AR = Strategy::affirmation;
const StrategyLabel PS = Strategy::suggestion;

std::vector<Sample> fixture_samples(DatasetVersion v) {
    return segment_all(load_esconv(std::filesystem::path(ESC_TEST_DATA) / "mini_esconv.json").dialogues, v);
}

SystemOutput output(std::string system, std::vector<StrategyUtterance> pairs) {
    return {"x", std::move(system), std::move(pairs), std::nullopt, std::nullopt};
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("esc_analysis_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace

TEST(Cus, FixtureHistogram) {
    const auto h = cus_distribution(targets(fixture_samples(DatasetVersion::v1)));
    EXPECT_EQ(h.total_responses, 15u);
    EXPECT_EQ(h.max_k(), 4u);
    EXPECT_EQ(h.count(1), 9u);
    EXPECT_EQ(h.count(2), 2u);
    EXPECT_EQ(h.count(3), 3u);
    EXPECT_EQ(h.count(4), 1u);
    EXPECT_EQ(h.multi_strategy(), 6u);
}

TEST(Cus, BucketMeansAndGaps) {
    const SupporterTurn three{{{Q, "a b c d"}, {AR, "e f g h"}, {PS, "i j k l"}}};
    auto h = cus_distribution({three});
    ASSERT_EQ(h.buckets.size(), 3u); // 1 and 2 present but empty
    EXPECT_EQ(h.count(3), 1u);
    EXPECT_DOUBLE_EQ(h.buckets.at(3).mean_token_length, 12.0);
    EXPECT_EQ(h.count(1), 0u);
    EXPECT_EQ(h.multi_strategy(), 1u);

    EXPECT_EQ(cus_distribution({}).total_responses, 0u);
    EXPECT_EQ(cus_distribution({}).max_k(), 0u);
    EXPECT_EQ(cus_distribution({SupporterTurn{}}).total_responses, 0u);
}

TEST(Cus, InvariantUnderReordering) {
    auto turns = targets(fixture_samples(DatasetVersion::v1));
    const auto h = cus_distribution(turns);
    std::mt19937_64 g(4);
    for (int i = 0; i < 5; ++i) {
        std::shuffle(turns.begin(), turns.end(), g);
        EXPECT_EQ(cus_distribution(turns), h);
    }
}

TEST(Cus, MergingNeverRaisesBucket) {
    const auto v1 = fixture_samples(DatasetVersion::v1);
    for (const auto& s : v1) EXPECT_LE(merge_same_strategy(s.target).pairs.size(), s.target.pairs.size());
    const auto v2 = fixture_samples(DatasetVersion::v2);
    EXPECT_LE(cus_distribution(targets(v2)).max_k(), cus_distribution(targets(v1)).max_k());
    EXPECT_GE(cus_distribution(targets(v2)).count(1), cus_distribution(targets(v1)).count(1));
}

TEST(Frequency, CountsPerSystem) {
    const auto f = strategy_frequency({output("m", {{Q, "a"}}), output("m", {{Q, "b"}, {AR, "c"}})});
    EXPECT_EQ(f.get("m", Strategy::question), 2u);
    EXPECT_EQ(f.get("m", Strategy::affirmation), 1u);
    EXPECT_EQ(f.get("m", Strategy::suggestion), 0u);
    EXPECT_EQ(f.total("m"), 3u);
    EXPECT_EQ(f.total("other"), 0u);
}

TEST(Frequency, UnknownLabelsShareARow) {
    const auto f = strategy_frequency({output("m", {{StrategyLabel::unknown("Empathy"), "a"},
                                                    {StrategyLabel::unknown("Humor"), "b"}})});
    EXPECT_EQ(f.get("m", Strategy::unknown), 2u);
    const json j = f;
    EXPECT_EQ(j["m"]["Unknown"], 2);
    EXPECT_EQ(j.get<StrategyFrequency>(), f);
}

TEST(Frequency, TotalMatchesPairCount) {
    const auto samples = fixture_samples(DatasetVersion::v1);
    std::vector<SystemOutput> outs;
    std::size_t pairs = 0;
    for (const auto& s : samples) {
        outs.push_back(reference_output(s));
        pairs += s.target.pairs.size();
    }
    EXPECT_EQ(strategy_frequency(outs).total("Human"), pairs);
}

TEST(DistinctSeq, Counts) {
    const SupporterTurn t{{{Q, "a"}, {AR, "b"}}};
    EXPECT_EQ(distinct_sequences({t, t, t}).count, 1u);
    EXPECT_EQ(distinct_sequences({t, SupporterTurn{{{AR, "b"}, {Q, "a"}}}}).count, 2u);
    EXPECT_EQ(distinct_sequences(targets(fixture_samples(DatasetVersion::v1))).count, 13u);
    EXPECT_EQ(distinct_sequences(targets(fixture_samples(DatasetVersion::v2))).count, 13u);
}

TEST(DistinctSeq, V2NeverExceedsV1) {
    std::mt19937 g(12);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<SupporterTurn> v1, v2;
        for (int i = 0; i < 20; ++i) {
            SupporterTurn t;
            const int n = 1 + static_cast<int>(g() % 5);
            for (int k = 0; k < n; ++k) t.pairs.push_back({canonical_strategies[g() % 3], "w"});
            v1.push_back(t);
            v2.push_back(merge_same_strategy(t));
        }
        EXPECT_LE(distinct_sequences(v2).count, distinct_sequences(v1).count);
    }
}

TEST(Emit, WritesCsvAndJson) {
    TempDir tmp;
    const auto samples = fixture_samples(DatasetVersion::v1);
    std::vector<SystemOutput> outs;
    for (const auto& s : samples) outs.push_back(reference_output(s));
    FigureSet fig;
    fig.histograms["Human"] = cus_distribution(targets(samples));
    fig.frequencies = strategy_frequency(outs);
    fig.sequences["Human"] = distinct_sequences(targets(samples));
    fig.turns["Human"] = targets(samples);
    fig.reports.push_back(metrics::evaluate(outs, samples));
    const auto written = emit_report(fig, tmp.path, "v1");
    EXPECT_EQ(written.size(), 8u);
    for (const auto& p : written) EXPECT_TRUE(std::filesystem::exists(p)) << p;

    const auto csv = read_file(tmp.path / "cus_distribution_Human_v1.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "k,count,mean_len");
    EXPECT_NE(csv.find("\n1,9,"), std::string::npos);
    const auto h = json::parse(read_file(tmp.path / "cus_distribution_Human_v1.json")).get<CusHistogram>();
    EXPECT_EQ(h.total_responses, fig.histograms["Human"].total_responses);
    EXPECT_EQ(h.count(3), 3u);

    const auto freq = read_file(tmp.path / "strategy_frequency_all_v1.csv");
    EXPECT_EQ(freq.substr(0, freq.find('\n')), "system,strategy,count");
    EXPECT_EQ(json::parse(read_file(tmp.path / "strategy_frequency_all_v1.json")).get<StrategyFrequency>(),
              fig.frequencies);

    const auto seq = json::parse(read_file(tmp.path / "distinct_sequences_Human_v1.json"));
    EXPECT_EQ(seq["count"], 13);
    EXPECT_EQ(seq["sequences"].size(), 13u);

    const auto table = read_file(tmp.path / "metrics_all_v1.txt");
    EXPECT_NE(table.find("B-4"), std::string::npos);
}

TEST(Emit, SanitizesFileNames) {
    EXPECT_EQ(file_token("gpt/4o mini"), "gpt-4o-mini");
    EXPECT_EQ(file_token(""), "unnamed");
}

TEST(Emit, SequenceCsvQuotesAndCounts) {
    const SupporterTurn t{{{Q, "a"}, {AR, "b"}}};
    const auto csv = sequences_csv(distinct_sequences({t, t}), {t, t});
    EXPECT_NE(csv.find("2,2,Question > Affirmation and Reassurance"), std::string::npos);
}
