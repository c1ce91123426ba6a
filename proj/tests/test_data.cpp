#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsadc/data.hpp"

using namespace tsadc;

namespace {

std::string serialize(const Dataset& ds) {
    std::ostringstream os(std::ios::binary);
    save_dataset(ds, os);
    return os.str();
}

// Independent average-precision oracle: walk scores in descending order and
// average precision at each true positive.
double average_precision_oracle(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t positives = 0;
    for (int l : labels) positives += l != 0;
    if (positives == 0) return 0.0;
    double ap = 0.0;
    std::size_t tp = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] != 0) {
            ++tp;
            ap += double(tp) / double(rank + 1);
        }
    }
    return ap / double(positives);
}

}  // namespace

TEST(SyntheticConfig, ValidationRules) {
    SyntheticConfig cfg;
    cfg.rate_train = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SyntheticConfig{};
    cfg.rate_test = -0.1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SyntheticConfig{};
    cfg.anomaly_types.clear();
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.rate_train = cfg.rate_valid = cfg.rate_test = 0.0;
    EXPECT_NO_THROW(cfg.validate());  // empty type set fine when nothing is contaminated
}

TEST(GenerateSynthetic, DeskPresetShapesAndCounts) {
    SyntheticConfig cfg = SyntheticConfig::desk_preset();
    EXPECT_EQ(cfg.K, 4u);
    EXPECT_EQ(cfg.L, 128u);
    SyntheticData d = generate_synthetic(cfg, 7);
    EXPECT_EQ(d.train.size(), 512u);
    EXPECT_EQ(d.valid.size(), 128u);
    EXPECT_EQ(d.test.size(), 256u);
    for (const Dataset* ds : {&d.train, &d.valid, &d.test}) {
        EXPECT_EQ(ds->K, 4u);
        EXPECT_EQ(ds->L, 128u);
        EXPECT_NO_THROW(ds->validate());
        for (const auto& o : ds->observations)
            for (double v : o.values) {
                EXPECT_TRUE(std::isfinite(v));
                EXPECT_LT(std::fabs(v), 16.0);
            }
    }
    EXPECT_EQ(contamination_report(d.train).abnormal, std::size_t(std::lround(0.2 * 512)));
    EXPECT_EQ(contamination_report(d.valid).abnormal, std::size_t(std::lround(0.2 * 128)));
    EXPECT_EQ(contamination_report(d.test).abnormal, std::size_t(std::lround(0.4 * 256)));
}

TEST(GenerateSynthetic, RoundedAbnormalCount) {
    SyntheticConfig cfg;
    cfg.n_train = 100;
    cfg.n_valid = 10;
    cfg.n_test = 10;
    cfg.rate_train = 0.2;
    SyntheticData d = generate_synthetic(cfg, 1);
    EXPECT_EQ(contamination_report(d.train).abnormal, 20u);
}

TEST(GenerateSynthetic, SingleTypeSetMarksAllAbnormalWithThatType) {
    SyntheticConfig cfg;
    cfg.n_train = 50;
    cfg.n_valid = 10;
    cfg.n_test = 10;
    cfg.anomaly_types = {AnomalyType::Spike};
    SyntheticData d = generate_synthetic(cfg, 3);
    ContaminationReport rep = contamination_report(d.train);
    EXPECT_GT(rep.abnormal, 0u);
    ASSERT_EQ(rep.per_type.size(), 1u);
    EXPECT_EQ(rep.per_type.begin()->first, std::uint8_t(AnomalyType::Spike));
}

TEST(GenerateSynthetic, ZeroRoundForcesOneAbnormal) {
    SyntheticConfig cfg;
    cfg.n_train = 5;
    cfg.n_valid = 5;
    cfg.n_test = 5;
    cfg.rate_train = 0.05;  // rounds to 0, must be forced to 1
    cfg.rate_valid = 0.0;
    cfg.rate_test = 0.0;
    SyntheticData d = generate_synthetic(cfg, 4);
    EXPECT_EQ(contamination_report(d.train).abnormal, 1u);
    EXPECT_EQ(contamination_report(d.valid).abnormal, 0u);
}

TEST(GenerateSynthetic, DeterministicByteForByte) {
    SyntheticConfig cfg;
    cfg.n_train = 40;
    cfg.n_valid = 10;
    cfg.n_test = 20;
    SyntheticData a = generate_synthetic(cfg, 123);
    SyntheticData b = generate_synthetic(cfg, 123);
    EXPECT_EQ(serialize(a.train), serialize(b.train));
    EXPECT_EQ(serialize(a.valid), serialize(b.valid));
    EXPECT_EQ(serialize(a.test), serialize(b.test));
    SyntheticData c = generate_synthetic(cfg, 124);
    EXPECT_NE(serialize(a.train), serialize(c.train));
}

TEST(GenerateSynthetic, SplitIdsAreDisjoint) {
    SyntheticConfig cfg;
    cfg.n_train = 30;
    cfg.n_valid = 10;
    cfg.n_test = 15;
    SyntheticData d = generate_synthetic(cfg, 9);
    std::set<std::uint64_t> ids;
    for (const Dataset* ds : {&d.train, &d.valid, &d.test})
        for (const auto& o : ds->observations) EXPECT_TRUE(ids.insert(o.id).second);
    EXPECT_EQ(ids.size(), 55u);
}

TEST(GenerateSynthetic, IcbebPresetMirrorsBenchmarkRow) {
    SyntheticConfig cfg = SyntheticConfig::icbeb_preset();
    EXPECT_EQ(cfg.K, 12u);
    EXPECT_EQ(cfg.L, 6000u);
    EXPECT_EQ(cfg.n_train, 910u);
    EXPECT_EQ(cfg.n_valid, 82u);
    EXPECT_EQ(cfg.n_test, 222u);
    EXPECT_DOUBLE_EQ(cfg.rate_train, 0.200);
    EXPECT_DOUBLE_EQ(cfg.rate_valid, 0.207);
    EXPECT_DOUBLE_EQ(cfg.rate_test, 0.599);
    // 20.0% of 910 is exactly 182 abnormal observations.
    EXPECT_EQ(std::lround(cfg.rate_train * double(cfg.n_train)), 182);
    // Generate a width/length-preserving miniature to keep the test fast.
    cfg.n_train = 20;
    cfg.n_valid = 5;
    cfg.n_test = 5;
    cfg.L = 600;
    SyntheticData d = generate_synthetic(cfg, 2);
    EXPECT_EQ(d.train.K, 12u);
    EXPECT_EQ(contamination_report(d.train).abnormal, 4u);  // round(0.2*20)
}

TEST(DatasetIO, SaveLoadRoundTripIsBitExact) {
    SyntheticConfig cfg;
    cfg.n_train = 12;
    cfg.n_valid = 4;
    cfg.n_test = 4;
    SyntheticData d = generate_synthetic(cfg, 5);
    std::string bytes = serialize(d.test);
    std::istringstream is(bytes, std::ios::binary);
    Dataset back = load_dataset(is);
    EXPECT_EQ(back.K, d.test.K);
    EXPECT_EQ(back.L, d.test.L);
    EXPECT_EQ(back.split, SplitTag::Test);
    ASSERT_EQ(back.size(), d.test.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back.observations[i].values, d.test.observations[i].values);
        EXPECT_EQ(back.observations[i].label, d.test.observations[i].label);
    }
}

TEST(DatasetIO, FileRoundTrip) {
    SyntheticConfig cfg;
    cfg.n_train = 6;
    cfg.n_valid = 2;
    cfg.n_test = 2;
    SyntheticData d = generate_synthetic(cfg, 6);
    const std::string path = "roundtrip_tmp.tsdc";
    save_dataset(d.train, path);
    Dataset back = load_dataset(path);
    EXPECT_EQ(serialize(back), serialize(d.train));
    std::remove(path.c_str());
}

TEST(DatasetIO, TruncationIsAFormatErrorWithOffset) {
    SyntheticConfig cfg;
    cfg.n_train = 3;
    cfg.n_valid = 2;
    cfg.n_test = 2;
    SyntheticData d = generate_synthetic(cfg, 8);
    std::string bytes = serialize(d.train);
    for (std::size_t cut : {2ul, 10ul, 30ul, bytes.size() - 1}) {
        std::istringstream is(bytes.substr(0, cut), std::ios::binary);
        try {
            load_dataset(is);
            FAIL() << "expected format error at cut " << cut;
        } catch (const FormatError& e) {
            EXPECT_NE(std::string(e.what()).find("format error at byte"), std::string::npos);
        }
    }
}

TEST(DatasetIO, BadMagicAndVersionRejected) {
    SyntheticConfig cfg;
    cfg.n_train = 2;
    cfg.n_valid = 2;
    cfg.n_test = 2;
    std::string bytes = serialize(generate_synthetic(cfg, 8).train);
    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::istringstream is(bad, std::ios::binary);
        EXPECT_THROW(load_dataset(is), FormatError);
    }
    {
        std::string bad = bytes;
        bad[4] = 99;  // version field
        std::istringstream is(bad, std::ios::binary);
        try {
            load_dataset(is);
            FAIL() << "expected version error";
        } catch (const FormatError& e) {
            EXPECT_EQ(e.offset, 4u);
        }
    }
    {
        std::string bad = bytes + "junk";
        std::istringstream is(bad, std::ios::binary);
        EXPECT_THROW(load_dataset(is), FormatError);
    }
}

TEST(DatasetIO, CsvExportHasKtimesLValueCells) {
    SyntheticConfig cfg;
    cfg.n_train = 1;
    cfg.n_valid = 1;
    cfg.n_test = 1;
    cfg.K = 3;
    cfg.L = 7;
    SyntheticData d = generate_synthetic(cfg, 10);
    const std::string path = "csv_tmp.csv";
    export_csv(d.train, path);

    std::ifstream f(path);
    std::string line;
    std::getline(f, line);  // header
    std::size_t value_cells = 0, rows = 0;
    while (std::getline(f, line)) {
        ++rows;
        const std::size_t commas = std::size_t(std::count(line.begin(), line.end(), ','));
        value_cells += commas + 1 - 2;  // drop the obs and var index cells
    }
    EXPECT_EQ(rows, 3u);
    EXPECT_EQ(value_cells, 3u * 7u);

    std::ifstream lf(csv_label_path(path));
    ASSERT_TRUE(lf.good());
    std::getline(lf, line);
    EXPECT_EQ(line, "obs,label");
    std::remove(path.c_str());
    std::remove(csv_label_path(path).c_str());
}

TEST(ContaminationReport, AllNormalRateZero) {
    Dataset ds;
    ds.K = 1;
    ds.L = 2;
    ds.observations.resize(5);
    for (auto& o : ds.observations) o.values = {0.0, 0.0};
    ContaminationReport rep = contamination_report(ds);
    EXPECT_EQ(rep.rate, 0.0);
    EXPECT_TRUE(rep.per_type.empty());
}

TEST(ContaminationReport, PerTypeCountsPartitionAbnormal) {
    SyntheticConfig cfg;
    cfg.n_train = 120;
    cfg.n_valid = 10;
    cfg.n_test = 10;
    cfg.rate_train = 0.5;
    cfg.anomaly_types = {AnomalyType::Spike, AnomalyType::Dropout, AnomalyType::FrequencyShift};
    SyntheticData d = generate_synthetic(cfg, 11);
    ContaminationReport rep = contamination_report(d.train);
    EXPECT_EQ(rep.abnormal, 60u);
    EXPECT_DOUBLE_EQ(rep.rate, 0.5);
    std::size_t sum = 0;
    for (const auto& [type, count] : rep.per_type) {
        EXPECT_GE(type, 1);
        EXPECT_LE(type, 3);
        sum += count;
    }
    EXPECT_EQ(sum, 60u);
}

TEST(GenerateSynthetic, EnergyDetectorBeatsPrevalence) {
    // Guard against unlearnable data: a trivial energy detector (deviation of
    // log mean-square energy from the split median) must beat the prevalence
    // baseline on the default synthetic test split.
    SyntheticData d = generate_synthetic(SyntheticConfig::desk_preset(), 7);
    const Dataset& ds = d.test;
    std::vector<double> log_e(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double e = 0.0;
        for (double v : ds.observations[i].values) e += v * v;
        log_e[i] = std::log(e / double(ds.K * ds.L) + 1e-12);
    }
    std::vector<double> sorted = log_e;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    std::vector<double> scores(ds.size());
    std::vector<int> labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        scores[i] = std::fabs(log_e[i] - median);
        labels[i] = ds.observations[i].label != 0;
    }
    const double prevalence = double(contamination_report(ds).abnormal) / double(ds.size());
    const double ap = average_precision_oracle(scores, labels);
    EXPECT_GT(ap, prevalence) << "energy AP " << ap << " vs prevalence " << prevalence;
}
