#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <set>

#include "latentid/dataset.hpp"
#include "latentid/extractor.hpp"
#include "latentid/simulator.hpp"
#include "latentid/util.hpp"

using namespace latentid;

namespace {

ProbeRound make_round(const std::string& dev, int index, std::int64_t base_us) {
    ProbeRound r;
    r.device_id = dev;
    r.round_index = index;
    r.window_start_us = base_us;
    r.window_end_us = base_us + 1'000'000;
    for (int k = 0; k < kProbeKindCount; ++k) {
        ProbeResponsePair p;
        p.probe_index = static_cast<std::size_t>(base_us / 1000 + k);
        p.device_id = dev;
        p.probe_kind = kProbeKinds[static_cast<std::size_t>(k)];
        p.t4_us = base_us + k * 1000;
        p.t6_us = p.t4_us + 500 + k;
        p.t7_us = p.t6_us + 100;
        r.pairs[static_cast<std::size_t>(k)] = p;
    }
    return r;
}

Dataset synthetic_dataset(std::uint64_t seed, std::size_t rows_per_class,
                          const std::vector<std::string>& classes = {"G", "A", "K"}) {
    Rng rng(seed);
    Dataset ds;
    for (const auto& c : classes) {
        for (std::size_t i = 0; i < rows_per_class; ++i) {
            FeatureRow r;
            r.label = c;
            for (auto& v : r.x) v = rng.uniform(0.0, 5.0);
            ds.rows.push_back(std::move(r));
        }
    }
    return ds;
}

} // namespace

TEST_CASE("feature rows follow the fixed column order") {
    std::vector<ProbeRound> rounds = {make_round("G", 0, 0), make_round("A", 0, 2'000'000)};
    std::unordered_map<std::size_t, double> scores;
    for (const auto& round : rounds)
        for (const auto& p : round.pairs) scores[p.probe_index] = 0.1 * static_cast<double>(p.probe_index);

    const Dataset ds = build_feature_rows(rounds, scores);
    REQUIRE(ds.rows.size() == 2);
    const auto& row = ds.rows[0];
    CHECK(row.label == "G");
    for (int k = 0; k < kProbeKindCount; ++k) {
        CHECK(row.x[kLatencyColumns[static_cast<std::size_t>(k)]] ==
              Catch::Approx(rounds[0].pairs[static_cast<std::size_t>(k)].latency_ms()));
        CHECK(row.x[kScoreColumns[static_cast<std::size_t>(k)]] ==
              Catch::Approx(scores.at(rounds[0].pairs[static_cast<std::size_t>(k)].probe_index)));
    }
    CHECK(ds.classes() == std::vector<std::string>{"A", "G"});

    SECTION("missing score names the round") {
        scores.erase(rounds[1].pairs[2].probe_index);
        try {
            build_feature_rows(rounds, scores);
            FAIL("expected MissingScore");
        } catch (const MissingScore& e) {
            CHECK(std::string(e.what()).find("A") != std::string::npos);
        }
    }
}

TEST_CASE("feature rows from a simulator run count out") {
    SimConfig cfg = SimConfig::defaults();
    cfg.duration_s = 20.0;
    cfg.target_cu = {{20.0, 0.3}};
    cfg.seed = 17;
    const SimResult r = simulate(cfg);
    const PairingResult pr = pair_probes(r.trace);
    const RoundGrouping g = group_rounds(pr.pairs, cfg.probe_period_s);
    std::unordered_map<std::size_t, double> scores;
    for (const auto& p : pr.pairs) scores[p.probe_index] = 1.0;
    const Dataset ds = build_feature_rows(g.rounds, scores);
    CHECK(ds.rows.size() == 20 * cfg.devices.size());
    CHECK(ds.classes().size() == cfg.devices.size());
}

TEST_CASE("stratified balancing downsamples every cell to the minimum") {
    // three devices, bins driven by a_tcp_lo (column 1)
    const std::array<double, 2> edges = {1.0, 3.0};
    Dataset ds;
    Rng rng(5);
    std::map<std::pair<std::string, int>, std::size_t> want = {
        {{"G", 0}, 10}, {{"G", 1}, 12}, {{"G", 2}, 8},
        {{"A", 0}, 15}, {{"A", 1}, 9},  {{"A", 2}, 11},
        {{"K", 0}, 9},  {{"K", 1}, 14}, {{"K", 2}, 30},
    };
    for (const auto& [key, count] : want) {
        for (std::size_t i = 0; i < count; ++i) {
            FeatureRow r;
            r.label = key.first;
            const double lo = key.second == 0 ? 0.0 : key.second == 1 ? 1.0 : 3.0;
            const double hi = key.second == 0 ? 1.0 : key.second == 1 ? 3.0 : 9.0;
            r.x[1] = rng.uniform(lo, hi - 1e-9);
            ds.rows.push_back(std::move(r));
        }
    }

    const Dataset balanced = stratified_balance(ds, edges, 42);
    std::map<std::pair<std::string, int>, std::size_t> got;
    Dataset check = balanced;
    assign_bins(check, edges);
    for (const auto& r : check.rows) got[{r.label, r.bin}] += 1;
    REQUIRE(got.size() == 9);
    for (const auto& [key, count] : got) CHECK(count == 8); // global min cell

    SECTION("balanced input is preserved up to row order") {
        const Dataset again = stratified_balance(balanced, edges, 7);
        CHECK(again.rows.size() == balanced.rows.size());
        auto key_of = [](const FeatureRow& r) {
            std::string k = r.label;
            for (double v : r.x) k += "," + fmt_double(v);
            return k;
        };
        std::multiset<std::string> a, b;
        for (const auto& r : balanced.rows) a.insert(key_of(r));
        for (const auto& r : again.rows) b.insert(key_of(r));
        CHECK(a == b);
    }

    SECTION("device with an empty bin is reported") {
        Dataset missing = ds;
        std::erase_if(missing.rows, [&](const FeatureRow& r) { return r.label == "K" && r.x[1] >= 3.0; });
        try {
            stratified_balance(missing, edges, 1);
            FAIL("expected EmptyCell");
        } catch (const EmptyCell& e) {
            CHECK(std::string(e.what()).find("K/bin2") != std::string::npos);
        }
    }

    SECTION("same seed reproduces the same selection") {
        const Dataset b1 = stratified_balance(ds, edges, 99);
        const Dataset b2 = stratified_balance(ds, edges, 99);
        REQUIRE(b1.rows.size() == b2.rows.size());
        for (std::size_t i = 0; i < b1.rows.size(); ++i) {
            CHECK(b1.rows[i].label == b2.rows[i].label);
            CHECK(b1.rows[i].x == b2.rows[i].x);
        }
    }
}

TEST_CASE("class-stratified split") {
    SECTION("100 rows per class at 0.2 gives 20 test rows per class") {
        const Dataset ds = synthetic_dataset(1, 100);
        const auto [train, test] = split(ds, 0.2, 42);
        std::map<std::string, std::size_t> test_counts, train_counts;
        for (const auto& r : test.rows) test_counts[r.label] += 1;
        for (const auto& r : train.rows) train_counts[r.label] += 1;
        for (const auto& [label, count] : test_counts) CHECK(count == 20);
        for (const auto& [label, count] : train_counts) CHECK(count == 80);
    }

    SECTION("deterministic per seed") {
        const Dataset ds = synthetic_dataset(2, 50);
        const auto [a_train, a_test] = split(ds, 0.2, 7);
        const auto [b_train, b_test] = split(ds, 0.2, 7);
        REQUIRE(a_test.rows.size() == b_test.rows.size());
        for (std::size_t i = 0; i < a_test.rows.size(); ++i) CHECK(a_test.rows[i].x == b_test.rows[i].x);
        const auto [c_train, c_test] = split(ds, 0.2, 8);
        bool identical = c_test.rows.size() == a_test.rows.size();
        if (identical)
            for (std::size_t i = 0; i < a_test.rows.size(); ++i)
                identical = identical && a_test.rows[i].x == c_test.rows[i].x;
        CHECK_FALSE(identical);
    }

    SECTION("partition property on random datasets") {
        for (std::uint64_t seed : {3ull, 4ull, 5ull}) {
            const Dataset ds = synthetic_dataset(seed, 37); // odd count: rounding path
            const auto [train, test] = split(ds, 0.25, seed);
            CHECK(train.rows.size() + test.rows.size() == ds.rows.size());
            auto key_of = [](const FeatureRow& r) {
                std::string k = r.label;
                for (double v : r.x) k += "," + fmt_double(v);
                return k;
            };
            std::multiset<std::string> all, parts;
            for (const auto& r : ds.rows) all.insert(key_of(r));
            for (const auto& r : train.rows) parts.insert(key_of(r));
            for (const auto& r : test.rows) parts.insert(key_of(r));
            CHECK(all == parts);
            // per-class counts within 1 of class_size * fraction
            std::map<std::string, std::size_t> test_counts;
            for (const auto& r : test.rows) test_counts[r.label] += 1;
            for (const auto& [label, count] : test_counts)
                CHECK(std::abs(static_cast<double>(count) - 37 * 0.25) <= 1.0);
        }
    }

    SECTION("class with fewer than 2 rows is rejected") {
        Dataset ds = synthetic_dataset(6, 10, {"G", "A"});
        FeatureRow lone;
        lone.label = "Z";
        ds.rows.push_back(lone);
        CHECK_THROWS_AS(split(ds, 0.2, 1), TooFewRows);
    }
}

TEST_CASE("dataset CSV round-trip preserves column order") {
    const Dataset ds = synthetic_dataset(9, 25);
    const auto path = std::filesystem::temp_directory_path() / "latentid_dataset_test.csv";
    write_dataset_csv(ds, path);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "device,l_tcp_lo,a_tcp_lo,l_tcp_h,a_tcp_h,l_udp_lo,a_udp_lo,l_udp_h,a_udp_h");

    const Dataset back = read_dataset_csv(path);
    REQUIRE(back.rows.size() == ds.rows.size());
    for (std::size_t i = 0; i < ds.rows.size(); ++i) {
        CHECK(back.rows[i].label == ds.rows[i].label);
        for (std::size_t c = 0; c < kFeatureCount; ++c)
            CHECK(back.rows[i].x[c] == ds.rows[i].x[c]); // shortest-round-trip floats
    }
}
