#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "latentid/trace.hpp"
#include "latentid/util.hpp"

using namespace latentid;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "latentid_trace_tests";
    fs::create_directories(dir);
    return dir / name;
}

PacketRecord rec(std::int64_t start, std::int64_t end, PacketKind kind = PacketKind::background,
                 std::string src = "bg", std::string dst = "ap", std::int64_t size = 100,
                 std::string key = "") {
    PacketRecord r;
    r.start_us = start;
    r.end_us = end;
    r.kind = kind;
    r.src = std::move(src);
    r.dst = std::move(dst);
    r.size_bytes = size;
    r.match_key = std::move(key);
    return r;
}

/// Random valid trace; sources get non-overlapping frames by construction.
Trace random_trace(std::uint64_t seed, std::size_t n_records) {
    Rng rng(seed);
    Trace t;
    const char* sources[] = {"bg", "ap", "G", "A"};
    std::map<std::string, std::int64_t> next_free;
    for (std::size_t i = 0; i < n_records; ++i) {
        const std::string src = sources[rng.uniform_int(0, 3)];
        const std::int64_t start = std::max<std::int64_t>(next_free[src], rng.uniform_int(0, 200000));
        const std::int64_t dur = rng.uniform_int(1, 3000);
        PacketRecord r = rec(start, start + dur);
        r.src = src;
        r.dst = src == "ap" ? "G" : "ap";
        if (rng.uniform01() < 0.3) {
            r.kind = PacketKind::probe_tcp_lo;
            r.match_key = "k" + std::to_string(i);
        }
        r.size_bytes = rng.uniform_int(0, 1500);
        next_free[src] = start + dur;
        t.records.push_back(std::move(r));
    }
    sort_records(t.records);
    return t;
}

/// Brute-force CU oracle: mark busy microseconds in a boolean array.
std::vector<double> cu_oracle(const Trace& t, std::int64_t window_us) {
    const std::int64_t end = t.end_us();
    if (end == 0) return {};
    std::vector<char> busy(static_cast<std::size_t>(end), 0);
    for (const auto& r : t.records)
        for (std::int64_t u = r.start_us; u < r.end_us; ++u) busy[static_cast<std::size_t>(u)] = 1;
    const std::size_t n_windows = static_cast<std::size_t>((end + window_us - 1) / window_us);
    std::vector<double> out(n_windows, 0.0);
    for (std::size_t w = 0; w < n_windows; ++w) {
        std::int64_t count = 0;
        for (std::int64_t u = static_cast<std::int64_t>(w) * window_us;
             u < std::min<std::int64_t>(end, static_cast<std::int64_t>(w + 1) * window_us); ++u)
            count += busy[static_cast<std::size_t>(u)];
        out[w] = static_cast<double>(count) / static_cast<double>(window_us);
    }
    return out;
}

} // namespace

TEST_CASE("trace file round-trips identically") {
    const auto path = temp_file("roundtrip.jsonl");

    SECTION("three explicit records, written unsorted") {
        Trace t;
        t.records.push_back(rec(100, 200));
        t.records.push_back(rec(0, 50, PacketKind::probe_tcp_lo, "ap", "G", 74, "k1"));
        t.records.push_back(rec(60, 90, PacketKind::resp_tcp_rst, "G", "ap", 74, "k1"));
        sort_records(t.records);
        write_trace(t, path);
        const Trace back = read_trace(path);
        REQUIRE(back.records.size() == 3);
        CHECK(back.records == t.records);
        CHECK(back.epoch == t.epoch);
    }

    SECTION("empty trace writes a header-only file") {
        write_trace(Trace{}, path);
        std::ifstream in(path);
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK(line.find("latentid-trace") != std::string::npos);
        CHECK_FALSE(std::getline(in, line));
        const Trace back = read_trace(path);
        CHECK(back.records.empty());
    }

    SECTION("empty file reads as an empty trace") {
        std::ofstream(path).close();
        const Trace back = read_trace(path);
        CHECK(back.records.empty());
    }

    SECTION("random traces round-trip field for field") {
        for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
            const Trace t = random_trace(seed, 1000);
            write_trace(t, path);
            const Trace back = read_trace(path);
            REQUIRE(back.records == t.records);
        }
    }

    SECTION("bytes are stable across rewrites") {
        const Trace t = random_trace(99, 500);
        const auto path2 = temp_file("roundtrip2.jsonl");
        write_trace(t, path);
        write_trace(t, path2);
        std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        CHECK(sa.str() == sb.str());
    }
}

TEST_CASE("trace read rejects malformed input") {
    const auto path = temp_file("bad.jsonl");

    SECTION("zero-duration record names its line") {
        std::ofstream out(path);
        out << "{\"format\":\"latentid-trace\",\"version\":1,\"epoch\":\"1970-01-01T00:00:00Z\"}\n";
        out << "{\"start_us\":0,\"end_us\":10,\"kind\":\"background\",\"src\":\"bg\",\"dst\":\"ap\",\"size_bytes\":10}\n";
        out << "{\"start_us\":50,\"end_us\":50,\"kind\":\"background\",\"src\":\"bg\",\"dst\":\"ap\",\"size_bytes\":10}\n";
        out.close();
        try {
            read_trace(path);
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(e.line() == 3);
        }
    }

    SECTION("unknown kind") {
        std::ofstream out(path);
        out << "{\"format\":\"latentid-trace\",\"version\":1}\n";
        out << "{\"start_us\":0,\"end_us\":10,\"kind\":\"mystery\",\"src\":\"bg\",\"dst\":\"ap\",\"size_bytes\":10}\n";
        out.close();
        CHECK_THROWS_AS(read_trace(path), SchemaError);
    }

    SECTION("probe without match_key") {
        std::ofstream out(path);
        out << "{\"format\":\"latentid-trace\",\"version\":1}\n";
        out << "{\"start_us\":0,\"end_us\":10,\"kind\":\"probe_tcp_lo\",\"src\":\"ap\",\"dst\":\"G\",\"size_bytes\":74}\n";
        out.close();
        CHECK_THROWS_AS(read_trace(path), SchemaError);
    }

    SECTION("same-source overlap") {
        std::ofstream out(path);
        out << "{\"format\":\"latentid-trace\",\"version\":1}\n";
        out << "{\"start_us\":0,\"end_us\":100,\"kind\":\"background\",\"src\":\"bg\",\"dst\":\"ap\",\"size_bytes\":10}\n";
        out << "{\"start_us\":50,\"end_us\":150,\"kind\":\"background\",\"src\":\"bg\",\"dst\":\"ap\",\"size_bytes\":10}\n";
        out.close();
        CHECK_THROWS_AS(read_trace(path), SchemaError);
    }

    SECTION("missing file is an IoError") {
        CHECK_THROWS_AS(read_trace("/nonexistent/nowhere.jsonl"), IoError);
    }

    SECTION("write into a nonexistent directory is an IoError") {
        CHECK_THROWS_AS(write_trace(Trace{}, "/nonexistent/dir/out.jsonl"), IoError);
    }
}

TEST_CASE("unsorted input is re-sorted, not rejected") {
    const auto path = temp_file("unsorted.jsonl");
    std::ofstream out(path);
    out << "{\"format\":\"latentid-trace\",\"version\":1}\n";
    out << "{\"start_us\":500,\"end_us\":600,\"kind\":\"background\",\"src\":\"bg\",\"dst\":\"ap\",\"size_bytes\":10}\n";
    out << "{\"start_us\":0,\"end_us\":100,\"kind\":\"background\",\"src\":\"bg\",\"dst\":\"ap\",\"size_bytes\":10}\n";
    out.close();
    const Trace t = read_trace(path);
    REQUIRE(t.records.size() == 2);
    CHECK(t.records[0].start_us == 0);
    CHECK(t.records[1].start_us == 500);
}

TEST_CASE("channel utilization per window") {
    SECTION("one 5 ms record in a 10 ms window gives 0.5") {
        Trace t;
        t.records.push_back(rec(0, 5000));
        const CuSeries cu = compute_cu_series(t, 10000);
        REQUIRE(cu.values.size() == 1);
        CHECK(cu.values[0] == Catch::Approx(0.5));
    }

    SECTION("two fully overlapping 5 ms records union to 0.5, not 1.0") {
        Trace t;
        t.records.push_back(rec(0, 5000, PacketKind::background, "bg"));
        t.records.push_back(rec(0, 5000, PacketKind::background, "bg2"));
        const CuSeries cu = compute_cu_series(t, 10000);
        REQUIRE(cu.values.size() == 1);
        CHECK(cu.values[0] == Catch::Approx(0.5));
    }

    SECTION("back-to-back records filling the window saturate at 1.0") {
        Trace t;
        t.records.push_back(rec(0, 4000));
        t.records.push_back(rec(4000, 10000));
        const CuSeries cu = compute_cu_series(t, 10000);
        REQUIRE(cu.values.size() == 1);
        CHECK(cu.values[0] == Catch::Approx(1.0));
    }

    SECTION("empty trace gives a zero-length series") {
        CHECK(compute_cu_series(Trace{}, 10000).values.empty());
    }

    SECTION("matches the brute-force microsecond oracle on random traces") {
        for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
            const Trace t = random_trace(seed, 300);
            const CuSeries cu = compute_cu_series(t, 10000);
            const auto oracle = cu_oracle(t, 10000);
            REQUIRE(cu.values.size() == oracle.size());
            for (std::size_t w = 0; w < oracle.size(); ++w)
                CHECK(cu.values[w] == Catch::Approx(oracle[w]).margin(1e-12));
        }
    }

    SECTION("invariant under translation by whole windows") {
        Trace t = random_trace(21, 200);
        const CuSeries before = compute_cu_series(t, 10000);
        for (auto& r : t.records) {
            r.start_us += 30000;
            r.end_us += 30000;
        }
        const CuSeries after = compute_cu_series(t, 10000);
        REQUIRE(after.values.size() == before.values.size() + 3);
        for (std::size_t w = 0; w < before.values.size(); ++w)
            CHECK(after.values[w + 3] == Catch::Approx(before.values[w]).margin(1e-12));
        for (std::size_t w = 0; w < 3; ++w) CHECK(after.values[w] == 0.0);
    }

    SECTION("window sums recover total unioned airtime") {
        const Trace t = random_trace(31, 400);
        const CuSeries cu = compute_cu_series(t, 10000);
        double total = 0.0;
        for (double v : cu.values) total += v * 10000.0;
        // union computed independently via merged intervals
        std::int64_t expected = 0;
        std::int64_t cs = t.records.front().start_us, ce = t.records.front().end_us;
        for (std::size_t i = 1; i < t.records.size(); ++i) {
            if (t.records[i].start_us <= ce) {
                ce = std::max(ce, t.records[i].end_us);
            } else {
                expected += ce - cs;
                cs = t.records[i].start_us;
                ce = t.records[i].end_us;
            }
        }
        expected += ce - cs;
        CHECK(total == Catch::Approx(static_cast<double>(expected)).margin(1e-6));
    }
}

TEST_CASE("cu csv export") {
    const auto path = temp_file("cu.csv");
    CuSeries s;
    s.values = {0.25, 1.0};
    write_cu_csv(s, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "window_index,cu");
    std::getline(in, line);
    CHECK(line == "0,0.25");
    std::getline(in, line);
    CHECK(line == "1,1");
}
