#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "latentid/accumulation.hpp"
#include "latentid/errors.hpp"
#include "latentid/extractor.hpp"
#include "latentid/util.hpp"

namespace latentid {

inline constexpr std::size_t kFeatureCount = 8;

/// Column order is the feature-vector order: latency/score interleaved per
/// probe kind, TCP before UDP, low payload before high.
inline constexpr std::array<const char*, kFeatureCount> kFeatureNames = {
    "l_tcp_lo", "a_tcp_lo", "l_tcp_h", "a_tcp_h", "l_udp_lo", "a_udp_lo", "l_udp_h", "a_udp_h",
};

inline constexpr std::array<std::size_t, 4> kLatencyColumns = {0, 2, 4, 6};
inline constexpr std::array<std::size_t, 4> kScoreColumns = {1, 3, 5, 7};

struct FeatureRow {
    std::string label; // device id
    std::array<double, kFeatureCount> x{};
    int bin = -1; // score-bin index of a_tcp_lo once edges are known
};

struct Dataset {
    std::vector<FeatureRow> rows;

    std::vector<std::string> classes() const {
        std::set<std::string> s;
        for (const auto& r : rows) s.insert(r.label);
        return {s.begin(), s.end()};
    }
};

/// One feature row per complete probe round. `score_by_probe_index` maps the
/// probe record index of each pair to its accumulation score.
inline Dataset build_feature_rows(const std::vector<ProbeRound>& rounds,
                                  const std::unordered_map<std::size_t, double>& score_by_probe_index) {
    Dataset ds;
    ds.rows.reserve(rounds.size());
    for (const auto& round : rounds) {
        FeatureRow row;
        row.label = round.device_id;
        for (int k = 0; k < kProbeKindCount; ++k) {
            const auto& pair = round.pairs[k];
            auto it = score_by_probe_index.find(pair.probe_index);
            if (it == score_by_probe_index.end())
                throw MissingScore("dataset: no score for device '" + round.device_id + "' round " +
                                   std::to_string(round.round_index) + " kind " +
                                   to_string(pair.probe_kind));
            row.x[kLatencyColumns[k]] = pair.latency_ms();
            row.x[kScoreColumns[k]] = it->second;
        }
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

/// Bin assignment uses a_tcp_lo, the score co-measured with the low-payload
/// TCP probe.
inline void assign_bins(Dataset& ds, const std::array<double, 2>& edges) {
    for (auto& r : ds.rows) r.bin = bin_index(r.x[1], edges);
}

/// Downsamples every (device x bin) cell to the global minimum cell count,
/// seeded and without replacement. Each device must populate all three bins.
inline Dataset stratified_balance(const Dataset& ds, const std::array<double, 2>& edges,
                                  std::uint64_t seed) {
    Dataset binned = ds;
    assign_bins(binned, edges);

    std::map<std::pair<std::string, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < binned.rows.size(); ++i)
        cells[{binned.rows[i].label, binned.rows[i].bin}].push_back(i);

    const auto classes = binned.classes();
    std::string missing;
    for (const auto& c : classes)
        for (int b = 0; b < 3; ++b)
            if (!cells.count({c, b})) missing += (missing.empty() ? "" : ", ") + c + "/bin" + std::to_string(b);
    if (!missing.empty())
        throw EmptyCell("dataset: empty device/bin cells: " + missing);

    std::size_t min_count = binned.rows.size();
    for (const auto& [key, idx] : cells) min_count = std::min(min_count, idx.size());

    Dataset out;
    Rng rng(seed);
    for (const auto& [key, idx] : cells) { // std::map: deterministic cell order
        auto take = rng.sample_without_replacement(idx.size(), min_count);
        std::sort(take.begin(), take.end()); // original row order within a cell
        for (std::size_t t : take) out.rows.push_back(binned.rows[idx[t]]);
    }
    return out;
}

/// Class-stratified split into (train, test): disjoint, exhaustive, with
/// per-class test counts within one of class_size x fraction.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction > 1.0)
        throw ParamError("dataset: test_fraction must lie in [0, 1]");
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.rows.size(); ++i) by_class[ds.rows[i].label].push_back(i);
    for (const auto& [label, idx] : by_class)
        if (idx.size() < 2)
            throw TooFewRows("dataset: class '" + label + "' has fewer than 2 rows");

    Dataset train, test;
    Rng rng(seed);
    for (const auto& [label, idx] : by_class) {
        const std::size_t n_test =
            static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
        auto order = rng.sample_without_replacement(idx.size(), idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto& row = ds.rows[idx[order[i]]];
            (i < n_test ? test : train).rows.push_back(row);
        }
    }
    return {std::move(train), std::move(test)};
}

/// Returns `size` rows drawn class-stratified (size/K per class), seeded.
inline Dataset stratified_sample(const Dataset& ds, std::size_t size, std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.rows.size(); ++i) by_class[ds.rows[i].label].push_back(i);
    if (by_class.empty())
        throw TooFewRows("dataset: cannot sample from an empty dataset");
    const std::size_t per_class = std::max<std::size_t>(1, size / by_class.size());
    Dataset out;
    Rng rng(seed);
    for (const auto& [label, idx] : by_class) {
        if (idx.size() < per_class)
            throw TooFewRows("dataset: class '" + label + "' has " + std::to_string(idx.size()) +
                             " rows, need " + std::to_string(per_class));
        for (std::size_t t : rng.sample_without_replacement(idx.size(), per_class))
            out.rows.push_back(ds.rows[idx[t]]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset CSV

inline const std::string kDatasetHeader =
    "device,l_tcp_lo,a_tcp_lo,l_tcp_h,a_tcp_h,l_udp_lo,a_udp_lo,l_udp_h,a_udp_h";

inline void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("dataset: cannot open '" + path.string() + "' for writing");
    out << kDatasetHeader << '\n';
    for (const auto& r : ds.rows) {
        out << r.label;
        for (double v : r.x) out << ',' << fmt_double(v);
        out << '\n';
    }
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("dataset: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != kDatasetHeader)
        throw IoError("dataset: '" + path.string() + "' is not a dataset CSV");
    Dataset ds;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != kFeatureCount + 1)
            throw IoError("dataset: bad row at line " + std::to_string(lineno));
        FeatureRow r;
        r.label = f[0];
        for (std::size_t i = 0; i < kFeatureCount; ++i) r.x[i] = parse_double(f[i + 1]);
        ds.rows.push_back(std::move(r));
    }
    return ds;
}

} // namespace latentid
