#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latentid/dataset.hpp"
#include "latentid/errors.hpp"
#include "latentid/models.hpp"
#include "latentid/util.hpp"

namespace latentid {

struct ReportRow {
    std::string experiment; // "cross_bin" | "feature_study"
    std::string kind;
    std::string subset; // feature-subset name or "train:...;test:..." tag
    std::size_t size = 0;
    int iteration = 0;
    double f1 = 0.0;
    double train_s = 0.0;
    double infer_s = 0.0;
};

inline const std::string kReportHeader = "experiment,kind,subset,size,iteration,f1,train_s,infer_s";

inline void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("experiments: cannot open '" + path.string() + "' for writing");
    out << kReportHeader << '\n';
    for (const auto& r : rows) {
        out << r.experiment << ',' << r.kind << ',' << r.subset << ',' << r.size << ','
            << r.iteration << ',' << fmt_double(r.f1) << ',' << fmt_double(r.train_s) << ','
            << fmt_double(r.infer_s) << '\n';
    }
}

inline std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("experiments: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader)
        throw IoError("experiments: '" + path.string() + "' is not a report CSV");
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 8)
            throw IoError("experiments: malformed report row in '" + path.string() + "'");
        ReportRow r;
        r.experiment = f[0];
        r.kind = f[1];
        r.subset = f[2];
        r.size = static_cast<std::size_t>(std::strtoull(f[3].c_str(), nullptr, 10));
        r.iteration = static_cast<int>(std::strtol(f[4].c_str(), nullptr, 10));
        r.f1 = parse_double(f[5]);
        r.train_s = parse_double(f[6]);
        r.infer_s = parse_double(f[7]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// cross-bin protocol: train inside one score bin, test on the others

struct CrossBinOptions {
    std::vector<std::size_t> train_sizes; // empty = 1000..11000 step 1000
    std::size_t test_size = 1000;
    double scale = 1.0; // multiplies every size
    ModelKind kind = ModelKind::gbdt;
    TrainParams params;
    std::uint64_t seed = 42;
    int jobs = 1;
};

/// For every train bin (and the all-bins control) and every training size,
/// trains one model and evaluates it on the held-out test sample of each
/// other bin, the other bins combined ("notB"), and for the control also on
/// all bins combined. Training samples are nested across sizes, mirroring
/// progressive growth of the training set.
inline std::vector<ReportRow> cross_bin_experiment(const Dataset& ds,
                                                   const std::array<double, 2>& edges,
                                                   const CrossBinOptions& opt) {
    std::vector<std::size_t> sizes = opt.train_sizes;
    if (sizes.empty())
        for (std::size_t s = 1000; s <= 11000; s += 1000) sizes.push_back(s);
    auto scaled = [&](std::size_t s) {
        return std::max<std::size_t>(10, static_cast<std::size_t>(std::llround(
                                             static_cast<double>(s) * opt.scale)));
    };
    for (auto& s : sizes) s = scaled(s);
    const std::size_t test_size = scaled(opt.test_size);

    Dataset binned = ds;
    assign_bins(binned, edges);
    std::array<std::vector<std::size_t>, 3> bin_rows;
    for (std::size_t i = 0; i < binned.rows.size(); ++i)
        bin_rows[static_cast<std::size_t>(binned.rows[i].bin)].push_back(i);
    for (int b = 0; b < 3; ++b)
        if (bin_rows[static_cast<std::size_t>(b)].empty())
            throw EmptyCell("experiments: score bin " + std::to_string(b) + " has no rows");
    for (int b = 0; b < 3; ++b)
        if (bin_rows[static_cast<std::size_t>(b)].size() < test_size + 10)
            throw TooFewRows("experiments: score bin " + std::to_string(b) + " has " +
                             std::to_string(bin_rows[static_cast<std::size_t>(b)].size()) +
                             " rows; need " + std::to_string(test_size + 10));

    // held-out test sample per bin; the remainder becomes the training pool
    std::array<Dataset, 3> test_sets;
    std::array<std::vector<std::size_t>, 3> pools;
    for (int b = 0; b < 3; ++b) {
        auto& rows = bin_rows[static_cast<std::size_t>(b)];
        Rng rng(derive_seed(opt.seed, 50 + static_cast<std::uint64_t>(b)));
        auto order = rng.sample_without_replacement(rows.size(), rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i < test_size)
                test_sets[static_cast<std::size_t>(b)].rows.push_back(binned.rows[rows[order[i]]]);
            else
                pools[static_cast<std::size_t>(b)].push_back(rows[order[i]]);
        }
    }
    std::array<Dataset, 3> not_sets; // test rows of the two other bins
    Dataset all_test;
    for (int b = 0; b < 3; ++b) {
        for (int o = 0; o < 3; ++o)
            if (o != b)
                for (const auto& r : test_sets[static_cast<std::size_t>(o)].rows)
                    not_sets[static_cast<std::size_t>(b)].rows.push_back(r);
        for (const auto& r : test_sets[static_cast<std::size_t>(b)].rows) all_test.rows.push_back(r);
    }

    struct Task {
        int source; // 0..2 = bin, 3 = all
        std::size_t requested;
    };
    std::vector<Task> tasks;
    for (int source = 0; source < 4; ++source) {
        std::vector<std::size_t> seen;
        for (std::size_t s : sizes) {
            std::size_t avail = 0;
            if (source < 3)
                avail = pools[static_cast<std::size_t>(source)].size();
            else
                for (const auto& p : pools) avail += p.size();
            const std::size_t actual = std::min(s, avail);
            if (std::find(seen.begin(), seen.end(), actual) != seen.end()) continue;
            seen.push_back(actual);
            tasks.push_back({source, actual});
        }
    }

    std::vector<std::vector<ReportRow>> results(tasks.size());
    parallel_for(tasks.size(), opt.jobs, [&](std::size_t ti) {
        const Task& task = tasks[ti];
        Dataset train_set;
        if (task.source < 3) {
            const auto& pool = pools[static_cast<std::size_t>(task.source)];
            for (std::size_t i = 0; i < task.requested; ++i)
                train_set.rows.push_back(binned.rows[pool[i]]);
        } else {
            // spanning all bins: equal thirds, remainder to the lower bins
            std::size_t base = task.requested / 3, rem = task.requested % 3;
            for (int b = 0; b < 3; ++b) {
                std::size_t want = base + (static_cast<std::size_t>(b) < rem ? 1 : 0);
                const auto& pool = pools[static_cast<std::size_t>(b)];
                want = std::min(want, pool.size());
                for (std::size_t i = 0; i < want; ++i) train_set.rows.push_back(binned.rows[pool[i]]);
            }
        }
        TrainParams params = opt.params;
        params.seed = derive_seed(opt.seed, 90 + static_cast<std::uint64_t>(task.source),
                                  task.requested);
        const Model model = train(opt.kind, train_set, params);
        const std::string train_tag =
            task.source < 3 ? "bin" + std::to_string(task.source) : "all";

        auto emit = [&](const std::string& test_tag, const Dataset& test_set) {
            const Metrics metrics = evaluate(model, test_set);
            ReportRow row;
            row.experiment = "cross_bin";
            row.kind = to_string(opt.kind);
            row.subset = "train:" + train_tag + ";test:" + test_tag;
            row.size = task.requested;
            row.iteration = 0;
            row.f1 = metrics.macro_f1;
            row.train_s = metrics.train_duration_s;
            row.infer_s = metrics.mean_inference_s;
            results[ti].push_back(std::move(row));
        };
        if (task.source < 3) {
            for (int o = 0; o < 3; ++o)
                if (o != task.source)
                    emit("bin" + std::to_string(o), test_sets[static_cast<std::size_t>(o)]);
            emit("not" + std::to_string(task.source),
                 not_sets[static_cast<std::size_t>(task.source)]);
        } else {
            for (int o = 0; o < 3; ++o)
                emit("bin" + std::to_string(o), test_sets[static_cast<std::size_t>(o)]);
            for (int o = 0; o < 3; ++o)
                emit("not" + std::to_string(o), not_sets[static_cast<std::size_t>(o)]);
            emit("all", all_test);
        }
    });

    std::vector<ReportRow> rows;
    for (auto& part : results)
        for (auto& r : part) rows.push_back(std::move(r));
    return rows;
}

// ---------------------------------------------------------------------------
// feature-subset study

struct SubsetSpec {
    std::string name;
    std::vector<std::size_t> columns;
};

/// Parses "all", "latencies", "scores", or a list of Eq. 2 column names
/// joined by '+' or ',' (e.g. "l_udp_lo+a_udp_lo"). The stored name uses
/// '+' so it stays a single CSV field in reports.
inline SubsetSpec parse_subset(const std::string& spec) {
    SubsetSpec out;
    out.name = spec;
    if (spec == "all") {
        for (std::size_t i = 0; i < kFeatureCount; ++i) out.columns.push_back(i);
        return out;
    }
    if (spec == "latencies") {
        out.columns.assign(kLatencyColumns.begin(), kLatencyColumns.end());
        return out;
    }
    if (spec == "scores") {
        out.columns.assign(kScoreColumns.begin(), kScoreColumns.end());
        return out;
    }
    std::string tok;
    std::vector<std::string> tokens;
    for (char ch : spec) {
        if (ch == ',' || ch == '+') {
            if (!tok.empty()) tokens.push_back(std::exchange(tok, {}));
        } else {
            tok.push_back(ch);
        }
    }
    if (!tok.empty()) tokens.push_back(std::move(tok));
    out.name.clear();
    for (const auto& t : tokens) {
        bool found = false;
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            if (t == kFeatureNames[i]) {
                out.columns.push_back(i);
                found = true;
                break;
            }
        }
        if (!found)
            throw BadSubset("experiments: unknown feature column '" + t + "'");
        out.name += (out.name.empty() ? "" : "+") + t;
    }
    if (out.columns.empty())
        throw BadSubset("experiments: empty feature subset");
    return out;
}

struct FeatureStudyOptions {
    std::vector<SubsetSpec> subsets;
    std::vector<std::size_t> sizes; // total sampled rows per iteration
    int iterations = 30;
    double test_fraction = 0.2;
    ModelKind kind = ModelKind::gbdt;
    TrainParams params;
    std::uint64_t seed = 42;
    int jobs = 1;
};

/// Per subset x size: `iterations` seeded rounds of stratified sampling,
/// an 80:20 split, training on the subset's columns, and macro-F1 on the
/// held-out part. Emits one row per iteration.
inline std::vector<ReportRow> feature_subset_experiment(const Dataset& ds,
                                                        const FeatureStudyOptions& opt) {
    if (opt.subsets.empty())
        throw BadSubset("experiments: no feature subsets given");
    if (opt.sizes.empty())
        throw ParamError("experiments: no sample sizes given");
    if (opt.iterations <= 0)
        throw ParamError("experiments: iterations must be positive");

    struct Task {
        std::size_t subset, size_idx;
        int iteration;
    };
    std::vector<Task> tasks;
    for (std::size_t si = 0; si < opt.subsets.size(); ++si)
        for (std::size_t zi = 0; zi < opt.sizes.size(); ++zi)
            for (int it = 0; it < opt.iterations; ++it) tasks.push_back({si, zi, it});

    std::vector<ReportRow> rows(tasks.size());
    parallel_for(tasks.size(), opt.jobs, [&](std::size_t ti) {
        const Task& task = tasks[ti];
        const auto& subset = opt.subsets[task.subset];
        const std::size_t size = opt.sizes[task.size_idx];
        // the draw seed depends on (size, iteration) only, so every subset
        // sees the same data partition in a given iteration
        const std::uint64_t draw_seed =
            derive_seed(opt.seed, task.size_idx * 1009 + static_cast<std::uint64_t>(task.iteration));
        const Dataset sample = stratified_sample(ds, size, draw_seed);
        auto [train_set, test_set] = split(sample, opt.test_fraction, derive_seed(draw_seed, 7));
        TrainParams params = opt.params;
        params.feature_mask = subset.columns;
        params.seed = derive_seed(draw_seed, 9);
        const Model model = train(opt.kind, train_set, params);
        const Metrics metrics = evaluate(model, test_set);
        ReportRow row;
        row.experiment = "feature_study";
        row.kind = to_string(opt.kind);
        row.subset = subset.name;
        row.size = size;
        row.iteration = task.iteration;
        row.f1 = metrics.macro_f1;
        row.train_s = metrics.train_duration_s;
        row.infer_s = metrics.mean_inference_s;
        rows[ti] = std::move(row);
    });
    return rows;
}

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
    MeanStd out;
    out.count = xs.size();
    if (xs.empty()) return out;
    for (double v : xs) out.mean += v;
    out.mean /= static_cast<double>(xs.size());
    for (double v : xs) out.stddev += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(out.stddev / static_cast<double>(xs.size()));
    return out;
}

} // namespace latentid
