#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "latentid/errors.hpp"
#include "latentid/trace.hpp"
#include "latentid/util.hpp"

namespace latentid {

/// A matched probe/response exchange. Device latency l = (t6 - t4):
/// the duration of the response (t7 - t6) subtracted from (t7 - t4).
struct ProbeResponsePair {
    std::size_t probe_index = 0;    // index into Trace::records
    std::size_t response_index = 0; // index into Trace::records
    std::string device_id;          // dst of the probe
    PacketKind probe_kind = PacketKind::probe_tcp_lo;
    std::int64_t t4_us = 0; // probe transmission end
    std::int64_t t6_us = 0; // response transmission start
    std::int64_t t7_us = 0; // response transmission end

    double latency_ms() const { return static_cast<double>(t6_us - t4_us) / 1000.0; }
};

inline double device_latency(const ProbeResponsePair& pair) {
    if (pair.t6_us <= pair.t4_us)
        throw InvariantError("extractor: response start must come after probe end (t6 > t4)");
    return pair.latency_ms();
}

struct PairingResult {
    std::vector<ProbeResponsePair> pairs;        // in probe order
    std::vector<std::size_t> unmatched_probes;   // record indices
};

/// Matches each response to the earliest prior unmatched probe with equal
/// match_key, compatible kind, reversed endpoints, and response start within
/// the timeout after probe end. Injective both ways.
inline PairingResult pair_probes(const Trace& trace, std::int64_t timeout_ms = 1000) {
    const std::int64_t timeout_us = timeout_ms * 1000;
    std::unordered_map<std::string, std::deque<std::size_t>> pending; // match_key -> probe indices
    std::vector<bool> probe_matched(trace.records.size(), false);

    PairingResult result;
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        const auto& rec = trace.records[i];
        if (is_probe(rec.kind)) {
            if (!rec.match_key.empty()) pending[rec.match_key].push_back(i);
            continue;
        }
        if (!is_response(rec.kind) || rec.match_key.empty()) continue;
        auto it = pending.find(rec.match_key);
        if (it == pending.end()) continue;
        auto& queue = it->second;
        for (auto q = queue.begin(); q != queue.end(); ++q) {
            const auto& probe = trace.records[*q];
            if (response_kind_for(probe.kind) != rec.kind) continue;
            if (rec.src != probe.dst || rec.dst != probe.src) continue;
            if (rec.start_us <= probe.end_us) continue;
            if (rec.start_us - probe.end_us > timeout_us) continue;
            ProbeResponsePair pair;
            pair.probe_index = *q;
            pair.response_index = i;
            pair.device_id = probe.dst;
            pair.probe_kind = probe.kind;
            pair.t4_us = probe.end_us;
            pair.t6_us = rec.start_us;
            pair.t7_us = rec.end_us;
            probe_matched[*q] = true;
            result.pairs.push_back(std::move(pair));
            queue.erase(q);
            break;
        }
    }
    for (std::size_t i = 0; i < trace.records.size(); ++i)
        if (is_probe(trace.records[i].kind) && !probe_matched[i])
            result.unmatched_probes.push_back(i);
    std::sort(result.pairs.begin(), result.pairs.end(),
              [](const ProbeResponsePair& a, const ProbeResponsePair& b) {
                  return a.probe_index < b.probe_index;
              });
    return result;
}

/// One probe period's worth of exchanges for one device: exactly one pair of
/// each probe kind, measured under near-identical channel conditions.
struct ProbeRound {
    std::string device_id;
    int round_index = 0;
    std::array<ProbeResponsePair, kProbeKindCount> pairs; // indexed by probe_kind_index
    std::int64_t window_start_us = 0;
    std::int64_t window_end_us = 0;
};

struct RoundGrouping {
    std::vector<ProbeRound> rounds;
    std::size_t dropped_windows = 0;
};

/// Greedily windows each device's pairs into probe-period-long groups; a
/// window missing any kind (or holding duplicates) is dropped and counted.
inline RoundGrouping group_rounds(const std::vector<ProbeResponsePair>& pairs, double probe_period_s) {
    if (probe_period_s <= 0.0)
        throw ParamError("extractor: probe_period_s must be positive");
    const std::int64_t period_us = std::llround(probe_period_s * 1e6);

    std::map<std::string, std::vector<const ProbeResponsePair*>> by_device;
    for (const auto& p : pairs) by_device[p.device_id].push_back(&p);

    RoundGrouping out;
    for (auto& [device, list] : by_device) {
        std::sort(list.begin(), list.end(), [](const ProbeResponsePair* a, const ProbeResponsePair* b) {
            return a->t4_us < b->t4_us;
        });
        int round_index = 0;
        std::size_t i = 0;
        while (i < list.size()) {
            const std::int64_t window_start = list[i]->t4_us;
            const std::int64_t window_end = window_start + period_us;
            std::array<const ProbeResponsePair*, kProbeKindCount> slot{};
            bool duplicate = false;
            std::size_t j = i;
            for (; j < list.size() && list[j]->t4_us < window_end; ++j) {
                const int k = probe_kind_index(list[j]->probe_kind);
                if (slot[k] != nullptr)
                    duplicate = true;
                else
                    slot[k] = list[j];
            }
            const bool complete = !duplicate && slot[0] && slot[1] && slot[2] && slot[3];
            if (complete) {
                ProbeRound round;
                round.device_id = device;
                round.round_index = round_index++;
                for (int k = 0; k < kProbeKindCount; ++k) round.pairs[k] = *slot[k];
                round.window_start_us = window_start;
                round.window_end_us = window_end;
                out.rounds.push_back(std::move(round));
            } else {
                ++out.dropped_windows;
            }
            i = j;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// pairs CSV: device,probe_kind,t4_us,t6_us,t7_us,latency_ms

inline void write_pairs_csv(const std::vector<ProbeResponsePair>& pairs,
                            const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("extractor: cannot open '" + path.string() + "' for writing");
    out << "device,probe_kind,t4_us,t6_us,t7_us,latency_ms\n";
    for (const auto& p : pairs) {
        out << p.device_id << ',' << to_string(p.probe_kind) << ',' << p.t4_us << ',' << p.t6_us
            << ',' << p.t7_us << ',' << fmt_double(p.latency_ms()) << '\n';
    }
}

/// Reads a pairs CSV back. Trace record indices are not stored in the file,
/// so probe_index/response_index are set to the row ordinal; that keeps them
/// unique, which is all downstream score joins rely on.
inline std::vector<ProbeResponsePair> read_pairs_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("extractor: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != "device,probe_kind,t4_us,t6_us,t7_us,latency_ms")
        throw IoError("extractor: '" + path.string() + "' is not a pairs CSV");
    std::vector<ProbeResponsePair> pairs;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6)
            throw IoError("extractor: bad pairs row at line " + std::to_string(lineno));
        ProbeResponsePair p;
        p.probe_index = pairs.size();
        p.response_index = pairs.size();
        p.device_id = f[0];
        auto kind = kind_from_string(f[1]);
        if (!kind || !is_probe(*kind))
            throw IoError("extractor: bad probe_kind at line " + std::to_string(lineno));
        p.probe_kind = *kind;
        p.t4_us = std::strtoll(f[2].c_str(), nullptr, 10);
        p.t6_us = std::strtoll(f[3].c_str(), nullptr, 10);
        p.t7_us = std::strtoll(f[4].c_str(), nullptr, 10);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

} // namespace latentid
