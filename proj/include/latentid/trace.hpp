#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "latentid/errors.hpp"
#include "latentid/util.hpp"

namespace latentid {

struct GroundTruth; // defined in simulator.hpp

enum class PacketKind {
    probe_tcp_lo,
    probe_tcp_h,
    probe_udp_lo,
    probe_udp_h,
    resp_tcp_rst,
    resp_icmp_unreach,
    background,
};

inline constexpr int kProbeKindCount = 4;

inline const char* to_string(PacketKind k) {
    switch (k) {
        case PacketKind::probe_tcp_lo: return "probe_tcp_lo";
        case PacketKind::probe_tcp_h: return "probe_tcp_h";
        case PacketKind::probe_udp_lo: return "probe_udp_lo";
        case PacketKind::probe_udp_h: return "probe_udp_h";
        case PacketKind::resp_tcp_rst: return "resp_tcp_rst";
        case PacketKind::resp_icmp_unreach: return "resp_icmp_unreach";
        case PacketKind::background: return "background";
    }
    return "background";
}

inline std::optional<PacketKind> kind_from_string(std::string_view s) {
    if (s == "probe_tcp_lo") return PacketKind::probe_tcp_lo;
    if (s == "probe_tcp_h") return PacketKind::probe_tcp_h;
    if (s == "probe_udp_lo") return PacketKind::probe_udp_lo;
    if (s == "probe_udp_h") return PacketKind::probe_udp_h;
    if (s == "resp_tcp_rst") return PacketKind::resp_tcp_rst;
    if (s == "resp_icmp_unreach") return PacketKind::resp_icmp_unreach;
    if (s == "background") return PacketKind::background;
    return std::nullopt;
}

inline bool is_probe(PacketKind k) {
    return k == PacketKind::probe_tcp_lo || k == PacketKind::probe_tcp_h ||
           k == PacketKind::probe_udp_lo || k == PacketKind::probe_udp_h;
}

inline bool is_response(PacketKind k) {
    return k == PacketKind::resp_tcp_rst || k == PacketKind::resp_icmp_unreach;
}

/// TCP-SYN probes elicit TCP-RST; UDP probes elicit ICMP unreachable.
inline PacketKind response_kind_for(PacketKind probe) {
    switch (probe) {
        case PacketKind::probe_tcp_lo:
        case PacketKind::probe_tcp_h: return PacketKind::resp_tcp_rst;
        case PacketKind::probe_udp_lo:
        case PacketKind::probe_udp_h: return PacketKind::resp_icmp_unreach;
        default: return PacketKind::background;
    }
}

/// Index 0..3 over the four probe kinds (Eq. 2 column order), -1 otherwise.
inline int probe_kind_index(PacketKind k) {
    switch (k) {
        case PacketKind::probe_tcp_lo: return 0;
        case PacketKind::probe_tcp_h: return 1;
        case PacketKind::probe_udp_lo: return 2;
        case PacketKind::probe_udp_h: return 3;
        default: return -1;
    }
}

inline constexpr std::array<PacketKind, 4> kProbeKinds = {
    PacketKind::probe_tcp_lo,
    PacketKind::probe_tcp_h,
    PacketKind::probe_udp_lo,
    PacketKind::probe_udp_h,
};

/// One on-channel frame. Timestamps are integer microseconds since the
/// trace epoch; [start_us, end_us) is the airtime interval.
struct PacketRecord {
    std::int64_t start_us = 0;
    std::int64_t end_us = 0;
    PacketKind kind = PacketKind::background;
    std::string src;
    std::string dst;
    std::int64_t size_bytes = 0;
    std::string match_key; // empty = absent; links a probe to its response

    std::int64_t duration_us() const { return end_us - start_us; }
    double duration_ms() const { return static_cast<double>(end_us - start_us) / 1000.0; }
    /// Twice the transmission midpoint, in µs. Integer-exact even when the
    /// midpoint itself falls on half a microsecond.
    std::int64_t midpoint_x2_us() const { return start_us + end_us; }
    double midpoint_ms() const { return static_cast<double>(start_us + end_us) / 2000.0; }

    bool operator==(const PacketRecord&) const = default;
};

struct Trace {
    std::string epoch = "1970-01-01T00:00:00Z";
    std::vector<PacketRecord> records;
    /// Simulator ground truth when this trace came from simulate(); never
    /// serialized into the trace file.
    std::shared_ptr<const GroundTruth> channel_meta;

    std::int64_t end_us() const {
        std::int64_t e = 0;
        for (const auto& r : records) e = std::max(e, r.end_us);
        return e;
    }
};

/// Channel-utilization fractions per fixed window, covering [0, trace end).
struct CuSeries {
    std::int64_t window_us = 10000;
    std::vector<double> values;

    double mean() const {
        if (values.empty()) return 0.0;
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
};

inline void sort_records(std::vector<PacketRecord>& records) {
    std::stable_sort(records.begin(), records.end(), [](const PacketRecord& a, const PacketRecord& b) {
        if (a.start_us != b.start_us) return a.start_us < b.start_us;
        return a.end_us < b.end_us;
    });
}

namespace detail {

inline void validate_record(const PacketRecord& r, std::size_t line) {
    if (r.start_us < 0)
        throw SchemaError(line, "trace: start_us must be >= 0");
    if (r.end_us <= r.start_us)
        throw SchemaError(line, "trace: end_us must be greater than start_us");
    if (r.size_bytes < 0)
        throw SchemaError(line, "trace: size_bytes must be >= 0");
    if (is_probe(r.kind) && r.match_key.empty())
        throw SchemaError(line, "trace: probe records must carry a match_key");
}

inline std::string json_quote(const std::string& s) {
    return nlohmann::json(s).dump();
}

} // namespace detail

/// Sorted + per-source non-overlap check. Throws InvariantError; used on
/// in-memory traces (file loads report SchemaError with line numbers).
inline void validate_trace(const Trace& t) {
    std::int64_t prev_start = -1;
    for (std::size_t i = 0; i < t.records.size(); ++i) {
        const auto& r = t.records[i];
        detail::validate_record(r, i + 2); // +2: header line + 1-based
        if (r.start_us < prev_start)
            throw InvariantError("trace: records not sorted by start_us");
        prev_start = r.start_us;
    }
    // same-source frames must not overlap; cross-source overlap is allowed
    std::unordered_map<std::string, std::int64_t> last_end;
    for (const auto& r : t.records) {
        auto it = last_end.find(r.src);
        if (it != last_end.end() && r.start_us < it->second)
            throw InvariantError("trace: overlapping frames from source '" + r.src + "'");
        last_end[r.src] = std::max(it == last_end.end() ? r.end_us : it->second, r.end_us);
    }
}

/// Loads a line-delimited JSON trace file. Records are re-sorted; malformed
/// lines raise SchemaError with their line number.
inline Trace read_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("trace: cannot open '" + path.string() + "' for reading");

    Trace trace;
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::size_t> lines; // original line per record, for overlap diagnostics
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw SchemaError(lineno, std::string("trace: invalid JSON: ") + e.what());
        }
        if (!j.is_object())
            throw SchemaError(lineno, "trace: each line must be a JSON object");
        if (!saw_header) {
            if (!j.contains("format") || j["format"] != "latentid-trace")
                throw SchemaError(lineno, "trace: first line must be the latentid-trace header");
            if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != 1)
                throw SchemaError(lineno, "trace: unsupported header version");
            if (j.contains("epoch") && j["epoch"].is_string())
                trace.epoch = j["epoch"].get<std::string>();
            saw_header = true;
            continue;
        }

        PacketRecord r;
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& key = it.key();
            if (key != "start_us" && key != "end_us" && key != "kind" && key != "src" &&
                key != "dst" && key != "size_bytes" && key != "match_key")
                throw SchemaError(lineno, "trace: unknown key '" + key + "'");
        }
        for (const char* key : {"start_us", "end_us", "kind", "src", "dst", "size_bytes"}) {
            if (!j.contains(key))
                throw SchemaError(lineno, std::string("trace: missing key '") + key + "'");
        }
        if (!j["start_us"].is_number_integer() || !j["end_us"].is_number_integer() ||
            !j["size_bytes"].is_number_integer())
            throw SchemaError(lineno, "trace: start_us/end_us/size_bytes must be integers");
        if (!j["kind"].is_string() || !j["src"].is_string() || !j["dst"].is_string())
            throw SchemaError(lineno, "trace: kind/src/dst must be strings");
        r.start_us = j["start_us"].get<std::int64_t>();
        r.end_us = j["end_us"].get<std::int64_t>();
        auto kind = kind_from_string(j["kind"].get<std::string>());
        if (!kind)
            throw SchemaError(lineno, "trace: unknown kind '" + j["kind"].get<std::string>() + "'");
        r.kind = *kind;
        r.src = j["src"].get<std::string>();
        r.dst = j["dst"].get<std::string>();
        r.size_bytes = j["size_bytes"].get<std::int64_t>();
        if (j.contains("match_key")) {
            if (!j["match_key"].is_string())
                throw SchemaError(lineno, "trace: match_key must be a string");
            r.match_key = j["match_key"].get<std::string>();
        }
        detail::validate_record(r, lineno);
        trace.records.push_back(std::move(r));
        lines.push_back(lineno);
    }
    if (!saw_header && !trace.records.empty())
        throw SchemaError(1, "trace: missing header line"); // unreachable; kept for clarity

    // re-sort (input order is not an error), keeping line numbers aligned
    std::vector<std::size_t> order(trace.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = trace.records[a];
        const auto& rb = trace.records[b];
        if (ra.start_us != rb.start_us) return ra.start_us < rb.start_us;
        return ra.end_us < rb.end_us;
    });
    std::vector<PacketRecord> sorted;
    sorted.reserve(trace.records.size());
    std::vector<std::size_t> sorted_lines;
    sorted_lines.reserve(order.size());
    for (std::size_t i : order) {
        sorted.push_back(std::move(trace.records[i]));
        sorted_lines.push_back(lines[i]);
    }
    trace.records = std::move(sorted);

    std::unordered_map<std::string, std::int64_t> last_end;
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        const auto& r = trace.records[i];
        auto it = last_end.find(r.src);
        if (it != last_end.end() && r.start_us < it->second)
            throw SchemaError(sorted_lines[i],
                              "trace: frame overlaps an earlier frame from source '" + r.src + "'");
        last_end[r.src] = std::max(it == last_end.end() ? r.end_us : it->second, r.end_us);
    }
    return trace;
}

/// Writes the line-delimited JSON form. Key order is fixed so identical
/// traces serialize to identical bytes.
inline void write_trace(const Trace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("trace: cannot open '" + path.string() + "' for writing");
    out << "{\"format\":\"latentid-trace\",\"version\":1,\"epoch\":" << detail::json_quote(trace.epoch)
        << "}\n";
    for (const auto& r : trace.records) {
        out << "{\"start_us\":" << r.start_us << ",\"end_us\":" << r.end_us
            << ",\"kind\":" << detail::json_quote(to_string(r.kind))
            << ",\"src\":" << detail::json_quote(r.src) << ",\"dst\":" << detail::json_quote(r.dst)
            << ",\"size_bytes\":" << r.size_bytes;
        if (!r.match_key.empty()) out << ",\"match_key\":" << detail::json_quote(r.match_key);
        out << "}\n";
    }
    if (!out)
        throw IoError("trace: write failed for '" + path.string() + "'");
}

/// Per-window channel utilization: unioned airtime within the window divided
/// by window length. Overlapping transmissions count once, so CU <= 1.
inline CuSeries compute_cu_series(const Trace& trace, std::int64_t window_us = 10000) {
    if (window_us <= 0)
        throw ParamError("trace: window_us must be positive");
    CuSeries series;
    series.window_us = window_us;
    if (trace.records.empty()) return series;

    const std::int64_t end = trace.end_us();
    const std::size_t n_windows = static_cast<std::size_t>((end + window_us - 1) / window_us);
    std::vector<std::int64_t> busy(n_windows, 0);

    // records are sorted by start, so the union can be swept left to right
    std::int64_t cs = trace.records.front().start_us;
    std::int64_t ce = trace.records.front().end_us;
    auto flush = [&](std::int64_t a, std::int64_t b) {
        for (std::int64_t w = a / window_us; w * window_us < b; ++w) {
            const std::int64_t lo = std::max(a, w * window_us);
            const std::int64_t hi = std::min(b, (w + 1) * window_us);
            if (hi > lo) busy[static_cast<std::size_t>(w)] += hi - lo;
        }
    };
    for (std::size_t i = 1; i < trace.records.size(); ++i) {
        const auto& r = trace.records[i];
        if (r.start_us <= ce) {
            ce = std::max(ce, r.end_us);
        } else {
            flush(cs, ce);
            cs = r.start_us;
            ce = r.end_us;
        }
    }
    flush(cs, ce);

    series.values.resize(n_windows);
    for (std::size_t w = 0; w < n_windows; ++w)
        series.values[w] = static_cast<double>(busy[w]) / static_cast<double>(window_us);
    return series;
}

inline void write_cu_csv(const CuSeries& series, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("trace: cannot open '" + path.string() + "' for writing");
    out << "window_index,cu\n";
    for (std::size_t i = 0; i < series.values.size(); ++i)
        out << i << ',' << fmt_double(series.values[i]) << '\n';
}

} // namespace latentid
