#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentid/errors.hpp"
#include "latentid/trace.hpp"
#include "latentid/util.hpp"

namespace latentid {

/// Response-latency model for one device. Generation delay (t4->t5) is
/// lognormal per probe kind; contention delay (t5->t6) scales with the busy
/// time the device sees on the channel.
struct DeviceProfile {
    struct Lognormal {
        double median_ms = 1.0;
        double dispersion = 0.35; // log-space sigma
    };

    std::string device_id;
    std::array<Lognormal, kProbeKindCount> base_latency; // indexed by probe_kind_index
    double contention_sensitivity = 1.0;
};

struct CuSegment {
    double duration_s = 0.0;
    double cu = 0.0;
};

struct BackgroundSizeDist {
    std::int64_t min_bytes = 200;
    std::int64_t max_bytes = 1500;
};

struct SimConfig {
    std::vector<DeviceProfile> devices;
    double duration_s = 60.0;
    double probe_period_s = 1.0; // one probe of each kind per device per period
    std::vector<CuSegment> target_cu = {{60.0, 0.3}};
    double phy_rate_mbps = 24.0;
    BackgroundSizeDist background_size;
    std::uint64_t seed = 42;

    /// Five stock profiles G, A, K, P, AQ. TCP-lo medians 0.62/1.0/1.6/2.4/3.27 ms;
    /// high-payload kinds 1.5x, UDP kinds 0.8x the device's TCP-lo median.
    static SimConfig defaults();
};

inline SimConfig SimConfig::defaults() {
    SimConfig cfg;
    struct Stock {
        const char* id;
        double tcp_lo_median_ms;
        double sensitivity;
    };
    // sensitivities rise mildly with base latency so per-device median
    // ordering stays stable across the whole CU range, as in live traces
    const Stock stock[] = {
        {"G", 0.62, 0.8}, {"A", 1.0, 0.9}, {"K", 1.6, 1.0}, {"P", 2.4, 1.1}, {"AQ", 3.27, 1.2},
    };
    for (const auto& s : stock) {
        DeviceProfile p;
        p.device_id = s.id;
        const double m = s.tcp_lo_median_ms;
        p.base_latency[0] = {m, 0.15};        // tcp_lo
        p.base_latency[1] = {1.5 * m, 0.15};  // tcp_h
        p.base_latency[2] = {0.8 * m, 0.15};  // udp_lo
        p.base_latency[3] = {1.2 * m, 0.15};  // udp_h
        p.contention_sensitivity = s.sensitivity;
        cfg.devices.push_back(std::move(p));
    }
    return cfg;
}

/// One matched probe/response with indices into the final sorted trace.
struct TruePair {
    std::size_t probe_index = 0;
    std::size_t response_index = 0;
    std::string device_id;
    PacketKind probe_kind = PacketKind::probe_tcp_lo;
    std::int64_t t4_us = 0;      // probe end
    std::int64_t t6_us = 0;      // response start
    std::int64_t latency_us = 0; // t6 - t4
    std::string match_key;
};

struct GroundTruth {
    std::vector<TruePair> pairs;
    CuSeries realized_cu; // 10 ms windows over the emitted trace
    std::vector<std::string> device_ids;
    std::vector<CuSegment> target_cu;
};

struct SimResult {
    Trace trace;
    GroundTruth truth;
};

namespace detail {

inline std::int64_t airtime_us(std::int64_t size_bytes, double phy_rate_mbps) {
    // bits / (bits per µs); clamp so every frame has positive duration
    const double us = static_cast<double>(size_bytes) * 8.0 / phy_rate_mbps;
    return std::max<std::int64_t>(1, std::llround(us));
}

/// On-air frame byte counts per kind: MAC+IP+L4 headers, plus 1400 B payload
/// for the high-payload probes.
inline std::int64_t frame_bytes(PacketKind k) {
    switch (k) {
        case PacketKind::probe_tcp_lo: return 74;
        case PacketKind::probe_tcp_h: return 1474;
        case PacketKind::probe_udp_lo: return 66;
        case PacketKind::probe_udp_h: return 1466;
        case PacketKind::resp_tcp_rst: return 74;
        case PacketKind::resp_icmp_unreach: return 98;
        case PacketKind::background: return 0;
    }
    return 0;
}

} // namespace detail

inline void validate_config(const SimConfig& cfg) {
    if (cfg.devices.empty())
        throw ConfigError("simulator: device list is empty");
    if (cfg.duration_s <= 0.0)
        throw ConfigError("simulator: duration_s must be positive");
    if (cfg.probe_period_s <= 0.0)
        throw ConfigError("simulator: probe_period_s must be positive");
    if (cfg.phy_rate_mbps <= 0.0)
        throw ConfigError("simulator: phy_rate_mbps must be positive");
    if (cfg.background_size.min_bytes <= 0 || cfg.background_size.max_bytes < cfg.background_size.min_bytes)
        throw ConfigError("simulator: invalid background size distribution");
    double total = 0.0;
    for (const auto& seg : cfg.target_cu) {
        if (seg.cu < 0.0 || seg.cu > 1.0)
            throw ConfigError("simulator: target_cu values must lie in [0, 1]");
        if (seg.duration_s <= 0.0)
            throw ConfigError("simulator: target_cu segment durations must be positive");
        total += seg.duration_s;
    }
    if (total + 1e-9 < cfg.duration_s)
        throw ConfigError("simulator: target_cu schedule is shorter than duration_s");
    for (const auto& dev : cfg.devices) {
        if (dev.device_id.empty())
            throw ConfigError("simulator: device_id must be nonempty");
        if (dev.contention_sensitivity < 0.0)
            throw ConfigError("simulator: contention_sensitivity must be >= 0");
        for (const auto& ln : dev.base_latency) {
            if (ln.median_ms <= 0.0)
                throw ConfigError("simulator: base latency medians must be positive");
            if (ln.dispersion < 0.0)
                throw ConfigError("simulator: dispersion must be >= 0");
        }
    }
}

inline constexpr std::int64_t kDifsUs = 50; // idle sensed this long counts as a slot

/// Generates one synthetic trace plus ground truth.
///
/// Background: a single station emits an on-off renewal process per schedule
/// segment. Each "on" period is a burst of frames separated by sub-DIFS
/// gaps (queued traffic drains in trains; bursts lengthen with load), each
/// "off" gap is exponential, sized so the long-run busy fraction matches the
/// segment's target CU.
///
/// Probes: within each probe period the AP sends every kind to every device,
/// kind-major, on an even slot grid.
///
/// Response timing: t_ready = t4 + lognormal generation delay. The device
/// senses the channel: if an idle slot (no background frame within DIFS) is
/// open at t_ready, the response starts immediately; otherwise it waits for
/// the burst to clear and the response starts after
/// sensitivity x (busy time until the slot opens) + backoff ~ U[0, 1 ms].
inline SimResult simulate(const SimConfig& cfg) {
    validate_config(cfg);

    const std::int64_t duration_us = std::llround(cfg.duration_s * 1e6);
    Rng bg_rng(derive_seed(cfg.seed, 1));
    Rng dev_rng(derive_seed(cfg.seed, 2));

    // --- background frames (kept separately: contention scans this list) ---
    struct BgFrame {
        std::int64_t start, end, size;
    };
    std::vector<BgFrame> bg;
    {
        std::int64_t t = 0;
        std::int64_t seg_end = 0;
        for (const auto& seg : cfg.target_cu) {
            seg_end += std::llround(seg.duration_s * 1e6);
            const std::int64_t stop = std::min(seg_end, duration_us);
            if (seg.cu <= 0.0) {
                t = std::max(t, stop);
                continue;
            }
            // mean burst length (frames) grows with load: deeper queues
            // drain in longer trains
            const double mean_burst = 1.0 + 20.0 * seg.cu * seg.cu * seg.cu;
            const double p_continue = 1.0 - 1.0 / mean_burst;
            while (t < stop) {
                std::int64_t burst_air = 0;
                for (;;) {
                    const std::int64_t size = bg_rng.uniform_int(cfg.background_size.min_bytes,
                                                                 cfg.background_size.max_bytes);
                    const std::int64_t air = detail::airtime_us(size, cfg.phy_rate_mbps);
                    bg.push_back({t, t + air, size});
                    burst_air += air;
                    t += air;
                    if (bg_rng.uniform01() >= p_continue) break;
                    t += bg_rng.uniform_int(10, 40); // sub-DIFS spacing inside a burst
                }
                std::int64_t gap = kDifsUs + 10;
                if (seg.cu < 0.999) {
                    const double mean_gap =
                        static_cast<double>(burst_air) * (1.0 - seg.cu) / seg.cu;
                    gap = std::max<std::int64_t>(gap, std::llround(bg_rng.exponential(mean_gap)));
                }
                t += gap;
            }
            if (t >= duration_us) break;
        }
    }

    // Counts down `backoff_us` of idle air starting at t, freezing while
    // background frames occupy the channel. Returns the busy microseconds
    // skipped; zero means the whole countdown ran over an idle channel.
    auto busy_during_backoff = [&](std::int64_t t, double backoff_us) -> double {
        auto it = std::upper_bound(bg.begin(), bg.end(), t,
                                   [](std::int64_t v, const BgFrame& f) { return v < f.start; });
        double busy = 0.0;
        double pos = static_cast<double>(t);
        if (it != bg.begin()) {
            auto prev = std::prev(it);
            if (prev->end > t) { // countdown starts mid-frame
                busy += static_cast<double>(prev->end - t);
                pos = static_cast<double>(prev->end);
            }
        }
        double idle_needed = backoff_us;
        for (; it != bg.end() && idle_needed > 0.0; ++it) {
            const double gap = static_cast<double>(it->start) - pos;
            if (gap >= idle_needed) return busy;
            idle_needed -= std::max(gap, 0.0);
            busy += static_cast<double>(it->end - it->start);
            pos = static_cast<double>(it->end);
        }
        return busy;
    };

    // --- probes + responses ---
    std::vector<PacketRecord> records;
    records.reserve(bg.size() + 64);
    for (const auto& f : bg) {
        PacketRecord r;
        r.start_us = f.start;
        r.end_us = f.end;
        r.kind = PacketKind::background;
        r.src = "bg";
        r.dst = "ap";
        r.size_bytes = f.size;
        records.push_back(std::move(r));
    }

    struct PendingPair {
        std::size_t probe_pos;    // index into `records`
        std::size_t response_pos; // index into `records`
        std::string device_id;
        PacketKind kind;
        std::string match_key;
    };
    std::vector<PendingPair> pending;

    const std::int64_t period_us = std::llround(cfg.probe_period_s * 1e6);
    const std::size_t n_dev = cfg.devices.size();
    const std::size_t slots = 4 * n_dev;
    const std::int64_t slot_us = std::max<std::int64_t>(1, period_us / static_cast<std::int64_t>(slots));

    std::int64_t ap_busy_until = 0;
    std::vector<std::int64_t> dev_busy_until(n_dev, 0);
    std::uint64_t probe_counter = 0;

    for (std::int64_t period_start = 0; period_start < duration_us; period_start += period_us) {
        for (std::size_t slot = 0; slot < slots; ++slot) {
            const std::size_t kind_idx = slot / n_dev;
            const std::size_t dev_idx = slot % n_dev;
            const PacketKind probe_kind = kProbeKinds[kind_idx];
            const auto& dev = cfg.devices[dev_idx];

            std::int64_t probe_start = period_start + static_cast<std::int64_t>(slot) * slot_us;
            if (probe_start >= duration_us) break;
            probe_start = std::max(probe_start, ap_busy_until); // AP sends one frame at a time
            const std::int64_t probe_air = detail::airtime_us(detail::frame_bytes(probe_kind), cfg.phy_rate_mbps);
            const std::int64_t t4 = probe_start + probe_air;
            ap_busy_until = t4;

            char key[24];
            std::snprintf(key, sizeof(key), "p%08llu", static_cast<unsigned long long>(probe_counter++));

            PacketRecord probe;
            probe.start_us = probe_start;
            probe.end_us = t4;
            probe.kind = probe_kind;
            probe.src = "ap";
            probe.dst = dev.device_id;
            probe.size_bytes = detail::frame_bytes(probe_kind);
            probe.match_key = key;
            records.push_back(std::move(probe));
            const std::size_t probe_pos = records.size() - 1;

            // response timing
            const auto& ln = dev.base_latency[kind_idx];
            const double gen_ms = dev_rng.lognormal(ln.median_ms, ln.dispersion);
            const std::int64_t t_ready = t4 + std::max<std::int64_t>(1, std::llround(gen_ms * 1000.0));

            const double backoff_us = dev_rng.uniform(0.0, 1000.0);
            const double busy_us = busy_during_backoff(t_ready, backoff_us);
            // an entirely idle countdown costs nothing; a contended one costs
            // the busy time scaled by the device's sensitivity plus the backoff
            double contention_us = 0.0;
            if (busy_us > 0.0)
                contention_us = dev.contention_sensitivity * busy_us + backoff_us;

            std::int64_t t6 = t_ready + std::llround(contention_us);
            t6 = std::max(t6, dev_busy_until[dev_idx] + 1); // one frame at a time per device
            t6 = std::max(t6, t4 + 1);

            const PacketKind resp_kind = response_kind_for(probe_kind);
            const std::int64_t resp_air = detail::airtime_us(detail::frame_bytes(resp_kind), cfg.phy_rate_mbps);
            PacketRecord resp;
            resp.start_us = t6;
            resp.end_us = t6 + resp_air;
            resp.kind = resp_kind;
            resp.src = dev.device_id;
            resp.dst = "ap";
            resp.size_bytes = detail::frame_bytes(resp_kind);
            resp.match_key = key;
            records.push_back(std::move(resp));
            dev_busy_until[dev_idx] = t6 + resp_air;

            pending.push_back({probe_pos, records.size() - 1, dev.device_id, probe_kind, key});
        }
    }

    // sort while tracking where each record lands
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].start_us != records[b].start_us) return records[a].start_us < records[b].start_us;
        return records[a].end_us < records[b].end_us;
    });
    std::vector<std::size_t> where(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) where[order[i]] = i;

    SimResult result;
    result.trace.records.reserve(records.size());
    for (std::size_t i : order) result.trace.records.push_back(std::move(records[i]));

    GroundTruth truth;
    truth.target_cu = cfg.target_cu;
    for (const auto& dev : cfg.devices) truth.device_ids.push_back(dev.device_id);
    for (const auto& p : pending) {
        TruePair tp;
        tp.probe_index = where[p.probe_pos];
        tp.response_index = where[p.response_pos];
        tp.device_id = p.device_id;
        tp.probe_kind = p.kind;
        tp.t4_us = result.trace.records[tp.probe_index].end_us;
        tp.t6_us = result.trace.records[tp.response_index].start_us;
        tp.latency_us = tp.t6_us - tp.t4_us;
        tp.match_key = p.match_key;
        truth.pairs.push_back(std::move(tp));
    }
    std::sort(truth.pairs.begin(), truth.pairs.end(),
              [](const TruePair& a, const TruePair& b) { return a.probe_index < b.probe_index; });
    truth.realized_cu = compute_cu_series(result.trace, 10000);

    result.truth = std::move(truth);
    result.trace.channel_meta = std::make_shared<GroundTruth>(result.truth);
    return result;
}

/// One run per CU level, each with a level-specific derived seed.
inline std::vector<SimResult> sweep_cu(const SimConfig& base, const std::vector<double>& cu_levels,
                                       double per_level_duration_s) {
    if (cu_levels.empty())
        throw ConfigError("simulator: cu_levels is empty");
    if (per_level_duration_s <= 0.0)
        throw ConfigError("simulator: per_level_duration_s must be positive");
    std::vector<SimResult> out;
    out.reserve(cu_levels.size());
    for (std::size_t i = 0; i < cu_levels.size(); ++i) {
        SimConfig cfg = base;
        cfg.duration_s = per_level_duration_s;
        cfg.target_cu = {{per_level_duration_s, cu_levels[i]}};
        cfg.seed = derive_seed(base.seed, 1000 + i);
        out.push_back(simulate(cfg));
    }
    return out;
}

// ---------------------------------------------------------------------------
// config / ground-truth files

inline SimConfig parse_sim_config(const nlohmann::json& j) {
    SimConfig cfg = SimConfig::defaults();
    if (!j.is_object())
        throw ConfigError("simulator: config root must be a JSON object");
    if (j.contains("duration_s")) cfg.duration_s = j["duration_s"].get<double>();
    if (j.contains("probe_period_s")) cfg.probe_period_s = j["probe_period_s"].get<double>();
    if (j.contains("phy_rate_mbps")) cfg.phy_rate_mbps = j["phy_rate_mbps"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("background_size")) {
        const auto& b = j["background_size"];
        if (b.contains("min_bytes")) cfg.background_size.min_bytes = b["min_bytes"].get<std::int64_t>();
        if (b.contains("max_bytes")) cfg.background_size.max_bytes = b["max_bytes"].get<std::int64_t>();
    }
    if (j.contains("target_cu")) {
        cfg.target_cu.clear();
        const auto& t = j["target_cu"];
        if (t.is_number()) {
            cfg.target_cu.push_back({cfg.duration_s, t.get<double>()});
        } else if (t.is_array()) {
            for (const auto& seg : t) {
                if (!seg.is_object() || !seg.contains("duration_s") || !seg.contains("cu"))
                    throw ConfigError("simulator: target_cu segments need duration_s and cu");
                cfg.target_cu.push_back({seg["duration_s"].get<double>(), seg["cu"].get<double>()});
            }
        } else {
            throw ConfigError("simulator: target_cu must be a number or an array of segments");
        }
    } else {
        // keep the default level but stretch it to the configured duration
        for (auto& seg : cfg.target_cu) seg.duration_s = cfg.duration_s;
    }
    if (j.contains("devices")) {
        cfg.devices.clear();
        static const char* kindNames[] = {"tcp_lo", "tcp_h", "udp_lo", "udp_h"};
        for (const auto& d : j["devices"]) {
            DeviceProfile p;
            if (!d.contains("device_id"))
                throw ConfigError("simulator: device entry missing device_id");
            p.device_id = d["device_id"].get<std::string>();
            if (d.contains("contention_sensitivity"))
                p.contention_sensitivity = d["contention_sensitivity"].get<double>();
            if (!d.contains("base_latency_ms"))
                throw ConfigError("simulator: device entry missing base_latency_ms");
            const auto& bl = d["base_latency_ms"];
            for (int k = 0; k < kProbeKindCount; ++k) {
                if (!bl.contains(kindNames[k]))
                    throw ConfigError(std::string("simulator: base_latency_ms missing kind '") +
                                      kindNames[k] + "'");
                const auto& e = bl[kindNames[k]];
                if (e.is_number()) {
                    p.base_latency[k] = {e.get<double>(), 0.35};
                } else {
                    p.base_latency[k] = {e.at("median").get<double>(),
                                         e.contains("dispersion") ? e["dispersion"].get<double>() : 0.35};
                }
            }
            cfg.devices.push_back(std::move(p));
        }
    }
    return cfg;
}

inline SimConfig load_sim_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("simulator: cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("simulator: config is not valid JSON: ") + e.what());
    }
    return parse_sim_config(j);
}

inline void write_ground_truth(const GroundTruth& truth, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("simulator: cannot open '" + path.string() + "' for writing");
    out << "{\"format\":\"latentid-truth\",\"version\":1,\"devices\":[";
    for (std::size_t i = 0; i < truth.device_ids.size(); ++i) {
        if (i) out << ',';
        out << detail::json_quote(truth.device_ids[i]);
    }
    out << "],\"cu_window_us\":" << truth.realized_cu.window_us << ",\"realized_cu\":[";
    for (std::size_t i = 0; i < truth.realized_cu.values.size(); ++i) {
        if (i) out << ',';
        out << fmt_double(truth.realized_cu.values[i]);
    }
    out << "],\"pairs\":[";
    for (std::size_t i = 0; i < truth.pairs.size(); ++i) {
        const auto& p = truth.pairs[i];
        if (i) out << ',';
        out << "[" << p.probe_index << ',' << p.response_index << ','
            << detail::json_quote(p.device_id) << ',' << detail::json_quote(to_string(p.probe_kind))
            << ',' << p.t4_us << ',' << p.t6_us << ',' << detail::json_quote(p.match_key) << ']';
    }
    out << "]}\n";
    if (!out)
        throw IoError("simulator: write failed for '" + path.string() + "'");
}

inline GroundTruth read_ground_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("simulator: cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("simulator: truth file is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || j.value("format", "") != "latentid-truth")
        throw IoError("simulator: not a latentid-truth file");
    GroundTruth truth;
    for (const auto& d : j["devices"]) truth.device_ids.push_back(d.get<std::string>());
    truth.realized_cu.window_us = j["cu_window_us"].get<std::int64_t>();
    for (const auto& v : j["realized_cu"]) truth.realized_cu.values.push_back(v.get<double>());
    for (const auto& e : j["pairs"]) {
        TruePair p;
        p.probe_index = e[0].get<std::size_t>();
        p.response_index = e[1].get<std::size_t>();
        p.device_id = e[2].get<std::string>();
        p.probe_kind = *kind_from_string(e[3].get<std::string>());
        p.t4_us = e[4].get<std::int64_t>();
        p.t6_us = e[5].get<std::int64_t>();
        p.latency_us = p.t6_us - p.t4_us;
        p.match_key = e[6].get<std::string>();
        truth.pairs.push_back(std::move(p));
    }
    return truth;
}

} // namespace latentid
