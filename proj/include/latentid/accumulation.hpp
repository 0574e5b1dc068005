#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "latentid/errors.hpp"
#include "latentid/extractor.hpp"
#include "latentid/trace.hpp"
#include "latentid/util.hpp"

namespace latentid {

enum class WeightFamily { bell, gamma };

inline const char* to_string(WeightFamily f) { return f == WeightFamily::bell ? "bell" : "gamma"; }

/// Weight curve peaking at the response packet's transmission midpoint.
/// Bell: normal pdf centered there. Gamma: the pdf with the response
/// midpoint mapped to the distribution's mode, so Predecessors (earlier in
/// time) land on the heavy right tail and outweigh equidistant Successors.
struct WeightFunction {
    WeightFamily family = WeightFamily::bell;
    double sigma_ms = 1.0; // bell
    double alpha = 2.0;    // gamma shape
    double beta_ms = 1.0;  // gamma scale

    static WeightFunction bell(double sigma_ms) {
        WeightFunction w;
        w.family = WeightFamily::bell;
        w.sigma_ms = sigma_ms;
        return w;
    }
    static WeightFunction gamma(double alpha, double beta_ms) {
        WeightFunction w;
        w.family = WeightFamily::gamma;
        w.alpha = alpha;
        w.beta_ms = beta_ms;
        return w;
    }

    void validate() const {
        if (family == WeightFamily::bell) {
            if (!(sigma_ms > 0.0))
                throw ParamError("accumulation: bell sigma must be > 0");
        } else {
            if (!(alpha > 1.0))
                throw ParamError("accumulation: gamma alpha must be > 1");
            if (!(beta_ms > 0.0))
                throw ParamError("accumulation: gamma beta must be > 0");
        }
    }

    /// Standard deviation of the curve; this is the sigma that enters the
    /// Eq. 1 normalizers for either family.
    double stddev_ms() const {
        return family == WeightFamily::bell ? sigma_ms : std::sqrt(alpha) * beta_ms;
    }

    /// Distance of the gamma mode from the distribution origin.
    double mode_offset_ms() const { return (alpha - 1.0) * beta_ms; }
};

/// Curve value at a packet midpoint, in 1/ms. The response midpoint carries
/// the peak for both families.
inline double eval_weight(const WeightFunction& w, double t_mid_ms, double t_resp_mid_ms) {
    w.validate();
    if (w.family == WeightFamily::bell) {
        const double z = (t_mid_ms - t_resp_mid_ms) / w.sigma_ms;
        return 1.0 / (w.sigma_ms * std::sqrt(2.0 * 3.14159265358979323846)) * std::exp(-0.5 * z * z);
    }
    // offset > 0 for Predecessors (before the response), < 0 for Successors;
    // mapping the mode to the response midpoint puts earlier packets on the
    // gamma's heavy tail, which realizes the precedence property
    const double x = (t_resp_mid_ms - t_mid_ms) + w.mode_offset_ms();
    if (x <= 0.0) return 0.0;
    const double log_pdf = (w.alpha - 1.0) * std::log(x) - x / w.beta_ms -
                           std::lgamma(w.alpha) - w.alpha * std::log(w.beta_ms);
    return std::exp(log_pdf);
}

inline double default_successor_window_ms(const WeightFunction& w) { return 3.0 * w.stddev_ms(); }

struct ContextPacket {
    double start_ms = 0.0;
    double end_ms = 0.0;

    double duration_ms() const { return end_ms - start_ms; }
    double mid_ms() const { return 0.5 * (start_ms + end_ms); }
};

/// Predecessor packets (midpoint strictly inside (t4, t6)) and Successor
/// packets (midpoint in (t7, t7 + W]) merged into one chronological list.
struct AccumulationContext {
    double t_resp_mid_ms = 0.0;
    std::vector<ContextPacket> packets;
    std::size_t predecessor_count = 0;
    std::size_t successor_count = 0;

    std::size_t n() const { return packets.size(); }
};

inline std::int64_t max_frame_duration_us(const Trace& trace) {
    std::int64_t max_dur = 0;
    for (const auto& r : trace.records) max_dur = std::max(max_dur, r.duration_us());
    return max_dur;
}

/// Gathers the context around one exchange. Membership is decided by packet
/// midpoint, in exact integer arithmetic (2x µs), so boundaries are crisp.
/// `max_duration_us` must be >= the longest frame in the trace (it bounds the
/// backward scan); precompute it with max_frame_duration_us when scoring many
/// pairs.
inline AccumulationContext collect_context(const Trace& trace, const ProbeResponsePair& pair,
                                           double successor_window_ms, std::int64_t max_duration_us) {
    if (successor_window_ms < 0.0)
        throw ParamError("accumulation: successor window must be >= 0");
    AccumulationContext ctx;
    ctx.t_resp_mid_ms = static_cast<double>(pair.t6_us + pair.t7_us) / 2000.0;

    const std::int64_t window_us = std::llround(successor_window_ms * 1000.0);
    const std::int64_t pred_lo_x2 = 2 * pair.t4_us;            // mid > t4
    const std::int64_t pred_hi_x2 = 2 * pair.t6_us;            // mid < t6
    const std::int64_t succ_lo_x2 = 2 * pair.t7_us;            // mid > t7
    const std::int64_t succ_hi_x2 = 2 * (pair.t7_us + window_us); // mid <= t7 + W

    // the pair's own frames never pass the midpoint rule (probe midpoint
    // precedes t4, response midpoint lies in [t6, t7]), so no index-based
    // exclusion is needed and pairs loaded from CSV work the same way
    auto first = std::lower_bound(trace.records.begin(), trace.records.end(),
                                  pair.t4_us - max_duration_us,
                                  [](const PacketRecord& r, std::int64_t v) { return r.start_us < v; });
    for (auto it = first; it != trace.records.end(); ++it) {
        if (it->start_us > pair.t7_us + window_us) break;
        const std::int64_t mid2 = it->midpoint_x2_us();
        const bool pred = mid2 > pred_lo_x2 && mid2 < pred_hi_x2;
        const bool succ = mid2 > succ_lo_x2 && mid2 <= succ_hi_x2;
        if (!pred && !succ) continue;
        ctx.packets.push_back({static_cast<double>(it->start_us) / 1000.0,
                               static_cast<double>(it->end_us) / 1000.0});
        if (pred)
            ++ctx.predecessor_count;
        else
            ++ctx.successor_count;
    }
    // records are scanned in start order, which is chronological order of
    // the merged list
    return ctx;
}

inline AccumulationContext collect_context(const Trace& trace, const ProbeResponsePair& pair,
                                           double successor_window_ms) {
    return collect_context(trace, pair, successor_window_ms, max_frame_duration_us(trace));
}

inline constexpr double kMinGapMs = 0.001; // 1 µs; Eq. 1 divides by the gap

/// Eq. 1. First packet's duration is normalized by the curve's standard
/// deviation; each later packet by sigma over its inter-packet gap.
inline double accumulation_score(const AccumulationContext& ctx, const WeightFunction& w) {
    w.validate();
    if (ctx.packets.empty()) return 0.0;
    const double sigma = w.stddev_ms();
    const auto& first = ctx.packets.front();
    double score = first.duration_ms() * sigma * eval_weight(w, first.mid_ms(), ctx.t_resp_mid_ms);
    for (std::size_t i = 1; i < ctx.packets.size(); ++i) {
        const auto& p = ctx.packets[i];
        const double gap = std::max(p.start_ms - ctx.packets[i - 1].end_ms, kMinGapMs);
        score += p.duration_ms() * (sigma / gap) * eval_weight(w, p.mid_ms(), ctx.t_resp_mid_ms);
    }
    return score;
}

struct ScoredPair {
    double score = 0.0;
    std::size_t n = 0;
    WeightFamily family = WeightFamily::bell;
};

inline ScoredPair score_pair(const Trace& trace, const ProbeResponsePair& pair, const WeightFunction& w,
                             std::int64_t max_duration_us) {
    const AccumulationContext ctx = collect_context(trace, pair, default_successor_window_ms(w), max_duration_us);
    return {accumulation_score(ctx, w), ctx.n(), w.family};
}

inline ScoredPair score_pair(const Trace& trace, const ProbeResponsePair& pair, const WeightFunction& w) {
    return score_pair(trace, pair, w, max_frame_duration_us(trace));
}

/// Scores every pair with one weight function (shared trace scan bound).
inline std::vector<ScoredPair> score_pairs(const Trace& trace,
                                           std::span<const ProbeResponsePair> pairs,
                                           const WeightFunction& w) {
    const std::int64_t max_dur = max_frame_duration_us(trace);
    std::vector<ScoredPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(score_pair(trace, p, w, max_dur));
    return out;
}

// ---------------------------------------------------------------------------
// correlation and fitting

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw DegenerateInput("accumulation: pearson needs two series of equal length >= 2");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateInput("accumulation: pearson is undefined for a constant series");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct WeightGrid {
    std::vector<double> sigmas;                     // bell
    std::vector<double> alphas, betas;              // gamma (cartesian)

    /// sigma in 0.1..5.0 ms, step 0.1 (spans the observed latency scales)
    static WeightGrid default_bell() {
        WeightGrid g;
        for (int i = 1; i <= 50; ++i) g.sigmas.push_back(static_cast<double>(i) / 10.0);
        return g;
    }
    static WeightGrid default_gamma() {
        WeightGrid g;
        g.alphas = {1.5, 2.0, 3.0, 4.0};
        g.betas = {0.25, 0.5, 1.0, 2.0};
        return g;
    }
};

struct WeightFit {
    WeightFunction params;
    double r = 0.0;
};

namespace detail {

inline std::vector<WeightFunction> grid_candidates(WeightFamily family, const WeightGrid& grid) {
    std::vector<WeightFunction> candidates;
    if (family == WeightFamily::bell) {
        for (double s : grid.sigmas) candidates.push_back(WeightFunction::bell(s));
    } else {
        for (double a : grid.alphas)
            for (double b : grid.betas) candidates.push_back(WeightFunction::gamma(a, b));
    }
    if (candidates.empty())
        throw ParamError("accumulation: weight grid is empty");
    for (const auto& c : candidates) c.validate();
    return candidates;
}

/// Candidates are generated ascending, so replacing only on strict
/// improvement resolves ties to the smallest sigma / lexicographically
/// smallest (alpha, beta).
inline WeightFit pick_best(const std::vector<WeightFunction>& candidates,
                           const std::vector<double>& rs, const std::vector<std::string>& errors) {
    WeightFit best;
    bool found = false;
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        if (std::isnan(rs[ci])) continue;
        if (!found || rs[ci] > best.r) {
            best.params = candidates[ci];
            best.r = rs[ci];
            found = true;
        }
    }
    if (!found)
        throw DegenerateInput(errors.front().empty() ? "accumulation: no usable grid point"
                                                     : errors.front());
    return best;
}

} // namespace detail

/// Exhaustive grid search maximizing pearson(latency, score) over fixed,
/// caller-collected contexts.
inline WeightFit fit_weight_params(std::span<const double> latencies,
                                   std::span<const AccumulationContext> contexts, WeightFamily family,
                                   const WeightGrid& grid, int jobs = 1) {
    if (latencies.size() != contexts.size())
        throw DegenerateInput("accumulation: latency/context count mismatch");
    const auto candidates = detail::grid_candidates(family, grid);
    std::vector<double> rs(candidates.size());
    std::vector<std::string> errors(candidates.size());
    parallel_for(candidates.size(), jobs, [&](std::size_t ci) {
        std::vector<double> scores;
        scores.reserve(contexts.size());
        for (const auto& ctx : contexts) scores.push_back(accumulation_score(ctx, candidates[ci]));
        try {
            rs[ci] = pearson(latencies, scores);
        } catch (const DegenerateInput& e) {
            rs[ci] = std::numeric_limits<double>::quiet_NaN();
            errors[ci] = e.what();
        }
    });
    return detail::pick_best(candidates, rs, errors);
}

/// Trace-backed grid search: each candidate collects contexts with its own
/// 3-sigma successor window before scoring.
inline WeightFit fit_weight_params(const Trace& trace, std::span<const ProbeResponsePair> pairs,
                                   WeightFamily family, const WeightGrid& grid, int jobs = 1) {
    const auto candidates = detail::grid_candidates(family, grid);
    std::vector<double> latencies;
    latencies.reserve(pairs.size());
    for (const auto& p : pairs) latencies.push_back(p.latency_ms());

    const std::int64_t max_dur = max_frame_duration_us(trace);
    std::vector<double> rs(candidates.size());
    std::vector<std::string> errors(candidates.size());
    parallel_for(candidates.size(), jobs, [&](std::size_t ci) {
        std::vector<double> scores;
        scores.reserve(pairs.size());
        for (const auto& p : pairs)
            scores.push_back(score_pair(trace, p, candidates[ci], max_dur).score);
        try {
            rs[ci] = pearson(latencies, scores);
        } catch (const DegenerateInput& e) {
            rs[ci] = std::numeric_limits<double>::quiet_NaN();
            errors[ci] = e.what();
        }
    });
    return detail::pick_best(candidates, rs, errors);
}

struct ExpFit {
    double a = 0.0;
    double b = 0.0;
    double rss = 0.0; // mean squared residual in the linearized (log) domain
};

inline constexpr double kLogEps = 1e-6; // regularizes log of zero scores

/// Least-squares fit of score ~ a * exp(b * cu) via linear regression on
/// ln(score + eps). RSS is normalized by the sample count.
inline ExpFit fit_exponential_cu(std::span<const double> scores, std::span<const double> cus) {
    if (scores.size() != cus.size() || scores.size() < 2)
        throw DegenerateInput("accumulation: exponential fit needs paired samples (>= 2)");
    const double n = static_cast<double>(scores.size());
    double mx = 0.0, my = 0.0;
    std::vector<double> ys(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        ys[i] = std::log(scores[i] + kLogEps);
        mx += cus[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        sxy += (cus[i] - mx) * (ys[i] - my);
        sxx += (cus[i] - mx) * (cus[i] - mx);
    }
    if (sxx == 0.0)
        throw DegenerateInput("accumulation: exponential fit needs varying cu values");
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double resid = ys[i] - (intercept + slope * cus[i]);
        rss += resid * resid;
    }
    return {std::exp(intercept), slope, rss / n};
}

struct LinFit {
    double c = 0.0; // intercept
    double d = 0.0; // slope
    double rss = 0.0;
};

/// Ordinary least squares y ~ c + d * x with mean-squared-residual RSS.
inline LinFit fit_linear(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw DegenerateInput("accumulation: linear fit needs paired samples (>= 2)");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    if (sxx == 0.0)
        throw DegenerateInput("accumulation: linear fit needs varying x values");
    const double d = sxy / sxx;
    const double c = my - d * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double resid = ys[i] - (c + d * xs[i]);
        rss += resid * resid;
    }
    return {c, d, rss / n};
}

/// Mean squared residual of ln(score + eps) against a linear model's raw
/// predictions; lets the exponential and linear regressions be compared in
/// one domain (the one fit_exponential_cu reports RSS in).
inline double linear_fit_log_rss(const LinFit& fit, std::span<const double> scores,
                                 std::span<const double> cus) {
    double rss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double pred = std::max(fit.c + fit.d * cus[i], 0.0);
        const double resid = std::log(scores[i] + kLogEps) - std::log(pred + kLogEps);
        rss += resid * resid;
    }
    return rss / static_cast<double>(scores.size());
}

/// Score-bin edges from the exponential fit at the CU break points:
/// edge_k = a * exp(b * cu_k). Bins: [0, e1), [e1, e2), [e2, inf).
inline std::array<double, 2> bin_edges(const ExpFit& fit,
                                       std::array<double, 2> cu_breaks = {1.0 / 3.0, 2.0 / 3.0}) {
    if (!(fit.b > 0.0))
        throw ParamError("accumulation: bin_edges requires a positive exponent b");
    return {fit.a * std::exp(fit.b * cu_breaks[0]), fit.a * std::exp(fit.b * cu_breaks[1])};
}

inline int bin_index(double score, const std::array<double, 2>& edges) {
    if (score < edges[0]) return 0;
    if (score < edges[1]) return 1;
    return 2;
}

// ---------------------------------------------------------------------------
// scored CSV: device,probe_kind,latency_ms,score,n  (rows align 1:1 with the
// pairs CSV they were computed from)

inline void write_scored_csv(const std::vector<ProbeResponsePair>& pairs,
                             const std::vector<ScoredPair>& scored,
                             const std::filesystem::path& path) {
    if (pairs.size() != scored.size())
        throw InvariantError("accumulation: pairs/scores length mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("accumulation: cannot open '" + path.string() + "' for writing");
    out << "device,probe_kind,latency_ms,score,n\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        out << pairs[i].device_id << ',' << to_string(pairs[i].probe_kind) << ','
            << fmt_double(pairs[i].latency_ms()) << ',' << fmt_double(scored[i].score) << ','
            << scored[i].n << '\n';
    }
}

struct ScoredRow {
    std::string device_id;
    PacketKind probe_kind;
    double latency_ms = 0.0;
    double score = 0.0;
    std::size_t n = 0;
};

inline std::vector<ScoredRow> read_scored_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("accumulation: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != "device,probe_kind,latency_ms,score,n")
        throw IoError("accumulation: '" + path.string() + "' is not a scored CSV");
    std::vector<ScoredRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5)
            throw IoError("accumulation: bad scored row at line " + std::to_string(lineno));
        ScoredRow r;
        r.device_id = f[0];
        auto kind = kind_from_string(f[1]);
        if (!kind || !is_probe(*kind))
            throw IoError("accumulation: bad probe_kind at line " + std::to_string(lineno));
        r.probe_kind = *kind;
        r.latency_ms = parse_double(f[2]);
        r.score = parse_double(f[3]);
        r.n = static_cast<std::size_t>(std::strtoull(f[4].c_str(), nullptr, 10));
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace latentid
