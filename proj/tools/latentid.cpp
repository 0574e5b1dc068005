// latentid: probe-latency device fingerprinting pipeline.
//
// Stages stay file-to-file so every intermediate is inspectable:
//   simulate -> extract -> score -> fit-weights / fit-cu -> build-dataset
//            -> train / evaluate -> cross-bin / feature-study -> report

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "latentid/accumulation.hpp"
#include "latentid/dataset.hpp"
#include "latentid/experiments.hpp"
#include "latentid/extractor.hpp"
#include "latentid/models.hpp"
#include "latentid/simulator.hpp"
#include "latentid/trace.hpp"

namespace fs = std::filesystem;
using namespace latentid;

namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& tok : split_csv_line(s))
        if (!tok.empty()) out.push_back(static_cast<std::size_t>(std::strtoull(tok.c_str(), nullptr, 10)));
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : split_csv_line(s))
        if (!tok.empty()) out.push_back(parse_double(tok));
    return out;
}

std::array<double, 2> edges_from_flags(const std::string& edges_flag, const std::string& fit_path) {
    if (!edges_flag.empty()) {
        const auto vals = parse_double_list(edges_flag);
        if (vals.size() != 2 || !(vals[0] < vals[1]))
            throw ParamError("cli: --edges expects two increasing values 'e1,e2'");
        return {vals[0], vals[1]};
    }
    if (!fit_path.empty()) {
        std::ifstream in(fit_path);
        if (!in)
            throw IoError("cli: cannot open fit file '" + fit_path + "'");
        nlohmann::json j;
        in >> j;
        if (!j.contains("edges"))
            throw IoError("cli: fit file has no 'edges' field");
        return {j["edges"][0].get<double>(), j["edges"][1].get<double>()};
    }
    throw ParamError("cli: provide --edges e1,e2 or --fit fit.json");
}

WeightFunction weight_from_flags(const std::string& family, double sigma, double alpha, double beta) {
    if (family == "bell") return WeightFunction::bell(sigma);
    if (family == "gamma") return WeightFunction::gamma(alpha, beta);
    throw ParamError("cli: --family must be 'bell' or 'gamma'");
}

/// Aligns a scored CSV with its pairs CSV (same run of `score`): row counts
/// and per-row device/kind must agree.
void check_aligned(const std::vector<ProbeResponsePair>& pairs, const std::vector<ScoredRow>& scored) {
    if (pairs.size() != scored.size())
        throw InvariantError("cli: pairs and scored files have different row counts");
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (pairs[i].device_id != scored[i].device_id || pairs[i].probe_kind != scored[i].probe_kind)
            throw InvariantError("cli: pairs/scored row " + std::to_string(i + 1) +
                                 " mismatch; the files come from different runs");
}

struct GlobalOpts {
    std::uint64_t seed = 42;
    int jobs = 1;
    double scale = 1.0;
    bool seed_set = false;
};

struct ModelFlags {
    std::string kind = "gbdt";
    int max_depth = 8;
    int min_leaf = 5;
    int n_trees = 0;
    double learning_rate = 0.1;
    int bins = 255;
    int feature_subsample = 0;
    std::string subset;

    TrainParams params(const GlobalOpts& g) const {
        TrainParams p;
        p.max_depth = max_depth;
        p.min_samples_leaf = min_leaf;
        p.n_trees = n_trees;
        p.learning_rate = learning_rate;
        p.histogram_bins = bins;
        p.feature_subsample = feature_subsample;
        if (!subset.empty()) p.feature_mask = parse_subset(subset).columns;
        p.seed = g.seed;
        p.jobs = g.jobs;
        return p;
    }
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf, bool with_kind = true) {
    if (with_kind)
        cmd->add_option("--kind", mf.kind, "Model kind: dt|rf|gbdt")->default_val(mf.kind);
    cmd->add_option("--max-depth", mf.max_depth, "Tree depth limit");
    cmd->add_option("--min-leaf", mf.min_leaf, "Minimum samples per leaf");
    cmd->add_option("--trees", mf.n_trees, "Trees (RF) / boosting rounds (GBDT); 0 = default");
    cmd->add_option("--learning-rate", mf.learning_rate, "GBDT shrinkage");
    cmd->add_option("--bins", mf.bins, "GBDT histogram bins");
    cmd->add_option("--feature-subsample", mf.feature_subsample, "RF features per split; 0 = sqrt(d)");
    cmd->add_option("--subset", mf.subset, "Restrict training to these feature columns");
}

int run(int argc, char** argv) {
    CLI::App app{"latentid: device fingerprinting from probe-response latency"};
    app.require_subcommand(1);
    GlobalOpts g;
    app.add_option("--seed", g.seed, "Pipeline seed")->each([&](const std::string&) { g.seed_set = true; });
    app.add_option("--jobs", g.jobs, "Worker threads for parallel stages");
    app.add_option("--scale", g.scale, "Scales experiment sample sizes");

    // --- simulate ---
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic trace with ground truth");
    std::string sim_config, sim_out, sim_truth;
    sim->add_option("--config", sim_config, "SimConfig JSON (defaults used when omitted)");
    sim->add_option("--out", sim_out, "Trace output (.jsonl)")->required();
    sim->add_option("--truth", sim_truth, "Ground-truth output (.json)");

    // --- extract ---
    auto* ext = app.add_subcommand("extract", "Match probes to responses and emit pairs CSV");
    std::string ext_trace, ext_out;
    std::int64_t ext_timeout_ms = 1000;
    ext->add_option("--trace", ext_trace)->required();
    ext->add_option("--out", ext_out)->required();
    ext->add_option("--timeout-ms", ext_timeout_ms, "Probe-response match timeout");

    // --- score ---
    auto* sc = app.add_subcommand("score", "Compute accumulation scores for extracted pairs");
    std::string sc_trace, sc_pairs, sc_out, sc_family = "bell";
    double sc_sigma = 1.0, sc_alpha = 2.0, sc_beta = 1.0, sc_window = -1.0;
    sc->add_option("--trace", sc_trace)->required();
    sc->add_option("--pairs", sc_pairs)->required();
    sc->add_option("--out", sc_out)->required();
    sc->add_option("--family", sc_family, "bell|gamma");
    sc->add_option("--sigma", sc_sigma, "Bell sigma (ms)");
    sc->add_option("--alpha", sc_alpha, "Gamma shape");
    sc->add_option("--beta", sc_beta, "Gamma scale (ms)");
    sc->add_option("--window-ms", sc_window, "Successor window; default 3x curve stddev");

    // --- fit-weights ---
    auto* fw = app.add_subcommand("fit-weights", "Grid-search weight parameters per probe kind");
    std::string fw_trace, fw_pairs, fw_out, fw_family = "bell";
    std::string fw_sigmas, fw_alphas, fw_betas;
    fw->add_option("--trace", fw_trace)->required();
    fw->add_option("--pairs", fw_pairs)->required();
    fw->add_option("--out", fw_out, "Fit summary CSV")->required();
    fw->add_option("--family", fw_family, "bell|gamma");
    fw->add_option("--sigmas", fw_sigmas, "Comma list overriding the sigma grid");
    fw->add_option("--alphas", fw_alphas, "Comma list overriding the alpha grid");
    fw->add_option("--betas", fw_betas, "Comma list overriding the beta grid");

    // --- fit-cu ---
    auto* fc = app.add_subcommand("fit-cu", "Exponential score~CU regression and bin edges");
    std::string fc_trace, fc_pairs, fc_scored, fc_out;
    std::string fc_breaks = "0.333333,0.666667";
    fc->add_option("--trace", fc_trace)->required();
    fc->add_option("--pairs", fc_pairs)->required();
    fc->add_option("--scored", fc_scored)->required();
    fc->add_option("--out", fc_out, "Fit JSON output")->required();
    fc->add_option("--cu-breaks", fc_breaks, "CU break points for the score bins");

    // --- build-dataset ---
    auto* bd = app.add_subcommand("build-dataset", "Assemble feature rows from scored rounds");
    std::string bd_pairs, bd_scored, bd_out, bd_edges, bd_fit;
    double bd_period = 1.0;
    bool bd_balance = false;
    bd->add_option("--pairs", bd_pairs)->required();
    bd->add_option("--scored", bd_scored)->required();
    bd->add_option("--out", bd_out)->required();
    bd->add_option("--period", bd_period, "Probe period (s) for round grouping");
    bd->add_flag("--balance", bd_balance, "Stratified-balance device x score-bin cells");
    bd->add_option("--edges", bd_edges, "Score bin edges 'e1,e2' (with --balance)");
    bd->add_option("--fit", bd_fit, "fit-cu JSON supplying the edges (with --balance)");

    // --- train ---
    auto* tr = app.add_subcommand("train", "Train a classifier on a dataset CSV");
    std::string tr_dataset, tr_out, tr_metrics;
    double tr_test_fraction = 0.0;
    ModelFlags tr_flags;
    tr->add_option("--dataset", tr_dataset)->required();
    tr->add_option("--out", tr_out, "Model JSON output")->required();
    tr->add_option("--metrics", tr_metrics, "Metrics JSON (requires --test-fraction > 0)");
    tr->add_option("--test-fraction", tr_test_fraction, "Hold out a test split and report metrics");
    add_model_flags(tr, tr_flags);

    // --- evaluate ---
    auto* ev = app.add_subcommand("evaluate", "Evaluate a model on a dataset CSV");
    std::string ev_model, ev_dataset, ev_out;
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--dataset", ev_dataset)->required();
    ev->add_option("--out", ev_out, "Metrics JSON output");

    // --- cross-bin ---
    auto* cb = app.add_subcommand("cross-bin", "Train per score bin, test across bins");
    std::string cb_dataset, cb_out, cb_edges, cb_fit, cb_sizes;
    std::size_t cb_test_size = 1000;
    ModelFlags cb_flags;
    cb->add_option("--dataset", cb_dataset)->required();
    cb->add_option("--out", cb_out, "Report CSV output")->required();
    cb->add_option("--edges", cb_edges, "Score bin edges 'e1,e2'");
    cb->add_option("--fit", cb_fit, "fit-cu JSON supplying the edges");
    cb->add_option("--sizes", cb_sizes, "Training sizes (default 1000..11000 step 1000)");
    cb->add_option("--test-size", cb_test_size, "Held-out test rows per bin");
    add_model_flags(cb, cb_flags);

    // --- feature-study ---
    auto* fst = app.add_subcommand("feature-study", "Macro-F1 across feature subsets and sizes");
    std::string fst_dataset, fst_out, fst_subsets = "all;latencies", fst_sizes = "250,500,1000,2000";
    int fst_iterations = 30;
    double fst_test_fraction = 0.2;
    ModelFlags fst_flags;
    fst->add_option("--dataset", fst_dataset)->required();
    fst->add_option("--out", fst_out, "Report CSV output")->required();
    fst->add_option("--subsets", fst_subsets, "';'-separated subsets (all|latencies|scores|cols)");
    fst->add_option("--sizes", fst_sizes, "Comma list of sample sizes");
    fst->add_option("--iterations", fst_iterations, "Seeded iterations per cell");
    fst->add_option("--test-fraction", fst_test_fraction);
    add_model_flags(fst, fst_flags);

    // --- report ---
    auto* rp = app.add_subcommand("report", "Merge pipeline outputs into per-figure CSVs");
    std::string rp_trace, rp_pairs, rp_scored, rp_edges, rp_fit, rp_cross, rp_outdir = ".";
    std::vector<std::string> rp_studies;
    rp->add_option("--trace", rp_trace, "Trace (with --pairs/--scored: fig6 + fig8)");
    rp->add_option("--pairs", rp_pairs);
    rp->add_option("--scored", rp_scored);
    rp->add_option("--edges", rp_edges, "Score bin edges for fig8");
    rp->add_option("--fit", rp_fit, "fit-cu JSON supplying the edges");
    rp->add_option("--cross-bin", rp_cross, "cross-bin report CSV (fig10)");
    rp->add_option("--feature-study", rp_studies, "feature-study report CSVs (fig11-13)");
    rp->add_option("--out-dir", rp_outdir, "Directory for figN.csv files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*sim) {
            SimConfig cfg = sim_config.empty() ? SimConfig::defaults() : load_sim_config(sim_config);
            if (sim_config.empty()) cfg.target_cu = {{cfg.duration_s, 0.3}};
            if (g.seed_set) cfg.seed = g.seed;
            const SimResult result = simulate(cfg);
            write_trace(result.trace, sim_out);
            if (!sim_truth.empty()) write_ground_truth(result.truth, sim_truth);
            std::cerr << "latentid: simulate: " << result.trace.records.size() << " records, "
                      << result.truth.pairs.size() << " true pairs, mean CU "
                      << fmt_double(result.truth.realized_cu.mean()) << "\n";
        } else if (*ext) {
            const Trace trace = read_trace(ext_trace);
            const PairingResult pr = pair_probes(trace, ext_timeout_ms);
            write_pairs_csv(pr.pairs, ext_out);
            std::cerr << "latentid: extract: " << pr.pairs.size() << " pairs, "
                      << pr.unmatched_probes.size() << " unmatched probes\n";
        } else if (*sc) {
            const Trace trace = read_trace(sc_trace);
            const auto pairs = read_pairs_csv(sc_pairs);
            const WeightFunction w = weight_from_flags(sc_family, sc_sigma, sc_alpha, sc_beta);
            w.validate();
            const double window = sc_window >= 0.0 ? sc_window : default_successor_window_ms(w);
            const std::int64_t max_dur = max_frame_duration_us(trace);
            std::vector<ScoredPair> scored(pairs.size());
            parallel_for(pairs.size(), g.jobs, [&](std::size_t i) {
                const auto ctx = collect_context(trace, pairs[i], window, max_dur);
                scored[i] = {accumulation_score(ctx, w), ctx.n(), w.family};
            });
            write_scored_csv(pairs, scored, sc_out);
            std::cerr << "latentid: score: " << scored.size() << " pairs scored (family "
                      << sc_family << ")\n";
        } else if (*fw) {
            const Trace trace = read_trace(fw_trace);
            const auto pairs = read_pairs_csv(fw_pairs);
            const WeightFamily family =
                fw_family == "gamma" ? WeightFamily::gamma : WeightFamily::bell;
            if (fw_family != "bell" && fw_family != "gamma")
                throw ParamError("cli: --family must be 'bell' or 'gamma'");
            WeightGrid grid =
                family == WeightFamily::bell ? WeightGrid::default_bell() : WeightGrid::default_gamma();
            if (!fw_sigmas.empty()) grid.sigmas = parse_double_list(fw_sigmas);
            if (!fw_alphas.empty()) grid.alphas = parse_double_list(fw_alphas);
            if (!fw_betas.empty()) grid.betas = parse_double_list(fw_betas);

            std::ofstream out(fw_out, std::ios::binary);
            if (!out)
                throw IoError("cli: cannot open '" + fw_out + "' for writing");
            out << "family,probe_kind,sigma_ms,alpha,beta_ms,r,samples\n";
            auto emit = [&](const std::string& kind_name,
                            const std::vector<ProbeResponsePair>& subset) {
                const WeightFit fit = fit_weight_params(trace, subset, family, grid, g.jobs);
                out << to_string(family) << ',' << kind_name << ','
                    << fmt_double(family == WeightFamily::bell ? fit.params.sigma_ms : 0.0) << ','
                    << fmt_double(family == WeightFamily::gamma ? fit.params.alpha : 0.0) << ','
                    << fmt_double(family == WeightFamily::gamma ? fit.params.beta_ms : 0.0) << ','
                    << fmt_double(fit.r) << ',' << subset.size() << '\n';
                std::cerr << "latentid: fit-weights: " << kind_name << " r=" << fmt_double(fit.r)
                          << "\n";
            };
            for (PacketKind kind : kProbeKinds) {
                std::vector<ProbeResponsePair> subset;
                for (const auto& p : pairs)
                    if (p.probe_kind == kind) subset.push_back(p);
                if (subset.size() >= 2) emit(to_string(kind), subset);
            }
            emit("all", pairs);
        } else if (*fc) {
            const Trace trace = read_trace(fc_trace);
            const auto pairs = read_pairs_csv(fc_pairs);
            const auto scored = read_scored_csv(fc_scored);
            check_aligned(pairs, scored);
            const CuSeries cu = compute_cu_series(trace, 10000);
            std::vector<double> scores, cus;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                const std::size_t w = static_cast<std::size_t>(pairs[i].t6_us / cu.window_us);
                if (w >= cu.values.size()) continue;
                scores.push_back(scored[i].score);
                cus.push_back(cu.values[w]);
            }
            const ExpFit efit = fit_exponential_cu(scores, cus);
            const LinFit lfit = fit_linear(cus, scores);
            const double lin_log_rss = linear_fit_log_rss(lfit, scores, cus);
            const auto breaks = parse_double_list(fc_breaks);
            if (breaks.size() != 2)
                throw ParamError("cli: --cu-breaks expects two values");
            const auto edges = bin_edges(efit, {breaks[0], breaks[1]});
            nlohmann::ordered_json j;
            j["format"] = "latentid-cufit";
            j["version"] = 1;
            j["a"] = efit.a;
            j["b"] = efit.b;
            j["rss"] = efit.rss;
            j["linear"] = {{"c", lfit.c}, {"d", lfit.d}, {"rss_raw", lfit.rss}, {"rss_log", lin_log_rss}};
            j["cu_breaks"] = breaks;
            j["edges"] = {edges[0], edges[1]};
            j["samples"] = scores.size();
            std::ofstream out(fc_out, std::ios::binary);
            if (!out)
                throw IoError("cli: cannot open '" + fc_out + "' for writing");
            out << j.dump(2) << '\n';
            std::cerr << "latentid: fit-cu: a=" << fmt_double(efit.a) << " b=" << fmt_double(efit.b)
                      << " rss=" << fmt_double(efit.rss) << " edges=[" << fmt_double(edges[0]) << ","
                      << fmt_double(edges[1]) << "]\n";
        } else if (*bd) {
            const auto pairs = read_pairs_csv(bd_pairs);
            const auto scored = read_scored_csv(bd_scored);
            check_aligned(pairs, scored);
            std::unordered_map<std::size_t, double> score_by_probe;
            for (std::size_t i = 0; i < pairs.size(); ++i)
                score_by_probe[pairs[i].probe_index] = scored[i].score;
            const RoundGrouping grouping = group_rounds(pairs, bd_period);
            Dataset ds = build_feature_rows(grouping.rounds, score_by_probe);
            if (bd_balance) {
                const auto edges = edges_from_flags(bd_edges, bd_fit);
                ds = stratified_balance(ds, edges, g.seed);
            }
            write_dataset_csv(ds, bd_out);
            std::cerr << "latentid: build-dataset: " << ds.rows.size() << " rows ("
                      << grouping.dropped_windows << " windows dropped)\n";
        } else if (*tr) {
            const Dataset ds = read_dataset_csv(tr_dataset);
            const ModelKind kind = model_kind_from_string(tr_flags.kind);
            const TrainParams params = tr_flags.params(g);
            if (tr_test_fraction > 0.0) {
                auto [train_set, test_set] = split(ds, tr_test_fraction, derive_seed(g.seed, 11));
                const Model model = train(kind, train_set, params);
                write_model_json(model, tr_out);
                const Metrics metrics = evaluate(model, test_set);
                if (!tr_metrics.empty()) {
                    std::ofstream mo(tr_metrics, std::ios::binary);
                    if (!mo)
                        throw IoError("cli: cannot open '" + tr_metrics + "' for writing");
                    mo << metrics_to_json(metrics).dump(2) << '\n';
                }
                std::cout << "macro_f1=" << fmt_double(metrics.macro_f1) << "\n";
            } else {
                const Model model = train(kind, ds, params);
                write_model_json(model, tr_out);
                std::cerr << "latentid: train: " << to_string(kind) << " on " << ds.rows.size()
                          << " rows in " << fmt_double(model.train_duration_s) << " s\n";
            }
        } else if (*ev) {
            const Model model = read_model_json(ev_model);
            const Dataset ds = read_dataset_csv(ev_dataset);
            const Metrics metrics = evaluate(model, ds);
            if (!ev_out.empty()) {
                std::ofstream out(ev_out, std::ios::binary);
                if (!out)
                    throw IoError("cli: cannot open '" + ev_out + "' for writing");
                out << metrics_to_json(metrics).dump(2) << '\n';
            }
            std::cout << "macro_f1=" << fmt_double(metrics.macro_f1) << "\n";
        } else if (*cb) {
            const Dataset ds = read_dataset_csv(cb_dataset);
            CrossBinOptions opt;
            opt.kind = model_kind_from_string(cb_flags.kind);
            opt.params = cb_flags.params(g);
            opt.seed = g.seed;
            opt.jobs = g.jobs;
            opt.scale = g.scale;
            opt.test_size = cb_test_size;
            if (!cb_sizes.empty()) opt.train_sizes = parse_size_list(cb_sizes);
            const auto edges = edges_from_flags(cb_edges, cb_fit);
            const auto rows = cross_bin_experiment(ds, edges, opt);
            write_report_csv(rows, cb_out);
            std::cerr << "latentid: cross-bin: " << rows.size() << " report rows\n";
        } else if (*fst) {
            const Dataset ds = read_dataset_csv(fst_dataset);
            FeatureStudyOptions opt;
            opt.kind = model_kind_from_string(fst_flags.kind);
            opt.params = fst_flags.params(g);
            opt.seed = g.seed;
            opt.jobs = g.jobs;
            opt.iterations = fst_iterations;
            opt.test_fraction = fst_test_fraction;
            for (auto size : parse_size_list(fst_sizes))
                opt.sizes.push_back(std::max<std::size_t>(
                    10, static_cast<std::size_t>(std::llround(static_cast<double>(size) * g.scale))));
            std::string tok;
            for (char ch : fst_subsets + ";") {
                if (ch == ';') {
                    if (!tok.empty()) opt.subsets.push_back(parse_subset(tok));
                    tok.clear();
                } else {
                    tok.push_back(ch);
                }
            }
            const auto rows = feature_subset_experiment(ds, opt);
            write_report_csv(rows, fst_out);
            std::cerr << "latentid: feature-study: " << rows.size() << " report rows\n";
        } else if (*rp) {
            fs::create_directories(rp_outdir);
            const fs::path dir(rp_outdir);
            if (!rp_trace.empty() || !rp_pairs.empty() || !rp_scored.empty()) {
                if (rp_trace.empty() || rp_pairs.empty() || rp_scored.empty())
                    throw ParamError("cli: fig6/fig8 need --trace, --pairs and --scored together");
                const Trace trace = read_trace(rp_trace);
                const auto pairs = read_pairs_csv(rp_pairs);
                const auto scored = read_scored_csv(rp_scored);
                check_aligned(pairs, scored);
                const CuSeries cu = compute_cu_series(trace, 10000);

                // fig6: score stats per CU range and probe kind
                std::map<std::pair<int, std::string>, std::vector<double>> by_range_kind;
                for (std::size_t i = 0; i < pairs.size(); ++i) {
                    const std::size_t w = static_cast<std::size_t>(pairs[i].t6_us / cu.window_us);
                    if (w >= cu.values.size()) continue;
                    int range = static_cast<int>(cu.values[w] * 5.0);
                    range = std::clamp(range, 0, 4);
                    by_range_kind[{range, to_string(pairs[i].probe_kind)}].push_back(scored[i].score);
                }
                std::ofstream f6(dir / "fig6.csv", std::ios::binary);
                f6 << "cu_range,probe_kind,count,score_min,score_median,score_max\n";
                static const char* kRangeNames[] = {"0-20", "20-40", "40-60", "60-80", "80-100"};
                for (const auto& [key, vals] : by_range_kind) {
                    const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
                    f6 << kRangeNames[key.first] << ',' << key.second << ',' << vals.size() << ','
                       << fmt_double(*lo) << ',' << fmt_double(median_of(vals)) << ','
                       << fmt_double(*hi) << '\n';
                }

                // fig8: latency distribution per score bin
                const auto edges = edges_from_flags(rp_edges, rp_fit);
                std::array<std::vector<double>, 3> lat_by_bin;
                for (std::size_t i = 0; i < scored.size(); ++i)
                    lat_by_bin[static_cast<std::size_t>(bin_index(scored[i].score, edges))].push_back(
                        scored[i].latency_ms);
                std::ofstream f8(dir / "fig8.csv", std::ios::binary);
                f8 << "score_bin,count,latency_min_ms,latency_median_ms,latency_max_ms\n";
                for (int b = 0; b < 3; ++b) {
                    const auto& vals = lat_by_bin[static_cast<std::size_t>(b)];
                    if (vals.empty()) {
                        f8 << b << ",0,,,\n";
                        continue;
                    }
                    const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
                    f8 << b << ',' << vals.size() << ',' << fmt_double(*lo) << ','
                       << fmt_double(median_of(vals)) << ',' << fmt_double(*hi) << '\n';
                }
            }
            if (!rp_cross.empty()) {
                const auto rows = read_report_csv(rp_cross);
                std::ofstream f10(dir / "fig10.csv", std::ios::binary);
                f10 << "kind,train_bin,test_bin,size,f1\n";
                for (const auto& r : rows) {
                    if (r.experiment != "cross_bin") continue;
                    const auto semi = r.subset.find(";test:");
                    if (semi == std::string::npos || r.subset.rfind("train:", 0) != 0) continue;
                    f10 << r.kind << ',' << r.subset.substr(6, semi - 6) << ','
                        << r.subset.substr(semi + 6) << ',' << r.size << ',' << fmt_double(r.f1)
                        << '\n';
                }
            }
            if (!rp_studies.empty()) {
                std::vector<ReportRow> all;
                for (const auto& f : rp_studies)
                    for (auto& r : read_report_csv(f))
                        if (r.experiment == "feature_study") all.push_back(std::move(r));
                std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<double>> f1s;
                std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<double>> trains;
                std::map<std::tuple<std::string, std::string, std::size_t>, std::vector<double>> infers;
                for (const auto& r : all) {
                    const auto key = std::make_tuple(r.kind, r.subset, r.size);
                    f1s[key].push_back(r.f1);
                    trains[key].push_back(r.train_s);
                    infers[key].push_back(r.infer_s);
                }
                std::ofstream f11(dir / "fig11.csv", std::ios::binary);
                f11 << "kind,subset,size,iterations,f1_mean,f1_std\n";
                for (const auto& [key, vals] : f1s) {
                    const MeanStd ms = mean_std(vals);
                    f11 << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key)
                        << ',' << ms.count << ',' << fmt_double(ms.mean) << ','
                        << fmt_double(ms.stddev) << '\n';
                }
                // fig12: the latency-only vs full-vector comparison
                std::ofstream f12(dir / "fig12.csv", std::ios::binary);
                f12 << "kind,subset,size,iterations,f1_mean,f1_std\n";
                for (const auto& [key, vals] : f1s) {
                    if (std::get<1>(key) != "latencies" && std::get<1>(key) != "all") continue;
                    const MeanStd ms = mean_std(vals);
                    f12 << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key)
                        << ',' << ms.count << ',' << fmt_double(ms.mean) << ','
                        << fmt_double(ms.stddev) << '\n';
                }
                // fig13: per-kind summary at the largest size over full features
                std::map<std::string, std::size_t> max_size;
                for (const auto& [key, vals] : f1s)
                    if (std::get<1>(key) == "all")
                        max_size[std::get<0>(key)] = std::max(max_size[std::get<0>(key)], std::get<2>(key));
                std::ofstream f13(dir / "fig13.csv", std::ios::binary);
                f13 << "kind,size,iterations,f1_mean,f1_std,train_s_mean,infer_s_mean\n";
                for (const auto& [kind, size] : max_size) {
                    const auto key = std::make_tuple(kind, std::string("all"), size);
                    const MeanStd f1 = mean_std(f1s[key]);
                    const MeanStd ts = mean_std(trains[key]);
                    const MeanStd is = mean_std(infers[key]);
                    f13 << kind << ',' << size << ',' << f1.count << ',' << fmt_double(f1.mean)
                        << ',' << fmt_double(f1.stddev) << ',' << fmt_double(ts.mean) << ','
                        << fmt_double(is.mean) << '\n';
                }
            }
            std::cerr << "latentid: report: figure data written to " << dir.string() << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "latentid: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "latentid: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) { return run(argc, argv); }
