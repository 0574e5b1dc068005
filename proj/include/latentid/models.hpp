#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "latentid/dataset.hpp"
#include "latentid/errors.hpp"
#include "latentid/util.hpp"

namespace latentid {

enum class ModelKind { dt, rf, gbdt };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::dt: return "dt";
        case ModelKind::rf: return "rf";
        case ModelKind::gbdt: return "gbdt";
    }
    return "dt";
}

inline ModelKind model_kind_from_string(std::string_view s) {
    if (s == "dt") return ModelKind::dt;
    if (s == "rf") return ModelKind::rf;
    if (s == "gbdt") return ModelKind::gbdt;
    throw ParamError("models: unknown model kind '" + std::string(s) + "'");
}

struct TrainParams {
    int max_depth = 8;
    int min_samples_leaf = 5;
    int n_trees = 0;            // 0 = kind default (RF 100, GBDT 200 rounds)
    double learning_rate = 0.1; // gbdt
    int histogram_bins = 255;   // gbdt
    int feature_subsample = 0;  // rf per-split feature count; 0 = round(sqrt(d))
    std::vector<std::size_t> feature_mask; // columns the trees may split on; empty = all
    std::uint64_t seed = 42;
    int jobs = 1;
};

struct TreeNode {
    int feature = -1;      // -1 = leaf
    double threshold = 0.0; // x[feature] < threshold goes left
    int left = -1;
    int right = -1;
    std::vector<double> leaf; // dt/rf: class counts; gbdt: single regression value
};

struct Tree {
    std::vector<TreeNode> nodes; // nodes[0] is the root
    int class_index = -1;        // gbdt one-vs-all target class
};

struct Model {
    ModelKind kind = ModelKind::dt;
    std::vector<std::string> classes;
    std::vector<Tree> trees;
    double learning_rate = 1.0;
    std::size_t n_features = kFeatureCount;
    std::vector<std::size_t> feature_mask;
    bool degenerate = false;       // no usable split existed at the root
    double train_duration_s = 0.0; // wall clock; never serialized
};

namespace detail {

inline void validate_params(const TrainParams& p) {
    if (p.max_depth <= 0)
        throw ParamError("models: max_depth must be positive");
    if (p.min_samples_leaf <= 0)
        throw ParamError("models: min_samples_leaf must be positive");
    if (p.n_trees < 0)
        throw ParamError("models: n_trees must be positive");
    if (!(p.learning_rate > 0.0) || p.learning_rate > 1.0)
        throw ParamError("models: learning_rate must lie in (0, 1]");
    if (p.histogram_bins < 2 || p.histogram_bins > 255)
        throw ParamError("models: histogram_bins must lie in [2, 255]");
    for (std::size_t c : p.feature_mask)
        if (c >= kFeatureCount)
            throw ParamError("models: feature_mask column out of range");
}

inline std::vector<std::size_t> effective_mask(const TrainParams& p) {
    if (!p.feature_mask.empty()) {
        auto m = p.feature_mask;
        std::sort(m.begin(), m.end());
        m.erase(std::unique(m.begin(), m.end()), m.end());
        return m;
    }
    std::vector<std::size_t> m(kFeatureCount);
    for (std::size_t i = 0; i < kFeatureCount; ++i) m[i] = i;
    return m;
}

// --- CART builder (shared by DT and RF) ------------------------------------

struct CartContext {
    const std::vector<std::array<double, kFeatureCount>>& X;
    const std::vector<std::size_t>& y;
    std::size_t n_classes;
    int max_depth;
    std::size_t min_leaf;
    const std::vector<std::size_t>& features;
    int mtry; // 0 = consider every allowed feature; else sample mtry per node
    Rng* rng; // only for mtry > 0
};

/// Best binary split of `idx` by exhaustive threshold scan. Maximizing
/// sum(counts^2)/n over both children is equivalent to minimizing weighted
/// Gini impurity; ties resolve to the lowest feature, then lowest threshold,
/// because candidates are scanned in ascending order and replaced only on
/// strict improvement.
struct CartSplit {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double score = 0.0; // sum over children of sum(counts^2)/child_n
};

inline CartSplit best_cart_split(const CartContext& c, const std::vector<std::size_t>& idx,
                                 const std::vector<double>& counts) {
    const std::size_t n = idx.size();
    double parent_score = 0.0;
    for (double v : counts) parent_score += v * v;
    parent_score /= static_cast<double>(n);

    std::vector<std::size_t> candidates = c.features;
    if (c.mtry > 0 && static_cast<std::size_t>(c.mtry) < candidates.size()) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(c.mtry); ++i) {
            const std::size_t j = i + static_cast<std::size_t>(c.rng->uniform_int(
                                          0, static_cast<std::int64_t>(candidates.size() - i) - 1));
            std::swap(candidates[i], candidates[j]);
        }
        candidates.resize(static_cast<std::size_t>(c.mtry));
        std::sort(candidates.begin(), candidates.end());
    }

    CartSplit best;
    best.score = parent_score;
    std::vector<std::pair<double, std::size_t>> vals(n); // (value, class)
    std::vector<double> left(c.n_classes);
    for (std::size_t f : candidates) {
        for (std::size_t i = 0; i < n; ++i)
            vals[i] = {c.X[idx[i]][f], c.y[idx[i]]};
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::fill(left.begin(), left.end(), 0.0);
        double sl2 = 0.0;             // sum of squared left counts
        double sr2 = 0.0;             // sum of squared right counts
        for (double v : counts) sr2 += v * v;
        std::vector<double> right = counts;
        for (std::size_t i = 1; i < n; ++i) {
            const std::size_t k = vals[i - 1].second;
            sl2 += 2.0 * left[k] + 1.0;
            sr2 += -2.0 * right[k] + 1.0;
            left[k] += 1.0;
            right[k] -= 1.0;
            if (vals[i].first == vals[i - 1].first) continue;
            const std::size_t nl = i;
            const std::size_t nr = n - i;
            if (nl < c.min_leaf || nr < c.min_leaf) continue;
            const double score = sl2 / static_cast<double>(nl) + sr2 / static_cast<double>(nr);
            if (score > best.score + 1e-12) {
                double thr = 0.5 * (vals[i - 1].first + vals[i].first);
                if (thr <= vals[i - 1].first) thr = vals[i].first; // float midpoint collapse
                best.found = true;
                best.feature = static_cast<int>(f);
                best.threshold = thr;
                best.score = score;
            }
        }
    }
    return best;
}

inline int build_cart_node(const CartContext& c, Tree& tree, std::vector<std::size_t>& idx, int depth) {
    std::vector<double> counts(c.n_classes, 0.0);
    for (std::size_t i : idx) counts[c.y[i]] += 1.0;
    const std::size_t n = idx.size();

    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    double max_count = 0.0;
    for (double v : counts) max_count = std::max(max_count, v);
    const bool pure = max_count == static_cast<double>(n);

    CartSplit split;
    if (!pure && depth < c.max_depth && n >= 2 * c.min_leaf)
        split = best_cart_split(c, idx, counts);

    if (!split.found) {
        tree.nodes[id].leaf = counts;
        return id;
    }

    tree.nodes[id].feature = split.feature;
    tree.nodes[id].threshold = split.threshold;
    std::vector<std::size_t> left_idx, right_idx;
    left_idx.reserve(n);
    right_idx.reserve(n);
    for (std::size_t i : idx)
        (c.X[i][static_cast<std::size_t>(split.feature)] < split.threshold ? left_idx : right_idx)
            .push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int l = build_cart_node(c, tree, left_idx, depth + 1);
    tree.nodes[id].left = l;
    const int r = build_cart_node(c, tree, right_idx, depth + 1);
    tree.nodes[id].right = r;
    return id;
}

inline const TreeNode& descend(const Tree& tree, std::span<const double> x) {
    const TreeNode* node = &tree.nodes.front();
    while (node->feature >= 0) {
        node = x[static_cast<std::size_t>(node->feature)] < node->threshold
                   ? &tree.nodes[static_cast<std::size_t>(node->left)]
                   : &tree.nodes[static_cast<std::size_t>(node->right)];
    }
    return *node;
}

// --- histogram GBDT ---------------------------------------------------------

struct FeatureBins {
    std::vector<double> uppers; // max raw value per bin
    std::vector<double> lowers; // min raw value per bin

    std::size_t count() const { return uppers.size(); }
    std::uint8_t bin_of(double v) const {
        const auto it = std::lower_bound(uppers.begin(), uppers.end(), v);
        const std::size_t j = it == uppers.end() ? uppers.size() - 1
                                                 : static_cast<std::size_t>(it - uppers.begin());
        return static_cast<std::uint8_t>(j);
    }
    /// Raw threshold separating bins <= j from bins > j (midpoint between
    /// the neighbouring observed values, as in the exact CART scan).
    double threshold_after(std::size_t j) const {
        double thr = 0.5 * (uppers[j] + lowers[j + 1]);
        if (thr <= uppers[j]) thr = lowers[j + 1];
        return thr;
    }
};

inline FeatureBins build_bins(std::vector<double> values, int max_bins) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    FeatureBins bins;
    const std::size_t n = values.size();
    if (n <= static_cast<std::size_t>(max_bins)) {
        bins.uppers = values;
        bins.lowers = values;
        return bins;
    }
    // equal-frequency over distinct values
    for (int b = 0; b < max_bins; ++b) {
        const std::size_t lo = n * static_cast<std::size_t>(b) / static_cast<std::size_t>(max_bins);
        const std::size_t hi =
            n * static_cast<std::size_t>(b + 1) / static_cast<std::size_t>(max_bins) - 1;
        bins.lowers.push_back(values[lo]);
        bins.uppers.push_back(values[hi]);
    }
    return bins;
}

inline constexpr double kGbdtLambda = 1e-3; // L2 on leaf values
inline constexpr double kMinGain = 1e-12;

struct GbdtContext {
    const std::vector<std::vector<std::uint8_t>>& binned; // [feature][row]
    const std::vector<FeatureBins>& bins;                 // [feature]
    const std::vector<std::size_t>& features;
    const std::vector<double>& grad;
    const std::vector<double>& hess;
    int max_depth;
    std::size_t min_leaf;
};

inline int build_gbdt_node(const GbdtContext& c, Tree& tree, std::vector<std::size_t>& idx, int depth) {
    double G = 0.0, H = 0.0;
    for (std::size_t i : idx) {
        G += c.grad[i];
        H += c.hess[i];
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    const double parent_obj = G * G / (H + kGbdtLambda);
    bool found = false;
    int best_feature = -1;
    std::size_t best_bin = 0;
    double best_gain = 0.0;

    if (depth < c.max_depth && idx.size() >= 2 * c.min_leaf) {
        std::vector<double> hg, hh;
        std::vector<std::size_t> hc;
        for (std::size_t f : c.features) {
            const auto& col = c.binned[f];
            const std::size_t nb = c.bins[f].count();
            if (nb < 2) continue;
            hg.assign(nb, 0.0);
            hh.assign(nb, 0.0);
            hc.assign(nb, 0);
            for (std::size_t i : idx) {
                const std::uint8_t b = col[i];
                hg[b] += c.grad[i];
                hh[b] += c.hess[i];
                ++hc[b];
            }
            double gl = 0.0, hl = 0.0;
            std::size_t nl = 0;
            for (std::size_t b = 0; b + 1 < nb; ++b) {
                gl += hg[b];
                hl += hh[b];
                nl += hc[b];
                const std::size_t nr = idx.size() - nl;
                if (nl < c.min_leaf || nr < c.min_leaf) continue;
                const double gr = G - gl;
                const double hr = H - hl;
                const double gain =
                    gl * gl / (hl + kGbdtLambda) + gr * gr / (hr + kGbdtLambda) - parent_obj;
                if (gain > best_gain + kMinGain) {
                    found = true;
                    best_feature = static_cast<int>(f);
                    best_bin = b;
                    best_gain = gain;
                }
            }
        }
    }

    if (!found) {
        tree.nodes[id].leaf = {-G / (H + kGbdtLambda)};
        return id;
    }

    const std::size_t bf = static_cast<std::size_t>(best_feature);
    tree.nodes[id].feature = best_feature;
    tree.nodes[id].threshold = c.bins[bf].threshold_after(best_bin);
    std::vector<std::size_t> left_idx, right_idx;
    left_idx.reserve(idx.size());
    right_idx.reserve(idx.size());
    for (std::size_t i : idx)
        (c.binned[bf][i] <= best_bin ? left_idx : right_idx).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int l = build_gbdt_node(c, tree, left_idx, depth + 1);
    tree.nodes[id].left = l;
    const int r = build_gbdt_node(c, tree, right_idx, depth + 1);
    tree.nodes[id].right = r;
    return id;
}

struct Prepared {
    std::vector<std::array<double, kFeatureCount>> X;
    std::vector<std::size_t> y;
    std::vector<std::string> classes;
};

inline Prepared prepare(const Dataset& ds) {
    Prepared p;
    p.classes = ds.classes();
    if (p.classes.size() < 2)
        throw TooFewClasses("models: training needs at least 2 classes, got " +
                            std::to_string(p.classes.size()));
    std::unordered_map<std::string, std::size_t> class_of;
    for (std::size_t i = 0; i < p.classes.size(); ++i) class_of[p.classes[i]] = i;
    p.X.reserve(ds.rows.size());
    p.y.reserve(ds.rows.size());
    for (const auto& r : ds.rows) {
        p.X.push_back(r.x);
        p.y.push_back(class_of.at(r.label));
    }
    return p;
}

inline bool rows_identical(const Prepared& p, const std::vector<std::size_t>& mask) {
    for (std::size_t i = 1; i < p.X.size(); ++i)
        for (std::size_t f : mask)
            if (p.X[i][f] != p.X[0][f]) return false;
    return true;
}

} // namespace detail

inline Model train(ModelKind kind, const Dataset& train_set, const TrainParams& params = {}) {
    detail::validate_params(params);
    const auto t0 = std::chrono::steady_clock::now();
    auto prepared = detail::prepare(train_set);
    const auto mask = detail::effective_mask(params);
    const std::size_t n = prepared.X.size();

    Model model;
    model.kind = kind;
    model.classes = prepared.classes;
    model.n_features = kFeatureCount;
    model.feature_mask = mask;
    // all feature vectors identical with >1 class: no split can separate
    // them; train falls through to majority leaves and the model is flagged
    model.degenerate = detail::rows_identical(prepared, mask);

    if (kind == ModelKind::dt) {
        detail::CartContext ctx{prepared.X, prepared.y, prepared.classes.size(),
                                params.max_depth,   static_cast<std::size_t>(params.min_samples_leaf),
                                mask,               0,
                                nullptr};
        Tree tree;
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        detail::build_cart_node(ctx, tree, idx, 0);
        model.trees.push_back(std::move(tree));
    } else if (kind == ModelKind::rf) {
        const int n_trees = params.n_trees > 0 ? params.n_trees : 100;
        int mtry = params.feature_subsample;
        if (mtry <= 0)
            mtry = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(mask.size())))));
        mtry = std::min<int>(mtry, static_cast<int>(mask.size()));
        model.trees.resize(static_cast<std::size_t>(n_trees));
        parallel_for(static_cast<std::size_t>(n_trees), params.jobs, [&](std::size_t t) {
            Rng rng(derive_seed(params.seed, 1000 + t));
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i)
                idx[i] = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
            detail::CartContext ctx{prepared.X, prepared.y, prepared.classes.size(),
                                    params.max_depth,  static_cast<std::size_t>(params.min_samples_leaf),
                                    mask,              mtry,
                                    &rng};
            Tree tree;
            detail::build_cart_node(ctx, tree, idx, 0);
            model.trees[t] = std::move(tree);
        });
    } else {
        const int rounds = params.n_trees > 0 ? params.n_trees : 200;
        const std::size_t K = prepared.classes.size();
        model.learning_rate = params.learning_rate;

        std::vector<detail::FeatureBins> bins(kFeatureCount);
        std::vector<std::vector<std::uint8_t>> binned(kFeatureCount);
        for (std::size_t f : mask) {
            std::vector<double> col(n);
            for (std::size_t i = 0; i < n; ++i) col[i] = prepared.X[i][f];
            bins[f] = detail::build_bins(std::move(col), params.histogram_bins);
            binned[f].resize(n);
            for (std::size_t i = 0; i < n; ++i) binned[f][i] = bins[f].bin_of(prepared.X[i][f]);
        }

        std::vector<double> F(n * K, 0.0);
        std::vector<double> prob(n * K, 0.0);
        std::vector<std::vector<double>> grad(K, std::vector<double>(n));
        std::vector<std::vector<double>> hess(K, std::vector<double>(n));
        for (int round = 0; round < rounds; ++round) {
            for (std::size_t i = 0; i < n; ++i) {
                double m = F[i * K];
                for (std::size_t k = 1; k < K; ++k) m = std::max(m, F[i * K + k]);
                double z = 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    prob[i * K + k] = std::exp(F[i * K + k] - m);
                    z += prob[i * K + k];
                }
                for (std::size_t k = 0; k < K; ++k) {
                    const double p = prob[i * K + k] / z;
                    grad[k][i] = p - (prepared.y[i] == k ? 1.0 : 0.0);
                    hess[k][i] = std::max(p * (1.0 - p), 1e-12);
                }
            }
            std::vector<Tree> round_trees(K);
            parallel_for(K, params.jobs, [&](std::size_t k) {
                detail::GbdtContext ctx{binned,
                                        bins,
                                        mask,
                                        grad[k],
                                        hess[k],
                                        params.max_depth,
                                        static_cast<std::size_t>(params.min_samples_leaf)};
                std::vector<std::size_t> idx(n);
                for (std::size_t i = 0; i < n; ++i) idx[i] = i;
                Tree tree;
                tree.class_index = static_cast<int>(k);
                detail::build_gbdt_node(ctx, tree, idx, 0);
                round_trees[k] = std::move(tree);
            });
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t i = 0; i < n; ++i) {
                    const auto& leaf = detail::descend(round_trees[k], prepared.X[i]);
                    F[i * K + k] += params.learning_rate * leaf.leaf[0];
                }
                model.trees.push_back(std::move(round_trees[k]));
            }
        }
    }

    model.train_duration_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return model;
}

inline std::size_t predict_index(const Model& model, std::span<const double> row) {
    if (row.size() != model.n_features)
        throw ShapeError("models: expected " + std::to_string(model.n_features) +
                         " features, got " + std::to_string(row.size()));
    const std::size_t K = model.classes.size();
    if (model.kind == ModelKind::dt) {
        const auto& leaf = detail::descend(model.trees.front(), row).leaf;
        return static_cast<std::size_t>(
            std::max_element(leaf.begin(), leaf.end()) - leaf.begin()); // first max: lower index
    }
    if (model.kind == ModelKind::rf) {
        std::vector<std::size_t> votes(K, 0);
        for (const auto& tree : model.trees) {
            const auto& leaf = detail::descend(tree, row).leaf;
            ++votes[static_cast<std::size_t>(std::max_element(leaf.begin(), leaf.end()) -
                                             leaf.begin())];
        }
        return static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
    std::vector<double> scores(K, 0.0);
    for (const auto& tree : model.trees)
        scores[static_cast<std::size_t>(tree.class_index)] +=
            model.learning_rate * detail::descend(tree, row).leaf[0];
    return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

inline std::string predict(const Model& model, std::span<const double> row) {
    return model.classes[predict_index(model, row)];
}

struct Metrics {
    double macro_f1 = 0.0;
    std::vector<std::string> classes;
    std::vector<double> precision, recall, f1;
    std::vector<std::vector<std::size_t>> confusion; // [true][predicted]
    double train_duration_s = 0.0;
    double mean_inference_s = 0.0;
};

inline Metrics evaluate(const Model& model, const Dataset& test_set) {
    if (test_set.rows.empty())
        throw EmptyTestSet("models: test set is empty");
    std::unordered_map<std::string, std::size_t> class_of;
    for (std::size_t i = 0; i < model.classes.size(); ++i) class_of[model.classes[i]] = i;
    const std::size_t K = model.classes.size();

    Metrics m;
    m.classes = model.classes;
    m.confusion.assign(K, std::vector<std::size_t>(K, 0));

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> predicted(test_set.rows.size());
    for (std::size_t i = 0; i < test_set.rows.size(); ++i)
        predicted[i] = predict_index(model, test_set.rows[i].x);
    m.mean_inference_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
                         static_cast<double>(test_set.rows.size());

    for (std::size_t i = 0; i < test_set.rows.size(); ++i) {
        const auto it = class_of.find(test_set.rows[i].label);
        if (it == class_of.end())
            throw InvariantError("models: test label '" + test_set.rows[i].label +
                                 "' unknown to the model");
        m.confusion[it->second][predicted[i]] += 1;
    }

    m.precision.assign(K, 0.0);
    m.recall.assign(K, 0.0);
    m.f1.assign(K, 0.0);
    double f1_sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        std::size_t tp = m.confusion[k][k], row_sum = 0, col_sum = 0;
        for (std::size_t j = 0; j < K; ++j) {
            row_sum += m.confusion[k][j];
            col_sum += m.confusion[j][k];
        }
        m.precision[k] = col_sum ? static_cast<double>(tp) / static_cast<double>(col_sum) : 0.0;
        m.recall[k] = row_sum ? static_cast<double>(tp) / static_cast<double>(row_sum) : 0.0;
        m.f1[k] = (m.precision[k] + m.recall[k]) > 0.0
                      ? 2.0 * m.precision[k] * m.recall[k] / (m.precision[k] + m.recall[k])
                      : 0.0;
        f1_sum += m.f1[k];
    }
    m.macro_f1 = f1_sum / static_cast<double>(K);
    m.train_duration_s = model.train_duration_s;
    return m;
}

// ---------------------------------------------------------------------------
// model JSON (versioned tree dump; wall-clock metadata deliberately excluded
// so identical training runs produce identical bytes)

inline void write_model_json(const Model& model, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["format"] = "latentid-model";
    j["version"] = 1;
    j["kind"] = to_string(model.kind);
    j["classes"] = model.classes;
    j["n_features"] = model.n_features;
    j["learning_rate"] = model.learning_rate;
    j["feature_mask"] = model.feature_mask;
    j["degenerate"] = model.degenerate;
    nlohmann::ordered_json trees = nlohmann::ordered_json::array();
    for (const auto& tree : model.trees) {
        nlohmann::ordered_json tj;
        tj["class_index"] = tree.class_index;
        nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
        for (const auto& node : tree.nodes) {
            nodes.push_back(nlohmann::ordered_json::array(
                {node.feature, node.threshold, node.left, node.right, node.leaf}));
        }
        tj["nodes"] = std::move(nodes);
        trees.push_back(std::move(tj));
    }
    j["trees"] = std::move(trees);

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("models: cannot open '" + path.string() + "' for writing");
    out << j.dump() << '\n';
}

inline Model read_model_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("models: cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("models: model file is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || j.value("format", "") != "latentid-model" || j.value("version", 0) != 1)
        throw IoError("models: '" + path.string() + "' is not a latentid-model v1 file");
    Model model;
    model.kind = model_kind_from_string(j["kind"].get<std::string>());
    model.classes = j["classes"].get<std::vector<std::string>>();
    model.n_features = j["n_features"].get<std::size_t>();
    model.learning_rate = j["learning_rate"].get<double>();
    model.feature_mask = j["feature_mask"].get<std::vector<std::size_t>>();
    model.degenerate = j["degenerate"].get<bool>();
    for (const auto& tj : j["trees"]) {
        Tree tree;
        tree.class_index = tj["class_index"].get<int>();
        for (const auto& nj : tj["nodes"]) {
            TreeNode node;
            node.feature = nj[0].get<int>();
            node.threshold = nj[1].get<double>();
            node.left = nj[2].get<int>();
            node.right = nj[3].get<int>();
            node.leaf = nj[4].get<std::vector<double>>();
            tree.nodes.push_back(std::move(node));
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

inline nlohmann::ordered_json metrics_to_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["macro_f1"] = m.macro_f1;
    j["classes"] = m.classes;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["confusion"] = m.confusion;
    j["train_duration_s"] = m.train_duration_s;
    j["mean_inference_s"] = m.mean_inference_s;
    return j;
}

} // namespace latentid
