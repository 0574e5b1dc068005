#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "latentid/accumulation.hpp"
#include "latentid/dataset.hpp"
#include "latentid/extractor.hpp"
#include "latentid/models.hpp"
#include "latentid/simulator.hpp"

using namespace latentid;

namespace {

FeatureRow row_of(const std::string& label, double f0, double filler = 0.5) {
    FeatureRow r;
    r.label = label;
    r.x.fill(filler);
    r.x[0] = f0;
    return r;
}

/// Two linearly separable classes: A has feature0 < 1, B has feature0 > 2.
Dataset separable_dataset(std::size_t per_class = 20) {
    Dataset ds;
    Rng rng(3);
    for (std::size_t i = 0; i < per_class; ++i) {
        ds.rows.push_back(row_of("A", rng.uniform(0.0, 1.0)));
        ds.rows.push_back(row_of("B", rng.uniform(2.0, 3.0)));
    }
    return ds;
}

Dataset noisy_multiclass(std::uint64_t seed, std::size_t per_class) {
    Rng rng(seed);
    Dataset ds;
    const char* labels[] = {"a", "b", "c"};
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            FeatureRow r;
            r.label = labels[c];
            for (auto& v : r.x) v = rng.uniform(0.0, 1.0) + 0.4 * c;
            ds.rows.push_back(std::move(r));
        }
    }
    return ds;
}

std::string model_bytes(const Model& m) {
    const auto path = std::filesystem::temp_directory_path() / "latentid_model_bytes.json";
    write_model_json(m, path);
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Renders split structure and leaf decisions (not leaf counts).
std::string tree_shape(const Tree& t) {
    std::string s;
    for (const auto& n : t.nodes) {
        if (n.feature >= 0) {
            s += "S" + std::to_string(n.feature) + ":" + fmt_double(n.threshold) + ":" +
                 std::to_string(n.left) + ":" + std::to_string(n.right) + ";";
        } else {
            const auto best = std::max_element(n.leaf.begin(), n.leaf.end()) - n.leaf.begin();
            s += "L" + std::to_string(best) + ";";
        }
    }
    return s;
}

} // namespace

TEST_CASE("decision tree on separable data") {
    const Dataset ds = separable_dataset();
    const Model model = train(ModelKind::dt, ds);

    SECTION("single split at depth 1, pure leaves") {
        REQUIRE(model.trees.size() == 1);
        const auto& tree = model.trees[0];
        REQUIRE(tree.nodes.size() == 3);
        CHECK(tree.nodes[0].feature == 0);
        CHECK(tree.nodes[0].threshold > 1.0);
        CHECK(tree.nodes[0].threshold < 2.0);
        CHECK(tree.nodes[tree.nodes[0].left].feature == -1);
        CHECK(tree.nodes[tree.nodes[0].right].feature == -1);
    }

    SECTION("training accuracy 1.0") {
        const Metrics m = evaluate(model, ds);
        CHECK(m.macro_f1 == 1.0);
        for (std::size_t k = 0; k < m.classes.size(); ++k) CHECK(m.confusion[k][k] > 0);
    }

    SECTION("row below the threshold goes to the left leaf's class") {
        CHECK(predict(model, row_of("?", 0.2).x) == "A");
        CHECK(predict(model, row_of("?", 2.9).x) == "B");
    }

    SECTION("row equal to a training row of a pure leaf gets that row's class") {
        CHECK(predict(model, ds.rows.front().x) == ds.rows.front().label);
    }
}

TEST_CASE("predict validates the feature count") {
    const Model model = train(ModelKind::dt, separable_dataset());
    const std::vector<double> seven(7, 1.0);
    CHECK_THROWS_AS(predict(model, seven), ShapeError);
    const std::vector<double> nine(9, 1.0);
    CHECK_THROWS_AS(predict(model, nine), ShapeError);
}

TEST_CASE("training is deterministic per seed") {
    const Dataset ds = noisy_multiclass(10, 60);
    for (ModelKind kind : {ModelKind::dt, ModelKind::rf, ModelKind::gbdt}) {
        TrainParams p;
        p.n_trees = kind == ModelKind::rf ? 15 : 10;
        p.max_depth = 4;
        const Model a = train(kind, ds, p);
        const Model b = train(kind, ds, p);
        INFO("kind " << to_string(kind));
        CHECK(model_bytes(a) == model_bytes(b));
    }

    SECTION("different rf seed gives a different forest") {
        TrainParams p1, p2;
        p1.n_trees = p2.n_trees = 15;
        p2.seed = 43;
        CHECK(model_bytes(train(ModelKind::rf, ds, p1)) !=
              model_bytes(train(ModelKind::rf, ds, p2)));
    }
}

TEST_CASE("rf parallel build matches serial build byte for byte") {
    const Dataset ds = noisy_multiclass(11, 80);
    TrainParams serial, parallel;
    serial.n_trees = parallel.n_trees = 24;
    serial.jobs = 1;
    parallel.jobs = 4;
    CHECK(model_bytes(train(ModelKind::rf, ds, serial)) ==
          model_bytes(train(ModelKind::rf, ds, parallel)));
}

TEST_CASE("duplicating the training set leaves the DT structure unchanged") {
    const Dataset ds = noisy_multiclass(12, 50);
    Dataset doubled = ds;
    for (const auto& r : ds.rows) doubled.rows.push_back(r);
    TrainParams p;
    p.min_samples_leaf = 1; // counts scale by two; ratios drive the splits
    const Model a = train(ModelKind::dt, ds, p);
    const Model b = train(ModelKind::dt, doubled, p);
    REQUIRE(a.trees.size() == 1);
    REQUIRE(b.trees.size() == 1);
    CHECK(tree_shape(a.trees[0]) == tree_shape(b.trees[0]));
}

TEST_CASE("gbdt with one round and unit learning rate matches a DT on separable data") {
    const Dataset ds = separable_dataset(30);
    TrainParams gp;
    gp.n_trees = 1;
    gp.learning_rate = 1.0;
    gp.max_depth = 3;
    const Model gbdt = train(ModelKind::gbdt, ds, gp);
    TrainParams dp;
    dp.max_depth = 3;
    const Model dt = train(ModelKind::dt, ds, dp);
    for (const auto& r : ds.rows)
        CHECK(predict(gbdt, r.x) == predict(dt, r.x));
}

TEST_CASE("metrics arithmetic") {
    SECTION("perfect predictions give macro-F1 1.0 and a diagonal confusion matrix") {
        const Dataset ds = noisy_multiclass(13, 40);
        // memorizing tree: depth unlimited enough, leaf size 1
        TrainParams p;
        p.max_depth = 30;
        p.min_samples_leaf = 1;
        const Model model = train(ModelKind::dt, ds, p);
        const Metrics m = evaluate(model, ds);
        CHECK(m.macro_f1 == 1.0);
        for (std::size_t i = 0; i < m.classes.size(); ++i)
            for (std::size_t j = 0; j < m.classes.size(); ++j)
                if (i != j) CHECK(m.confusion[i][j] == 0);
    }

    SECTION("always-same-class predictor on balanced 5-class data") {
        // single-leaf model that always answers the first class
        Model stub;
        stub.kind = ModelKind::dt;
        stub.classes = {"c0", "c1", "c2", "c3", "c4"};
        Tree leafTree;
        TreeNode leaf;
        leaf.leaf = {1.0, 0.0, 0.0, 0.0, 0.0};
        leafTree.nodes.push_back(leaf);
        stub.trees.push_back(leafTree);

        Dataset test;
        for (int c = 0; c < 5; ++c)
            for (int i = 0; i < 10; ++i) {
                FeatureRow r;
                r.label = "c" + std::to_string(c);
                r.x.fill(static_cast<double>(i));
                test.rows.push_back(std::move(r));
            }
        const Metrics m = evaluate(stub, test);
        // recall(c0)=1, precision(c0)=1/5 -> f1(c0)=1/3; all other classes 0
        CHECK(m.recall[0] == Catch::Approx(1.0));
        CHECK(m.precision[0] == Catch::Approx(0.2));
        CHECK(m.f1[0] == Catch::Approx(1.0 / 3.0));
        for (std::size_t k = 1; k < 5; ++k) CHECK(m.f1[k] == 0.0);
        CHECK(m.macro_f1 == Catch::Approx(1.0 / 15.0));
        for (std::size_t k = 0; k < 5; ++k) {
            std::size_t row_sum = 0;
            for (std::size_t j = 0; j < 5; ++j) row_sum += m.confusion[k][j];
            CHECK(row_sum == 10);
        }
    }

    SECTION("repeat evaluation is identical except wall-clock fields") {
        const Dataset ds = noisy_multiclass(14, 30);
        const Model model = train(ModelKind::dt, ds);
        const Metrics m1 = evaluate(model, ds);
        const Metrics m2 = evaluate(model, ds);
        CHECK(m1.macro_f1 == m2.macro_f1);
        CHECK(m1.confusion == m2.confusion);
        CHECK(m1.precision == m2.precision);
        CHECK(m1.recall == m2.recall);
    }

    SECTION("empty test set is rejected") {
        const Model model = train(ModelKind::dt, separable_dataset());
        CHECK_THROWS_AS(evaluate(model, Dataset{}), EmptyTestSet);
    }
}

TEST_CASE("degenerate and undersized inputs") {
    SECTION("fewer than two classes") {
        Dataset ds;
        for (int i = 0; i < 10; ++i) ds.rows.push_back(row_of("only", static_cast<double>(i)));
        CHECK_THROWS_AS(train(ModelKind::dt, ds), TooFewClasses);
    }

    SECTION("identical feature vectors across classes: best-effort majority leaf, flagged") {
        Dataset ds;
        for (int i = 0; i < 6; ++i) ds.rows.push_back(row_of("A", 1.0));
        for (int i = 0; i < 4; ++i) ds.rows.push_back(row_of("B", 1.0));
        const Model model = train(ModelKind::dt, ds);
        CHECK(model.degenerate);
        REQUIRE(model.trees.size() == 1);
        CHECK(model.trees[0].nodes.size() == 1);
        CHECK(predict(model, row_of("?", 1.0).x) == "A"); // majority
    }
}

TEST_CASE("model JSON round-trip preserves predictions") {
    const Dataset ds = noisy_multiclass(15, 50);
    const auto path = std::filesystem::temp_directory_path() / "latentid_model_rt.json";
    for (ModelKind kind : {ModelKind::dt, ModelKind::rf, ModelKind::gbdt}) {
        TrainParams p;
        p.n_trees = 8;
        p.max_depth = 4;
        const Model model = train(kind, ds, p);
        write_model_json(model, path);
        const Model back = read_model_json(path);
        CHECK(back.kind == model.kind);
        CHECK(back.classes == model.classes);
        REQUIRE(back.trees.size() == model.trees.size());
        for (const auto& r : ds.rows) {
            INFO("kind " << to_string(kind));
            CHECK(predict(back, r.x) == predict(model, r.x));
        }
    }
}

TEST_CASE("ensembles do not trail the single tree on channel-mixed data") {
    // mixed-CU run: the kind of data the toolkit actually trains on
    SimConfig cfg = SimConfig::defaults();
    cfg.duration_s = 120.0;
    cfg.probe_period_s = 0.5;
    cfg.target_cu.clear();
    for (int step = 0; step < 6; ++step)
        cfg.target_cu.push_back({20.0, 0.15 * static_cast<double>(step)});
    cfg.seed = 21;
    const SimResult sim = simulate(cfg);
    const PairingResult pr = pair_probes(sim.trace);
    const auto scored = score_pairs(sim.trace, pr.pairs, WeightFunction::bell(1.0));
    std::unordered_map<std::size_t, double> score_map;
    for (std::size_t i = 0; i < pr.pairs.size(); ++i)
        score_map[pr.pairs[i].probe_index] = scored[i].score;
    const RoundGrouping rounds = group_rounds(pr.pairs, cfg.probe_period_s);
    const Dataset ds = build_feature_rows(rounds.rounds, score_map);
    REQUIRE(ds.rows.size() > 1000);

    const auto [train_set, test_set] = split(ds, 0.2, 4);
    TrainParams dt_p;
    TrainParams rf_p;
    rf_p.n_trees = 50;
    TrainParams gb_p;
    gb_p.n_trees = 60;
    gb_p.max_depth = 5;
    const double f1_dt = evaluate(train(ModelKind::dt, train_set, dt_p), test_set).macro_f1;
    const double f1_rf = evaluate(train(ModelKind::rf, train_set, rf_p), test_set).macro_f1;
    const double f1_gb = evaluate(train(ModelKind::gbdt, train_set, gb_p), test_set).macro_f1;
    INFO("dt " << f1_dt << " rf " << f1_rf << " gbdt " << f1_gb);
    CHECK(f1_rf >= f1_dt);
    CHECK(f1_gb >= f1_dt);
    CHECK(f1_dt > 0.5); // sanity: the features do carry the device identity
}
