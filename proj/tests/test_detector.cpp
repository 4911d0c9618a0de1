// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "attnguard/detector.hpp"
#include "attnguard/task.hpp"

using namespace attnguard;

namespace {

// trace with a single constant attention row per (layer, head)
AttentionTrace flat_trace(int layers, int heads, int T, double value) {
    AttentionTrace t;
    t.rows.assign(layers, std::vector<std::vector<double>>(heads, std::vector<double>(T, value)));
    return t;
}

TokenLayout toy_layout() { return TaskSpec{}.layout(); } // 2 sys, 16 vis, 4 prm

} // namespace

TEST_CASE("ratio features are vision mass over prompt mass, layer-major") {
    TokenLayout layout = toy_layout();
    int T = layout.prm_end();
    AttentionTrace t = flat_trace(6, 4, T, 1.0 / T);
    // uniform row: 16 visual keys vs 4 prompt keys
    DetectionConfig det;
    det.start_layer = 3;
    det.num_layers = 3;
    RatioFeature f = ratio_features(t, layout, det);
    REQUIRE(f.values.size() == 12);
    for (double v : f.values) CHECK(v == doctest::Approx(4.0).epsilon(1e-12));

    // perturb one head at layer 4: all prompt mass moved onto visual keys
    for (int j = layout.prm_begin(); j < layout.prm_end(); ++j) t.rows[3][2][j] = 0.0;
    f = ratio_features(t, layout, det);
    // layer-major ordering: layer 4 occupies features [4, 8)
    CHECK(f.values[4 + 2] == doctest::Approx((16.0 / T) / 1e-12).epsilon(1e-6));
    CHECK(f.values[4 + 1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("ratio floor guards empty prompt mass") {
    TokenLayout layout = toy_layout();
    AttentionTrace t = flat_trace(3, 1, layout.prm_end(), 0.0);
    for (int j = layout.vis_begin(); j < layout.vis_end(); ++j) t.rows[1][0][j] = 1.0 / 16;
    DetectionConfig det;
    det.start_layer = 2;
    det.num_layers = 1;
    RatioFeature f = ratio_features(t, layout, det);
    CHECK(f.values[0] == doctest::Approx(1.0 / 1e-12).epsilon(1e-9));
}

TEST_CASE("trace shorter than the detection window is rejected") {
    TokenLayout layout = toy_layout();
    AttentionTrace t = flat_trace(4, 2, layout.prm_end(), 0.01);
    DetectionConfig det;
    det.start_layer = 3;
    det.num_layers = 3; // needs layer 5
    CHECK_THROWS_AS(ratio_features(t, layout, det), TraceError);
}

TEST_CASE("quantile interpolates between order statistics") {
    std::vector<double> v;
    for (int i = 1; i <= 100; ++i) v.push_back(i);
    CHECK(quantile_sorted(v, 0.99) == doctest::Approx(99.01).epsilon(1e-12));
    CHECK(quantile_sorted(v, 1.0) == doctest::Approx(100.0));
    CHECK(quantile_sorted({5.0}, 0.5) == doctest::Approx(5.0));
    CHECK(quantile_sorted({1.0, 3.0}, 0.75) == doctest::Approx(2.5));
    CHECK_THROWS_AS(quantile_sorted({}, 0.5), ArgumentError);
    CHECK_THROWS_AS(quantile_sorted({1.0}, 0.0), ArgumentError);
    CHECK_THROWS_AS(quantile_sorted({1.0}, 1.5), ArgumentError);
}

TEST_CASE("calibrate computes population statistics and the score quantile") {
    DetectionConfig det;
    det.start_layer = 1;
    det.num_layers = 1;
    det.quantile = 1.0;
    // two features of dimension 2 (1 layer x 2 heads)
    std::vector<RatioFeature> feats{{{1.0, 10.0}}, {{3.0, 10.0}}};
    ReferenceStats st = calibrate(feats, det, 2);
    CHECK(st.mu[0] == doctest::Approx(2.0));
    CHECK(st.mu[1] == doctest::Approx(10.0));
    // population sigma: sqrt(((1-2)^2 + (3-2)^2)/2) = 1
    CHECK(st.sigma[0] == doctest::Approx(1.0));
    // constant feature hits the floor
    CHECK(st.sigma[1] == doctest::Approx(det.sigma_floor));
    // val scores are |±1| = 1 in the first coordinate, 0 in the second
    CHECK(st.gamma == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("score is the whitened l2 norm: one sigma everywhere gives sqrt(dim)") {
    ReferenceStats st;
    st.start_layer = 3;
    st.num_layers = 3;
    st.heads = 4;
    st.mu.assign(12, 2.0);
    st.sigma.assign(12, 0.5);
    RatioFeature f;
    for (int i = 0; i < 12; ++i) f.values.push_back(2.5); // mu + sigma
    CHECK(score(f, st) == doctest::Approx(std::sqrt(12.0)).epsilon(1e-12));
    f.values.pop_back();
    CHECK_THROWS_AS(score(f, st), DimensionError);
}

TEST_CASE("detection is strict: a score exactly at gamma is clean") {
    TokenLayout layout = toy_layout();
    DetectionConfig det;
    det.start_layer = 1;
    det.num_layers = 1;
    ReferenceStats st;
    st.start_layer = 1;
    st.num_layers = 1;
    st.heads = 1;
    st.mu = {4.0};
    st.sigma = {1.0};
    AttentionTrace t = flat_trace(1, 1, layout.prm_end(), 1.0 / layout.prm_end());
    // pin gamma to the sample's own score: equality must stay clean
    st.gamma = detect(t, layout, st, det).score;
    Detection d = detect(t, layout, st, det);
    CHECK(d.score == st.gamma);
    CHECK_FALSE(d.is_poisoned); // d > gamma is strict
    st.gamma = std::nextafter(st.gamma, -1.0);
    CHECK(detect(t, layout, st, det).is_poisoned);
}

TEST_CASE("detect rejects stats calibrated for a different window") {
    TokenLayout layout = toy_layout();
    DetectionConfig det;
    det.start_layer = 2;
    det.num_layers = 2;
    ReferenceStats st;
    st.start_layer = 3;
    st.num_layers = 2;
    st.heads = 1;
    st.mu.assign(2, 0.0);
    st.sigma.assign(2, 1.0);
    AttentionTrace t = flat_trace(4, 1, layout.prm_end(), 1.0 / layout.prm_end());
    CHECK_THROWS_AS(detect(t, layout, st, det), ConfigError);
}

TEST_CASE("calibration requires at least two samples and consistent dimensions") {
    DetectionConfig det;
    det.start_layer = 1;
    det.num_layers = 1;
    CHECK_THROWS_AS(calibrate({{{1.0}}}, det, 1), CalibrationError);
    CHECK_THROWS_AS(calibrate({{{1.0}}, {{1.0, 2.0}}}, det, 1), CalibrationError);
    CHECK_THROWS_AS(calibrate({{{1.0, 2.0}}, {{1.0, 2.0}}}, det, 1), CalibrationError);
}

TEST_CASE("detection window bounds are validated against the model depth") {
    DetectionConfig det;
    det.start_layer = 0;
    CHECK_THROWS_AS(det.validate(6), ConfigError);
    det.start_layer = 5;
    det.num_layers = 3; // would need layer 7
    CHECK_THROWS_AS(det.validate(6), ConfigError);
    det.start_layer = 4;
    det.num_layers = 3;
    CHECK_NOTHROW(det.validate(6));
    det.quantile = 1.5;
    CHECK_THROWS_AS(det.validate(6), ConfigError);
}

TEST_CASE("reference statistics survive a save/load round trip") {
    ReferenceStats st;
    st.start_layer = 3;
    st.num_layers = 3;
    st.heads = 4;
    st.quantile = 0.99;
    st.n_val = 200;
    st.gamma = 3.75;
    for (int i = 0; i < 12; ++i) {
        st.mu.push_back(0.1 * i + 0.3);
        st.sigma.push_back(1e-8 + 0.01 * i);
    }
    auto path = (std::filesystem::temp_directory_path() / "attnguard_stats_test.json").string();
    save_stats(st, path, "cafef00d");
    ReferenceStats lo = load_stats(path);
    CHECK(lo.start_layer == st.start_layer);
    CHECK(lo.num_layers == st.num_layers);
    CHECK(lo.heads == st.heads);
    CHECK(lo.n_val == st.n_val);
    CHECK(lo.quantile == st.quantile);
    CHECK(lo.gamma == st.gamma);
    CHECK(lo.mu == st.mu);
    CHECK(lo.sigma == st.sigma);
    std::filesystem::remove(path);
}
