#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "layertime/mgrit.hpp"
#include "layertime/nested.hpp"
#include "layertime/rng.hpp"

#include "test_support.hpp"

#include <cmath>

using namespace layertime;
using namespace layertime::testing;

namespace {

/// Distinct, easily recognizable layer blocks for interpolation checks.
ControlTrajectory tagged_controls(int n_layers, double final_time) {
    NetworkShape shape = NetworkShape::make(2, 3, 2, n_layers, final_time);
    ControlTrajectory theta = ControlTrajectory::zeros(shape);
    Rng rng(99);
    fill_random(theta.opening, rng);
    fill_random(theta.classify_w, rng);
    fill_random(theta.classify_b, rng);
    for (int n = 0; n < n_layers; ++n) {
        fill_random(theta.layers[n].weights, rng);
        fill_random(theta.layers[n].bias, rng);
        theta.layers[n].weights(0, 0) = 100.0 + n; // tag to track block motion
    }
    return theta;
}

bool layers_equal(const LayerParams& a, const LayerParams& b) {
    return a.weights == b.weights && a.bias == b.bias;
}

} // namespace

TEST_CASE("constant interpolation replicates each block onto the doubled grid") {
    ControlTrajectory coarse = tagged_controls(2, 1.0);
    ControlTrajectory fine = interpolate_constant(coarse);

    CHECK(fine.shape.n_layers == 4);
    CHECK(fine.shape.h == 0.25);
    CHECK(fine.shape.final_time == 1.0);
    CHECK(fine.opening == coarse.opening);
    CHECK(fine.classify_w == coarse.classify_w);
    CHECK(fine.classify_b == coarse.classify_b);
    // [a, b] -> [a, a, b, b]
    CHECK(layers_equal(fine.layers[0], coarse.layers[0]));
    CHECK(layers_equal(fine.layers[1], coarse.layers[0]));
    CHECK(layers_equal(fine.layers[2], coarse.layers[1]));
    CHECK(layers_equal(fine.layers[3], coarse.layers[1]));
}

TEST_CASE("linear interpolation inserts midpoints and replicates the last block") {
    ControlTrajectory coarse = tagged_controls(2, 1.0);
    ControlTrajectory fine = interpolate_linear(coarse);

    REQUIRE(fine.shape.n_layers == 4);
    // [a, b] -> [a, (a+b)/2, b, b]
    CHECK(layers_equal(fine.layers[0], coarse.layers[0]));
    CHECK(layers_equal(fine.layers[2], coarse.layers[1]));
    CHECK(layers_equal(fine.layers[3], coarse.layers[1]));
    for (std::size_t i = 0; i < fine.layers[1].weights.size(); ++i)
        CHECK(fine.layers[1].weights.data()[i] ==
              0.5 * (coarse.layers[0].weights.data()[i] + coarse.layers[1].weights.data()[i]));
    for (int i = 0; i < 3; ++i)
        CHECK(fine.layers[1].bias[i] == 0.5 * (coarse.layers[0].bias[i] + coarse.layers[1].bias[i]));
}

TEST_CASE("restriction undoes constant interpolation bit for bit") {
    ControlTrajectory coarse = tagged_controls(4, 2.0);
    ControlTrajectory back = restrict_controls(interpolate_constant(coarse), 2);
    CHECK(max_abs_diff_controls(back, coarse) == 0.0);
    CHECK(back.shape.h == coarse.shape.h);
    CHECK(back.shape.n_layers == coarse.shape.n_layers);
}

TEST_CASE("linear interpolation is a linear map") {
    ControlTrajectory a = tagged_controls(3, 1.5);
    ControlTrajectory b = tagged_controls(3, 1.5);
    Rng rng(7);
    for (auto& layer : b.layers) {
        fill_random(layer.weights, rng);
        fill_random(layer.bias, rng);
    }
    fill_random(b.opening, rng);
    fill_random(b.classify_w, rng);
    fill_random(b.classify_b, rng);

    const double alpha = 0.3;
    const double beta = -1.7;
    std::vector<double> fa = a.flatten();
    std::vector<double> fb = b.flatten();
    std::vector<double> combo(fa.size());
    for (std::size_t i = 0; i < fa.size(); ++i) combo[i] = alpha * fa[i] + beta * fb[i];
    ControlTrajectory mixed = ControlTrajectory::unflatten(a.shape, combo);

    std::vector<double> lhs = interpolate_linear(mixed).flatten();
    std::vector<double> ia = interpolate_linear(a).flatten();
    std::vector<double> ib = interpolate_linear(b).flatten();
    double worst = 0.0;
    for (std::size_t i = 0; i < lhs.size(); ++i)
        worst = std::max(worst, std::abs(lhs[i] - (alpha * ia[i] + beta * ib[i])));
    CHECK(worst <= 1e-12);
}

TEST_CASE("both interpolations agree bit for bit on time-constant controls") {
    ControlTrajectory coarse = tagged_controls(4, 1.0);
    for (int n = 1; n < 4; ++n) coarse.layers[n] = coarse.layers[0];
    ControlTrajectory c = interpolate_constant(coarse);
    ControlTrajectory l = interpolate_linear(coarse);
    CHECK(max_abs_diff_controls(c, l) == 0.0);
}

TEST_CASE("single-layer linear interpolation falls back to replication") {
    ControlTrajectory coarse = tagged_controls(1, 1.0);
    ControlTrajectory fine = interpolate_linear(coarse);
    REQUIRE(fine.shape.n_layers == 2);
    CHECK(layers_equal(fine.layers[0], coarse.layers[0]));
    CHECK(layers_equal(fine.layers[1], coarse.layers[0]));
}

TEST_CASE("repeated interpolation telescopes the grid through every level") {
    // 16 -> 32 -> 64 layers over the same time horizon; h follows exactly
    // because each level computes final_time / n_layers with n_layers a
    // power-of-two multiple.
    ControlTrajectory theta = tagged_controls(16, 5.0);
    theta = interpolate_constant(theta);
    CHECK(theta.shape.n_layers == 32);
    CHECK(theta.shape.h == 5.0 / 32.0);
    theta = interpolate_linear(theta);
    CHECK(theta.shape.n_layers == 64);
    CHECK(theta.shape.h == 5.0 / 64.0);
    CHECK(theta.shape.final_time == 5.0);

    NestedSchedule sched;
    sched.levels = 3;
    sched.n_coarsest = 16;
    CHECK(sched.finest_layers() == 64);
}

TEST_CASE("state interpolation replicates each coarse state") {
    StateTrajectory coarse;
    coarse.n_layers = 2;
    coarse.h = 0.5;
    Rng rng(3);
    for (int i = 0; i < 3; ++i) {
        Matrix m(4, 3);
        fill_random(m, rng);
        coarse.states.push_back(m);
    }
    StateTrajectory fine = interpolate_states_constant(coarse);
    REQUIRE(fine.n_layers == 4);
    REQUIRE(fine.states.size() == 5);
    CHECK(fine.h == 0.25);
    // [u0, u1, u2] -> [u0, u0, u1, u1, u2]
    CHECK(fine.states[0] == coarse.states[0]);
    CHECK(fine.states[1] == coarse.states[0]);
    CHECK(fine.states[2] == coarse.states[1]);
    CHECK(fine.states[3] == coarse.states[1]);
    CHECK(fine.states[4] == coarse.states[2]);
}

TEST_CASE("budget schedule switches from the refinement budget to steady state") {
    NestedSchedule sched;
    sched.d_post_refine = 10;
    sched.post_refine_span = 3;
    sched.d_steady = 2;

    SUBCASE("after a refinement") {
        CHECK(d_for_iteration(0, sched) == 10);
        CHECK(d_for_iteration(1, sched) == 10);
        CHECK(d_for_iteration(2, sched) == 10);
        CHECK(d_for_iteration(3, sched) == 2);
        CHECK(d_for_iteration(100, sched) == 2);
    }
    SUBCASE("on a level that was not refined into") {
        CHECK(d_for_iteration(-1, sched) == 2);
    }
    SUBCASE("zero span disables the elevated budget") {
        sched.post_refine_span = 0;
        CHECK(d_for_iteration(0, sched) == 2);
        CHECK(d_for_iteration(1, sched) == 2);
    }
}

TEST_CASE("schedule validation rejects inconsistent settings") {
    NestedSchedule sched;
    sched.levels = 3;
    sched.n_coarsest = 16;
    sched.iterations = {120, 75, 45};
    CHECK_NOTHROW(sched.validate());
    CHECK(sched.iterations_at(2) == 120); // coarsest
    CHECK(sched.iterations_at(0) == 45);  // finest

    SUBCASE("iteration count per level") {
        sched.iterations = {120, 75};
        CHECK_THROWS_WITH(sched.validate(),
                          "NestedSchedule: need one iteration count per level, got 2 for 3 levels");
    }
    SUBCASE("zero iterations") {
        sched.iterations = {120, 0, 45};
        CHECK_THROWS_AS(sched.validate(), std::logic_error);
    }
    SUBCASE("budget ordering") {
        sched.d_post_refine = 1;
        sched.d_steady = 2;
        CHECK_THROWS_AS(sched.validate(), std::logic_error);
    }
    SUBCASE("negative span") {
        sched.post_refine_span = -1;
        CHECK_THROWS_AS(sched.validate(), std::logic_error);
    }
}

TEST_CASE("seeded initialization is reproducible and respects the scales") {
    NetworkShape shape = NetworkShape::make(2, 8, 5, 4, 1.0);
    Hyperparameters hyper;
    hyper.initial_weight_scale = 0.0;

    SUBCASE("same seed, same controls; different seed differs") {
        hyper.initial_weight_scale = 0.3;
        ControlTrajectory a = init_controls(shape, hyper, 42);
        ControlTrajectory b = init_controls(shape, hyper, 42);
        ControlTrajectory c = init_controls(shape, hyper, 43);
        CHECK(max_abs_diff_controls(a, b) == 0.0);
        CHECK(max_abs_diff_controls(a, c) > 0.0);
    }

    SUBCASE("zero internal scale zeroes every layer block exactly") {
        ControlTrajectory theta = init_controls(shape, hyper, 1);
        for (const auto& layer : theta.layers) {
            for (double v : layer.weights.data()) CHECK(v == 0.0);
            for (double v : layer.bias) CHECK(v == 0.0);
        }
        // ... while the opening and classification blocks are live.
        CHECK(theta.opening.frobenius_sq() > 0.0);
        CHECK(theta.classify_w.frobenius_sq() > 0.0);
    }

    SUBCASE("default boundary range is 1/sqrt(w)") {
        const double r = 1.0 / std::sqrt(8.0);
        ControlTrajectory theta = init_controls(shape, hyper, 5);
        double widest = 0.0;
        for (double v : theta.opening.data()) widest = std::max(widest, std::abs(v));
        for (double v : theta.classify_w.data()) widest = std::max(widest, std::abs(v));
        for (double v : theta.classify_b) widest = std::max(widest, std::abs(v));
        CHECK(widest <= r);
        CHECK(widest > 0.5 * r); // 24+ draws: vanishingly unlikely to all land low
    }

    SUBCASE("explicit scales bound the draws") {
        hyper.initial_weight_scale = 1e-6;
        hyper.opening_scale = 0.5;
        ControlTrajectory theta = init_controls(shape, hyper, 5);
        double internal = 0.0;
        for (const auto& layer : theta.layers)
            for (double v : layer.weights.data()) internal = std::max(internal, std::abs(v));
        CHECK(internal <= 1e-6);
        CHECK(internal > 0.0);
        double boundary = 0.0;
        for (double v : theta.opening.data()) boundary = std::max(boundary, std::abs(v));
        CHECK(boundary <= 0.5);
        CHECK(boundary > 1e-6); // clearly drawn from the wider range
    }
}

TEST_CASE("initialization draw order is the flatten order") {
    // With every scale equal, the flattened controls must reproduce the raw
    // uniform stream, which pins the draw order for reproducibility.
    NetworkShape shape = NetworkShape::make(2, 3, 2, 2, 1.0);
    Hyperparameters hyper;
    hyper.initial_weight_scale = 1.0;
    hyper.opening_scale = 1.0;
    ControlTrajectory theta = init_controls(shape, hyper, 77);
    std::vector<double> flat = theta.flatten();
    Rng rng(77);
    for (double v : flat) CHECK(v == rng.uniform(-1.0, 1.0));
}
