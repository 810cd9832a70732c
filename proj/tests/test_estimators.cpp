// Copyright (c) the mce authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <cmath>

#include "doctest.h"
#include "mce/estimators.hpp"
#include "mce/pilots.hpp"
#include "mce/scenario.hpp"
#include "support.hpp"

using namespace mce;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// N tr(D): the size of the terms the pre-lemma form subtracts
double term_scale(const LmmseContext& ctx, int antennas) {
    double s = 0.0;
    for (double b : ctx.beta[static_cast<std::size_t>(ctx.cell)]) s += b;
    return antennas * s;
}

struct Draw {
    ChannelRealization ch;
    std::vector<ReceivedBlock> y;
};

Draw draw(const Scenario& sc, const PilotSet& pilots, std::uint64_t seed, std::uint64_t n) {
    RngStream c(seed, {StreamPurpose::channel, 0, n});
    RngStream d(seed, {StreamPurpose::distortion, 0, n});
    RngStream z(seed, {StreamPurpose::noise, 0, n});
    Draw out{sample_channels(sc, c), {}};
    const Distortion dist = sample_distortion(d, sc, out.ch, pilots.powers());
    out.y = synthesize_received(sc, out.ch, pilots, &dist, &z);
    return out;
}

}  // namespace

TEST_CASE("single-cell orthogonal LMMSE closed form") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const ScenarioConfig cfg = test::small_config(1, 4, 16, 6);
        const Scenario sc = make_scenario(cfg, seed, 0);
        const PilotSet p = orthogonal_pilots(6, 4, 1, seed, 0, sc.ue_power_cap_mw);
        const double s2 = sc.noise_power_mw, pw = sc.ue_power_cap_mw;
        double expect = 0.0;
        for (int k = 0; k < 4; ++k) {
            const double b = sc.beta(0, 0, k);
            expect += b * s2 / (s2 + 6.0 * pw * b);
        }
        expect *= 16.0;
        const LmmseContext ctx = make_lmmse_context(sc, p, 0);
        CHECK(rel(analytic_mse(ctx, 16), expect) < 1e-10);
        CHECK(rel(analytic_mse_post_lemma(ctx, 16), expect) < 1e-10);
        CHECK(std::abs(analytic_mse_pre_lemma(ctx, 16) - expect) < 1e-10 * term_scale(ctx, 16));
    }
}

TEST_CASE("pre- and post-lemma expressions agree on random instances") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const int tau = 2 + static_cast<int>(seed % 5);
        ScenarioConfig cfg = test::small_config(3, 3, 8, tau);
        cfg.delta_ue = 0.02 * static_cast<double>(seed % 6);
        cfg.delta_bs = 0.03 * static_cast<double>(seed % 4);
        const Scenario sc = make_scenario(cfg, seed, 0);
        const PilotSet p = random_pilots(tau, 3, 3, seed, 0, sc.ue_power_cap_mw);
        for (int i = 0; i < 3; ++i) {
            const LmmseContext ctx = make_lmmse_context(sc, p, i);
            const double pre = analytic_mse_pre_lemma(ctx, 8);
            const double post = analytic_mse_post_lemma(ctx, 8);
            CHECK(std::abs(pre - post) < 1e-10);
            CHECK(std::abs(pre - post) < 1e-10 * term_scale(ctx, 8));
            CHECK(rel(analytic_mse(ctx, 8), post) < 1e-10);
        }
    }
}

TEST_CASE("LMMSE matrix equals the empirical Wiener solution") {
    ScenarioConfig cfg = test::small_config(2, 2, 4, 3);
    cfg.delta_ue = 0.15;
    cfg.delta_bs = 0.1;
    cfg.noise_power_dbm = -80.0;
    const Scenario sc = make_scenario(cfg, 6, 0);
    const PilotSet p = random_pilots(3, 2, 2, 6, 0, sc.ue_power_cap_mw);
    // Least squares over antenna rows: A = (sum Y^H Y)^{-1} sum Y^H H.
    ComplexMatrix yy(3, 3), yh(3, 2);
    for (std::uint64_t n = 0; n < 40000; ++n) {
        const Draw d = draw(sc, p, 6, n);
        yy += d.y[0].y.adjoint() * d.y[0].y;
        yh += d.y[0].y.adjoint() * d.ch.h[0][0];
    }
    const ComplexMatrix a_emp = general_inverse(yy) * yh;
    const ComplexMatrix a = lmmse_matrix(make_lmmse_context(sc, p, 0));
    CHECK(std::sqrt(frobenius_norm_sq(a_emp - a) / frobenius_norm_sq(a)) < 0.05);
}

TEST_CASE("Monte-Carlo LMMSE error matches the analytic MSE") {
    ScenarioConfig cfg = test::small_config(3, 4, 16, 6);
    cfg.delta_ue = cfg.delta_bs = 0.1;
    const Scenario sc = make_scenario(cfg, 12, 0);
    const PilotSet p = random_pilots(6, 4, 3, 12, 0, sc.ue_power_cap_mw);
    const LmmseContext ctx = make_lmmse_context(sc, p, 1);
    const ComplexMatrix a = lmmse_matrix(ctx);
    double acc = 0.0;
    const int draws = 10000;
    for (int n = 0; n < draws; ++n) {
        const Draw d = draw(sc, p, 12, static_cast<std::uint64_t>(n));
        acc += frobenius_norm_sq(d.ch.h[1][1] - lmmse_estimate(d.y[1].y, a));
    }
    CHECK(rel(acc / draws, analytic_mse(ctx, 16)) < 0.02);
}

TEST_CASE("LS error matches N K sigma^2 / (tau P) and LMMSE never loses to LS") {
    const ScenarioConfig cfg = test::small_config(1, 4, 16, 6);
    const Scenario sc = make_scenario(cfg, 21, 0);
    const PilotSet p = orthogonal_pilots(6, 4, 1, 21, 0, sc.ue_power_cap_mw);
    const ComplexMatrix a_ls = ls_matrix(p.merged(0));
    const ComplexMatrix a_mmse = lmmse_matrix(make_lmmse_context(sc, p, 0));
    std::vector<ComplexMatrix> truth, ls, mmse;
    for (std::uint64_t n = 0; n < 10000; ++n) {
        const Draw d = draw(sc, p, 21, n);
        truth.push_back(d.ch.h[0][0]);
        ls.push_back(lmmse_estimate(d.y[0].y, a_ls));
        mmse.push_back(lmmse_estimate(d.y[0].y, a_mmse));
    }
    const double expect = 16.0 * 4.0 * sc.noise_power_mw / (6.0 * sc.ue_power_cap_mw);
    const double e_ls = empirical_mse(ls, truth);
    CHECK(rel(e_ls, expect) < 0.02);
    CHECK(empirical_mse(mmse, truth) <= e_ls);
    CHECK(analytic_mse(make_lmmse_context(sc, p, 0), 16) <= expect);
}

TEST_CASE("analytic LMMSE never exceeds the LS error on contaminated drops") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        ScenarioConfig cfg = test::small_config(3, 2, 8, 2);
        cfg.delta_ue = cfg.delta_bs = 0.05;
        const Scenario sc = make_scenario(cfg, seed, 0);
        const PilotSet p = orthogonal_pilots(2, 2, 3, seed, 0, sc.ue_power_cap_mw);
        // LS error: the whole Yhat - H_ii covariance, trace of A^H E[Y^H Y] A minus the intra term
        const LmmseContext ctx = make_lmmse_context(sc, p, 0);
        const ComplexMatrix a = ls_matrix(p.merged(0));
        const ComplexMatrix c = pilot_gram(ctx, true, 0);  // everything but the own cell
        const double ls_err = 8.0 * 2.0 * trace(a.adjoint() * c * a).real();
        CHECK(analytic_mse(ctx, 8) <= ls_err);
    }
}

TEST_CASE("LS pre-processing inverts the intra-cell term") {
    RngStream rng(4, {});
    for (int tau = 3; tau <= 8; ++tau) {
        const ComplexMatrix h = sample_complex_gaussian(rng, 10, 3, 1e-9);
        const ComplexMatrix xbar = sample_complex_gaussian(rng, static_cast<std::size_t>(tau), 3, 20.0);
        const ComplexMatrix y = h * xbar.adjoint() * cplx(std::sqrt(tau));
        CHECK(test::max_abs_diff(ls_preprocess(y, xbar), h) < 1e-10 * 3e-5);
    }
}

TEST_CASE("LS pre-processing needs at least K independent pilot dimensions") {
    RngStream rng(1, {});
    CHECK_THROWS_AS(ls_matrix(sample_complex_gaussian(rng, 2, 4, 1.0)), RankDeficient);
    ComplexMatrix dup(4, 2);
    for (std::size_t r = 0; r < 4; ++r) dup(r, 0) = dup(r, 1) = cplx(1.0, 0.0);
    CHECK_THROWS_AS(ls_matrix(dup), RankDeficient);
}

TEST_CASE("phi collects impairment and noise power per pilot symbol") {
    ScenarioConfig cfg = test::small_config(2, 1, 4, 2);
    cfg.delta_ue = 0.1;
    cfg.delta_bs = 0.2;
    const Scenario sc = make_scenario(cfg, 3, 0);
    const PowerMatrix p{{10.0}, {20.0}};
    const double expect =
        ((2 * 0.01 + 0.04) * (sc.beta(0, 0, 0) * 10.0 + sc.beta(0, 1, 0) * 20.0) + sc.noise_power_mw) / 2.0;
    CHECK(phi_coefficient(sc, p, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("empirical_mse validates its batch") {
    std::vector<ComplexMatrix> a{ComplexMatrix(2, 2)};
    std::vector<ComplexMatrix> b{ComplexMatrix(2, 3)};
    CHECK_THROWS_AS(empirical_mse(a, b), DimensionMismatch);
    CHECK_THROWS_AS(empirical_mse(std::vector<ComplexMatrix>{}, std::vector<ComplexMatrix>{}), std::invalid_argument);
}

TEST_CASE("LMMSE context validation") {
    const ScenarioConfig cfg = test::small_config(2, 2, 4, 2);
    const Scenario sc = make_scenario(cfg, 1, 0);
    const PilotSet p = orthogonal_pilots(2, 2, 2, 1, 0, sc.ue_power_cap_mw);
    LmmseContext ctx = make_lmmse_context(sc, p, 0);
    ctx.cell = 5;
    CHECK_THROWS_AS(ctx.validate(), std::invalid_argument);
    ctx.cell = 0;
    ctx.beta[1][0] = 0.0;
    CHECK_THROWS_AS(ctx.validate(), std::invalid_argument);
    ctx = make_lmmse_context(sc, p, 0);
    ctx.power.pop_back();
    CHECK_THROWS_AS(ctx.validate(), DimensionMismatch);
}
