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
#include "mce/flops.hpp"
#include "mce/pilot_net.hpp"
#include "mce/residual_net.hpp"
#include "support.hpp"

using namespace mce;
using ad::Tape;
using ad::Var;

namespace {

PilotNetConfig pilot_cfg(int tau, int users) {
    PilotNetConfig c;
    c.pilot_length = tau;
    c.users = users;
    return c;
}

std::vector<double> betas(RngStream& rng, int k) {
    std::vector<double> b(static_cast<std::size_t>(k));
    for (auto& v : b) v = db_to_linear(rng.uniform(-130.0, -70.0));
    return b;
}

}  // namespace

TEST_CASE("pilot net layout and output shape") {
    PilotNet net(pilot_cfg(4, 4), 1);
    const auto& p = net.params();
    REQUIRE(p.size() == 6);
    CHECK(p[0].name == "pilot.W1");
    CHECK(p[0].value.shape == std::vector<int>{4, 64});
    CHECK(p[2].value.shape == std::vector<int>{64, 64});
    CHECK(p[4].name == "pilot.Wout");
    CHECK(p[4].value.shape == std::vector<int>{64, 32});
    Tape t;
    RngStream rng(1, {});
    const Var raw = net.forward_raw(t, {betas(rng, 4), betas(rng, 4), betas(rng, 4)}, nullptr);
    CHECK(raw.real().shape == std::vector<int>{3, 32});
}

TEST_CASE("pilot net output respects the power cap") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        PilotNetConfig c = pilot_cfg(2 + static_cast<int>(seed % 3), 4);
        c.power_cap_mw = 0.5 + static_cast<double>(seed);
        PilotNet net(c, seed);
        RngStream rng(seed, {});
        const ComplexMatrix x = net.infer(betas(rng, 4));
        CHECK(x.rows() == static_cast<std::size_t>(c.pilot_length));
        for (std::size_t k = 0; k < 4; ++k) CHECK(test::column_power(x, k) <= c.power_cap_mw + 1e-9);
    }
}

TEST_CASE("pilot net inference matches the batched set") {
    ScenarioConfig cfg = test::small_config(3, 4, 8, 4);
    const Scenario sc = make_scenario(cfg, 2, 0);
    PilotNetConfig c = pilot_cfg(4, 4);
    c.power_cap_mw = sc.ue_power_cap_mw;
    const PilotNet net(c, 3);
    const PilotSet set = net.infer_set(sc);
    for (int i = 0; i < 3; ++i) CHECK(test::max_abs_diff(set.merged(i), net.infer(sc.beta.local(i))) < 1e-12);
    CHECK_THROWS_AS(net.infer_set(make_scenario(test::small_config(3, 4, 8, 2), 2, 0)), DimensionMismatch);
}

TEST_CASE("beta feature maps dB linearly and clamps") {
    CHECK(beta_feature(db_to_linear(-95.0)) == doctest::Approx(0.0));
    CHECK(beta_feature(db_to_linear(-60.0)) == doctest::Approx(1.0));
    CHECK(beta_feature(db_to_linear(-200.0)) == -1.0);
    CHECK(beta_feature(db_to_linear(-10.0)) == 1.0);
}

TEST_CASE("unaware loss equals the single-cell LMMSE error per antenna") {
    const ScenarioConfig cfg = test::small_config(1, 4, 16, 6);
    const Scenario sc = make_scenario(cfg, 4, 0);
    const PilotSet p = orthogonal_pilots(6, 4, 1, 4, 0, sc.ue_power_cap_mw);
    Tape t;
    const Var loss = loss_unaware(t, t.constant(p.merged(0)), sc.beta.local(0), 6, sc.noise_power_mw);
    double expect = 0.0;
    for (int k = 0; k < 4; ++k) {
        const double b = sc.beta(0, 0, k);
        expect += b * sc.noise_power_mw / (sc.noise_power_mw + 6 * sc.ue_power_cap_mw * b);
    }
    CHECK(loss.real().item() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("aware loss is the analytic sum MSE per antenna") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        ScenarioConfig cfg = test::small_config(3, 4, 8, 3);
        cfg.delta_ue = cfg.delta_bs = 0.1;
        const Scenario sc = make_scenario(cfg, seed, 0);
        const PilotSet p = random_pilots(3, 4, 3, seed, 0, sc.ue_power_cap_mw);
        Tape t;
        std::vector<Var> xs;
        for (int i = 0; i < 3; ++i) xs.push_back(t.leaf(p.merged(i)));
        const double loss = loss_aware(t, xs, sc).real().item();
        CHECK(8.0 * loss == doctest::Approx(analytic_sum_mse(sc, p)).epsilon(1e-10));
    }
}

TEST_CASE("estimator input: channel count and per-column scaling") {
    ResidualNetConfig c;
    CHECK(c.input_channels() == 4);
    c.mode = EstimatorMode::cdrn_local;
    CHECK(c.input_channels() == 4);
    c.mode = EstimatorMode::cdrn;
    CHECK(c.input_channels() == 2);

    RngStream rng(8, {});
    ComplexMatrix y = sample_complex_gaussian(rng, 6, 3, 1e-10);
    for (auto& v : y.col(2)) v *= 100.0;
    const std::vector<double> b{1e-10, 2e-10, 1e-6};
    const auto t = assemble_input(y, b, EstimatorMode::proposed);
    REQUIRE(t.shape == std::vector<int>{6, 3, 4});
    const auto s = input_scale(y, b, EstimatorMode::proposed);
    for (std::size_t q = 0; q < 3; ++q) {
        double e = 0.0;
        for (int r = 0; r < 6; ++r) {
            const std::size_t p = static_cast<std::size_t>((r * 3 + static_cast<int>(q)) * 4);
            e += t.data[p] * t.data[p] + t.data[p + 1] * t.data[p + 1];
            CHECK(t.data[p + 3] == beta_feature(b[q]));
        }
        CHECK(e / 12.0 == doctest::Approx(1.0));
        CHECK(test::column_power(y, q) / 12.0 == doctest::Approx(s[q] * s[q]));
    }
    const auto pooled = assemble_input(y, b, EstimatorMode::cdrn);
    CHECK(pooled.shape == std::vector<int>{6, 3, 2});
    const auto ps = input_scale(y, b, EstimatorMode::cdrn);
    CHECK(ps[0] == ps[2]);
}

TEST_CASE("in-graph input assembly agrees with assemble_input") {
    for (auto mode : {EstimatorMode::proposed, EstimatorMode::cdrn, EstimatorMode::cdrn_local}) {
        ResidualNetConfig c{.layers = 2, .filters = 5, .mode = mode, .zero_init_heads = false};
        ResidualNet net(c, 4);
        RngStream rng(4, {});
        const ComplexMatrix y = sample_complex_gaussian(rng, 5, 3, 1e-9);
        const std::vector<double> b = betas(rng, 3);
        Tape t;
        const auto out = net.forward_frozen(t, ad::complex_planes(std::vector<Var>{t.constant(y)}), {b});
        ad::Tensor in = assemble_input(y, b, mode);
        in.shape.insert(in.shape.begin(), 1);
        const Var feat = net.noise_level(t, t.constant(in));
        const auto& p = net.params();
        const std::size_t head = 2 * 2;
        const Var gamma = ad::conv3x3(feat, t.constant(p[head + 2].value), t.constant(p[head + 3].value));
        for (std::size_t i = 0; i < gamma.real().size(); ++i)
            CHECK(gamma.real().data[i] == doctest::Approx(out.gamma.real().data[i]).epsilon(1e-12));
    }
}

TEST_CASE("zero denoiser weights reproduce the LS estimate") {
    for (auto mode : {EstimatorMode::proposed, EstimatorMode::cdrn, EstimatorMode::cdrn_local}) {
        ResidualNetConfig c{.layers = 3, .filters = 8, .mode = mode};
        const ResidualNet net(c, 9);
        RngStream rng(9, {});
        std::vector<ComplexMatrix> ys;
        std::vector<std::vector<double>> bs;
        for (int s = 0; s < 5; ++s) {
            ys.push_back(sample_complex_gaussian(rng, 8, 4, 1e-9 * (s + 1)));
            bs.push_back(betas(rng, 4));
        }
        const auto est = net.estimate(ys, bs);
        for (std::size_t s = 0; s < ys.size(); ++s)
            CHECK(std::abs(frobenius_norm_sq(est[s] - ys[s])) <= 1e-24 * frobenius_norm_sq(ys[s]));
    }
}

TEST_CASE("estimator parameter layout") {
    ResidualNet net({.layers = 7, .filters = 16}, 1);
    const auto& p = net.params();
    REQUIRE(p.size() == 18);
    CHECK(p[0].name == "est.conv1.k");
    CHECK(p[0].value.shape == std::vector<int>{3, 3, 4, 16});
    CHECK(p[2].value.shape == std::vector<int>{3, 3, 16, 16});
    CHECK(p[14].name == "est.alpha.k");
    CHECK(p[16].name == "est.gamma.k");
    CHECK(net.param_ptrs().size() == 18);
    ResidualNet cdrn({.layers = 7, .filters = 16, .mode = EstimatorMode::cdrn}, 1);
    CHECK(cdrn.params()[0].value.shape == std::vector<int>{3, 3, 2, 16});
    CHECK(cdrn.param_ptrs().size() == 16);
    CHECK_THROWS_AS(ResidualNet({.layers = 0}, 1), std::invalid_argument);
}

TEST_CASE("estimator mode names round-trip") {
    for (auto m : {EstimatorMode::proposed, EstimatorMode::cdrn, EstimatorMode::cdrn_local})
        CHECK(parse_estimator_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_estimator_mode("dncnn"), std::invalid_argument);
}

TEST_CASE("MAC counts by construction") {
    PilotNetConfig p = pilot_cfg(4, 4);
    ResidualNetConfig e{.layers = 7, .filters = 64};
    const FlopsReport r = flops_report(p, e, 16, 3, 100, 10);
    const std::uint64_t n1 = 4 * 4 * 4, n2 = n1;
    CHECK(r.pilot_forward == 4 * n1 + n1 * n2 + n2 * 2 * 4 * 4);
    REQUIRE(r.estimator_layers.size() == 9);
    CHECK(r.estimator_layers[1].macs == 64ULL * 64 * 9 * 16 * 4);
    CHECK(r.estimator_layers[0].macs == 4ULL * 64 * 9 * 16 * 4);
    CHECK(r.pilot_training == doctest::Approx(10.0 * 100 * 3 * static_cast<double>(r.pilot_forward)));
}

TEST_CASE("exact over asymptotic complexity is stable across a 4x sweep") {
    ResidualNetConfig e{.layers = 7, .filters = 64};
    std::vector<double> pilot_ratio, est_ratio;
    for (int tau : {2, 4, 8}) {
        const FlopsReport r = flops_report(pilot_cfg(tau, 4), e, 16, 3, 100, 10);
        pilot_ratio.push_back(r.pilot_training / r.pilot_asymptotic);
    }
    for (int n : {16, 32, 64}) {
        const FlopsReport r = flops_report(pilot_cfg(4, 4), e, n, 3, 100, 10);
        est_ratio.push_back(r.estimator_training / r.estimator_asymptotic);
    }
    for (const auto* v : {&pilot_ratio, &est_ratio}) {
        const auto [lo, hi] = std::minmax_element(v->begin(), v->end());
        CHECK(*hi / *lo < 2.0);
    }
    // doubling tau_p K quadruples the dominant pilot term
    const FlopsReport a = flops_report(pilot_cfg(4, 4), e, 16, 3, 100, 10);
    const FlopsReport b = flops_report(pilot_cfg(8, 4), e, 16, 3, 100, 10);
    CHECK(b.pilot_forward / static_cast<double>(a.pilot_forward) == doctest::Approx(4.0).epsilon(0.1));
}
