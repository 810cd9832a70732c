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
#include <numbers>

#include "doctest.h"
#include "mce/estimators.hpp"
#include "mce/pilots.hpp"
#include "mce/scenario.hpp"
#include "support.hpp"

using namespace mce;

namespace {

double rel_frobenius(const ComplexMatrix& a, const ComplexMatrix& ref) {
    return std::sqrt(frobenius_norm_sq(a - ref) / frobenius_norm_sq(ref));
}

}  // namespace

TEST_CASE("default scenario matches the published simulation setup") {
    const ScenarioConfig c;
    CHECK(c.topology.cells == 7);
    CHECK(c.topology.users_per_cell == 10);
    CHECK(c.topology.antennas == 100);
    CHECK(c.topology.isd_m == 500.0);
    CHECK(c.topology.min_ue_distance_m == 35.0);
    CHECK(c.topology.shadowing_stddev_db == 8.0);
    CHECK(c.ue_power_cap_dbm == 23.0);
    CHECK(c.noise_power_dbm == -96.0);
    // -169 dBm/Hz over 20 MHz, rounded
    CHECK(std::abs(-169.0 + 10.0 * std::log10(20e6) - c.noise_power_dbm) < 0.02);
}

TEST_CASE("path loss model") {
    CHECK(path_loss_db(1.0) == doctest::Approx(128.1));
    CHECK(path_loss_db(0.1) == doctest::Approx(128.1 - 37.6));
    CHECK(path_loss_db(0.5) == doctest::Approx(128.1 + 37.6 * std::log10(0.5)));
    CHECK_THROWS_AS(path_loss_db(0.0), std::invalid_argument);
}

TEST_CASE("hexagonal layout: first ring at one inter-site distance") {
    const auto c = hex_cell_centers(7, 500.0);
    REQUIRE(c.size() == 7);
    CHECK(c[0][0] == 0.0);
    CHECK(c[0][1] == 0.0);
    for (std::size_t i = 1; i < 7; ++i) CHECK(std::hypot(c[i][0], c[i][1]) == doctest::Approx(500.0));
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = i + 1; j < 7; ++j)
            CHECK(std::hypot(c[i][0] - c[j][0], c[i][1] - c[j][1]) >= 500.0 * (1 - 1e-9));
    CHECK(hex_cell_centers(3, 500.0).size() == 3);
    CHECK(hex_cell_centers(19, 500.0).size() == 19);
}

TEST_CASE("hexagon membership") {
    const double isd = 500.0;
    const double r = isd / std::sqrt(3.0);
    CHECK(inside_hexagon({0.0, 0.0}, isd));
    CHECK(inside_hexagon({0.99 * r, 0.0}, isd));
    CHECK_FALSE(inside_hexagon({1.01 * r, 0.0}, isd));
    CHECK(inside_hexagon({0.0, 0.99 * isd / 2}, isd));
    CHECK_FALSE(inside_hexagon({0.0, 1.01 * isd / 2}, isd));
}

TEST_CASE("dropped users stay in their hexagon and away from every BS") {
    TopologyConfig t;
    for (std::uint64_t s = 0; s < 20; ++s) {
        RngStream rng(s, {StreamPurpose::topology, 0, 0});
        const Positions p = drop_topology(t, rng);
        REQUIRE(p.ue.size() == 7);
        for (std::size_t j = 0; j < 7; ++j) {
            REQUIRE(p.ue[j].size() == 10);
            for (const auto& u : p.ue[j]) {
                CHECK(inside_hexagon({u[0] - p.bs[j][0], u[1] - p.bs[j][1]}, t.isd_m));
                for (const auto& b : p.bs) CHECK(std::hypot(u[0] - b[0], u[1] - b[1]) >= t.min_ue_distance_m);
            }
        }
    }
}

TEST_CASE("exclusion radius must leave room inside the cell") {
    TopologyConfig t;
    t.min_ue_distance_m = 400.0;
    RngStream rng(1, {});
    CHECK_THROWS_AS(drop_topology(t, rng), std::invalid_argument);
    t.min_ue_distance_m = 240.0;
    const Positions p = drop_topology(t, rng);
    for (const auto& u : p.ue[0]) CHECK(std::hypot(u[0], u[1]) >= 240.0);
}

TEST_CASE("large-scale fading without shadowing is the path loss") {
    Positions p;
    p.bs = {{0.0, 0.0}, {500.0, 0.0}};
    p.ue = {{{100.0, 0.0}}, {{500.0, 200.0}}};
    RngStream rng(1, {});
    const BetaTensor b = large_scale_fading(p, 0.0, rng);
    CHECK(b(0, 0, 0) == doctest::Approx(std::pow(10.0, -path_loss_db(0.1) / 10)));
    CHECK(b(1, 1, 0) == doctest::Approx(std::pow(10.0, -path_loss_db(0.2) / 10)));
    CHECK(b(0, 1, 0) == doctest::Approx(std::pow(10.0, -path_loss_db(std::hypot(0.5, 0.2)) / 10)));
    CHECK(b(1, 0, 0) == doctest::Approx(std::pow(10.0, -path_loss_db(0.4) / 10)));
    CHECK(b.local(1) == b.row(1, 1));
}

TEST_CASE("shadowing has the configured spread in dB") {
    Positions p;
    p.bs = {{0.0, 0.0}};
    p.ue = {std::vector<Point>(20000, Point{100.0, 0.0})};
    RngStream rng(77, {StreamPurpose::shadowing, 0, 0});
    const BetaTensor b = large_scale_fading(p, 8.0, rng);
    double m = 0.0, m2 = 0.0;
    for (int k = 0; k < b.users(); ++k) {
        const double xi = -linear_to_db(b(0, 0, k)) - path_loss_db(0.1);
        m += xi;
        m2 += xi * xi;
    }
    m /= b.users();
    const double sd = std::sqrt(m2 / b.users() - m * m);
    CHECK(std::abs(m) < 0.2);
    CHECK(sd == doctest::Approx(8.0).epsilon(0.03));
}

TEST_CASE("channel columns carry their large-scale gain") {
    const ScenarioConfig cfg = test::small_config(2, 2, 16, 2);
    const Scenario sc = make_scenario(cfg, 5, 0);
    RngStream rng(5, {StreamPurpose::channel, 0, 0});
    std::vector<double> acc(8, 0.0);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        const ChannelRealization ch = sample_channels(sc, rng);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k)
                    acc[static_cast<std::size_t>((i * 2 + j) * 2 + k)] += test::column_power(ch.h[i][j], k) / 16.0;
    }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k)
                CHECK(acc[static_cast<std::size_t>((i * 2 + j) * 2 + k)] / draws ==
                      doctest::Approx(sc.beta(i, j, k)).epsilon(0.03));
}

TEST_CASE("noise-free single cell receives sqrt(tau) H Xbar^H exactly") {
    ScenarioConfig cfg = test::small_config(1, 3, 8, 4);
    const Scenario sc = make_scenario(cfg, 2, 0);
    RngStream rng(2, {StreamPurpose::channel, 0, 0});
    const ChannelRealization ch = sample_channels(sc, rng);
    const PilotSet pilots = random_pilots(4, 3, 1, 2, 0, sc.ue_power_cap_mw);
    const auto y = synthesize_received(sc, ch, pilots, nullptr, nullptr);
    const ComplexMatrix expect = ch.h[0][0] * pilots.merged(0).adjoint() * cplx(2.0);
    CHECK(test::max_abs_diff(y[0].y, expect) == 0.0);
}

TEST_CASE("two cells on disjoint orthogonal pilots: LS recovers the own channel") {
    ScenarioConfig cfg = test::small_config(2, 2, 8, 4);
    const Scenario sc = make_scenario(cfg, 3, 0);
    RngStream rng(3, {StreamPurpose::channel, 0, 0});
    const ChannelRealization ch = sample_channels(sc, rng);
    const ComplexMatrix f = dft_basis(4);
    ComplexMatrix x0(4, 2), x1(4, 2);
    for (std::size_t r = 0; r < 4; ++r) {
        x0(r, 0) = f(r, 0);
        x0(r, 1) = f(r, 1);
        x1(r, 0) = f(r, 2);
        x1(r, 1) = f(r, 3);
    }
    const PilotSet pilots({x0, x1}, {{100.0, 50.0}, {80.0, 199.0}});
    RngStream noise(3, {StreamPurpose::noise, 0, 0});
    const auto y = synthesize_received(sc, ch, pilots, nullptr, &noise);
    for (int i = 0; i < 2; ++i) {
        const ComplexMatrix xbar = pilots.merged(i);
        const ComplexMatrix est = ls_preprocess(y[static_cast<std::size_t>(i)].y, xbar);
        const ComplexMatrix awgn = ls_preprocess(y[static_cast<std::size_t>(i)].noise, xbar);
        CHECK(test::max_abs_diff(est - awgn, ch.h[i][i]) < 1e-12 * std::sqrt(frobenius_norm_sq(ch.h[i][i])));
    }
}

TEST_CASE("zero impairment gives zero distortion") {
    ScenarioConfig cfg = test::small_config(2, 2, 4, 2);
    const Scenario sc = make_scenario(cfg, 1, 0);
    RngStream rng(1, {});
    const ChannelRealization ch = sample_channels(sc, rng);
    const Distortion d = sample_distortion(rng, sc, ch, {{1.0, 2.0}, {3.0, 4.0}});
    for (const auto& e : d.eta_ue) CHECK(frobenius_norm_sq(e) == 0.0);
    for (const auto& e : d.eta_bs) CHECK(frobenius_norm_sq(e) == 0.0);
}

TEST_CASE("distortion-plus-noise covariance matches the model") {
    ScenarioConfig cfg = test::small_config(2, 2, 6, 3);
    cfg.delta_ue = 0.15;
    cfg.delta_bs = 0.1;
    cfg.noise_power_dbm = -90.0;
    const Scenario sc = make_scenario(cfg, 8, 0);
    RngStream rng(8, {StreamPurpose::channel, 0, 0});
    const ChannelRealization ch = sample_channels(sc, rng);
    const PilotSet pilots = orthogonal_pilots(3, 2, 2, 8, 0, sc.ue_power_cap_mw);
    const PowerMatrix& powers = pilots.powers();
    const ComplexMatrix model = distortion_covariance(sc, ch, powers, 0);

    RngStream draw(8, {StreamPurpose::distortion, 0, 0});
    RngStream nz(8, {StreamPurpose::noise, 0, 0});
    ComplexMatrix acc(6, 6);
    ComplexMatrix cross(3, 3);  // E[eta_BS^H eta_BS] off-diagonals (time decorrelation)
    const int draws = 100000;
    for (int d = 0; d < draws; ++d) {
        const Distortion dist = sample_distortion(draw, sc, ch, powers);
        const ComplexMatrix n = sample_complex_gaussian(nz, 6, 3, sc.noise_power_mw);
        const ComplexMatrix e = distortion_noise_term(sc, ch, dist, n, 0);
        acc += e * e.adjoint();
        cross += dist.eta_bs[0].adjoint() * dist.eta_bs[0];
    }
    acc *= 1.0 / draws;
    CHECK(rel_frobenius(acc, model) < 0.05);
    const double diag = std::abs(cross(0, 0));
    CHECK(std::abs(cross(0, 1)) < 0.02 * diag);
    CHECK(std::abs(cross(1, 2)) < 0.02 * diag);
}

TEST_CASE("empirical EVM equals the impairment level") {
    for (const double delta : {0.05, 0.1, 0.2}) {
        ScenarioConfig cfg = test::small_config(1, 4, 1, 10);
        cfg.delta_ue = delta;
        const Scenario sc = make_scenario(cfg, 4, 0);
        RngStream rng(4, {StreamPurpose::channel, 0, 0});
        const ChannelRealization ch = sample_channels(sc, rng);
        const PowerMatrix unit_power{{1.0, 1.0, 1.0, 1.0}};
        RngStream draw(4, {StreamPurpose::distortion, 0, 0});
        std::vector<ComplexMatrix> cols;
        const int symbols = 1000000;
        while (static_cast<int>(cols.size()) * 10 < symbols) {
            const Distortion d = sample_distortion(draw, sc, ch, unit_power);
            for (std::size_t k = 0; k < 4; ++k) {
                ComplexMatrix c(10, 1);
                std::copy(d.eta_ue[0].col(k).begin(), d.eta_ue[0].col(k).end(), c.col(0).begin());
                cols.push_back(std::move(c));
            }
        }
        // reference: ||sqrt(tau_p P) x||^2 with unit x and P = 1
        const double evm = measure_evm(cols, 10.0);
        CHECK(evm == doctest::Approx(delta).epsilon(delta == 0.1 ? 0.01 : 0.02));
    }
    CHECK(measure_evm(std::vector<ComplexMatrix>{ComplexMatrix(3, 1)}, 1.0) == 0.0);
    CHECK_THROWS_AS(measure_evm(std::vector<ComplexMatrix>{}, 1.0), std::invalid_argument);
}

TEST_CASE("same seed, same drop and received blocks") {
    ScenarioConfig cfg = test::small_config(3, 2, 4, 2);
    cfg.delta_ue = cfg.delta_bs = 0.1;
    auto run = [&] {
        const Scenario sc = make_scenario(cfg, 42, 3);
        RngStream rng(42, {StreamPurpose::channel, 0, 3});
        const ChannelRealization ch = sample_channels(sc, rng);
        const PilotSet p = orthogonal_pilots(2, 2, 3, 42, 3, sc.ue_power_cap_mw);
        RngStream d(42, {StreamPurpose::distortion, 0, 3});
        const Distortion dist = sample_distortion(d, sc, ch, p.powers());
        RngStream n(42, {StreamPurpose::noise, 0, 3});
        return std::make_pair(sc.beta.data(), synthesize_received(sc, ch, p, &dist, &n));
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.second[i].y == b.second[i].y);
    CHECK(make_scenario(cfg, 42, 4).beta.data() != a.first);
}

TEST_CASE("configuration validation") {
    ScenarioConfig c = test::small_config(1, 1, 1, 1);
    CHECK_NOTHROW(c.validate());
    c.delta_ue = 0.3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = test::small_config(0, 1, 1, 1);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = test::small_config(1, 1, 1, 0);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
