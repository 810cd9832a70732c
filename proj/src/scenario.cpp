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

#include "mce/scenario.hpp"

#include <numbers>
#include <sstream>

#include "mce/pilots.hpp"

namespace mce {

namespace {

constexpr int kMaxRejections = 10000;

double distance(const Point& a, const Point& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

}  // namespace

void TopologyConfig::validate() const {
    std::ostringstream os;
    if (cells < 1) os << "cells must be >= 1; ";
    if (users_per_cell < 1) os << "users_per_cell must be >= 1; ";
    if (antennas < 1) os << "antennas must be >= 1; ";
    if (!(isd_m > 0.0)) os << "isd_m must be > 0; ";
    if (!(min_ue_distance_m > 0.0) || !(min_ue_distance_m < isd_m / 2.0)) os << "min_ue_distance_m must be in (0, isd/2); ";
    if (!(shadowing_stddev_db >= 0.0)) os << "shadowing_stddev_db must be >= 0; ";
    if (!os.str().empty()) throw std::invalid_argument("TopologyConfig: " + os.str());
}

void ScenarioConfig::validate() const {
    topology.validate();
    std::ostringstream os;
    if (pilot_length < 1) os << "pilot_length must be >= 1; ";
    if (!std::isfinite(noise_power_dbm)) os << "noise_power_dbm must be finite; ";
    if (!std::isfinite(ue_power_cap_dbm)) os << "ue_power_cap_dbm must be finite; ";
    if (!(delta_ue >= 0.0 && delta_ue <= 0.2)) os << "delta_ue must be in [0, 0.2]; ";
    if (!(delta_bs >= 0.0 && delta_bs <= 0.2)) os << "delta_bs must be in [0, 0.2]; ";
    if (!os.str().empty()) throw std::invalid_argument("ScenarioConfig: " + os.str());
}

std::vector<Point> hex_cell_centers(int cells, double isd_m) {
    std::vector<Point> out{{0.0, 0.0}};
    // Axial coordinates, ring by ring. Flat-topped cells: neighbours at 30 + 60m degrees.
    const double ax = std::numbers::pi / 6.0;
    const Point e1{isd_m * std::cos(ax), isd_m * std::sin(ax)};
    const Point e2{0.0, isd_m};
    const int dirs[6][2] = {{1, 0}, {0, 1}, {-1, 1}, {-1, 0}, {0, -1}, {1, -1}};
    for (int ring = 1; static_cast<int>(out.size()) < cells; ++ring) {
        int q = ring * dirs[4][0];
        int r = ring * dirs[4][1];
        for (int side = 0; side < 6 && static_cast<int>(out.size()) < cells; ++side) {
            for (int step = 0; step < ring && static_cast<int>(out.size()) < cells; ++step) {
                out.push_back({q * e1[0] + r * e2[0], q * e1[1] + r * e2[1]});
                q += dirs[side][0];
                r += dirs[side][1];
            }
        }
    }
    out.resize(static_cast<std::size_t>(cells));
    return out;
}

bool inside_hexagon(const Point& offset, double isd_m) {
    const double radius = isd_m / std::sqrt(3.0);
    const double x = std::abs(offset[0]);
    const double y = std::abs(offset[1]);
    return y <= std::sqrt(3.0) / 2.0 * radius && std::sqrt(3.0) * x + y <= std::sqrt(3.0) * radius;
}

Positions drop_topology(const TopologyConfig& config, RngStream& rng) {
    config.validate();
    Positions pos;
    pos.bs = hex_cell_centers(config.cells, config.isd_m);
    const double radius = config.isd_m / std::sqrt(3.0);
    pos.ue.resize(static_cast<std::size_t>(config.cells));
    for (int j = 0; j < config.cells; ++j) {
        const Point c = pos.bs[static_cast<std::size_t>(j)];
        for (int k = 0; k < config.users_per_cell; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
                const Point off{rng.uniform(-radius, radius), rng.uniform(-radius, radius)};
                if (!inside_hexagon(off, config.isd_m)) continue;
                const Point p{c[0] + off[0], c[1] + off[1]};
                bool far = true;
                for (const auto& b : pos.bs)
                    if (distance(p, b) < config.min_ue_distance_m) far = false;
                if (!far) continue;
                pos.ue[static_cast<std::size_t>(j)].push_back(p);
                placed = true;
                break;
            }
            if (!placed) {
                std::ostringstream os;
                os << "drop_topology: no valid position for UE " << k << " of cell " << j << " after "
                   << kMaxRejections << " attempts";
                throw RejectionOverflow(os.str());
            }
        }
    }
    return pos;
}

std::vector<double> BetaTensor::local(int cell) const { return row(cell, cell); }

std::vector<double> BetaTensor::row(int bs, int cell) const {
    const auto first = data_.begin() + static_cast<std::ptrdiff_t>(index(bs, cell, 0));
    return {first, first + k_};
}

double path_loss_db(double distance_km) {
    if (!(distance_km > 0.0)) throw std::invalid_argument("path_loss_db: distance must be > 0");
    return 128.1 + 37.6 * std::log10(distance_km);
}

BetaTensor large_scale_fading(const Positions& positions, double shadowing_stddev_db, RngStream& shadowing) {
    const int l = static_cast<int>(positions.bs.size());
    const int k = positions.ue.empty() ? 0 : static_cast<int>(positions.ue.front().size());
    BetaTensor beta(l, k);
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j)
            for (int u = 0; u < k; ++u) {
                const double d_km =
                    distance(positions.bs[static_cast<std::size_t>(i)],
                             positions.ue[static_cast<std::size_t>(j)][static_cast<std::size_t>(u)]) /
                    1000.0;
                const double xi = shadowing.normal() * shadowing_stddev_db;
                beta(i, j, u) = db_to_linear(-(path_loss_db(d_km) + xi));
            }
    return beta;
}

void Scenario::validate() const {
    topology.validate();
    std::ostringstream os;
    if (beta.cells() != cells() || beta.users() != users()) os << "beta shape mismatch; ";
    for (double b : beta.data())
        if (!(b > 0.0) || !std::isfinite(b)) {
            os << "beta must be positive and finite; ";
            break;
        }
    if (delta_ue.size() != static_cast<std::size_t>(cells())) os << "delta_ue shape mismatch; ";
    for (const auto& row : delta_ue) {
        if (row.size() != static_cast<std::size_t>(users())) os << "delta_ue shape mismatch; ";
        for (double d : row)
            if (!(d >= 0.0 && d <= 0.2)) os << "delta_ue out of [0, 0.2]; ";
    }
    if (delta_bs.size() != static_cast<std::size_t>(cells())) os << "delta_bs shape mismatch; ";
    for (double d : delta_bs)
        if (!(d >= 0.0 && d <= 0.2)) os << "delta_bs out of [0, 0.2]; ";
    if (!(noise_power_mw > 0.0)) os << "noise power must be > 0; ";
    if (pilot_length < 1) os << "pilot_length must be >= 1; ";
    if (!(ue_power_cap_mw > 0.0)) os << "ue power cap must be > 0; ";
    if (!os.str().empty()) throw std::invalid_argument("Scenario: " + os.str());
}

Scenario scenario_from_beta(const ScenarioConfig& config, BetaTensor beta) {
    Scenario s;
    s.topology = config.topology;
    s.beta = std::move(beta);
    s.delta_ue.assign(static_cast<std::size_t>(config.topology.cells),
                      std::vector<double>(static_cast<std::size_t>(config.topology.users_per_cell), config.delta_ue));
    s.delta_bs.assign(static_cast<std::size_t>(config.topology.cells), config.delta_bs);
    s.noise_power_mw = dbm_to_mw(config.noise_power_dbm);
    s.pilot_length = config.pilot_length;
    s.ue_power_cap_mw = dbm_to_mw(config.ue_power_cap_dbm);
    s.validate();
    return s;
}

Scenario make_scenario(const ScenarioConfig& config, std::uint64_t seed, std::uint64_t sample) {
    config.validate();
    RngStream topo(seed, {StreamPurpose::topology, 0, sample});
    RngStream shadow(seed, {StreamPurpose::shadowing, 0, sample});
    Positions pos = drop_topology(config.topology, topo);
    BetaTensor beta = large_scale_fading(pos, config.topology.shadowing_stddev_db, shadow);
    Scenario s = scenario_from_beta(config, std::move(beta));
    s.positions = std::move(pos);
    return s;
}

ChannelRealization sample_channels(const Scenario& scenario, RngStream& rng) {
    const int l = scenario.cells();
    const auto n = static_cast<std::size_t>(scenario.antennas());
    const auto k = static_cast<std::size_t>(scenario.users());
    ChannelRealization ch;
    ch.h.resize(static_cast<std::size_t>(l));
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j) {
            ComplexMatrix g = sample_complex_gaussian(rng, n, k, 1.0);
            std::vector<double> amp = scenario.beta.row(i, j);
            for (auto& a : amp) a = std::sqrt(a);
            ch.h[static_cast<std::size_t>(i)].push_back(scale_columns(std::move(g), amp));
        }
    return ch;
}

DistortionDraws sample_distortion_draws(RngStream& rng, const Scenario& scenario) {
    const auto l = static_cast<std::size_t>(scenario.cells());
    const auto n = static_cast<std::size_t>(scenario.antennas());
    const auto k = static_cast<std::size_t>(scenario.users());
    const auto t = static_cast<std::size_t>(scenario.pilot_length);
    DistortionDraws d;
    for (std::size_t j = 0; j < l; ++j) d.ue.push_back(sample_complex_gaussian(rng, t, k, 1.0));
    for (std::size_t i = 0; i < l; ++i) d.bs.push_back(sample_complex_gaussian(rng, n, t, 1.0));
    return d;
}

namespace {

/// Per-antenna power sum_j sum_k |H_ij[n,k]|^2 P_jk seen at BS i.
std::vector<double> received_power_per_antenna(const Scenario& scenario, const ChannelRealization& channels,
                                               const PowerMatrix& powers, int bs) {
    const auto n = static_cast<std::size_t>(scenario.antennas());
    std::vector<double> acc(n, 0.0);
    for (int j = 0; j < scenario.cells(); ++j) {
        const ComplexMatrix& h = channels.h[static_cast<std::size_t>(bs)][static_cast<std::size_t>(j)];
        const auto& p = powers[static_cast<std::size_t>(j)];
        for (std::size_t k = 0; k < h.cols(); ++k)
            for (std::size_t r = 0; r < n; ++r) acc[r] += std::norm(h(r, k)) * p[k];
    }
    return acc;
}

void check_powers(const Scenario& scenario, const PowerMatrix& powers) {
    if (powers.size() != static_cast<std::size_t>(scenario.cells()))
        throw DimensionMismatch("power matrix: cell count mismatch");
    for (const auto& p : powers)
        if (p.size() != static_cast<std::size_t>(scenario.users()))
            throw DimensionMismatch("power matrix: user count mismatch");
}

}  // namespace

Distortion scale_distortion(const DistortionDraws& draws, const Scenario& scenario,
                            const ChannelRealization& channels, const PowerMatrix& powers) {
    check_powers(scenario, powers);
    const auto l = static_cast<std::size_t>(scenario.cells());
    Distortion d;
    for (std::size_t j = 0; j < l; ++j) {
        std::vector<double> s(powers[j].size());
        for (std::size_t k = 0; k < s.size(); ++k) s[k] = scenario.delta_ue[j][k] * std::sqrt(powers[j][k]);
        d.eta_ue.push_back(scale_columns(draws.ue[j], s));
    }
    for (std::size_t i = 0; i < l; ++i) {
        ComplexMatrix e = draws.bs[i];
        const std::vector<double> pw = received_power_per_antenna(scenario, channels, powers, static_cast<int>(i));
        for (std::size_t c = 0; c < e.cols(); ++c)
            for (std::size_t r = 0; r < e.rows(); ++r) e(r, c) *= scenario.delta_bs[i] * std::sqrt(pw[r]);
        d.eta_bs.push_back(std::move(e));
    }
    return d;
}

Distortion sample_distortion(RngStream& rng, const Scenario& scenario, const ChannelRealization& channels,
                             const PowerMatrix& powers) {
    return scale_distortion(sample_distortion_draws(rng, scenario), scenario, channels, powers);
}

std::vector<ReceivedBlock> synthesize_received(const Scenario& scenario, const ChannelRealization& channels,
                                               const PilotSet& pilots, const Distortion* distortion,
                                               const std::vector<ComplexMatrix>& noise) {
    const int l = scenario.cells();
    const auto n = static_cast<std::size_t>(scenario.antennas());
    const auto t = static_cast<std::size_t>(scenario.pilot_length);
    if (pilots.cells() != l || pilots.users() != scenario.users() || pilots.length() != scenario.pilot_length)
        throw DimensionMismatch("synthesize_received: pilot set does not match scenario");
    if (noise.size() != static_cast<std::size_t>(l)) throw DimensionMismatch("synthesize_received: noise count");
    std::vector<ComplexMatrix> transmitted;  // Xbar_j^H + eta_UE_j^H, K x tau_p
    for (int j = 0; j < l; ++j) {
        ComplexMatrix s = pilots.merged(j).adjoint();
        if (distortion) s += distortion->eta_ue[static_cast<std::size_t>(j)].adjoint();
        transmitted.push_back(std::move(s));
    }
    const double root_tau = std::sqrt(static_cast<double>(t));
    std::vector<ReceivedBlock> out;
    for (int i = 0; i < l; ++i) {
        ComplexMatrix y(n, t);
        for (int j = 0; j < l; ++j)
            y += channels.h[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                 transmitted[static_cast<std::size_t>(j)];
        y *= root_tau;
        if (distortion) y += distortion->eta_bs[static_cast<std::size_t>(i)];
        const ComplexMatrix& ni = noise[static_cast<std::size_t>(i)];
        if (ni.rows() != n || ni.cols() != t) throw DimensionMismatch("synthesize_received: noise shape");
        y += ni;
        out.push_back({std::move(y), ni});
    }
    return out;
}

std::vector<ReceivedBlock> synthesize_received(const Scenario& scenario, const ChannelRealization& channels,
                                               const PilotSet& pilots, const Distortion* distortion,
                                               RngStream* noise) {
    const auto n = static_cast<std::size_t>(scenario.antennas());
    const auto t = static_cast<std::size_t>(scenario.pilot_length);
    std::vector<ComplexMatrix> draws;
    for (int i = 0; i < scenario.cells(); ++i)
        draws.push_back(noise ? sample_complex_gaussian(*noise, n, t, scenario.noise_power_mw) : ComplexMatrix(n, t));
    return synthesize_received(scenario, channels, pilots, distortion, draws);
}

ComplexMatrix distortion_noise_term(const Scenario& scenario, const ChannelRealization& channels,
                                    const Distortion& distortion, const ComplexMatrix& noise, int cell) {
    const auto i = static_cast<std::size_t>(cell);
    ComplexMatrix out = distortion.eta_bs[i] + noise;
    const double root_tau = std::sqrt(static_cast<double>(scenario.pilot_length));
    for (int j = 0; j < scenario.cells(); ++j)
        out += root_tau * (channels.h[i][static_cast<std::size_t>(j)] *
                           distortion.eta_ue[static_cast<std::size_t>(j)].adjoint());
    return out;
}

ComplexMatrix distortion_covariance(const Scenario& scenario, const ChannelRealization& channels,
                                    const PowerMatrix& powers, int cell) {
    check_powers(scenario, powers);
    const auto i = static_cast<std::size_t>(cell);
    const auto n = static_cast<std::size_t>(scenario.antennas());
    const double tau = scenario.pilot_length;
    ComplexMatrix cov(n, n);
    for (int j = 0; j < scenario.cells(); ++j) {
        const auto jj = static_cast<std::size_t>(j);
        const ComplexMatrix& h = channels.h[i][jj];
        std::vector<double> w(h.cols());
        for (std::size_t k = 0; k < w.size(); ++k)
            w[k] = tau * tau * scenario.delta_ue[jj][k] * scenario.delta_ue[jj][k] * powers[jj][k];
        cov += scale_columns(h, w) * h.adjoint();
    }
    const std::vector<double> pw = received_power_per_antenna(scenario, channels, powers, cell);
    const double dbs2 = scenario.delta_bs[i] * scenario.delta_bs[i];
    for (std::size_t r = 0; r < n; ++r) cov(r, r) += tau * (dbs2 * pw[r] + scenario.noise_power_mw);
    return cov;
}

double measure_evm(std::span<const ComplexMatrix> distortion, double reference_energy) {
    if (distortion.empty()) throw std::invalid_argument("measure_evm: need at least one sample");
    if (!(reference_energy > 0.0)) throw std::invalid_argument("measure_evm: reference energy must be > 0");
    double e = 0.0;
    for (const auto& d : distortion) e += frobenius_norm_sq(d);
    return std::sqrt(e / static_cast<double>(distortion.size()) / reference_energy);
}

}  // namespace mce
