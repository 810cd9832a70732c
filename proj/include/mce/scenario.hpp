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

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mce/numerics.hpp"

namespace mce {

class PilotSet;

struct TopologyConfig {
    int cells = 7;                    ///< L
    int users_per_cell = 10;          ///< K
    double isd_m = 500.0;
    double min_ue_distance_m = 35.0;
    int antennas = 100;               ///< N
    double shadowing_stddev_db = 8.0;

    void validate() const;
};

/// Everything needed to instantiate a drop besides the geometry.
struct ScenarioConfig {
    TopologyConfig topology;
    int pilot_length = 10;            ///< tau_p
    double noise_power_dbm = -96.0;   ///< sigma^2
    double ue_power_cap_dbm = 23.0;   ///< P_max
    double delta_ue = 0.0;            ///< same RHWI level for every UE
    double delta_bs = 0.0;            ///< same RHWI level for every BS

    void validate() const;
};

using Point = std::array<double, 2>;

struct Positions {
    std::vector<Point> bs;                  ///< [L]
    std::vector<std::vector<Point>> ue;     ///< [L][K]
};

struct RejectionOverflow : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Hexagonal cell centres, centre cell first then ring by ring.
std::vector<Point> hex_cell_centers(int cells, double isd_m);

/// True when `offset` (relative to the cell centre) lies in a flat-topped hexagon
/// with circumradius isd/sqrt(3).
bool inside_hexagon(const Point& offset, double isd_m);

Positions drop_topology(const TopologyConfig& config, RngStream& rng);

/// Large-scale fading beta[i][j][k] between BS i and UE k of cell j, linear.
class BetaTensor {
public:
    BetaTensor() = default;
    BetaTensor(int cells, int users) : l_(cells), k_(users), data_(static_cast<std::size_t>(cells * cells * users)) {}

    double& operator()(int bs, int cell, int ue) { return data_[index(bs, cell, ue)]; }
    double operator()(int bs, int cell, int ue) const { return data_[index(bs, cell, ue)]; }
    int cells() const { return l_; }
    int users() const { return k_; }
    /// beta[i][i][*]: what BS i knows.
    std::vector<double> local(int cell) const;
    std::vector<double> row(int bs, int cell) const;
    const std::vector<double>& data() const { return data_; }

private:
    std::size_t index(int i, int j, int k) const { return static_cast<std::size_t>((i * l_ + j) * k_ + k); }
    int l_ = 0;
    int k_ = 0;
    std::vector<double> data_;
};

/// Path loss in dB for a distance in km, without shadowing.
double path_loss_db(double distance_km);

BetaTensor large_scale_fading(const Positions& positions, double shadowing_stddev_db, RngStream& shadowing);

struct Scenario {
    TopologyConfig topology;
    std::optional<Positions> positions;
    BetaTensor beta;
    std::vector<std::vector<double>> delta_ue;  ///< [L][K]
    std::vector<double> delta_bs;               ///< [L]
    double noise_power_mw = 0.0;
    int pilot_length = 1;
    double ue_power_cap_mw = 0.0;

    int cells() const { return topology.cells; }
    int users() const { return topology.users_per_cell; }
    int antennas() const { return topology.antennas; }
    void validate() const;
};

/// One full drop: geometry, shadowing and RHWI levels from the config.
Scenario make_scenario(const ScenarioConfig& config, std::uint64_t seed, std::uint64_t sample);

/// Scenario with a given beta tensor (no geometry); used by oracles and tests.
Scenario scenario_from_beta(const ScenarioConfig& config, BetaTensor beta);

/// H[i][j] = G_{i,j} D_{i,j}^{1/2}, N x K.
struct ChannelRealization {
    std::vector<std::vector<ComplexMatrix>> h;  ///< [bs][cell]
};

ChannelRealization sample_channels(const Scenario& scenario, RngStream& rng);

struct Distortion {
    std::vector<ComplexMatrix> eta_ue;  ///< [cell] tau_p x K
    std::vector<ComplexMatrix> eta_bs;  ///< [bs]   N x tau_p
};

/// Per-UE transmit powers P_{j,k} in mW.
using PowerMatrix = std::vector<std::vector<double>>;

/// RHWI distortion for one coherence block. UE columns are CN(0, d_ue^2 P I);
/// BS column t is CN(0, d_bs^2 sum_j diag(H P H^H)), independent over t.
Distortion sample_distortion(RngStream& rng, const Scenario& scenario, const ChannelRealization& channels,
                             const PowerMatrix& powers);

/// Unit-variance draws that `scale_distortion` turns into a Distortion.
struct DistortionDraws {
    std::vector<ComplexMatrix> ue;  ///< [cell] tau_p x K, CN(0,1)
    std::vector<ComplexMatrix> bs;  ///< [bs]   N x tau_p, CN(0,1)
};

DistortionDraws sample_distortion_draws(RngStream& rng, const Scenario& scenario);
Distortion scale_distortion(const DistortionDraws& draws, const Scenario& scenario,
                            const ChannelRealization& channels, const PowerMatrix& powers);

struct ReceivedBlock {
    ComplexMatrix y;      ///< N x tau_p
    ComplexMatrix noise;  ///< n_i, kept for oracle tests
};

/// Y_i = sqrt(tau_p) sum_j H_ij (Xbar_j^H + eta_UE_j^H) + eta_BS_i + n_i.
/// `noise` may be null for a noise-free block.
std::vector<ReceivedBlock> synthesize_received(const Scenario& scenario, const ChannelRealization& channels,
                                               const PilotSet& pilots, const Distortion* distortion,
                                               RngStream* noise);

/// Same synthesis from explicit AWGN matrices (one per cell).
std::vector<ReceivedBlock> synthesize_received(const Scenario& scenario, const ChannelRealization& channels,
                                               const PilotSet& pilots, const Distortion* distortion,
                                               const std::vector<ComplexMatrix>& noise);

/// Distortion-plus-noise term Ntilde_i of one cell's received block.
ComplexMatrix distortion_noise_term(const Scenario& scenario, const ChannelRealization& channels,
                                    const Distortion& distortion, const ComplexMatrix& noise, int cell);

/// Covariance E[Ntilde Ntilde^H] for fixed H.
ComplexMatrix distortion_covariance(const Scenario& scenario, const ChannelRealization& channels,
                                    const PowerMatrix& powers, int cell);

/// sqrt(E||eta||^2 / reference_energy), averaged over the samples.
double measure_evm(std::span<const ComplexMatrix> distortion, double reference_energy);

}  // namespace mce
