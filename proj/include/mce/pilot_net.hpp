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

#include <cstdint>
#include <vector>

#include "mce/autodiff.hpp"
#include "mce/pilots.hpp"
#include "mce/scenario.hpp"

namespace mce {

/// Local large-scale fading in dB, mapped affinely from [-130, -60] to [-1, 1] and clipped.
double beta_feature(double beta);

struct PilotNetConfig {
    int pilot_length = 4;
    int users = 4;
    int hidden_layers = 2;     ///< M
    int width_factor = 4;      ///< hidden width = width_factor * tau_p * K
    double dropout = 0.0;
    double power_cap_mw = 199.526;

    int hidden_width() const { return width_factor * pilot_length * users; }
    void validate() const;
};

/// Fully connected generator shared by all cells: local beta (K) -> merged pilot Xbar (tau_p x K).
class PilotNet {
public:
    PilotNet() = default;
    PilotNet(const PilotNetConfig& cfg, std::uint64_t seed);

    const PilotNetConfig& config() const { return cfg_; }
    std::vector<ad::Parameter>& params() { return params_; }
    const std::vector<ad::Parameter>& params() const { return params_; }
    std::vector<ad::Parameter*> param_ptrs();

    /// Raw outputs u [B, 2 tau_p K] for a batch of local-beta rows, parameters trainable.
    ad::Var forward_raw(ad::Tape& tape, const std::vector<std::vector<double>>& beta_rows, RngStream* dropout_rng);
    /// Same with the parameters entered as constants (no dropout).
    ad::Var forward_frozen(ad::Tape& tape, const std::vector<std::vector<double>>& beta_rows) const;
    /// Xbar for row b of `raw`: sqrt(P_max) * reshape(u), then the power cap.
    ad::Var pilot(ad::Tape& tape, ad::Var raw, int row) const;

    /// Inference for one cell.
    ComplexMatrix infer(const std::vector<double>& beta_local) const;
    /// Pilots of every cell of a drop.
    PilotSet infer_set(const Scenario& scenario) const;

private:
    template <class Bind>
    ad::Var forward_impl(ad::Tape& tape, const std::vector<std::vector<double>>& beta_rows, RngStream* dropout_rng,
                         Bind bind) const;

    PilotNetConfig cfg_;
    std::vector<ad::Parameter> params_;  ///< W_1, b_1, ..., W_out, b_out
};

/// Contamination-aware loss for one drop: sum_i Tr((D_ii^{-1} + Xbar_i^H Bbar_i^{-1} Xbar_i)^{-1}),
/// Bbar_i = sum_{j != i} Xbar_j D_ij Xbar_j^H + phi_i I with phi_i from the pilot powers.
ad::Var loss_aware(ad::Tape& tape, const std::vector<ad::Var>& merged_pilots, const Scenario& scenario);
/// Single-cell term of loss_aware.
ad::Var loss_aware_cell(ad::Tape& tape, const std::vector<ad::Var>& merged_pilots, const Scenario& scenario, int cell);

/// Contamination-unaware loss Tr((D^{-1} + (tau_p / sigma^2) Xbar^H Xbar)^{-1}); local quantities only.
ad::Var loss_unaware(ad::Tape& tape, ad::Var merged_pilot, const std::vector<double>& beta_local, int pilot_length,
                     double noise_power_mw);

}  // namespace mce
