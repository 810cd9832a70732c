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
#include <span>
#include <string>
#include <vector>

#include "mce/autodiff.hpp"

namespace mce {

/// proposed: beta channel and alpha/gamma heads. cdrn: no beta channel, alpha = 0.
/// cdrn_local: beta channel kept, alpha = 0.
enum class EstimatorMode { proposed, cdrn, cdrn_local };

EstimatorMode parse_estimator_mode(const std::string& s);
std::string to_string(EstimatorMode m);

struct ResidualNetConfig {
    int layers = 7;     ///< M conv layers in the noise-level estimator
    int filters = 64;
    EstimatorMode mode = EstimatorMode::proposed;
    bool zero_init_heads = true;  ///< start from the LS estimator

    int input_channels() const { return mode == EstimatorMode::cdrn ? 2 : 4; }
    void validate() const;
};

/// Per-column factors s_k that Yhat is divided by before the network: the RMS of
/// the real components of column k, or of the whole block in cdrn mode.
std::vector<double> input_scale(const ComplexMatrix& yhat, const std::vector<double>& beta_local, EstimatorMode mode);

/// N x K x C network input: Re, Im of the scaled Yhat, then the planes of
/// beta_k / s_k^2 in dB and of beta_k itself (both omitted in cdrn mode).
ad::Tensor assemble_input(const ComplexMatrix& yhat, const std::vector<double>& beta_local, EstimatorMode mode);

/// Distortion-noise-level estimator (conv + ReLU stack) followed by the alpha/gamma denoiser.
class ResidualNet {
public:
    struct Output {
        ad::Var estimate;  ///< Hhat planes [B, N, K, 2], in the units of Yhat
        ad::Var alpha;     ///< [B, N, K, 2] or invalid tape (cdrn modes)
        ad::Var gamma;     ///< [B, N, K, 2]
    };

    ResidualNet() = default;
    ResidualNet(const ResidualNetConfig& cfg, std::uint64_t seed);

    const ResidualNetConfig& config() const { return cfg_; }
    std::vector<ad::Parameter>& params() { return params_; }
    const std::vector<ad::Parameter>& params() const { return params_; }
    std::vector<ad::Parameter*> param_ptrs();

    /// `yhat` holds Yhat planes [B, N, K, 2]; beta_rows[b] the local beta of sample b.
    Output forward(ad::Tape& tape, ad::Var yhat, const std::vector<std::vector<double>>& beta_rows);
    Output forward_frozen(ad::Tape& tape, ad::Var yhat, const std::vector<std::vector<double>>& beta_rows) const;

    /// Noise-level map I [B, N, K, filters] for an assembled input.
    ad::Var noise_level(ad::Tape& tape, ad::Var input) const;

    /// Batched inference.
    std::vector<ComplexMatrix> estimate(std::span<const ComplexMatrix> yhat,
                                        std::span<const std::vector<double>> beta_rows) const;

private:
    template <class Bind>
    Output forward_impl(ad::Tape& tape, ad::Var yhat, const std::vector<std::vector<double>>& beta_rows,
                        Bind bind) const;

    ResidualNetConfig cfg_;
    std::vector<ad::Parameter> params_;  ///< conv1.k, conv1.b, ..., alpha.k, alpha.b, gamma.k, gamma.b
};

}  // namespace mce
