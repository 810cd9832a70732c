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
#include <iosfwd>
#include <string>
#include <vector>

#include "mce/pilot_net.hpp"
#include "mce/residual_net.hpp"

namespace mce {

struct LayerCount {
    std::string name;
    std::uint64_t macs = 0;
};

struct FlopsReport {
    std::vector<LayerCount> pilot_layers;      ///< one forward pass, one cell
    std::vector<LayerCount> estimator_layers;  ///< one forward pass, one N x K input
    std::uint64_t pilot_forward = 0;
    std::uint64_t estimator_forward = 0;
    /// Forward MACs over a whole training run: epochs * N_T * L passes.
    double pilot_training = 0.0;
    double estimator_training = 0.0;
    /// Asymptotic expressions at the same point: epochs * N_T * L * (tau_p K)^2 and
    /// epochs * N_T * N K * sum_m n_{m-1} n_m F^2 (F = 3).
    double pilot_asymptotic = 0.0;
    double estimator_asymptotic = 0.0;
};

FlopsReport flops_report(const PilotNetConfig& pilot, const ResidualNetConfig& estimator, int antennas, int cells,
                         int train_samples, int epochs);

void print_flops(std::ostream& os, const FlopsReport& r);

}  // namespace mce
