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

#include "mce/flops.hpp"

#include <cstdio>
#include <ostream>

namespace mce {

FlopsReport flops_report(const PilotNetConfig& pilot, const ResidualNetConfig& estimator, int antennas, int cells,
                         int train_samples, int epochs) {
    pilot.validate();
    estimator.validate();
    FlopsReport r;
    using u64 = std::uint64_t;

    u64 n_in = static_cast<u64>(pilot.users);
    const u64 width = static_cast<u64>(pilot.hidden_width());
    const u64 n_final = 2ULL * static_cast<u64>(pilot.pilot_length) * static_cast<u64>(pilot.users);
    for (int m = 0; m <= pilot.hidden_layers; ++m) {
        const bool last = m == pilot.hidden_layers;
        const u64 n_out = last ? n_final : width;
        r.pilot_layers.push_back({last ? "dense_out" : "dense" + std::to_string(m + 1), n_in * n_out});
        r.pilot_forward += n_in * n_out;
        n_in = n_out;
    }

    const u64 pixels = static_cast<u64>(antennas) * static_cast<u64>(pilot.users);
    u64 cin = static_cast<u64>(estimator.input_channels());
    const u64 f = static_cast<u64>(estimator.filters);
    u64 channel_products = 0;
    for (int m = 0; m < estimator.layers; ++m) {
        r.estimator_layers.push_back({"conv" + std::to_string(m + 1), 9 * cin * f * pixels});
        channel_products += cin * f;
        cin = f;
    }
    if (estimator.mode == EstimatorMode::proposed) {
        r.estimator_layers.push_back({"alpha", 9 * f * 2 * pixels});
        channel_products += 2 * f;
    }
    r.estimator_layers.push_back({"gamma", 9 * f * 2 * pixels});
    channel_products += 2 * f;
    for (const auto& l : r.estimator_layers) r.estimator_forward += l.macs;

    const double passes = static_cast<double>(epochs) * train_samples * cells;
    r.pilot_training = passes * static_cast<double>(r.pilot_forward);
    r.estimator_training = passes * static_cast<double>(r.estimator_forward);
    const double tk = static_cast<double>(pilot.pilot_length) * pilot.users;
    r.pilot_asymptotic = passes * tk * tk;
    r.estimator_asymptotic =
        static_cast<double>(epochs) * train_samples * static_cast<double>(pixels) * static_cast<double>(channel_products) * 9.0;
    return r;
}

void print_flops(std::ostream& os, const FlopsReport& r) {
    char buf[160];
    os << "pilot generator, one forward pass per cell\n";
    for (const auto& l : r.pilot_layers) {
        std::snprintf(buf, sizeof buf, "  %-10s %14llu MAC\n", l.name.c_str(), static_cast<unsigned long long>(l.macs));
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "  %-10s %14llu MAC\n", "total", static_cast<unsigned long long>(r.pilot_forward));
    os << buf;
    os << "residual estimator, one forward pass per N x K block\n";
    for (const auto& l : r.estimator_layers) {
        std::snprintf(buf, sizeof buf, "  %-10s %14llu MAC\n", l.name.c_str(), static_cast<unsigned long long>(l.macs));
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "  %-10s %14llu MAC\n", "total", static_cast<unsigned long long>(r.estimator_forward));
    os << buf;
    os << "training run (forward passes only)\n";
    std::snprintf(buf, sizeof buf, "  pilot      exact %.6e  O(N_ep N_T L (tau_p K)^2) %.6e  ratio %.4f\n",
                  r.pilot_training, r.pilot_asymptotic, r.pilot_training / r.pilot_asymptotic);
    os << buf;
    std::snprintf(buf, sizeof buf, "  estimator  exact %.6e  O(N_ep N_T N K sum n n F^2) %.6e  ratio %.4f\n",
                  r.estimator_training, r.estimator_asymptotic, r.estimator_training / r.estimator_asymptotic);
    os << buf;
}

}  // namespace mce
