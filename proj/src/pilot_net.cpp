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

#include "mce/pilot_net.hpp"

#include <algorithm>

namespace mce {

using ad::Tape;
using ad::Tensor;
using ad::Var;

double beta_feature(double beta) {
    const double db = linear_to_db(beta);
    return std::clamp((db + 95.0) / 35.0, -1.0, 1.0);
}

void PilotNetConfig::validate() const {
    if (pilot_length < 1 || users < 1) throw std::invalid_argument("PilotNetConfig: tau_p and K must be >= 1");
    if (hidden_layers < 0 || width_factor < 1) throw std::invalid_argument("PilotNetConfig: bad hidden layout");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("PilotNetConfig: dropout must be in [0, 1)");
    if (!(power_cap_mw > 0.0)) throw std::invalid_argument("PilotNetConfig: power cap must be > 0");
}

PilotNet::PilotNet(const PilotNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RngStream rng(seed, {StreamPurpose::init, 1, 0});
    int n_in = cfg_.users;
    const int width = cfg_.hidden_width();
    const int n_final = 2 * cfg_.pilot_length * cfg_.users;
    for (int m = 0; m <= cfg_.hidden_layers; ++m) {
        const bool last = m == cfg_.hidden_layers;
        const int n_out = last ? n_final : width;
        const std::string tag = last ? "out" : std::to_string(m + 1);
        Tensor w({n_in, n_out});
        ad::glorot_uniform(w, n_in, n_out, rng);
        params_.emplace_back("pilot.W" + tag, std::move(w));
        params_.emplace_back("pilot.b" + tag, Tensor({n_out}));
        n_in = n_out;
    }
}

std::vector<ad::Parameter*> PilotNet::param_ptrs() {
    std::vector<ad::Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

template <class Bind>
Var PilotNet::forward_impl(Tape& tape, const std::vector<std::vector<double>>& beta_rows, RngStream* dropout_rng,
                           Bind bind) const {
    const int b = static_cast<int>(beta_rows.size());
    Tensor feat({b, cfg_.users});
    for (int s = 0; s < b; ++s) {
        if (beta_rows[static_cast<std::size_t>(s)].size() != static_cast<std::size_t>(cfg_.users))
            throw DimensionMismatch("PilotNet: beta row has wrong length");
        for (int k = 0; k < cfg_.users; ++k)
            feat.data[static_cast<std::size_t>(s * cfg_.users + k)] =
                beta_feature(beta_rows[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)]);
    }
    Var h = tape.constant(std::move(feat));
    for (int m = 0; m <= cfg_.hidden_layers; ++m) {
        h = ad::dense(h, bind(static_cast<std::size_t>(2 * m)), bind(static_cast<std::size_t>(2 * m + 1)));
        if (m < cfg_.hidden_layers) {
            h = ad::relu(h);
            if (dropout_rng && cfg_.dropout > 0.0) h = ad::dropout(h, cfg_.dropout, *dropout_rng);
        }
    }
    return h;
}

Var PilotNet::forward_raw(Tape& tape, const std::vector<std::vector<double>>& beta_rows, RngStream* dropout_rng) {
    return forward_impl(tape, beta_rows, dropout_rng, [&](std::size_t i) { return tape.param(params_[i]); });
}

Var PilotNet::forward_frozen(Tape& tape, const std::vector<std::vector<double>>& beta_rows) const {
    return forward_impl(tape, beta_rows, nullptr, [&](std::size_t i) { return tape.constant(params_[i].value); });
}

Var PilotNet::pilot(Tape&, Var raw, int row) const {
    Var x = ad::pack_complex(raw, row, cfg_.pilot_length, cfg_.users);
    x = ad::scale(x, std::sqrt(cfg_.power_cap_mw));
    return ad::normalize_power(x, cfg_.power_cap_mw);
}

ComplexMatrix PilotNet::infer(const std::vector<double>& beta_local) const {
    Tape tape;
    Var raw = forward_frozen(tape, {beta_local});
    return pilot(tape, raw, 0).cplx();
}

PilotSet PilotNet::infer_set(const Scenario& scenario) const {
    if (scenario.users() != cfg_.users || scenario.pilot_length != cfg_.pilot_length)
        throw DimensionMismatch("PilotNet::infer_set: network shape does not match scenario");
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < scenario.cells(); ++i) rows.push_back(scenario.beta.local(i));
    Tape tape;
    Var raw = forward_frozen(tape, rows);
    std::vector<ComplexMatrix> merged;
    for (int i = 0; i < scenario.cells(); ++i) merged.push_back(pilot(tape, raw, i).cplx());
    return PilotSet::from_merged(merged);
}

namespace {

ComplexMatrix inverse_diag(const std::vector<double>& d) {
    ComplexMatrix m(d.size(), d.size());
    for (std::size_t k = 0; k < d.size(); ++k) m(k, k) = 1.0 / d[k];
    return m;
}

}  // namespace

Var loss_aware_cell(Tape& tape, const std::vector<Var>& merged_pilots, const Scenario& scenario, int cell) {
    const int l = scenario.cells();
    if (static_cast<int>(merged_pilots.size()) != l) throw DimensionMismatch("loss_aware: one pilot per cell expected");
    const double tau = scenario.pilot_length;
    const auto t = static_cast<std::size_t>(scenario.pilot_length);
    const double dbs2 = scenario.delta_bs[static_cast<std::size_t>(cell)] * scenario.delta_bs[static_cast<std::size_t>(cell)];

    // phi_i as a function of the current pilot powers
    Var energy = tape.constant(Tensor::scalar(0.0));
    for (int j = 0; j < l; ++j) {
        std::vector<double> w(static_cast<std::size_t>(scenario.users()));
        for (int k = 0; k < scenario.users(); ++k) {
            const double due = scenario.delta_ue[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
            w[static_cast<std::size_t>(k)] = (tau * due * due + dbs2) * scenario.beta(cell, j, k);
        }
        energy = ad::add(energy, ad::weighted_column_energy(merged_pilots[static_cast<std::size_t>(j)], w));
    }
    Var phi = ad::scale(ad::add(energy, tape.constant(Tensor::scalar(scenario.noise_power_mw))), 1.0 / tau);
    Var b = ad::scalar_times(phi, tape.constant(ComplexMatrix::identity(t)));
    for (int j = 0; j < l; ++j) {
        if (j == cell) continue;
        const Var& xj = merged_pilots[static_cast<std::size_t>(j)];
        b = ad::add(b, ad::matmul(ad::scale_columns_const(xj, scenario.beta.row(cell, j)), ad::adjoint(xj)));
    }
    const Var& xi = merged_pilots[static_cast<std::size_t>(cell)];
    Var m = ad::matmul(ad::adjoint(xi), ad::matmul(ad::hpd_inverse(b), xi));
    m = ad::add(m, tape.constant(inverse_diag(scenario.beta.local(cell))));
    return ad::trace_real(ad::hpd_inverse(m));
}

Var loss_aware(Tape& tape, const std::vector<Var>& merged_pilots, const Scenario& scenario) {
    Var total = loss_aware_cell(tape, merged_pilots, scenario, 0);
    for (int i = 1; i < scenario.cells(); ++i) total = ad::add(total, loss_aware_cell(tape, merged_pilots, scenario, i));
    return total;
}

Var loss_unaware(Tape& tape, Var merged_pilot, const std::vector<double>& beta_local, int pilot_length,
                 double noise_power_mw) {
    if (merged_pilot.cplx().cols() != beta_local.size()) throw DimensionMismatch("loss_unaware: K mismatch");
    Var g = ad::scale(ad::matmul(ad::adjoint(merged_pilot), merged_pilot), pilot_length / noise_power_mw);
    Var m = ad::add(g, tape.constant(inverse_diag(beta_local)));
    return ad::trace_real(ad::hpd_inverse(m));
}

}  // namespace mce
