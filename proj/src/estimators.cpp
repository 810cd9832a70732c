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

#include "mce/estimators.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace mce {

void LmmseContext::validate() const {
    const std::size_t l = pilots.size();
    if (l == 0 || power.size() != l || beta.size() != l) throw DimensionMismatch("LmmseContext: cell count mismatch");
    if (cell < 0 || static_cast<std::size_t>(cell) >= l) throw std::invalid_argument("LmmseContext: bad cell index");
    if (!(phi > 0.0)) throw std::invalid_argument("LmmseContext: phi must be > 0");
    for (std::size_t j = 0; j < l; ++j) {
        if (pilots[j].rows() != static_cast<std::size_t>(pilot_length) || pilots[j].cols() != power[j].size() ||
            beta[j].size() != power[j].size())
            throw DimensionMismatch("LmmseContext: shape mismatch");
        for (double b : beta[j])
            if (!(b > 0.0)) throw std::invalid_argument("LmmseContext: beta must be > 0");
    }
}

double phi_coefficient(const Scenario& scenario, const PowerMatrix& powers, int cell) {
    const auto i = static_cast<std::size_t>(cell);
    const double tau = scenario.pilot_length;
    const double dbs2 = scenario.delta_bs[i] * scenario.delta_bs[i];
    double acc = 0.0;
    for (int j = 0; j < scenario.cells(); ++j)
        for (int k = 0; k < scenario.users(); ++k) {
            const double due = scenario.delta_ue[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
            acc += (tau * due * due + dbs2) * scenario.beta(cell, j, k) *
                   powers[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        }
    return (acc + scenario.noise_power_mw) / tau;
}

LmmseContext make_lmmse_context(const Scenario& scenario, const PilotSet& pilots, int cell) {
    LmmseContext ctx;
    ctx.cell = cell;
    ctx.pilot_length = scenario.pilot_length;
    for (int j = 0; j < scenario.cells(); ++j) {
        ctx.pilots.push_back(pilots.unit(j));
        ctx.power.push_back(pilots.power(j));
        ctx.beta.push_back(scenario.beta.row(cell, j));
    }
    ctx.phi = phi_coefficient(scenario, pilots.powers(), cell);
    ctx.validate();
    return ctx;
}

ComplexMatrix pilot_gram(const LmmseContext& ctx, bool with_phi, int skip) {
    const auto t = static_cast<std::size_t>(ctx.pilot_length);
    ComplexMatrix c(t, t);
    for (std::size_t j = 0; j < ctx.pilots.size(); ++j) {
        if (static_cast<int>(j) == skip) continue;
        std::vector<double> w(ctx.power[j].size());
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = ctx.beta[j][k] * ctx.power[j][k];
        c += scale_columns(ctx.pilots[j], w) * ctx.pilots[j].adjoint();
    }
    if (with_phi)
        for (std::size_t r = 0; r < t; ++r) c(r, r) += ctx.phi;
    // exact Hermitian symmetry for the Cholesky path
    for (std::size_t col = 0; col < t; ++col) {
        c(col, col) = c(col, col).real();
        for (std::size_t r = col + 1; r < t; ++r) c(col, r) = std::conj(c(r, col));
    }
    return c;
}

ComplexMatrix lmmse_matrix(const LmmseContext& ctx) {
    ctx.validate();
    const auto i = static_cast<std::size_t>(ctx.cell);
    const ComplexMatrix cinv = hpd_inverse(pilot_gram(ctx, true));
    std::vector<double> w(ctx.power[i].size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::sqrt(ctx.power[i][k]) * ctx.beta[i][k];
    ComplexMatrix a = cinv * scale_columns(ctx.pilots[i], w);
    a *= 1.0 / std::sqrt(static_cast<double>(ctx.pilot_length));
    return a;
}

ComplexMatrix lmmse_estimate(const ComplexMatrix& y, const ComplexMatrix& a) { return y * a; }

ComplexMatrix ls_matrix(const ComplexMatrix& merged_pilots) {
    const std::size_t k = merged_pilots.cols();
    if (merged_pilots.rows() < k) {
        std::ostringstream os;
        os << "ls_preprocess: pilot length " << merged_pilots.rows() << " < users " << k;
        throw RankDeficient(os.str());
    }
    ComplexMatrix g = merged_pilots.adjoint() * merged_pilots;
    for (std::size_t c = 0; c < k; ++c) {
        g(c, c) = g(c, c).real();
        for (std::size_t r = c + 1; r < k; ++r) g(c, r) = std::conj(g(r, c));
    }
    HpdFactor f;
    try {
        f = cholesky_with_jitter(g);
    } catch (const NotPositiveDefinite& e) {
        throw RankDeficient(std::string("ls_preprocess: ") + e.what());
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const double d = std::norm(f.lower(c, c));
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    if (!(lo > 1e-10 * hi)) throw RankDeficient("ls_preprocess: pilot Gram matrix is numerically singular");
    ComplexMatrix a = merged_pilots * hpd_inverse_from_factor(f.lower);
    a *= 1.0 / std::sqrt(static_cast<double>(merged_pilots.rows()));
    return a;
}

ComplexMatrix ls_preprocess(const ComplexMatrix& y, const ComplexMatrix& merged_pilots) {
    return y * ls_matrix(merged_pilots);
}

double analytic_mse(const LmmseContext& ctx, int antennas) {
    ctx.validate();
    const auto i = static_cast<std::size_t>(ctx.cell);
    const ComplexMatrix binv = hpd_inverse(pilot_gram(ctx, true, ctx.cell));
    std::vector<double> amp(ctx.power[i].size());
    for (std::size_t k = 0; k < amp.size(); ++k) amp[k] = std::sqrt(ctx.power[i][k]);
    const ComplexMatrix xbar = scale_columns(ctx.pilots[i], amp);
    // D^{-1} + X^H B^{-1} X P is similar to the Hermitian D^{-1} + Xbar^H B^{-1} Xbar
    ComplexMatrix m = xbar.adjoint() * binv * xbar;
    for (std::size_t k = 0; k < m.rows(); ++k) m(k, k) += 1.0 / ctx.beta[i][k];
    for (std::size_t c = 0; c < m.cols(); ++c) {
        m(c, c) = m(c, c).real();
        for (std::size_t r = c + 1; r < m.rows(); ++r) m(c, r) = std::conj(m(r, c));
    }
    return antennas * trace(hpd_inverse(m)).real();
}

double analytic_mse_pre_lemma(const LmmseContext& ctx, int antennas) {
    ctx.validate();
    const auto i = static_cast<std::size_t>(ctx.cell);
    const ComplexMatrix cinv = hpd_inverse(pilot_gram(ctx, true));
    std::vector<double> pd2(ctx.power[i].size());
    double trd = 0.0;
    for (std::size_t k = 0; k < pd2.size(); ++k) {
        pd2[k] = ctx.power[i][k] * ctx.beta[i][k] * ctx.beta[i][k];
        trd += ctx.beta[i][k];
    }
    const ComplexMatrix q = ctx.pilots[i].adjoint() * cinv * scale_columns(ctx.pilots[i], pd2);
    return antennas * (trd - trace(q).real());
}

double analytic_mse_post_lemma(const LmmseContext& ctx, int antennas) {
    ctx.validate();
    const auto i = static_cast<std::size_t>(ctx.cell);
    const ComplexMatrix binv = hpd_inverse(pilot_gram(ctx, true, ctx.cell));
    std::vector<double> pd(ctx.power[i].size());
    for (std::size_t k = 0; k < pd.size(); ++k) pd[k] = ctx.power[i][k] * ctx.beta[i][k];
    ComplexMatrix m = ctx.pilots[i].adjoint() * binv * scale_columns(ctx.pilots[i], pd);
    for (std::size_t k = 0; k < m.rows(); ++k) m(k, k) += 1.0;
    const ComplexMatrix s = scale_columns(general_inverse(m), ctx.beta[i]);
    return antennas * trace(s).real();
}

double empirical_mse(std::span<const ComplexMatrix> estimates, std::span<const ComplexMatrix> truth) {
    if (estimates.size() != truth.size()) throw DimensionMismatch("empirical_mse: batch size mismatch");
    if (estimates.empty()) throw std::invalid_argument("empirical_mse: empty batch");
    double acc = 0.0;
    for (std::size_t s = 0; s < estimates.size(); ++s) {
        if (estimates[s].rows() != truth[s].rows() || estimates[s].cols() != truth[s].cols())
            throw DimensionMismatch("empirical_mse: shape mismatch");
        acc += frobenius_norm_sq(truth[s] - estimates[s]);
    }
    return acc / static_cast<double>(estimates.size());
}

double analytic_sum_mse(const Scenario& scenario, const PilotSet& pilots) {
    double s = 0.0;
    for (int i = 0; i < scenario.cells(); ++i) s += analytic_mse(make_lmmse_context(scenario, pilots, i), scenario.antennas());
    return s;
}

}  // namespace mce
