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

#include <span>
#include <stdexcept>
#include <vector>

#include "mce/numerics.hpp"
#include "mce/pilots.hpp"
#include "mce/scenario.hpp"

namespace mce {

struct RankDeficient : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Second-order statistics seen by the genie LMMSE estimator of one cell.
struct LmmseContext {
    int cell = 0;
    int pilot_length = 1;
    std::vector<ComplexMatrix> pilots;        ///< X_j, unit-norm columns
    std::vector<std::vector<double>> power;   ///< P_j diagonal, mW
    std::vector<std::vector<double>> beta;    ///< D_{i,j} diagonal
    double phi = 0.0;

    void validate() const;
};

/// phi_i = (sum_j sum_k (tau_p d_UE^2 + d_BS^2) beta P + sigma^2) / tau_p.
double phi_coefficient(const Scenario& scenario, const PowerMatrix& powers, int cell);

LmmseContext make_lmmse_context(const Scenario& scenario, const PilotSet& pilots, int cell);

/// sum_j X_j D_ij P_j X_j^H (+ phi I when `with_phi`), optionally leaving out cell `skip`.
ComplexMatrix pilot_gram(const LmmseContext& ctx, bool with_phi, int skip = -1);

/// A_i = (1/sqrt(tau_p)) (sum_j X_j D_ij P_j X_j^H + phi I)^{-1} X_i P_i^{1/2} D_ii.
ComplexMatrix lmmse_matrix(const LmmseContext& ctx);

ComplexMatrix lmmse_estimate(const ComplexMatrix& y, const ComplexMatrix& a);

/// A^LS = (1/sqrt(tau_p)) Xbar (Xbar^H Xbar)^{-1}.
ComplexMatrix ls_matrix(const ComplexMatrix& merged_pilots);

/// Yhat = Y A^LS.
ComplexMatrix ls_preprocess(const ComplexMatrix& y, const ComplexMatrix& merged_pilots);

/// N Tr((D_ii^{-1} + X_i^H B_i^{-1} X_i P_i)^{-1}).
double analytic_mse(const LmmseContext& ctx, int antennas);

/// N Tr(D) - N Tr(X^H C^{-1} X P D^2), C the full Gram plus phi I.
double analytic_mse_pre_lemma(const LmmseContext& ctx, int antennas);

/// N Tr((I + X^H B^{-1} X P D)^{-1} D), the form after the inversion lemma.
double analytic_mse_post_lemma(const LmmseContext& ctx, int antennas);

/// Mean over samples of ||H - Hhat||_F^2.
double empirical_mse(std::span<const ComplexMatrix> estimates, std::span<const ComplexMatrix> truth);

/// Analytic sum over cells.
double analytic_sum_mse(const Scenario& scenario, const PilotSet& pilots);

}  // namespace mce
