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

#include <stdexcept>
#include <string>
#include <vector>

#include "mce/numerics.hpp"

namespace mce {

struct ZeroColumn : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Per-cell unit-norm pilot matrices X_i (tau_p x K) and per-UE powers p_i (mW).
class PilotSet {
public:
    PilotSet() = default;
    PilotSet(std::vector<ComplexMatrix> unit, std::vector<std::vector<double>> power);

    /// Split merged pilots Xbar_i = X_i P_i^{1/2} into unit columns and powers.
    static PilotSet from_merged(const std::vector<ComplexMatrix>& merged);

    int cells() const { return static_cast<int>(unit_.size()); }
    int length() const { return unit_.empty() ? 0 : static_cast<int>(unit_.front().rows()); }
    int users() const { return unit_.empty() ? 0 : static_cast<int>(unit_.front().cols()); }

    const ComplexMatrix& unit(int cell) const { return unit_.at(static_cast<std::size_t>(cell)); }
    const std::vector<double>& power(int cell) const { return power_.at(static_cast<std::size_t>(cell)); }
    const std::vector<std::vector<double>>& powers() const { return power_; }

    /// Xbar_i = X_i P_i^{1/2}.
    ComplexMatrix merged(int cell) const;

    /// Largest ||xbar_{i,k}||^2 over the set.
    double max_column_power() const;

private:
    std::vector<ComplexMatrix> unit_;
    std::vector<std::vector<double>> power_;
};

/// Unitary DFT basis of size n (columns have unit norm).
ComplexMatrix dft_basis(int n);

/// Each cell draws K DFT columns at random (cyclic reuse when K > tau_p); full power.
PilotSet orthogonal_pilots(int pilot_length, int users, int cells, std::uint64_t seed, std::uint64_t sample,
                           double power_cap_mw);

/// I.i.d. complex Gaussian columns normalised to unit norm; full power.
PilotSet random_pilots(int pilot_length, int users, int cells, std::uint64_t seed, std::uint64_t sample,
                       double power_cap_mw);

/// Columns with ||x||^2 <= P_max pass unchanged, the others are scaled onto ||x||^2 = P_max.
ComplexMatrix normalize_power(const ComplexMatrix& raw, double power_cap_mw);

enum class PilotScheme { orthogonal, random, learned };

PilotScheme parse_pilot_scheme(const std::string& s);
std::string to_string(PilotScheme s);

}  // namespace mce
