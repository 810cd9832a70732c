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

#include <cmath>
#include <cstdint>
#include <vector>

#include "mce/numerics.hpp"
#include "mce/pilots.hpp"
#include "mce/scenario.hpp"

namespace mce::test {

inline ScenarioConfig small_config(int cells, int users, int antennas, int tau) {
    ScenarioConfig c;
    c.topology.cells = cells;
    c.topology.users_per_cell = users;
    c.topology.antennas = antennas;
    c.pilot_length = tau;
    return c;
}

/// Random Hermitian positive definite n x n matrix with condition number near `spread`.
inline ComplexMatrix random_hpd(RngStream& rng, std::size_t n, double spread = 10.0) {
    const ComplexMatrix g = sample_complex_gaussian(rng, n, n, 1.0);
    ComplexMatrix a = g * g.adjoint();
    for (std::size_t i = 0; i < n; ++i) a(i, i) += cplx(spread > 0.0 ? 1.0 * n / spread : 1.0, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        a(c, c) = a(c, c).real();
        for (std::size_t r = c + 1; r < n; ++r) a(c, r) = std::conj(a(r, c));
    }
    return a;
}

inline double max_abs_diff(const ComplexMatrix& a, const ComplexMatrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.storage()[i] - b.storage()[i]));
    return m;
}

/// Naive triple loop, independent of the library product.
inline ComplexMatrix naive_product(const ComplexMatrix& a, const ComplexMatrix& b) {
    ComplexMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            cplx s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

inline double column_power(const ComplexMatrix& x, std::size_t k) {
    double e = 0.0;
    for (const auto& v : x.col(k)) e += std::norm(v);
    return e;
}

}  // namespace mce::test
