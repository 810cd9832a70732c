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
#include <complex>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mce {

using cplx = std::complex<double>;

/// Dense complex matrix, column-major. Entry (r, c) lives at data()[r + c * rows()].
class ComplexMatrix {
public:
    ComplexMatrix() = default;
    ComplexMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    /// Row-wise literal, e.g. from_rows({{1, 2}, {3, 4}}).
    static ComplexMatrix from_rows(std::initializer_list<std::initializer_list<cplx>> rows);
    static ComplexMatrix identity(std::size_t n);
    static ComplexMatrix diagonal(std::span<const double> d);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    cplx& operator()(std::size_t r, std::size_t c) { return data_[r + c * rows_]; }
    const cplx& operator()(std::size_t r, std::size_t c) const { return data_[r + c * rows_]; }

    cplx* data() { return data_.data(); }
    const cplx* data() const { return data_.data(); }
    std::span<cplx> col(std::size_t c) { return {data_.data() + c * rows_, rows_}; }
    std::span<const cplx> col(std::size_t c) const { return {data_.data() + c * rows_, rows_}; }
    std::vector<cplx>& storage() { return data_; }
    const std::vector<cplx>& storage() const { return data_; }

    /// Conjugate transpose.
    ComplexMatrix adjoint() const;

    ComplexMatrix& operator+=(const ComplexMatrix& o);
    ComplexMatrix& operator-=(const ComplexMatrix& o);
    ComplexMatrix& operator*=(cplx s);

    bool operator==(const ComplexMatrix& o) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<cplx> data_;
};

ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b);
ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b);
ComplexMatrix operator*(ComplexMatrix a, cplx s);
ComplexMatrix operator*(cplx s, ComplexMatrix a);
/// Matrix product.
ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b);

/// Scale column c by s[c].
ComplexMatrix scale_columns(ComplexMatrix a, std::span<const double> s);

double frobenius_norm_sq(const ComplexMatrix& a);
cplx trace(const ComplexMatrix& a);
bool is_hermitian(const ComplexMatrix& a, double rel_tol = 1e-10);

struct NotPositiveDefinite : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Lower-triangular Cholesky factor L with L L^H = A. Throws NotPositiveDefinite
/// on a non-positive pivot; no jitter.
ComplexMatrix cholesky(const ComplexMatrix& a);

struct HpdFactor {
    ComplexMatrix lower;
    double jitter = 0.0;  ///< diagonal loading that was applied (0 on first success)
};

/// Cholesky with the single jitter retry: on failure retry with
/// A + 1e-12 * tr(A)/n * I, then give up.
HpdFactor cholesky_with_jitter(const ComplexMatrix& a);

/// Inverse of a Hermitian positive-definite matrix through its Cholesky factor.
/// The result is exactly Hermitian.
ComplexMatrix hpd_inverse(const ComplexMatrix& a);
ComplexMatrix hpd_inverse_from_factor(const ComplexMatrix& lower);

/// Inverse of a general square matrix by Gaussian elimination with partial pivoting.
/// Throws std::domain_error on an exactly singular pivot.
ComplexMatrix general_inverse(const ComplexMatrix& a);

// ---------------------------------------------------------------------------
// Random streams

enum class StreamPurpose : std::uint32_t {
    topology = 1,
    shadowing,
    channel,
    distortion,
    noise,
    pilots,
    init,
    shuffle,
    dropout,
    generic,
};

struct StreamId {
    StreamPurpose purpose = StreamPurpose::generic;
    std::uint64_t cell = 0;
    std::uint64_t sample = 0;
};

/// Deterministic random stream keyed by (seed, purpose, cell, sample).
/// The key is mixed with splitmix64 so that neighbouring ids give unrelated
/// engine states.
class RngStream {
public:
    RngStream(std::uint64_t seed, StreamId id);

    double uniform();                        ///< [0, 1)
    double uniform(double lo, double hi);
    double normal();                         ///< N(0, 1)
    cplx complex_normal(double variance);    ///< CN(0, variance)
    std::uint64_t next_u64() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

    std::uint64_t seed() const { return seed_; }
    const StreamId& id() const { return id_; }

private:
    std::uint64_t seed_;
    StreamId id_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

/// Matrix with i.i.d. CN(0, variance) entries.
ComplexMatrix sample_complex_gaussian(RngStream& rng, std::size_t rows, std::size_t cols,
                                      double variance);

// Unit helpers: powers are linear milliwatts internally.
inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double mw_to_dbm(double mw) { return 10.0 * std::log10(mw); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }

}  // namespace mce
