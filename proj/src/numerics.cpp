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

#include "mce/numerics.hpp"

#include <algorithm>
#include <sstream>

namespace mce {

ComplexMatrix ComplexMatrix::from_rows(std::initializer_list<std::initializer_list<cplx>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    ComplexMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionMismatch("from_rows: ragged rows");
        std::size_t j = 0;
        for (const auto& v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

ComplexMatrix ComplexMatrix::identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

ComplexMatrix ComplexMatrix::diagonal(std::span<const double> d) {
    ComplexMatrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

ComplexMatrix ComplexMatrix::adjoint() const {
    ComplexMatrix out(cols_, rows_);
    for (std::size_t c = 0; c < cols_; ++c)
        for (std::size_t r = 0; r < rows_; ++r) out(c, r) = std::conj((*this)(r, c));
    return out;
}

ComplexMatrix& ComplexMatrix::operator+=(const ComplexMatrix& o) {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionMismatch("matrix +: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

ComplexMatrix& ComplexMatrix::operator-=(const ComplexMatrix& o) {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionMismatch("matrix -: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

ComplexMatrix& ComplexMatrix::operator*=(cplx s) {
    for (auto& v : data_) v *= s;
    return *this;
}

ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) { return a += b; }
ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b) { return a -= b; }
ComplexMatrix operator*(ComplexMatrix a, cplx s) { return a *= s; }
ComplexMatrix operator*(cplx s, ComplexMatrix a) { return a *= s; }

ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b) {
    if (a.cols() != b.rows()) {
        std::ostringstream os;
        os << "matrix product: " << a.rows() << "x" << a.cols() << " times " << b.rows() << "x" << b.cols();
        throw DimensionMismatch(os.str());
    }
    ComplexMatrix c(a.rows(), b.cols());
    const std::size_t m = a.rows();
    for (std::size_t j = 0; j < b.cols(); ++j) {
        cplx* cj = c.data() + j * m;
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const cplx bkj = b(k, j);
            const cplx* ak = a.data() + k * m;
            for (std::size_t i = 0; i < m; ++i) cj[i] += ak[i] * bkj;
        }
    }
    return c;
}

ComplexMatrix scale_columns(ComplexMatrix a, std::span<const double> s) {
    if (s.size() != a.cols()) throw DimensionMismatch("scale_columns: length mismatch");
    for (std::size_t c = 0; c < a.cols(); ++c)
        for (auto& v : a.col(c)) v *= s[c];
    return a;
}

double frobenius_norm_sq(const ComplexMatrix& a) {
    double s = 0.0;
    for (const auto& v : a.storage()) s += std::norm(v);
    return s;
}

cplx trace(const ComplexMatrix& a) {
    cplx t = 0.0;
    for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
    return t;
}

bool is_hermitian(const ComplexMatrix& a, double rel_tol) {
    if (a.rows() != a.cols()) return false;
    double diff = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c)
        for (std::size_t r = 0; r < a.rows(); ++r) diff += std::norm(a(r, c) - std::conj(a(c, r)));
    return std::sqrt(diff) <= rel_tol * std::sqrt(frobenius_norm_sq(a));
}

ComplexMatrix cholesky(const ComplexMatrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: matrix not square");
    const std::size_t n = a.rows();
    ComplexMatrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j).real();
        for (std::size_t k = 0; k < j; ++k) d -= std::norm(l(j, k));
        if (!(d > 0.0) || !std::isfinite(d)) {
            std::ostringstream os;
            os << "cholesky: non-positive pivot " << d << " at column " << j;
            throw NotPositiveDefinite(os.str());
        }
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            cplx s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * std::conj(l(j, k));
            l(i, j) = s / ljj;
        }
    }
    return l;
}

HpdFactor cholesky_with_jitter(const ComplexMatrix& a) {
    try {
        return {cholesky(a), 0.0};
    } catch (const NotPositiveDefinite&) {
        const double n = static_cast<double>(a.rows());
        const double eps = 1e-12 * trace(a).real() / n;
        if (!(eps > 0.0)) throw NotPositiveDefinite("cholesky: non-positive trace, jitter impossible");
        ComplexMatrix loaded = a;
        for (std::size_t i = 0; i < a.rows(); ++i) loaded(i, i) += eps;
        return {cholesky(loaded), eps};
    }
}

ComplexMatrix hpd_inverse_from_factor(const ComplexMatrix& l) {
    const std::size_t n = l.rows();
    // W = L^{-1} by forward substitution, column by column of the identity.
    ComplexMatrix w(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t i = c; i < n; ++i) {
            cplx s = (i == c) ? cplx(1.0) : cplx(0.0);
            for (std::size_t k = c; k < i; ++k) s -= l(i, k) * w(k, c);
            w(i, c) = s / l(i, i);
        }
    }
    // A^{-1} = W^H W; fill the lower triangle and mirror.
    ComplexMatrix inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = j; i < n; ++i) {
            cplx s = 0.0;
            for (std::size_t k = std::max(i, j); k < n; ++k) s += std::conj(w(k, i)) * w(k, j);
            inv(i, j) = s;
            inv(j, i) = std::conj(s);
        }
        inv(j, j) = inv(j, j).real();
    }
    return inv;
}

ComplexMatrix hpd_inverse(const ComplexMatrix& a) {
    if (!is_hermitian(a)) throw NotPositiveDefinite("hpd_inverse: matrix is not Hermitian");
    return hpd_inverse_from_factor(cholesky_with_jitter(a).lower);
}

ComplexMatrix general_inverse(const ComplexMatrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("general_inverse: matrix not square");
    const std::size_t n = a.rows();
    ComplexMatrix m = a;
    ComplexMatrix inv = ComplexMatrix::identity(n);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
        if (m(piv, c) == cplx(0.0)) throw std::domain_error("general_inverse: singular matrix");
        if (piv != c)
            for (std::size_t k = 0; k < n; ++k) {
                std::swap(m(c, k), m(piv, k));
                std::swap(inv(c, k), inv(piv, k));
            }
        const cplx d = 1.0 / m(c, c);
        for (std::size_t k = 0; k < n; ++k) {
            m(c, k) *= d;
            inv(c, k) *= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const cplx f = m(r, c);
            if (f == cplx(0.0)) continue;
            for (std::size_t k = 0; k < n; ++k) {
                m(r, k) -= f * m(c, k);
                inv(r, k) -= f * inv(c, k);
            }
        }
    }
    return inv;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {
std::uint64_t stream_key(std::uint64_t seed, const StreamId& id) {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ static_cast<std::uint64_t>(id.purpose));
    k = splitmix64(k ^ id.cell);
    k = splitmix64(k ^ id.sample);
    return k;
}
}  // namespace

RngStream::RngStream(std::uint64_t seed, StreamId id)
    : seed_(seed), id_(id), engine_(stream_key(seed, id)) {}

double RngStream::uniform() { return uniform_(engine_); }
double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
double RngStream::normal() { return normal_(engine_); }

cplx RngStream::complex_normal(double variance) {
    const double s = std::sqrt(0.5 * variance);
    const double re = normal_(engine_);
    const double im = normal_(engine_);
    return {s * re, s * im};
}

ComplexMatrix sample_complex_gaussian(RngStream& rng, std::size_t rows, std::size_t cols, double variance) {
    if (variance < 0.0) throw std::invalid_argument("sample_complex_gaussian: negative variance");
    ComplexMatrix m(rows, cols);
    for (auto& v : m.storage()) v = rng.complex_normal(variance);
    return m;
}

}  // namespace mce
