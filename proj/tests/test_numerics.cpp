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


#include <cmath>
#include <complex>

#include "doctest.h"
#include "mce/numerics.hpp"
#include "support.hpp"

using namespace mce;
using mce::test::max_abs_diff;

TEST_CASE("product matches a naive triple loop") {
    RngStream rng(3, {});
    const ComplexMatrix a = sample_complex_gaussian(rng, 5, 3, 1.0);
    const ComplexMatrix b = sample_complex_gaussian(rng, 3, 4, 2.0);
    CHECK(max_abs_diff(a * b, test::naive_product(a, b)) < 1e-13);
}

TEST_CASE("adjoint conjugates and transposes") {
    const ComplexMatrix a = ComplexMatrix::from_rows({{{1, 2}, {3, -1}}, {{0, 5}, {-2, 0}}, {{4, 4}, {1, 1}}});
    const ComplexMatrix ah = a.adjoint();
    REQUIRE(ah.rows() == 2);
    REQUIRE(ah.cols() == 3);
    CHECK(ah(1, 0) == cplx(3, 1));
    CHECK(ah(0, 1) == cplx(0, -5));
    CHECK(ah.adjoint() == a);
}

TEST_CASE("product rejects mismatched shapes") {
    CHECK_THROWS_AS(ComplexMatrix(2, 3) * ComplexMatrix(2, 3), DimensionMismatch);
    CHECK_THROWS_AS(ComplexMatrix(2, 3) + ComplexMatrix(3, 2), DimensionMismatch);
}

TEST_CASE("trace and Frobenius norm on a literal") {
    const ComplexMatrix a = ComplexMatrix::from_rows({{{1, 1}, {2, 0}}, {{0, 0}, {3, -4}}});
    CHECK(trace(a) == cplx(4, -3));
    CHECK(frobenius_norm_sq(a) == doctest::Approx(2.0 + 4.0 + 25.0));
}

TEST_CASE("cholesky reproduces A as L L^H") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        RngStream rng(seed, {});
        const std::size_t n = 1 + seed % 9;
        const ComplexMatrix a = test::random_hpd(rng, n);
        const ComplexMatrix l = cholesky(a);
        for (std::size_t c = 0; c < n; ++c) {
            CHECK(l(c, c).imag() == 0.0);
            CHECK(l(c, c).real() > 0.0);
            for (std::size_t r = 0; r < c; ++r) CHECK(l(r, c) == cplx(0.0));
        }
        CHECK(max_abs_diff(l * l.adjoint(), a) < 1e-10 * std::sqrt(frobenius_norm_sq(a)));
    }
}

TEST_CASE("cholesky of a 2x2 by hand") {
    const ComplexMatrix a = ComplexMatrix::from_rows({{{4, 0}, {2, -2}}, {{2, 2}, {6, 0}}});
    const ComplexMatrix l = cholesky(a);
    CHECK(l(0, 0).real() == doctest::Approx(2.0));
    CHECK(std::abs(l(1, 0) - cplx(1, 1)) < 1e-14);
    CHECK(l(1, 1).real() == doctest::Approx(2.0));
}

TEST_CASE("factorisations reject indefinite and non-Hermitian input") {
    const ComplexMatrix indefinite = ComplexMatrix::from_rows({{1, 2}, {2, 1}});
    CHECK_THROWS_AS(cholesky(indefinite), NotPositiveDefinite);
    const ComplexMatrix skew = ComplexMatrix::from_rows({{{1, 0}, {0, 1}}, {{0, 1}, {1, 0}}});
    CHECK_FALSE(is_hermitian(skew));
    CHECK_THROWS_AS(hpd_inverse(skew), NotPositiveDefinite);
}

TEST_CASE("jittered cholesky loads the diagonal of a singular Gram matrix") {
    RngStream rng(5, {});
    const ComplexMatrix v = sample_complex_gaussian(rng, 4, 1, 1.0);
    const ComplexMatrix a = v * v.adjoint();  // rank 1
    const HpdFactor f = cholesky_with_jitter(a);
    CHECK(f.jitter > 0.0);
    const ComplexMatrix id = ComplexMatrix::identity(4);
    CHECK(max_abs_diff(f.lower * f.lower.adjoint(), a + id * cplx(f.jitter)) < 1e-10);

    const ComplexMatrix good = test::random_hpd(rng, 4);
    CHECK(cholesky_with_jitter(good).jitter == 0.0);
}

TEST_CASE("hpd_inverse times A is the identity") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        RngStream rng(seed, {StreamPurpose::generic, 7, 0});
        const std::size_t n = 1 + seed % 12;
        const ComplexMatrix a = test::random_hpd(rng, n, 100.0);
        const ComplexMatrix inv = hpd_inverse(a);
        CHECK(max_abs_diff(a * inv, ComplexMatrix::identity(n)) < 1e-9);
        CHECK(is_hermitian(inv, 1e-9));
    }
}

TEST_CASE("general_inverse handles non-Hermitian input") {
    RngStream rng(11, {});
    const ComplexMatrix a = sample_complex_gaussian(rng, 6, 6, 1.0) + ComplexMatrix::identity(6) * cplx(3.0);
    CHECK(max_abs_diff(general_inverse(a) * a, ComplexMatrix::identity(6)) < 1e-10);
}

TEST_CASE("complex Gaussian sampler has the requested second moments") {
    RngStream rng(2024, {StreamPurpose::channel, 0, 0});
    const double var = 2.5;
    const ComplexMatrix z = sample_complex_gaussian(rng, 200000, 1, var);
    double p = 0.0, re2 = 0.0, im2 = 0.0, cross = 0.0;
    cplx mean = 0.0;
    for (const auto& v : z.storage()) {
        p += std::norm(v);
        re2 += v.real() * v.real();
        im2 += v.imag() * v.imag();
        cross += v.real() * v.imag();
        mean += v;
    }
    const double n = static_cast<double>(z.size());
    CHECK(std::abs(p / n - var) < 0.03 * var);
    CHECK(std::abs(re2 / n - var / 2) < 0.03 * var / 2);
    CHECK(std::abs(im2 / n - var / 2) < 0.03 * var / 2);
    CHECK(std::abs(cross / n) < 0.03 * var / 2);
    CHECK(std::abs(mean / n) < 0.02);
}

TEST_CASE("rng streams are reproducible and separated by purpose, cell and sample") {
    RngStream a(9, {StreamPurpose::noise, 1, 2});
    RngStream b(9, {StreamPurpose::noise, 1, 2});
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    const auto first = [](std::uint64_t seed, StreamId id) { return RngStream(seed, id).next_u64(); };
    const std::uint64_t base = first(9, {StreamPurpose::noise, 1, 2});
    CHECK(first(10, {StreamPurpose::noise, 1, 2}) != base);
    CHECK(first(9, {StreamPurpose::channel, 1, 2}) != base);
    CHECK(first(9, {StreamPurpose::noise, 2, 2}) != base);
    CHECK(first(9, {StreamPurpose::noise, 1, 3}) != base);
    CHECK(splitmix64(1) != splitmix64(2));
}

TEST_CASE("unit conversions") {
    CHECK(dbm_to_mw(0.0) == doctest::Approx(1.0));
    CHECK(dbm_to_mw(23.0) == doctest::Approx(199.526).epsilon(1e-5));
    CHECK(mw_to_dbm(dbm_to_mw(-96.0)) == doctest::Approx(-96.0));
    CHECK(db_to_linear(-30.0) == doctest::Approx(1e-3));
    CHECK(linear_to_db(100.0) == doctest::Approx(20.0));
}
