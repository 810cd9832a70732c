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

#include "mce/pilots.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <sstream>

namespace mce {

PilotSet::PilotSet(std::vector<ComplexMatrix> unit, std::vector<std::vector<double>> power)
    : unit_(std::move(unit)), power_(std::move(power)) {
    if (unit_.size() != power_.size()) throw DimensionMismatch("PilotSet: cell count mismatch");
    for (std::size_t i = 0; i < unit_.size(); ++i) {
        if (unit_[i].cols() != power_[i].size()) throw DimensionMismatch("PilotSet: user count mismatch");
        if (unit_[i].rows() != unit_.front().rows() || unit_[i].cols() != unit_.front().cols())
            throw DimensionMismatch("PilotSet: cells disagree on pilot shape");
    }
}

PilotSet PilotSet::from_merged(const std::vector<ComplexMatrix>& merged) {
    std::vector<ComplexMatrix> unit;
    std::vector<std::vector<double>> power;
    for (const auto& xbar : merged) {
        ComplexMatrix x = xbar;
        std::vector<double> p(xbar.cols());
        for (std::size_t k = 0; k < xbar.cols(); ++k) {
            double e = 0.0;
            for (const auto& v : xbar.col(k)) e += std::norm(v);
            if (!(e > 0.0)) throw ZeroColumn("PilotSet::from_merged: zero pilot column");
            p[k] = e;
            const double s = 1.0 / std::sqrt(e);
            for (auto& v : x.col(k)) v *= s;
        }
        unit.push_back(std::move(x));
        power.push_back(std::move(p));
    }
    return {std::move(unit), std::move(power)};
}

ComplexMatrix PilotSet::merged(int cell) const {
    std::vector<double> amp(power(cell).size());
    std::transform(power(cell).begin(), power(cell).end(), amp.begin(), [](double p) { return std::sqrt(p); });
    return scale_columns(unit(cell), amp);
}

double PilotSet::max_column_power() const {
    double m = 0.0;
    for (int i = 0; i < cells(); ++i) {
        const ComplexMatrix xbar = merged(i);
        for (std::size_t k = 0; k < xbar.cols(); ++k) {
            double e = 0.0;
            for (const auto& v : xbar.col(k)) e += std::norm(v);
            m = std::max(m, e);
        }
    }
    return m;
}

ComplexMatrix dft_basis(int n) {
    ComplexMatrix f(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (int t = 0; t < n; ++t)
        for (int m = 0; m < n; ++m) {
            // exact integer reduction keeps entries bit-identical for equal (t*m mod n)
            const int r = (t * m) % n;
            const double ang = -2.0 * std::numbers::pi * r / n;
            f(static_cast<std::size_t>(t), static_cast<std::size_t>(m)) = s * cplx(std::cos(ang), std::sin(ang));
        }
    return f;
}

PilotSet orthogonal_pilots(int pilot_length, int users, int cells, std::uint64_t seed, std::uint64_t sample,
                           double power_cap_mw) {
    if (pilot_length < 1 || users < 1 || cells < 1) throw std::invalid_argument("orthogonal_pilots: bad dimensions");
    const ComplexMatrix basis = dft_basis(pilot_length);
    std::vector<ComplexMatrix> unit;
    std::vector<std::vector<double>> power;
    for (int i = 0; i < cells; ++i) {
        RngStream rng(seed, {StreamPurpose::pilots, static_cast<std::uint64_t>(i), sample});
        std::vector<int> order(static_cast<std::size_t>(pilot_length));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());
        ComplexMatrix x(static_cast<std::size_t>(pilot_length), static_cast<std::size_t>(users));
        for (int k = 0; k < users; ++k) {
            const auto src = basis.col(static_cast<std::size_t>(order[static_cast<std::size_t>(k % pilot_length)]));
            std::copy(src.begin(), src.end(), x.col(static_cast<std::size_t>(k)).begin());
        }
        unit.push_back(std::move(x));
        power.emplace_back(static_cast<std::size_t>(users), power_cap_mw);
    }
    return {std::move(unit), std::move(power)};
}

PilotSet random_pilots(int pilot_length, int users, int cells, std::uint64_t seed, std::uint64_t sample,
                       double power_cap_mw) {
    if (pilot_length < 1 || users < 1 || cells < 1) throw std::invalid_argument("random_pilots: bad dimensions");
    std::vector<ComplexMatrix> unit;
    std::vector<std::vector<double>> power;
    for (int i = 0; i < cells; ++i) {
        RngStream rng(seed, {StreamPurpose::pilots, static_cast<std::uint64_t>(i), sample});
        ComplexMatrix x = sample_complex_gaussian(rng, static_cast<std::size_t>(pilot_length),
                                                  static_cast<std::size_t>(users), 1.0);
        for (std::size_t k = 0; k < x.cols(); ++k) {
            double e = 0.0;
            for (const auto& v : x.col(k)) e += std::norm(v);
            const double s = 1.0 / std::sqrt(e);
            for (auto& v : x.col(k)) v *= s;
        }
        unit.push_back(std::move(x));
        power.emplace_back(static_cast<std::size_t>(users), power_cap_mw);
    }
    return {std::move(unit), std::move(power)};
}

ComplexMatrix normalize_power(const ComplexMatrix& raw, double power_cap_mw) {
    ComplexMatrix out = raw;
    for (std::size_t k = 0; k < raw.cols(); ++k) {
        double e = 0.0;
        for (const auto& v : raw.col(k)) {
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
                throw std::invalid_argument("normalize_power: non-finite pilot entry");
            e += std::norm(v);
        }
        if (e == 0.0) {
            std::ostringstream os;
            os << "normalize_power: pilot column " << k << " is zero";
            throw ZeroColumn(os.str());
        }
        if (e > power_cap_mw) {
            const double s = std::sqrt(power_cap_mw / e);
            for (auto& v : out.col(k)) v *= s;
        }
    }
    return out;
}

PilotScheme parse_pilot_scheme(const std::string& s) {
    if (s == "orthogonal") return PilotScheme::orthogonal;
    if (s == "random") return PilotScheme::random;
    if (s == "learned") return PilotScheme::learned;
    throw std::invalid_argument("unknown pilot scheme '" + s + "' (orthogonal|random|learned)");
}

std::string to_string(PilotScheme s) {
    switch (s) {
        case PilotScheme::orthogonal: return "orthogonal";
        case PilotScheme::random: return "random";
        case PilotScheme::learned: return "learned";
    }
    return "?";
}

}  // namespace mce
