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

#include "mce/residual_net.hpp"

#include "mce/pilot_net.hpp"

namespace mce {

using ad::Tape;
using ad::Tensor;
using ad::Var;

EstimatorMode parse_estimator_mode(const std::string& s) {
    if (s == "proposed") return EstimatorMode::proposed;
    if (s == "cdrn") return EstimatorMode::cdrn;
    if (s == "cdrn-local") return EstimatorMode::cdrn_local;
    throw std::invalid_argument("unknown estimator mode '" + s + "' (proposed|cdrn|cdrn-local)");
}

std::string to_string(EstimatorMode m) {
    switch (m) {
        case EstimatorMode::proposed: return "proposed";
        case EstimatorMode::cdrn: return "cdrn";
        case EstimatorMode::cdrn_local: return "cdrn-local";
    }
    return "?";
}

void ResidualNetConfig::validate() const {
    if (layers < 1) throw std::invalid_argument("ResidualNetConfig: layers must be >= 1");
    if (filters < 1) throw std::invalid_argument("ResidualNetConfig: filters must be >= 1");
}

namespace {

// Column k of Yhat is divided by the RMS s_k of its real components; the ratio
// plane carries beta_k / s_k^2 in dB, i.e. how much of the observed power the
// channel explains. cdrn has no beta and uses one RMS for the whole block.
struct ColumnNorm {
    std::vector<double> scale;
    std::vector<double> feature;
};

constexpr double kRatioOffsetDb = 30.0;
constexpr double kRatioSpanDb = 30.0;
constexpr double kScaleFloor = 1e-150;

double ratio_feature(double ratio) { return std::max((linear_to_db(ratio) + kRatioOffsetDb) / kRatioSpanDb, -1.0); }

ColumnNorm column_norm(const double* planes, int n, int k, const std::vector<double>& beta, EstimatorMode mode) {
    ColumnNorm c{std::vector<double>(static_cast<std::size_t>(k)), std::vector<double>(static_cast<std::size_t>(k))};
    if (mode == EstimatorMode::cdrn) {
        double p = 0.0;
        for (int i = 0; i < 2 * n * k; ++i) p += planes[i] * planes[i];
        p /= static_cast<double>(2 * n * k);
        std::fill(c.scale.begin(), c.scale.end(), std::max(std::sqrt(p), kScaleFloor));
        return c;
    }
    if (beta.size() != static_cast<std::size_t>(k)) throw DimensionMismatch("ResidualNet: beta row has wrong length");
    for (int q = 0; q < k; ++q) {
        double p = 0.0;
        for (int r = 0; r < n; ++r) {
            const double* v = planes + 2 * (r * k + q);
            p += v[0] * v[0] + v[1] * v[1];
        }
        const double sq = std::max(std::sqrt(p / static_cast<double>(2 * n)), kScaleFloor);
        c.scale[static_cast<std::size_t>(q)] = sq;
        c.feature[static_cast<std::size_t>(q)] = ratio_feature(beta[static_cast<std::size_t>(q)] / (sq * sq));
    }
    return c;
}

std::vector<double> interleave(const ComplexMatrix& m) {
    std::vector<double> v(2 * m.size());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t q = 0; q < m.cols(); ++q) {
            v[2 * (r * m.cols() + q)] = m(r, q).real();
            v[2 * (r * m.cols() + q) + 1] = m(r, q).imag();
        }
    return v;
}

}  // namespace

std::vector<double> input_scale(const ComplexMatrix& yhat, const std::vector<double>& beta_local, EstimatorMode mode) {
    const std::vector<double> v = interleave(yhat);
    return column_norm(v.data(), static_cast<int>(yhat.rows()), static_cast<int>(yhat.cols()), beta_local, mode).scale;
}

Tensor assemble_input(const ComplexMatrix& yhat, const std::vector<double>& beta_local, EstimatorMode mode) {
    const int n = static_cast<int>(yhat.rows()), k = static_cast<int>(yhat.cols());
    const int c = mode == EstimatorMode::cdrn ? 2 : 4;
    const std::vector<double> v = interleave(yhat);
    const ColumnNorm cn = column_norm(v.data(), n, k, beta_local, mode);
    Tensor t({n, k, c});
    for (int r = 0; r < n; ++r)
        for (int q = 0; q < k; ++q) {
            const std::size_t p = static_cast<std::size_t>((r * k + q) * c), src = static_cast<std::size_t>(2 * (r * k + q));
            t.data[p] = v[src] / cn.scale[static_cast<std::size_t>(q)];
            t.data[p + 1] = v[src + 1] / cn.scale[static_cast<std::size_t>(q)];
            if (c == 4) {
                t.data[p + 2] = cn.feature[static_cast<std::size_t>(q)];
                t.data[p + 3] = beta_feature(beta_local[static_cast<std::size_t>(q)]);
            }
        }
    return t;
}

ResidualNet::ResidualNet(const ResidualNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RngStream rng(seed, {StreamPurpose::init, 2, 0});
    int cin = cfg_.input_channels();
    const int f = cfg_.filters;
    for (int m = 0; m < cfg_.layers; ++m) {
        Tensor k({3, 3, cin, f});
        ad::glorot_uniform(k, 9 * cin, 9 * f, rng);
        params_.emplace_back("est.conv" + std::to_string(m + 1) + ".k", std::move(k));
        params_.emplace_back("est.conv" + std::to_string(m + 1) + ".b", Tensor({f}));
        cin = f;
    }
    for (const char* head : {"alpha", "gamma"}) {
        Tensor k({3, 3, f, 2});
        if (!cfg_.zero_init_heads) ad::glorot_uniform(k, 9 * f, 18, rng);
        params_.emplace_back(std::string("est.") + head + ".k", std::move(k));
        params_.emplace_back(std::string("est.") + head + ".b", Tensor({2}));
    }
}

std::vector<ad::Parameter*> ResidualNet::param_ptrs() {
    std::vector<ad::Parameter*> out;
    for (auto& p : params_) {
        // alpha head is unused when alpha is forced to zero
        if (cfg_.mode != EstimatorMode::proposed && p.name.rfind("est.alpha", 0) == 0) continue;
        out.push_back(&p);
    }
    return out;
}

Var ResidualNet::noise_level(Tape& tape, Var input) const {
    Var h = input;
    for (int m = 0; m < cfg_.layers; ++m)
        h = ad::relu(ad::conv3x3(h, tape.constant(params_[static_cast<std::size_t>(2 * m)].value),
                                 tape.constant(params_[static_cast<std::size_t>(2 * m + 1)].value)));
    return h;
}

template <class Bind>
ResidualNet::Output ResidualNet::forward_impl(Tape& tape, Var yhat, const std::vector<std::vector<double>>& beta_rows,
                                              Bind bind) const {
    const Tensor& yv = yhat.real();
    if (yv.rank() != 4 || yv.dim(3) != 2) throw DimensionMismatch("ResidualNet: Yhat planes must be [B,N,K,2]");
    const int b = yv.dim(0), n = yv.dim(1), k = yv.dim(2);
    if (static_cast<int>(beta_rows.size()) != b) throw DimensionMismatch("ResidualNet: one beta row per sample");

    // Scaling and the power-ratio plane are part of the graph, so joint training
    // differentiates through them.
    const Var scale = ad::column_rms(yhat, cfg_.mode == EstimatorMode::cdrn);
    const Var x = ad::divide(yhat, scale);
    Var input = x;
    if (cfg_.mode != EstimatorMode::cdrn) {
        Tensor offset({b, n, k, 1}), absolute({b, n, k, 1}), ones({b, n, k, 1});
        for (int s = 0; s < b; ++s)
            for (int r = 0; r < n; ++r)
                for (int q = 0; q < k; ++q) {
                    const std::size_t p = (static_cast<std::size_t>(s) * n + r) * k + q;
                    const double beta = beta_rows[static_cast<std::size_t>(s)].at(static_cast<std::size_t>(q));
                    offset.data[p] = (linear_to_db(beta) + kRatioOffsetDb) / kRatioSpanDb + 1.0;
                    absolute.data[p] = beta_feature(beta);
                    ones.data[p] = 1.0;
                }
        // max(g, -1) = relu(g + 1) - 1
        const Var log_scale = ad::log(ad::slice_channels(scale, 0, 1));
        const Var shifted = ad::add(tape.constant(std::move(offset)), ad::scale(log_scale, -20.0 / (kRatioSpanDb * std::log(10.0))));
        const Var ratio = ad::sub(ad::relu(shifted), tape.constant(std::move(ones)));
        const Var parts[] = {x, ratio, tape.constant(std::move(absolute))};
        input = ad::concat_channels(parts);
    }
    Var feat = input;
    for (int m = 0; m < cfg_.layers; ++m)
        feat = ad::relu(ad::conv3x3(feat, bind(static_cast<std::size_t>(2 * m)), bind(static_cast<std::size_t>(2 * m + 1))));
    const std::size_t head = static_cast<std::size_t>(2 * cfg_.layers);
    Output out;
    out.gamma = ad::conv3x3(feat, bind(head + 2), bind(head + 3));
    Var z = out.gamma;
    if (cfg_.mode == EstimatorMode::proposed) {
        out.alpha = ad::conv3x3(feat, bind(head), bind(head + 1));
        z = ad::add(ad::hadamard(out.alpha, x), z);
    }
    out.estimate = ad::hadamard(ad::sub(x, z), scale);
    return out;
}

ResidualNet::Output ResidualNet::forward(Tape& tape, Var yhat, const std::vector<std::vector<double>>& beta_rows) {
    return forward_impl(tape, yhat, beta_rows, [&](std::size_t i) { return tape.param(params_[i]); });
}

ResidualNet::Output ResidualNet::forward_frozen(Tape& tape, Var yhat,
                                                const std::vector<std::vector<double>>& beta_rows) const {
    return forward_impl(tape, yhat, beta_rows, [&](std::size_t i) { return tape.constant(params_[i].value); });
}

std::vector<ComplexMatrix> ResidualNet::estimate(std::span<const ComplexMatrix> yhat,
                                                 std::span<const std::vector<double>> beta_rows) const {
    if (yhat.size() != beta_rows.size()) throw DimensionMismatch("ResidualNet::estimate: batch size mismatch");
    constexpr std::size_t kChunk = 256;
    std::vector<ComplexMatrix> out;
    out.reserve(yhat.size());
    for (std::size_t first = 0; first < yhat.size(); first += kChunk) {
        const std::size_t last = std::min(yhat.size(), first + kChunk);
        Tape tape;
        std::vector<Var> mats;
        for (std::size_t s = first; s < last; ++s) mats.push_back(tape.constant(yhat[s]));
        std::vector<std::vector<double>> rows(beta_rows.begin() + static_cast<std::ptrdiff_t>(first),
                                              beta_rows.begin() + static_cast<std::ptrdiff_t>(last));
        Output o = forward_frozen(tape, ad::complex_planes(mats), rows);
        for (std::size_t s = 0; s < last - first; ++s)
            out.push_back(ad::planes_to_complex(o.estimate, static_cast<int>(s)).cplx());
    }
    return out;
}

}  // namespace mce
