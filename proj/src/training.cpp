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

#include "mce/training.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mce {

using ad::Tape;
using ad::Tensor;
using ad::Var;

Regime parse_regime(const std::string& s) {
    if (s == "pretrain-aware") return Regime::pretrain_aware;
    if (s == "pretrain-unaware") return Regime::pretrain_unaware;
    if (s == "estimator-only") return Regime::estimator_only;
    if (s == "joint") return Regime::joint;
    throw std::invalid_argument("unknown regime '" + s + "' (pretrain-aware|pretrain-unaware|estimator-only|joint)");
}

std::string to_string(Regime r) {
    switch (r) {
        case Regime::pretrain_aware: return "pretrain-aware";
        case Regime::pretrain_unaware: return "pretrain-unaware";
        case Regime::estimator_only: return "estimator-only";
        case Regime::joint: return "joint";
    }
    return "?";
}

Baseline parse_baseline(const std::string& s) {
    if (s == "ls") return Baseline::ls;
    if (s == "lmmse") return Baseline::lmmse;
    if (s == "cdrn") return Baseline::cdrn;
    if (s == "cdrn-local") return Baseline::cdrn_local;
    if (s == "proposed") return Baseline::proposed;
    throw std::invalid_argument("unknown baseline '" + s + "' (ls|lmmse|cdrn|cdrn-local|proposed)");
}

std::string to_string(Baseline b) {
    switch (b) {
        case Baseline::ls: return "ls";
        case Baseline::lmmse: return "lmmse";
        case Baseline::cdrn: return "cdrn";
        case Baseline::cdrn_local: return "cdrn-local";
        case Baseline::proposed: return "proposed";
    }
    return "?";
}

ScenarioConfig desk_scenario() {
    ScenarioConfig c;
    c.topology.cells = 3;
    c.topology.users_per_cell = 4;
    c.topology.antennas = 16;
    c.pilot_length = 4;
    return c;
}

void TrainConfig::validate() const {
    scenario.validate();
    std::ostringstream os;
    if (!(train_delta_sq >= 0.0 && train_delta_sq <= 0.04)) os << "train_delta_sq must be in [0, 0.04]; ";
    if (train_samples < 1) os << "train_samples must be >= 1; ";
    if (validation_samples < 1) os << "validation_samples must be >= 1; ";
    if (test_samples < 1) os << "test_samples must be >= 1; ";
    if (epochs < 0) os << "epochs must be >= 0; ";
    if (patience < 0) os << "patience must be >= 0; ";
    if (batch < 1) os << "batch must be >= 1; ";
    if (!(lr > 0.0)) os << "lr must be > 0; ";
    if (!(lr_decay_at >= 0.0 && lr_decay_at <= 1.0)) os << "lr_decay_at must be in [0, 1]; ";
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) os << "lr_decay must be in (0, 1]; ";
    if (pilot_epochs < 0) os << "pilot_epochs must be >= 0; ";
    if (pilot_batch < 1) os << "pilot_batch must be >= 1; ";
    if (!(pilot_lr > 0.0)) os << "pilot_lr must be > 0; ";
    if (regime == Regime::estimator_only && pilot_scheme == PilotScheme::learned)
        os << "estimator-only needs an orthogonal or random pilot scheme or a pilot bundle; ";
    const std::string msg = os.str();
    if (!msg.empty()) throw std::invalid_argument("TrainConfig: " + msg);
    pilot_net().validate();
    estimator.validate();
}

PilotNetConfig TrainConfig::pilot_net() const {
    PilotNetConfig p;
    p.pilot_length = scenario.pilot_length;
    p.users = scenario.topology.users_per_cell;
    p.hidden_layers = pilot_hidden_layers;
    p.width_factor = pilot_width_factor;
    p.dropout = pilot_dropout;
    p.power_cap_mw = dbm_to_mw(scenario.ue_power_cap_dbm);
    return p;
}

std::uint64_t split_seed(std::uint64_t root, Split split) {
    return splitmix64(splitmix64(root) ^ (0xda7a0000ULL + static_cast<std::uint64_t>(split)));
}

namespace {

Sample make_sample(const ScenarioConfig& config, std::uint64_t seed, std::uint64_t index) {
    Sample s;
    s.seed = seed;
    s.index = index;
    s.scenario = make_scenario(config, seed, index);
    RngStream ch(seed, {StreamPurpose::channel, 0, index});
    s.channels = sample_channels(s.scenario, ch);
    RngStream dist(seed, {StreamPurpose::distortion, 0, index});
    s.draws = sample_distortion_draws(dist, s.scenario);
    RngStream noise(seed, {StreamPurpose::noise, 0, index});
    const auto n = static_cast<std::size_t>(s.scenario.antennas());
    const auto t = static_cast<std::size_t>(s.scenario.pilot_length);
    for (int i = 0; i < s.scenario.cells(); ++i) s.noise.push_back(sample_complex_gaussian(noise, n, t, 1.0));
    return s;
}

// Runs body(i) for i in [0, n) across threads; rethrows the first failure by index.
template <class Body>
void parallel_for(std::size_t n, Body body) {
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

Dataset generate_dataset(const ScenarioConfig& config, std::uint64_t seed, int count) {
    config.validate();
    if (count < 0) throw std::invalid_argument("generate_dataset: negative sample count");
    Dataset d{config, seed, std::vector<Sample>(static_cast<std::size_t>(count))};
    parallel_for(d.samples.size(), [&](std::size_t i) { d.samples[i] = make_sample(config, seed, i); });
    return d;
}

Scenario with_delta(const Scenario& scenario, double delta_sq) {
    if (!(delta_sq >= 0.0)) throw std::invalid_argument("with_delta: delta^2 must be >= 0");
    Scenario s = scenario;
    const double d = std::sqrt(delta_sq);
    for (auto& row : s.delta_ue) std::fill(row.begin(), row.end(), d);
    std::fill(s.delta_bs.begin(), s.delta_bs.end(), d);
    return s;
}

std::vector<ComplexMatrix> received_blocks(const Sample& sample, const PilotSet& pilots, double delta_sq) {
    const Scenario sc = with_delta(sample.scenario, delta_sq);
    const Distortion d = scale_distortion(sample.draws, sc, sample.channels, pilots.powers());
    const double sigma = std::sqrt(sc.noise_power_mw);
    std::vector<ComplexMatrix> noise;
    for (const auto& n : sample.noise) noise.push_back(n * sigma);
    std::vector<ComplexMatrix> y;
    for (auto& block : synthesize_received(sc, sample.channels, pilots, &d, noise)) y.push_back(std::move(block.y));
    return y;
}

PilotProvider scheme_pilots(PilotScheme scheme, const ScenarioConfig& config) {
    const int t = config.pilot_length, k = config.topology.users_per_cell, l = config.topology.cells;
    const double cap = dbm_to_mw(config.ue_power_cap_dbm);
    switch (scheme) {
        case PilotScheme::orthogonal:
            return [=](const Sample& s) { return orthogonal_pilots(t, k, l, s.seed, s.index, cap); };
        case PilotScheme::random:
            return [=](const Sample& s) { return random_pilots(t, k, l, s.seed, s.index, cap); };
        case PilotScheme::learned: break;
    }
    throw std::invalid_argument("scheme_pilots: learned pilots need a trained pilot net");
}

PilotProvider learned_pilots(const PilotNet& net) {
    return [net](const Sample& s) { return net.infer_set(s.scenario); };
}

std::vector<EstimatorItem> estimator_items(const Dataset& data, const PilotProvider& pilots, double delta_sq) {
    const auto l = static_cast<std::size_t>(data.config.topology.cells);
    std::vector<EstimatorItem> items(data.samples.size() * l);
    parallel_for(data.samples.size(), [&](std::size_t s) {
        const Sample& sample = data.samples[s];
        const PilotSet ps = pilots(sample);
        const std::vector<ComplexMatrix> y = received_blocks(sample, ps, delta_sq);
        for (std::size_t i = 0; i < l; ++i) {
            EstimatorItem& it = items[s * l + i];
            it.yhat = ls_preprocess(y[i], ps.merged(static_cast<int>(i)));
            it.truth = sample.channels.h[i][i];
            it.beta = sample.scenario.beta.local(static_cast<int>(i));
        }
    });
    return items;
}

// ---------------------------------------------------------------------------
// Shared epoch loop

namespace {

using Snapshot = std::vector<Tensor>;

Snapshot snapshot(const std::vector<ad::Parameter>& params) {
    Snapshot s;
    for (const auto& p : params) s.push_back(p.value);
    return s;
}

void restore(std::vector<ad::Parameter>& params, const Snapshot& s) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = s[i];
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t stream, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream rng(seed, {StreamPurpose::shuffle, stream, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng.engine());
    return order;
}

double lr_at(int epoch, int epochs, double lr, double decay_at, double decay) {
    return (epoch - 1) >= static_cast<int>(decay_at * epochs) ? lr * decay : lr;
}

/// Runs the epochs with best-checkpoint tracking. `run_epoch(epoch)` returns the
/// epoch-mean training loss, `validate()` the validation objective, `save()` and
/// `load()` take and restore the parameters.
template <class RunEpoch, class Validate, class Save, class Load>
TrainHistory epoch_loop(int epochs, int patience, double lr, double decay_at, double decay, ad::Adam& adam,
                        RunEpoch run_epoch, Validate validate, Save save, Load load) {
    TrainHistory h;
    if (epochs == 0) return h;
    h.best_validation = validate();
    auto best = save();
    int since = 0;
    for (int e = 1; e <= epochs; ++e) {
        const double rate = lr_at(e, epochs, lr, decay_at, decay);
        adam.set_lr(rate);
        const double loss = run_epoch(e);
        if (!std::isfinite(loss)) {
            std::ostringstream os;
            os << "training diverged: epoch " << e << " mean loss " << loss;
            throw DivergedLoss(os.str());
        }
        const double v = validate();
        h.epochs.push_back({e, loss, v, rate});
        if (v < h.best_validation) {
            h.best_validation = v;
            h.best_epoch = e;
            best = save();
            since = 0;
        } else if (patience > 0 && ++since >= patience) {
            h.early_stopped = true;
            break;
        }
    }
    load(best);
    return h;
}

double column_power_max(const ComplexMatrix& x) {
    double m = 0.0;
    for (std::size_t k = 0; k < x.cols(); ++k) {
        double e = 0.0;
        for (const auto& v : x.col(k)) e += std::norm(v);
        m = std::max(m, e);
    }
    return m;
}

double mean_local_beta(const Dataset& data) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& sample : data.samples)
        for (int i = 0; i < sample.scenario.cells(); ++i)
            for (double b : sample.scenario.beta.local(i)) {
                s += b;
                ++n;
            }
    return n ? s / static_cast<double>(n) : 1.0;
}

Tensor planes_of(std::span<const ComplexMatrix> mats) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : mats) vars.push_back(tape.constant(m));
    return ad::complex_planes(vars).real();
}

}  // namespace

// ---------------------------------------------------------------------------
// Pilot pre-training

double mean_unaware_loss(const Dataset& data, const PilotProvider& pilots) {
    const int l = data.config.topology.cells;
    std::vector<double> per(data.samples.size());
    parallel_for(per.size(), [&](std::size_t s) {
        const Sample& sample = data.samples[s];
        const PilotSet ps = pilots(sample);
        double acc = 0.0;
        for (int i = 0; i < l; ++i) {
            Tape tape;
            acc += loss_unaware(tape, tape.constant(ps.merged(i)), sample.scenario.beta.local(i),
                                sample.scenario.pilot_length, sample.scenario.noise_power_mw)
                       .real()
                       .item();
        }
        per[s] = acc;
    });
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size() * static_cast<std::size_t>(l));
}

double mean_aware_loss(const Dataset& data, const PilotProvider& pilots, double delta_sq) {
    std::vector<double> per(data.samples.size());
    parallel_for(per.size(), [&](std::size_t s) {
        const Sample& sample = data.samples[s];
        const PilotSet ps = pilots(sample);
        Tape tape;
        std::vector<Var> xs;
        for (int i = 0; i < ps.cells(); ++i) xs.push_back(tape.constant(ps.merged(i)));
        per[s] = loss_aware(tape, xs, with_delta(sample.scenario, delta_sq)).real().item();
    });
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

PilotTrainResult pretrain_pilot(const TrainConfig& config, const Dataset& train, const Dataset& validation,
                                bool aware) {
    config.validate();
    PilotTrainResult r{PilotNet(config.pilot_net(), config.seed), {}};
    PilotNet& net = r.net;
    std::vector<ad::Parameter*> params = net.param_ptrs();
    ad::Adam adam({.lr = config.pilot_lr});
    const int l = train.config.topology.cells;
    const double norm = mean_local_beta(train) * train.config.topology.users_per_cell;
    long step = 0;

    auto dropout_stream = [&]() -> std::optional<RngStream> {
        if (config.pilot_dropout <= 0.0) return std::nullopt;
        return RngStream(config.seed, {StreamPurpose::dropout, 1, static_cast<std::uint64_t>(step)});
    };

    auto run_unaware = [&](int epoch) {
        const std::size_t rows = train.samples.size() * static_cast<std::size_t>(l);
        const auto order = shuffled(rows, config.seed, 1, epoch);
        double total = 0.0;
        for (std::size_t first = 0; first < rows; first += static_cast<std::size_t>(config.pilot_batch)) {
            const std::size_t last = std::min(rows, first + static_cast<std::size_t>(config.pilot_batch));
            std::vector<std::vector<double>> betas;
            for (std::size_t b = first; b < last; ++b) {
                const Sample& s = train.samples[order[b] / static_cast<std::size_t>(l)];
                betas.push_back(s.scenario.beta.local(static_cast<int>(order[b] % static_cast<std::size_t>(l))));
            }
            Tape tape;
            auto drng = dropout_stream();
            Var raw = net.forward_raw(tape, betas, drng ? &*drng : nullptr);
            Var loss = tape.constant(Tensor::scalar(0.0));
            for (std::size_t b = 0; b < betas.size(); ++b) {
                Var x = net.pilot(tape, raw, static_cast<int>(b));
                r.history.max_pilot_power = std::max(r.history.max_pilot_power, column_power_max(x.cplx()));
                loss = ad::add(loss, loss_unaware(tape, x, betas[b], train.config.pilot_length,
                                                  dbm_to_mw(train.config.noise_power_dbm)));
            }
            total += loss.real().item();
            loss = ad::scale(loss, 1.0 / (norm * static_cast<double>(betas.size())));
            ad::zero_grad(params);
            tape.backward(loss);
            adam.step(params);
            ++step;
        }
        return total / static_cast<double>(rows);
    };

    auto run_aware = [&](int epoch) {
        const std::size_t n = train.samples.size();
        const auto per_step = static_cast<std::size_t>(std::max(1, config.pilot_batch / l));
        const auto order = shuffled(n, config.seed, 3, epoch);
        double total = 0.0;
        for (std::size_t first = 0; first < n; first += per_step) {
            const std::size_t last = std::min(n, first + per_step);
            std::vector<std::vector<double>> betas;
            for (std::size_t b = first; b < last; ++b)
                for (int i = 0; i < l; ++i) betas.push_back(train.samples[order[b]].scenario.beta.local(i));
            Tape tape;
            auto drng = dropout_stream();
            Var raw = net.forward_raw(tape, betas, drng ? &*drng : nullptr);
            Var loss = tape.constant(Tensor::scalar(0.0));
            for (std::size_t b = first; b < last; ++b) {
                std::vector<Var> xs;
                for (int i = 0; i < l; ++i) {
                    xs.push_back(net.pilot(tape, raw, static_cast<int>((b - first) * static_cast<std::size_t>(l)) + i));
                    r.history.max_pilot_power = std::max(r.history.max_pilot_power, column_power_max(xs.back().cplx()));
                }
                loss = ad::add(loss, loss_aware(tape, xs, with_delta(train.samples[order[b]].scenario,
                                                                     config.train_delta_sq)));
            }
            total += loss.real().item();
            loss = ad::scale(loss, 1.0 / (norm * l * static_cast<double>(last - first)));
            ad::zero_grad(params);
            tape.backward(loss);
            adam.step(params);
            ++step;
        }
        return total / static_cast<double>(n);
    };

    auto validate = [&] {
        return aware ? mean_aware_loss(validation, learned_pilots(net), config.train_delta_sq)
                     : mean_unaware_loss(validation, learned_pilots(net));
    };
    auto save = [&] { return snapshot(net.params()); };
    auto load = [&](const Snapshot& s) { restore(net.params(), s); };
    double max_power = 0.0;
    auto run = [&](int epoch) {
        const double loss = aware ? run_aware(epoch) : run_unaware(epoch);
        max_power = std::max(max_power, r.history.max_pilot_power);
        return loss;
    };
    r.history = epoch_loop(config.pilot_epochs, config.patience, config.pilot_lr, config.lr_decay_at,
                           config.lr_decay, adam, run, validate, save, load);
    r.history.max_pilot_power = max_power;
    return r;
}

// ---------------------------------------------------------------------------
// Estimator training

namespace {

double items_mse(const ResidualNet& net, const std::vector<EstimatorItem>& items) {
    std::vector<ComplexMatrix> yhat;
    std::vector<std::vector<double>> betas;
    for (const auto& it : items) {
        yhat.push_back(it.yhat);
        betas.push_back(it.beta);
    }
    const std::vector<ComplexMatrix> est = net.estimate(yhat, betas);
    double s = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) s += frobenius_norm_sq(items[i].truth - est[i]);
    return s / static_cast<double>(items.size());
}

// 1 / sqrt(beta_k) on every entry of column k, shaped like the estimator planes.
Tensor column_weights(const std::vector<std::vector<double>>& betas, std::size_t rows) {
    const int b = static_cast<int>(betas.size()), n = static_cast<int>(rows), k = static_cast<int>(betas.front().size());
    Tensor w({b, n, k, 2});
    for (int s = 0; s < b; ++s)
        for (int r = 0; r < n; ++r)
            for (int q = 0; q < k; ++q) {
                const std::size_t p = 2 * ((static_cast<std::size_t>(s) * n + r) * k + q);
                w.data[p] = w.data[p + 1] = 1.0 / std::sqrt(betas[static_cast<std::size_t>(s)][static_cast<std::size_t>(q)]);
            }
    return w;
}

}  // namespace

EstimatorTrainResult train_estimator(const TrainConfig& config, const Dataset& train, const Dataset& validation,
                                     const PilotProvider& pilots) {
    config.validate();
    EstimatorTrainResult r{ResidualNet(config.estimator, config.seed), {}};
    ResidualNet& net = r.net;
    const std::vector<EstimatorItem> items = estimator_items(train, pilots, config.train_delta_sq);
    const std::vector<EstimatorItem> val_items = estimator_items(validation, pilots, config.train_delta_sq);
    const double cells = train.config.topology.cells;
    const double norm =
        mean_local_beta(train) * train.config.topology.antennas * train.config.topology.users_per_cell;
    std::vector<ad::Parameter*> params = net.param_ptrs();
    ad::Adam adam({.lr = config.lr});

    auto run_epoch = [&](int epoch) {
        const auto order = shuffled(items.size(), config.seed, 2, epoch);
        double total = 0.0;
        for (std::size_t first = 0; first < items.size(); first += static_cast<std::size_t>(config.batch)) {
            const std::size_t last = std::min(items.size(), first + static_cast<std::size_t>(config.batch));
            std::vector<ComplexMatrix> yhat, truth;
            std::vector<std::vector<double>> betas;
            for (std::size_t b = first; b < last; ++b) {
                const EstimatorItem& it = items[order[b]];
                yhat.push_back(it.yhat);
                truth.push_back(it.truth);
                betas.push_back(it.beta);
            }
            Tape tape;
            const ResidualNet::Output out = net.forward(tape, tape.constant(planes_of(yhat)), betas);
            const Var err = ad::sub(out.estimate, tape.constant(planes_of(truth)));
            Var loss = ad::sum_sq(err);
            total += loss.real().item();
            if (config.column_normalized_loss)
                loss = ad::scale(ad::sum_sq(ad::mul_const(err, column_weights(betas, yhat.front().rows()))),
                                 1.0 / static_cast<double>(yhat.front().size() * (last - first)));
            else
                loss = ad::scale(loss, 1.0 / (norm * static_cast<double>(last - first)));
            ad::zero_grad(params);
            tape.backward(loss);
            adam.step(params);
        }
        return cells * total / static_cast<double>(items.size());
    };
    auto validate = [&] { return cells * items_mse(net, val_items); };
    auto save = [&] { return snapshot(net.params()); };
    auto load = [&](const Snapshot& s) { restore(net.params(), s); };
    r.history = epoch_loop(config.epochs, config.patience, config.lr, config.lr_decay_at, config.lr_decay, adam,
                           run_epoch, validate, save, load);
    return r;
}

// ---------------------------------------------------------------------------
// Joint training

namespace {

/// Throws RankDeficient when Xbar^H Xbar is numerically singular.
void check_rank(const ComplexMatrix& xbar) { (void)ls_matrix(xbar); }

}  // namespace

ad::Var joint_batch_loss(Tape& tape, PilotNet& pilot, ResidualNet& estimator, std::span<const Sample* const> batch,
                         double delta_sq, bool reparameterized, RngStream* dropout_rng, double* max_power) {
    if (batch.empty()) throw std::invalid_argument("joint_batch_loss: empty batch");
    const int l = batch.front()->scenario.cells();
    const double root_tau = std::sqrt(static_cast<double>(batch.front()->scenario.pilot_length));
    const double delta = std::sqrt(delta_sq);
    std::vector<std::vector<double>> betas;
    for (const Sample* s : batch)
        for (int i = 0; i < l; ++i) betas.push_back(s->scenario.beta.local(i));
    Var raw = pilot.forward_raw(tape, betas, dropout_rng);

    std::vector<Var> yhats;
    std::vector<ComplexMatrix> truth;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Sample& s = *batch[b];
        const Scenario sc = with_delta(s.scenario, delta_sq);
        std::vector<Var> xs;
        std::vector<ComplexMatrix> xv;
        for (int j = 0; j < l; ++j) {
            xs.push_back(pilot.pilot(tape, raw, static_cast<int>(b) * l + j));
            xv.push_back(xs.back().cplx());
            if (max_power) *max_power = std::max(*max_power, column_power_max(xv.back()));
            check_rank(xv.back());
        }
        // transmitted blocks Xbar_j^H + eta_UE_j^H
        std::optional<Distortion> frozen;
        if (!reparameterized) frozen = scale_distortion(s.draws, sc, s.channels, PilotSet::from_merged(xv).powers());
        std::vector<Var> sent;
        for (int j = 0; j < l; ++j) {
            const auto jj = static_cast<std::size_t>(j);
            Var eta = reparameterized ? ad::ue_distortion(xs[jj], s.draws.ue[jj], sc.delta_ue[jj])
                                      : tape.constant(frozen->eta_ue[jj]);
            sent.push_back(ad::add(ad::adjoint(xs[jj]), ad::adjoint(eta)));
        }
        for (int i = 0; i < l; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            Var y = ad::matmul(tape.constant(s.channels.h[ii][0]), sent[0]);
            for (std::size_t j = 1; j < sent.size(); ++j)
                y = ad::add(y, ad::matmul(tape.constant(s.channels.h[ii][j]), sent[j]));
            y = ad::scale(y, root_tau);
            Var eta_bs = reparameterized ? ad::bs_distortion(s.channels.h[ii], xs, s.draws.bs[ii], delta)
                                         : tape.constant(frozen->eta_bs[ii]);
            y = ad::add(y, eta_bs);
            y = ad::add(y, tape.constant(s.noise[ii] * std::sqrt(sc.noise_power_mw)));
            const Var& xi = xs[ii];
            Var a = ad::scale(ad::matmul(xi, ad::hpd_inverse(ad::matmul(ad::adjoint(xi), xi))), 1.0 / root_tau);
            yhats.push_back(ad::matmul(y, a));
            truth.push_back(s.channels.h[ii][ii]);
        }
    }
    const ResidualNet::Output out = estimator.forward(tape, ad::complex_planes(yhats), betas);
    return ad::sum_sq(ad::sub(out.estimate, tape.constant(planes_of(truth))));
}

JointTrainResult train_joint(const TrainConfig& config, const Dataset& train, const Dataset& validation,
                             const PilotNet& pretrained, const ResidualNet* estimator) {
    config.validate();
    JointTrainResult r{pretrained, estimator ? *estimator : ResidualNet(config.estimator, config.seed), {}};
    PilotNet& pnet = r.pilot;
    ResidualNet& enet = r.estimator;
    const int l = train.config.topology.cells;
    const auto n_samples = train.samples.size();
    const double norm =
        mean_local_beta(train) * train.config.topology.antennas * train.config.topology.users_per_cell;
    const auto per_step = static_cast<std::size_t>(std::max(1, config.batch / l));

    std::vector<ad::Parameter*> pilot_params = pnet.param_ptrs();
    std::vector<ad::Parameter*> params = pilot_params;
    for (ad::Parameter* p : enet.param_ptrs()) params.push_back(p);
    ad::Adam adam({.lr = config.lr});
    double max_power = 0.0;
    bool first_step = true;
    double first_pilot_grad = 0.0;
    long step = 0;

    auto run_epoch = [&](int epoch) {
        const auto order = shuffled(n_samples, config.seed, 4, epoch);
        double total = 0.0;
        for (std::size_t first = 0; first < n_samples; first += per_step) {
            const std::size_t last = std::min(n_samples, first + per_step);
            std::vector<const Sample*> batch;
            for (std::size_t b = first; b < last; ++b) batch.push_back(&train.samples[order[b]]);
            Tape tape;
            std::optional<RngStream> drng;
            if (config.pilot_dropout > 0.0)
                drng.emplace(config.seed, StreamId{StreamPurpose::dropout, 4, static_cast<std::uint64_t>(step)});
            Var loss = joint_batch_loss(tape, pnet, enet, batch, config.train_delta_sq,
                                        config.reparameterized_distortion, drng ? &*drng : nullptr, &max_power);
            const std::size_t count = batch.size() * static_cast<std::size_t>(l);
            total += loss.real().item();
            loss = ad::scale(loss, 1.0 / (norm * static_cast<double>(count)));
            ad::zero_grad(params);
            tape.backward(loss);
            if (first_step) {
                for (const ad::Parameter* p : pilot_params)
                    for (double g : p->grad.data) first_pilot_grad += g * g;
                first_pilot_grad = std::sqrt(first_pilot_grad);
                first_step = false;
            }
            adam.step(params);
            ++step;
        }
        return total / static_cast<double>(n_samples);
    };
    auto validate = [&] {
        return evaluate(validation, learned_pilots(pnet), network_estimator(enet), config.train_delta_sq).sum_mse;
    };
    auto save = [&] {
        Snapshot s = snapshot(pnet.params());
        for (auto& t : snapshot(enet.params())) s.push_back(std::move(t));
        return s;
    };
    auto load = [&](const Snapshot& s) {
        const std::size_t np = pnet.params().size();
        restore(pnet.params(), Snapshot(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(np)));
        restore(enet.params(), Snapshot(s.begin() + static_cast<std::ptrdiff_t>(np), s.end()));
    };
    r.history = epoch_loop(config.epochs, config.patience, config.lr, config.lr_decay_at, config.lr_decay, adam,
                           run_epoch, validate, save, load);
    r.history.max_pilot_power = max_power;
    r.history.first_pilot_grad_norm = first_pilot_grad;
    return r;
}

// ---------------------------------------------------------------------------
// Evaluation

Estimator ls_estimator() {
    return [](const Sample&, const PilotSet& ps, const std::vector<ComplexMatrix>& y, double) {
        std::vector<ComplexMatrix> out;
        for (int i = 0; i < ps.cells(); ++i) out.push_back(ls_preprocess(y[static_cast<std::size_t>(i)], ps.merged(i)));
        return out;
    };
}

Estimator lmmse_estimator() {
    return [](const Sample& s, const PilotSet& ps, const std::vector<ComplexMatrix>& y, double delta_sq) {
        const Scenario sc = with_delta(s.scenario, delta_sq);
        std::vector<ComplexMatrix> out;
        for (int i = 0; i < ps.cells(); ++i)
            out.push_back(lmmse_estimate(y[static_cast<std::size_t>(i)], lmmse_matrix(make_lmmse_context(sc, ps, i))));
        return out;
    };
}

Estimator network_estimator(const ResidualNet& net) {
    return [net](const Sample& s, const PilotSet& ps, const std::vector<ComplexMatrix>& y, double) {
        std::vector<ComplexMatrix> yhat;
        std::vector<std::vector<double>> betas;
        for (int i = 0; i < ps.cells(); ++i) {
            yhat.push_back(ls_preprocess(y[static_cast<std::size_t>(i)], ps.merged(i)));
            betas.push_back(s.scenario.beta.local(i));
        }
        return net.estimate(yhat, betas);
    };
}

namespace {

MetricsRecord collect(const Dataset& data, double delta_sq, std::vector<std::vector<double>> per_cell) {
    MetricsRecord m;
    m.pilot_length = data.config.pilot_length;
    m.delta_sq = delta_sq;
    m.seed = data.seed;
    const auto l = static_cast<std::size_t>(data.config.topology.cells);
    m.cell_mse.assign(l, 0.0);
    for (const auto& row : per_cell) {
        double s = 0.0;
        for (std::size_t i = 0; i < l; ++i) {
            m.cell_mse[i] += row[i];
            s += row[i];
        }
        m.sample_sum_mse.push_back(s);
    }
    const double n = static_cast<double>(std::max<std::size_t>(per_cell.size(), 1));
    for (double& c : m.cell_mse) c /= n;
    m.sum_mse = std::accumulate(m.sample_sum_mse.begin(), m.sample_sum_mse.end(), 0.0) / n;
    return m;
}

}  // namespace

MetricsRecord evaluate(const Dataset& data, const PilotProvider& pilots, const Estimator& estimator,
                       double delta_sq) {
    const auto l = static_cast<std::size_t>(data.config.topology.cells);
    std::vector<std::vector<double>> per_cell(data.samples.size(), std::vector<double>(l));
    parallel_for(data.samples.size(), [&](std::size_t s) {
        const Sample& sample = data.samples[s];
        const PilotSet ps = pilots(sample);
        const std::vector<ComplexMatrix> y = received_blocks(sample, ps, delta_sq);
        const std::vector<ComplexMatrix> est = estimator(sample, ps, y, delta_sq);
        for (std::size_t i = 0; i < l; ++i) per_cell[s][i] = frobenius_norm_sq(sample.channels.h[i][i] - est[i]);
    });
    return collect(data, delta_sq, std::move(per_cell));
}

MetricsRecord evaluate_analytic(const Dataset& data, const PilotProvider& pilots, double delta_sq) {
    const auto l = static_cast<std::size_t>(data.config.topology.cells);
    std::vector<std::vector<double>> per_cell(data.samples.size(), std::vector<double>(l));
    parallel_for(data.samples.size(), [&](std::size_t s) {
        const Sample& sample = data.samples[s];
        const PilotSet ps = pilots(sample);
        const Scenario sc = with_delta(sample.scenario, delta_sq);
        for (std::size_t i = 0; i < l; ++i)
            per_cell[s][i] = analytic_mse(make_lmmse_context(sc, ps, static_cast<int>(i)), sc.antennas());
    });
    return collect(data, delta_sq, std::move(per_cell));
}

std::vector<std::pair<double, double>> empirical_cdf(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    std::vector<std::pair<double, double>> out;
    const double n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out.emplace_back(values[i], static_cast<double>(i + 1) / n);
    return out;
}

namespace {
std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12e", v);
    return buf;
}
}  // namespace

void write_metrics_header(std::ostream& os) { os << "regime,pilot_scheme,tau_p,delta_sq,seed,sum_mse,cell_mse\n"; }

void write_metrics_row(std::ostream& os, const MetricsRecord& m) {
    os << m.regime << ',' << m.pilot_scheme << ',' << m.pilot_length << ',' << num(m.delta_sq) << ',' << m.seed << ','
       << num(m.sum_mse) << ',';
    for (std::size_t i = 0; i < m.cell_mse.size(); ++i) os << (i ? ";" : "") << num(m.cell_mse[i]);
    os << '\n';
}

void write_cdf(std::ostream& os, const MetricsRecord& m) {
    os << "sum_mse,cdf\n";
    for (const auto& [v, c] : empirical_cdf(m.sample_sum_mse)) os << num(v) << ',' << num(c) << '\n';
}

}  // namespace mce
