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

#include "mce/gradcheck_suite.hpp"

#include <functional>

#include "mce/autodiff.hpp"
#include "mce/pilot_net.hpp"
#include "mce/residual_net.hpp"
#include "mce/training.hpp"

namespace mce {

using ad::Tape;
using ad::Tensor;
using ad::Value;
using ad::Var;

namespace {

Tensor rand_tensor(RngStream& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Uniform magnitude in [0.2, 1] with a random sign, away from relu kinks.
Tensor rand_signed(RngStream& rng, std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.0);
    return t;
}

ComplexMatrix rand_matrix(RngStream& rng, std::size_t r, std::size_t c) { return sample_complex_gaussian(rng, r, c, 1.0); }

// Columns rescaled to norms drawn from {0.6, 1.5} x sqrt(cap): both sides of the cap.
ComplexMatrix rand_capped(RngStream& rng, std::size_t r, std::size_t c, double cap) {
    ComplexMatrix x = rand_matrix(rng, r, c);
    for (std::size_t k = 0; k < c; ++k) {
        const double target = (rng.uniform() < 0.5 ? 0.6 : 1.5) * std::sqrt(cap);
        double e = 0.0;
        for (const auto& v : x.col(k)) e += std::norm(v);
        for (auto& v : x.col(k)) v *= target / std::sqrt(e);
    }
    return x;
}

// Smooth graphs tolerate a wide step, which keeps rounding noise from
// ill-conditioned inverses small; ReLU networks need a narrow one so the
// difference rarely straddles a kink. The end-to-end graph sits in between.
constexpr double kSmoothStep = 1e-4;
constexpr double kReluNetStep = 1e-6;
constexpr double kJointStep = 1e-5;

struct Runner {
    std::uint64_t seed;
    int points;
    std::vector<GradCheckCase> out;

    // `make(rng)` returns the loss builder and the point for one trial.
    void value_case(const std::string& name,
                    const std::function<std::pair<ad::LossBuilder, std::vector<Value>>(RngStream&)>& make,
                    double h = kSmoothStep) {
        GradCheckCase c{name, 0.0, 0, points};
        for (int p = 0; p < points; ++p) {
            RngStream rng(seed, {StreamPurpose::generic, std::hash<std::string>{}(name), static_cast<std::uint64_t>(p)});
            auto [build, point] = make(rng);
            const ad::GradCheckReport r = ad::grad_check(build, point, h);
            c.max_rel_error = std::max(c.max_rel_error, r.max_rel_error);
            c.components += r.components;
        }
        out.push_back(c);
    }

    // `run(rng)` performs one trial and returns its report.
    void custom_case(const std::string& name, const std::function<ad::GradCheckReport(RngStream&)>& run) {
        GradCheckCase c{name, 0.0, 0, points};
        for (int p = 0; p < points; ++p) {
            RngStream rng(seed, {StreamPurpose::generic, std::hash<std::string>{}(name), static_cast<std::uint64_t>(p)});
            const ad::GradCheckReport r = run(rng);
            c.max_rel_error = std::max(c.max_rel_error, r.max_rel_error);
            c.components += r.components;
        }
        out.push_back(c);
    }
};

Scenario small_scenario(RngStream& rng, int cells, int users, int antennas, int tau, double delta) {
    ScenarioConfig cfg;
    cfg.topology.cells = cells;
    cfg.topology.users_per_cell = users;
    cfg.topology.antennas = antennas;
    cfg.pilot_length = tau;
    cfg.delta_ue = delta;
    cfg.delta_bs = delta;
    return make_scenario(cfg, rng.engine()(), 0);
}

// Zero biases put ReLU inputs exactly on the kink wherever a receptive field is dead.
void jitter_biases(std::span<ad::Parameter* const> params, RngStream& rng, double lo, double hi) {
    for (ad::Parameter* p : params)
        if (p->name[p->name.rfind('.') + 1] == 'b')
            for (double& v : p->value.data) v = rng.uniform(lo, hi);
}

double local_beta_sum(const Scenario& s) {
    double t = 0.0;
    for (int i = 0; i < s.cells(); ++i)
        for (double b : s.beta.local(i)) t += b;
    return t;
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite(int points, std::uint64_t seed) {
    Runner r{seed, points, {}};

    // ---- real-tensor operators
    r.value_case("dense", [](RngStream& rng) {
        Tensor c = rand_tensor(rng, {3, 5});
        ad::LossBuilder f = [c](Tape&, const std::vector<Var>& v) {
            return ad::sum_sq(ad::mul_const(ad::dense(v[0], v[1], v[2]), c));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_tensor(rng, {3, 4})), Value::of(rand_tensor(rng, {4, 5})),
                                               Value::of(rand_tensor(rng, {5}))}};
    });
    r.value_case("conv3x3", [](RngStream& rng) {
        Tensor c = rand_tensor(rng, {2, 4, 3, 2});
        ad::LossBuilder f = [c](Tape&, const std::vector<Var>& v) {
            return ad::sum_sq(ad::mul_const(ad::conv3x3(v[0], v[1], v[2]), c));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_tensor(rng, {2, 4, 3, 3})),
                                               Value::of(rand_tensor(rng, {3, 3, 3, 2})), Value::of(rand_tensor(rng, {2}))}};
    });
    r.value_case("relu", [](RngStream& rng) {
        Tensor c = rand_tensor(rng, {4, 3});
        ad::LossBuilder f = [c](Tape&, const std::vector<Var>& v) { return ad::sum_sq(ad::mul_const(ad::relu(v[0]), c)); };
        return std::pair{f, std::vector<Value>{Value::of(rand_signed(rng, {4, 3}))}};
    });
    r.value_case("dropout", [](RngStream& rng) {
        const std::uint64_t mask_seed = rng.engine()();
        ad::LossBuilder f = [mask_seed](Tape&, const std::vector<Var>& v) {
            RngStream m(mask_seed, {StreamPurpose::dropout, 0, 0});
            return ad::sum_sq(ad::dropout(v[0], 0.3, m));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_tensor(rng, {5, 4}))}};
    });
    r.value_case("hadamard_sum", [](RngStream& rng) {
        ad::LossBuilder f = [](Tape&, const std::vector<Var>& v) {
            return ad::add(ad::sum_sq(ad::hadamard(v[0], v[1])), ad::sum(ad::hadamard(v[0], v[0])));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_tensor(rng, {3, 4})), Value::of(rand_tensor(rng, {3, 4}))}};
    });
    r.value_case("slice_concat", [](RngStream& rng) {
        Tensor c = rand_tensor(rng, {2, 3, 2, 5});
        ad::LossBuilder f = [c](Tape&, const std::vector<Var>& v) {
            const Var parts[] = {ad::slice_channels(v[0], 0, 1), ad::slice_channels(v[0], 2, 2), v[1]};
            return ad::sum_sq(ad::mul_const(ad::concat_channels(parts), c));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_tensor(rng, {2, 3, 2, 4})),
                                               Value::of(rand_tensor(rng, {2, 3, 2, 2}))}};
    });
    r.value_case("add_sub_scale_real", [](RngStream& rng) {
        ad::LossBuilder f = [](Tape&, const std::vector<Var>& v) {
            return ad::sum_sq(ad::sub(ad::scale(v[0], 1.7), ad::add(v[0], ad::hadamard(v[1], v[0]))));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_tensor(rng, {6})), Value::of(rand_tensor(rng, {6}))}};
    });

    // ---- complex operators
    r.value_case("matmul_adjoint", [](RngStream& rng) {
        ComplexMatrix c = rand_matrix(rng, 3, 2);
        ad::LossBuilder f = [c](Tape& t, const std::vector<Var>& v) {
            Var m = ad::matmul(v[0], v[1]);
            return ad::add(ad::scale(ad::frobenius_sq(m), 0.1), ad::trace_real(ad::matmul(ad::adjoint(m), t.constant(c))));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_matrix(rng, 3, 2)), Value::of(rand_matrix(rng, 2, 2))}};
    });
    r.value_case("add_sub_scale_complex", [](RngStream& rng) {
        ad::LossBuilder f = [](Tape&, const std::vector<Var>& v) {
            return ad::frobenius_sq(ad::sub(ad::scale(v[0], -0.4), ad::add(v[1], ad::matmul(v[0], v[1]))));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_matrix(rng, 3, 3)), Value::of(rand_matrix(rng, 3, 3))}};
    });
    r.value_case("hpd_inverse", [](RngStream& rng) {
        ComplexMatrix c = rand_matrix(rng, 3, 3);
        ad::LossBuilder f = [c](Tape& t, const std::vector<Var>& v) {
            Var a = ad::add(ad::matmul(ad::adjoint(v[0]), v[0]), t.constant(ComplexMatrix::identity(3)));
            Var inv = ad::hpd_inverse(a);
            return ad::add(ad::trace_real(inv), ad::frobenius_sq(ad::matmul(inv, t.constant(c))));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_matrix(rng, 4, 3))}};
    });
    r.value_case("scale_columns_scalar_times", [](RngStream& rng) {
        const std::vector<double> s{0.5, -1.2, 2.0};
        ad::LossBuilder f = [s](Tape&, const std::vector<Var>& v) {
            Var a = ad::scale_columns_const(v[0], s);
            return ad::frobenius_sq(ad::scalar_times(ad::sum(v[1]), a));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_matrix(rng, 2, 3)), Value::of(rand_tensor(rng, {2}))}};
    });
    r.value_case("weighted_column_energy", [](RngStream& rng) {
        const std::vector<double> w{0.3, 1.1, 0.7};
        ad::LossBuilder f = [w](Tape&, const std::vector<Var>& v) {
            Var e = ad::weighted_column_energy(v[0], w);
            return ad::sum_sq(e);
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_matrix(rng, 4, 3))}};
    });
    r.value_case("normalize_power", [](RngStream& rng) {
        ComplexMatrix c = rand_matrix(rng, 4, 3);
        ad::LossBuilder f = [c](Tape& t, const std::vector<Var>& v) {
            Var x = ad::normalize_power(v[0], 2.0);
            return ad::add(ad::frobenius_sq(ad::matmul(ad::adjoint(x), t.constant(c))),
                           ad::trace_real(ad::matmul(ad::adjoint(x), t.constant(c))));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_capped(rng, 4, 3, 2.0))}};
    });
    r.value_case("pack_complex", [](RngStream& rng) {
        ComplexMatrix c = rand_matrix(rng, 2, 2);
        ad::LossBuilder f = [c](Tape& t, const std::vector<Var>& v) {
            return ad::frobenius_sq(ad::matmul(ad::pack_complex(v[0], 1, 3, 2), t.constant(c)));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_tensor(rng, {2, 12}))}};
    });
    r.value_case("complex_planes", [](RngStream& rng) {
        Tensor c = rand_tensor(rng, {2, 3, 2, 2});
        ComplexMatrix d = rand_matrix(rng, 2, 2);
        ad::LossBuilder f = [c, d](Tape& t, const std::vector<Var>& v) {
            const Var mats[] = {v[0], v[1]};
            Var planes = ad::complex_planes(mats);
            Var back = ad::planes_to_complex(ad::mul_const(planes, c), 1);
            return ad::add(ad::sum_sq(ad::mul_const(planes, c)), ad::frobenius_sq(ad::matmul(back, t.constant(d))));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_matrix(rng, 3, 2)), Value::of(rand_matrix(rng, 3, 2))}};
    });
    r.value_case("ue_distortion", [](RngStream& rng) {
        ComplexMatrix draws = rand_matrix(rng, 3, 2), c = rand_matrix(rng, 3, 2);
        const std::vector<double> delta{0.1, 0.2};
        ad::LossBuilder f = [=](Tape& t, const std::vector<Var>& v) {
            Var e = ad::ue_distortion(v[0], draws, delta);
            return ad::add(ad::trace_real(ad::matmul(ad::adjoint(e), t.constant(c))), ad::frobenius_sq(e));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_matrix(rng, 3, 2))}};
    });
    r.value_case("bs_distortion", [](RngStream& rng) {
        std::vector<ComplexMatrix> h{rand_matrix(rng, 4, 2), rand_matrix(rng, 4, 2)};
        ComplexMatrix draws = rand_matrix(rng, 4, 3), c = rand_matrix(rng, 4, 3);
        ad::LossBuilder f = [=](Tape& t, const std::vector<Var>& v) {
            const Var xs[] = {v[0], v[1]};
            Var e = ad::bs_distortion(h, xs, draws, 0.15);
            return ad::add(ad::trace_real(ad::matmul(ad::adjoint(e), t.constant(c))), ad::frobenius_sq(e));
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_matrix(rng, 3, 2)), Value::of(rand_matrix(rng, 3, 2))}};
    });

    // ---- losses
    r.value_case("loss_unaware", [](RngStream& rng) {
        const Scenario s = small_scenario(rng, 1, 3, 8, 2, 0.0);
        const std::vector<double> beta = s.beta.local(0);
        double bsum = 0.0;
        for (double b : beta) bsum += b;
        const double sigma2 = s.noise_power_mw;
        ad::LossBuilder f = [=](Tape& t, const std::vector<Var>& v) {
            return ad::scale(loss_unaware(t, v[0], beta, 2, sigma2), 1.0 / bsum);
        };
        return std::pair{f, std::vector<Value>{Value::of(rand_capped(rng, 2, 3, s.ue_power_cap_mw))}};
    });
    r.value_case("loss_aware", [](RngStream& rng) {
        const Scenario s = small_scenario(rng, 3, 3, 8, 2, 0.1);
        const double bsum = local_beta_sum(s);
        ad::LossBuilder f = [=](Tape& t, const std::vector<Var>& v) {
            return ad::scale(loss_aware(t, v, s), 1.0 / bsum);
        };
        std::vector<Value> pt;
        for (int i = 0; i < 3; ++i) pt.push_back(Value::of(rand_capped(rng, 2, 3, s.ue_power_cap_mw)));
        return std::pair{f, pt};
    });
    for (EstimatorMode mode : {EstimatorMode::proposed, EstimatorMode::cdrn, EstimatorMode::cdrn_local}) {
        const std::string tag = to_string(mode);
        // estimator loss with respect to its input
        r.value_case("estimator_loss_input_" + tag, [mode](RngStream& rng) {
            ResidualNetConfig cfg{.layers = 2, .filters = 4, .mode = mode, .zero_init_heads = false};
            ResidualNet net(cfg, rng.engine()());
            jitter_biases(net.param_ptrs(), rng, -0.5, 0.5);
            std::vector<std::vector<double>> betas{{0.8, 1.3, 0.5}, {1.0, 0.6, 1.7}};
            Tensor target = rand_tensor(rng, {2, 5, 3, 2});
            ad::LossBuilder f = [=](Tape& t, const std::vector<Var>& v) {
                const ResidualNet::Output o = net.forward_frozen(t, v[0], betas);
                return ad::scale(ad::sum_sq(ad::sub(o.estimate, t.constant(target))), 0.1);
            };
            return std::pair{f, std::vector<Value>{Value::of(rand_tensor(rng, {2, 5, 3, 2}))}};
        }, kReluNetStep);
        // and with respect to its parameters
        r.custom_case("estimator_loss_params_" + tag, [mode](RngStream& rng) {
            ResidualNetConfig cfg{.layers = 2, .filters = 4, .mode = mode, .zero_init_heads = false};
            ResidualNet net(cfg, rng.engine()());
            jitter_biases(net.param_ptrs(), rng, -0.5, 0.5);
            std::vector<std::vector<double>> betas{{0.8, 1.3, 0.5}, {1.0, 0.6, 1.7}};
            Tensor x = rand_tensor(rng, {2, 5, 3, 2}), target = rand_tensor(rng, {2, 5, 3, 2});
            auto build = [&](Tape& t) {
                const ResidualNet::Output o = net.forward(t, t.constant(x), betas);
                return ad::scale(ad::sum_sq(ad::sub(o.estimate, t.constant(target))), 0.1);
            };
            return ad::param_grad_check(build, net.param_ptrs(), 12, rng, kReluNetStep);
        });
    }
    for (bool reparam : {false, true}) {
        r.custom_case(reparam ? "joint_graph_reparameterized" : "joint_graph", [reparam](RngStream& rng) {
            ScenarioConfig sc;
            sc.topology.cells = 2;
            sc.topology.users_per_cell = 3;
            sc.topology.antennas = 4;
            sc.pilot_length = 3;
            const Dataset d = generate_dataset(sc, rng.engine()(), 2);
            PilotNetConfig pc;
            pc.pilot_length = 3;
            pc.users = 3;
            pc.hidden_layers = 1;
            pc.width_factor = 2;
            pc.power_cap_mw = dbm_to_mw(sc.ue_power_cap_dbm);
            PilotNet pnet(pc, rng.engine()());
            // positive biases keep the hidden layer alive and the pilots nonzero
            jitter_biases(pnet.param_ptrs(), rng, 0.1, 0.5);
            ResidualNet enet({.layers = 2, .filters = 3, .zero_init_heads = false}, rng.engine()());
            jitter_biases(enet.param_ptrs(), rng, -0.5, 0.5);
            const std::vector<const Sample*> batch{&d.samples[0], &d.samples[1]};
            double norm = 0.0;
            for (const Sample* s : batch) norm += local_beta_sum(s->scenario) * sc.topology.antennas;
            // stop-gradient impairments are constants only at delta = 0
            const double delta_sq = reparam ? 0.02 : 0.0;
            auto build = [&](Tape& t) {
                return ad::scale(joint_batch_loss(t, pnet, enet, batch, delta_sq, reparam), 1.0 / norm);
            };
            std::vector<ad::Parameter*> params = pnet.param_ptrs();
            for (ad::Parameter* p : enet.param_ptrs()) params.push_back(p);
            return ad::param_grad_check(build, params, 8, rng, kJointStep);
        });
    }
    return r.out;
}

}  // namespace mce
