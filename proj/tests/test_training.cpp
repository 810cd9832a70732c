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


#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "mce/training.hpp"
#include "support.hpp"

using namespace mce;

namespace {

TrainConfig tiny(int tau = 4) {
    TrainConfig c;
    c.scenario = test::small_config(3, 4, 8, tau);
    c.train_samples = 40;
    c.validation_samples = 20;
    c.test_samples = 20;
    c.epochs = 3;
    c.batch = 16;
    c.pilot_epochs = 3;
    c.pilot_batch = 16;
    c.estimator = {.layers = 2, .filters = 4};
    c.seed = 5;
    return c;
}

struct Splits {
    Dataset train, val, test;
};

Splits splits(const TrainConfig& c) {
    return {generate_dataset(c.scenario, split_seed(c.seed, Split::train), c.train_samples),
            generate_dataset(c.scenario, split_seed(c.seed, Split::validation), c.validation_samples),
            generate_dataset(c.scenario, split_seed(c.seed, Split::test), c.test_samples)};
}

}  // namespace

TEST_CASE("split seeds differ and are reproducible") {
    CHECK(split_seed(1, Split::train) != split_seed(1, Split::validation));
    CHECK(split_seed(1, Split::validation) != split_seed(1, Split::test));
    CHECK(split_seed(1, Split::train) != split_seed(2, Split::train));
    CHECK(split_seed(7, Split::test) == split_seed(7, Split::test));
}

TEST_CASE("dataset generation is deterministic") {
    const ScenarioConfig cfg = test::small_config(2, 2, 4, 2);
    const Dataset a = generate_dataset(cfg, 3, 5);
    const Dataset b = generate_dataset(cfg, 3, 5);
    REQUIRE(a.samples.size() == 5);
    for (std::size_t s = 0; s < 5; ++s) {
        CHECK(a.samples[s].index == s);
        CHECK(a.samples[s].scenario.beta.data() == b.samples[s].scenario.beta.data());
        CHECK(a.samples[s].channels.h[1][0] == b.samples[s].channels.h[1][0]);
        CHECK(a.samples[s].noise[1] == b.samples[s].noise[1]);
    }
}

TEST_CASE("dataset channel power matches large-scale fading") {
    const ScenarioConfig cfg = test::small_config(2, 4, 32, 4);
    const Dataset d = generate_dataset(cfg, 11, 800);
    double ratio = 0.0;
    std::size_t n = 0;
    for (const auto& s : d.samples)
        for (int i = 0; i < 2; ++i)
            for (int k = 0; k < 4; ++k) {
                ratio += test::column_power(s.channels.h[i][i], k) / 32.0 / s.scenario.beta(i, i, k);
                ++n;
            }
    CHECK(ratio / static_cast<double>(n) == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("received blocks use sigma^2-scaled unit noise and the requested impairment") {
    const ScenarioConfig cfg = test::small_config(2, 2, 4, 2);
    const Dataset d = generate_dataset(cfg, 2, 1);
    const Sample& s = d.samples[0];
    const PilotSet p = scheme_pilots(PilotScheme::orthogonal, cfg)(s);
    const auto y0 = received_blocks(s, p, 0.0);
    const auto ref = synthesize_received(s.scenario, s.channels, p, nullptr,
                                         std::vector<ComplexMatrix>{s.noise[0] * cplx(std::sqrt(s.scenario.noise_power_mw)),
                                                                    s.noise[1] * cplx(std::sqrt(s.scenario.noise_power_mw))});
    CHECK(test::max_abs_diff(y0[1], ref[1].y) < 1e-18);
    const auto y1 = received_blocks(s, p, 0.04);
    CHECK(frobenius_norm_sq(y1[0] - y0[0]) > 0.0);
    const Scenario sd = with_delta(s.scenario, 0.04);
    CHECK(sd.delta_ue[1][1] == doctest::Approx(0.2));
    CHECK(sd.delta_bs[0] == doctest::Approx(0.2));
}

TEST_CASE("estimator items are LS-preprocessed blocks with their targets") {
    const TrainConfig c = tiny();
    const Dataset d = generate_dataset(c.scenario, 1, 2);
    const auto provider = scheme_pilots(PilotScheme::orthogonal, c.scenario);
    const auto items = estimator_items(d, provider, 0.0);
    REQUIRE(items.size() == 2 * 3);
    const Sample& s = d.samples[1];
    const PilotSet p = provider(s);
    const auto y = received_blocks(s, p, 0.0);
    CHECK(test::max_abs_diff(items[3 + 2].yhat, ls_preprocess(y[2], p.merged(2))) < 1e-20);
    CHECK(items[3 + 2].truth == s.channels.h[2][2]);
    CHECK(items[3 + 2].beta == s.scenario.beta.local(2));
}

TEST_CASE("zero epochs keep the initial parameters") {
    TrainConfig c = tiny();
    c.epochs = 0;
    const Splits d = splits(c);
    const auto r = train_estimator(c, d.train, d.val, scheme_pilots(PilotScheme::orthogonal, c.scenario));
    const ResidualNet init(c.estimator, c.seed);
    for (std::size_t i = 0; i < init.params().size(); ++i) CHECK(r.net.params()[i].value == init.params()[i].value);
    CHECK(r.history.epochs.empty());
    CHECK(r.history.best_epoch == -1);
}

TEST_CASE("training keeps the best checkpoint") {
    TrainConfig c = tiny();
    c.epochs = 4;
    const Splits d = splits(c);
    const auto provider = scheme_pilots(PilotScheme::orthogonal, c.scenario);
    const auto r = train_estimator(c, d.train, d.val, provider);
    REQUIRE(r.history.epochs.size() == 4);
    for (const auto& e : r.history.epochs) CHECK(r.history.best_validation <= e.validation);
    // the returned network scores the recorded best validation
    const auto m = evaluate(d.val, provider, network_estimator(r.net), c.train_delta_sq);
    CHECK(m.sum_mse == doctest::Approx(r.history.best_validation).epsilon(1e-9));
    // learning-rate decay after 80% of the epochs
    CHECK(r.history.epochs[2].lr == doctest::Approx(1e-3));
    CHECK(r.history.epochs[3].lr == doctest::Approx(1e-4));
}

TEST_CASE("training is reproducible") {
    TrainConfig c = tiny();
    c.epochs = 2;
    const Splits d = splits(c);
    const auto provider = scheme_pilots(PilotScheme::orthogonal, c.scenario);
    const auto a = train_estimator(c, d.train, d.val, provider);
    const auto b = train_estimator(c, d.train, d.val, provider);
    for (std::size_t i = 0; i < a.net.params().size(); ++i) CHECK(a.net.params()[i].value == b.net.params()[i].value);
}

TEST_CASE("pretrained pilots stay within the power cap") {
    for (bool aware : {false, true}) {
        TrainConfig c = tiny(2);
        c.pilot_scheme = PilotScheme::learned;
        c.regime = aware ? Regime::pretrain_aware : Regime::pretrain_unaware;
        const Splits d = splits(c);
        const auto r = pretrain_pilot(c, d.train, d.val, aware);
        const double cap = dbm_to_mw(c.scenario.ue_power_cap_dbm);
        CHECK(r.history.max_pilot_power > 0.0);
        CHECK(r.history.max_pilot_power <= cap + 1e-9);
        for (const auto& s : d.test.samples) CHECK(learned_pilots(r.net)(s).max_column_power() <= cap + 1e-9);
    }
}

TEST_CASE("unaware pretraining does no worse than random pilots") {
    TrainConfig c = tiny(4);
    c.train_samples = 200;
    c.pilot_epochs = 10;
    const Splits d = splits(c);
    const auto r = pretrain_pilot(c, d.train, d.val, false);
    const double learned = mean_unaware_loss(d.test, learned_pilots(r.net));
    const double random = mean_unaware_loss(d.test, scheme_pilots(PilotScheme::random, c.scenario));
    CHECK(learned <= random);
}

TEST_CASE("aware pretraining beats orthogonal reuse when K > tau_p") {
    TrainConfig c = tiny(2);
    c.train_samples = 300;
    c.validation_samples = 50;
    c.test_samples = 50;
    c.pilot_epochs = 20;
    const Splits d = splits(c);
    const auto r = pretrain_pilot(c, d.train, d.val, true);
    const double learned = mean_aware_loss(d.test, learned_pilots(r.net), 0.0);
    const double orth = mean_aware_loss(d.test, scheme_pilots(PilotScheme::orthogonal, c.scenario), 0.0);
    CHECK(learned < orth);
}

TEST_CASE("joint training: nonzero pilot gradient on the first step and capped power") {
    for (bool reparam : {false, true}) {
        TrainConfig c = tiny(4);
        c.regime = Regime::joint;
        c.pilot_scheme = PilotScheme::learned;
        c.epochs = 1;
        c.train_delta_sq = 0.01;
        c.reparameterized_distortion = reparam;
        const Splits d = splits(c);
        const auto pre = pretrain_pilot(c, d.train, d.val, false);
        const auto r = train_joint(c, d.train, d.val, pre.net);
        CHECK(r.history.first_pilot_grad_norm > 0.0);
        CHECK(std::isfinite(r.history.first_pilot_grad_norm));
        CHECK(r.history.max_pilot_power <= dbm_to_mw(c.scenario.ue_power_cap_dbm) + 1e-9);
        CHECK(r.history.best_validation <= r.history.epochs.front().validation);
    }
}

TEST_CASE("joint training rejects pilots shorter than the user count") {
    TrainConfig c = tiny(2);
    c.regime = Regime::joint;
    c.pilot_scheme = PilotScheme::learned;
    c.epochs = 1;
    const Splits d = splits(c);
    const auto pre = pretrain_pilot(c, d.train, d.val, false);
    CHECK_THROWS_AS(train_joint(c, d.train, d.val, pre.net), RankDeficient);
}

TEST_CASE("evaluation: LMMSE beats LS and tracks the analytic value") {
    TrainConfig c = tiny(4);
    c.scenario.delta_ue = 0.0;
    const Dataset d = generate_dataset(c.scenario, 9, 300);
    const auto provider = scheme_pilots(PilotScheme::orthogonal, c.scenario);
    for (double d2 : {0.0, 0.02}) {
        const auto ls = evaluate(d, provider, ls_estimator(), d2);
        const auto mmse = evaluate(d, provider, lmmse_estimator(), d2);
        const auto an = evaluate_analytic(d, provider, d2);
        CHECK(mmse.sum_mse < ls.sum_mse);
        CHECK(mmse.sum_mse == doctest::Approx(an.sum_mse).epsilon(0.1));
        CHECK(ls.sample_sum_mse.size() == 300);
        CHECK(ls.cell_mse.size() == 3);
        double cells = 0.0;
        for (double v : ls.cell_mse) cells += v;
        CHECK(cells == doctest::Approx(ls.sum_mse));
    }
}

TEST_CASE("empirical CDF is nondecreasing from 1/n to 1") {
    RngStream rng(1, {});
    std::vector<double> v(101);
    for (auto& x : v) x = rng.normal();
    const auto cdf = empirical_cdf(v);
    REQUIRE(cdf.size() == 101);
    CHECK(cdf.front().second == doctest::Approx(1.0 / 101));
    CHECK(cdf.back().second == 1.0);
    for (std::size_t i = 1; i < cdf.size(); ++i) {
        CHECK(cdf[i].first >= cdf[i - 1].first);
        CHECK(cdf[i].second > cdf[i - 1].second);
    }
}

TEST_CASE("metrics CSV rows") {
    MetricsRecord m{"estimator-only", "orthogonal", 4, 0.02, 3, 1.5e-9, {5e-10, 5e-10, 5e-10}, {1.5e-9}};
    std::ostringstream os;
    write_metrics_header(os);
    write_metrics_row(os, m);
    const std::string s = os.str();
    CHECK(s.find("estimator-only") != std::string::npos);
    CHECK(s.find("orthogonal") != std::string::npos);
    CHECK(std::count(s.begin(), s.end(), '\n') == 2);
}

TEST_CASE("train config validation and names") {
    TrainConfig c = tiny();
    CHECK_NOTHROW(c.validate());
    c.train_delta_sq = 0.05;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny();
    c.pilot_scheme = PilotScheme::learned;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    for (auto r : {Regime::pretrain_aware, Regime::pretrain_unaware, Regime::estimator_only, Regime::joint})
        CHECK(parse_regime(to_string(r)) == r);
    for (auto b : {Baseline::ls, Baseline::lmmse, Baseline::cdrn, Baseline::cdrn_local, Baseline::proposed})
        CHECK(parse_baseline(to_string(b)) == b);
    CHECK_THROWS_AS(parse_baseline("fp"), std::invalid_argument);
}
