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


// mce: command-line front end for drops, training, evaluation and reports.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "mce/bundle.hpp"
#include "mce/config.hpp"
#include "mce/flops.hpp"
#include "mce/gradcheck_suite.hpp"
#include "mce/kernels.hpp"
#include "mce/reproduce.hpp"

namespace {

using namespace mce;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 0;
    std::string bundle;
    std::string baseline = "lmmse";
    std::string pilot = "orthogonal";
    int points = 20;
};

ExperimentConfig load(const Options& o) {
    ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (o.seed) {
        c.train.seed = *o.seed;
        c.eval.seeds = {*o.seed};
    }
    return c;
}

// Writes to --out when given, else to stdout.
class Output {
public:
    explicit Output(const std::string& path) {
        if (path.empty()) return;
        file_.open(path, std::ios::binary);
        if (!file_) throw std::runtime_error("cannot write " + path);
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

ModelBundle need_bundle(const Options& o) {
    if (o.bundle.empty()) throw std::runtime_error("--bundle is required here");
    return load_bundle(o.bundle);
}

PilotNet need_pilot_net(const Options& o) {
    auto net = bundle_pilot_net(need_bundle(o));
    if (!net) throw std::runtime_error(o.bundle + ": bundle has no pilot network");
    return *net;
}

PilotProvider pilots_for(const Options& o, const TrainConfig& c, std::optional<PilotNet>& holder) {
    const PilotScheme scheme = parse_pilot_scheme(o.pilot);
    if (scheme != PilotScheme::learned) return scheme_pilots(scheme, c.scenario);
    holder = need_pilot_net(o);
    return learned_pilots(*holder);
}

struct Splits {
    Dataset train, validation, test;
};

Splits datasets(const TrainConfig& c, bool need_training) {
    const int n_train = need_training ? c.train_samples : 0;
    const int n_val = need_training ? c.validation_samples : 0;
    return {generate_dataset(c.scenario, split_seed(c.seed, Split::train), n_train),
            generate_dataset(c.scenario, split_seed(c.seed, Split::validation), n_val),
            generate_dataset(c.scenario, split_seed(c.seed, Split::test), c.test_samples)};
}

void print_history(const TrainHistory& h) {
    for (const EpochRecord& e : h.epochs)
        std::fprintf(stderr, "epoch %4d  train %.6e  validation %.6e  lr %.1e\n", e.epoch, e.train_loss, e.validation,
                     e.lr);
    std::fprintf(stderr, "best epoch %d  validation %.6e%s\n", h.best_epoch, h.best_validation,
                 h.early_stopped ? "  (early stop)" : "");
}

std::string out_dir(const Options& o, const char* fallback) { return o.out.empty() ? fallback : o.out; }

int cmd_drop(const Options& o) {
    const ExperimentConfig c = load(o);
    Output out(o.out);
    out.stream() << scenario_to_json(make_scenario(c.train.scenario, c.train.seed, 0)).dump(2) << '\n';
    return 0;
}

int cmd_eval_analytic(const Options& o) {
    const ExperimentConfig c = load(o);
    const Splits d = datasets(c.train, false);
    std::optional<PilotNet> holder;
    const PilotProvider pilots = pilots_for(o, c.train, holder);
    Output out(o.out);
    write_metrics_header(out.stream());
    for (double d2 : c.eval.delta_sq_grid) {
        MetricsRecord m = evaluate_analytic(d.test, pilots, d2);
        m.regime = "lmmse-analytic";
        m.pilot_scheme = o.pilot;
        m.seed = c.train.seed;
        write_metrics_row(out.stream(), m);
    }
    return 0;
}

int cmd_train_pilot(const Options& o) {
    const ExperimentConfig c = load(o);
    if (c.train.regime != Regime::pretrain_aware && c.train.regime != Regime::pretrain_unaware)
        throw std::runtime_error("train-pilot needs train.regime pretrain-aware or pretrain-unaware");
    const Splits d = datasets(c.train, true);
    const PilotTrainResult r = pretrain_pilot(c.train, d.train, d.validation, c.train.regime == Regime::pretrain_aware);
    print_history(r.history);
    save_bundle(make_bundle(&r.net, nullptr, {{"config", to_json(c)}, {"regime", to_string(c.train.regime)}}),
                out_dir(o, "pilot_bundle"));
    return 0;
}

int cmd_train_estimator(const Options& o) {
    const ExperimentConfig c = load(o);
    const Splits d = datasets(c.train, true);
    std::optional<PilotNet> holder;
    const PilotProvider pilots = pilots_for(o, c.train, holder);
    const EstimatorTrainResult r = train_estimator(c.train, d.train, d.validation, pilots);
    print_history(r.history);
    save_bundle(make_bundle(holder ? &*holder : nullptr, &r.net,
                            {{"config", to_json(c)}, {"regime", "estimator-only"}, {"pilot", o.pilot}}),
                out_dir(o, "estimator_bundle"));
    return 0;
}

int cmd_train_joint(const Options& o) {
    const ExperimentConfig c = load(o);
    const Splits d = datasets(c.train, true);
    std::optional<PilotNet> pretrained;
    std::optional<ResidualNet> warm;
    if (!o.bundle.empty()) {
        const ModelBundle b = load_bundle(o.bundle);
        pretrained = bundle_pilot_net(b);
        warm = bundle_residual_net(b);
    }
    if (!pretrained) {
        std::fprintf(stderr, "no pilot network given: pretraining with the unaware loss\n");
        const PilotTrainResult p = pretrain_pilot(c.train, d.train, d.validation, false);
        print_history(p.history);
        pretrained = p.net;
    }
    const JointTrainResult r = train_joint(c.train, d.train, d.validation, *pretrained, warm ? &*warm : nullptr);
    print_history(r.history);
    std::fprintf(stderr, "max pilot column power %.6e mW\n", r.history.max_pilot_power);
    save_bundle(make_bundle(&r.pilot, &r.estimator, {{"config", to_json(c)}, {"regime", "joint"}}),
                out_dir(o, "joint_bundle"));
    return 0;
}

int cmd_evaluate(const Options& o) {
    const ExperimentConfig c = load(o);
    const Baseline baseline = parse_baseline(o.baseline);
    const Splits d = datasets(c.train, false);
    std::optional<PilotNet> holder;
    const PilotProvider pilots = pilots_for(o, c.train, holder);
    Estimator est;
    std::optional<ResidualNet> net;
    switch (baseline) {
        case Baseline::ls: est = ls_estimator(); break;
        case Baseline::lmmse: est = lmmse_estimator(); break;
        default: {
            net = bundle_residual_net(need_bundle(o));
            if (!net) throw std::runtime_error(o.bundle + ": bundle has no estimator network");
            if (to_string(net->config().mode) != to_string(baseline))
                throw std::runtime_error(o.bundle + ": bundle estimator is " + to_string(net->config().mode) +
                                         ", not " + to_string(baseline));
            est = network_estimator(*net);
        }
    }
    const std::filesystem::path dir = out_dir(o, "metrics");
    std::filesystem::create_directories(dir);
    std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
    write_metrics_header(metrics);
    for (std::size_t g = 0; g < c.eval.delta_sq_grid.size(); ++g) {
        MetricsRecord m = evaluate(d.test, pilots, est, c.eval.delta_sq_grid[g]);
        m.regime = to_string(baseline);
        m.pilot_scheme = o.pilot;
        m.seed = c.train.seed;
        write_metrics_row(metrics, m);
        std::ofstream cdf(dir / ("cdf_" + std::to_string(g) + ".csv"), std::ios::binary);
        write_cdf(cdf, m);
    }
    if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    return 0;
}

int cmd_gradcheck(const Options& o) {
    constexpr double kTolerance = 1e-4;
    bool ok = true;
    std::printf("%-36s %14s %10s\n", "case", "max rel error", "components");
    for (const GradCheckCase& r : gradcheck_suite(o.points, o.seed.value_or(1))) {
        const bool pass = r.max_rel_error < kTolerance;
        ok = ok && pass;
        std::printf("%-36s %14.3e %10zu  %s\n", r.name.c_str(), r.max_rel_error, r.components, pass ? "ok" : "FAIL");
    }
    return ok ? 0 : 1;
}

int cmd_flops(const Options& o) {
    const ExperimentConfig c = load(o);
    const TrainConfig& t = c.train;
    Output out(o.out);
    print_flops(out.stream(), flops_report(t.pilot_net(), t.estimator, t.scenario.topology.antennas,
                                           t.scenario.topology.cells, t.train_samples, t.epochs));
    return 0;
}

int cmd_reproduce(const Options& o) {
    const ExperimentConfig c = load(o);
    for (const auto& f : reproduce(c, out_dir(o, "results"), &std::cerr)) std::printf("%s\n", f.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-cell channel estimation and pilot design"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;

    auto common = [&](CLI::App* sub, bool with_bundle) {
        sub->add_option("--config", o.config, "experiment JSON")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "root seed (overrides the config)");
        sub->add_option("--out", o.out, "output file or directory");
        sub->add_option("--threads", o.threads, "OpenMP threads")->check(CLI::PositiveNumber);
        if (with_bundle) sub->add_option("--bundle", o.bundle, "model bundle directory");
    };
    auto pilot_flag = [&](CLI::App* sub) {
        sub->add_option("--pilot", o.pilot, "pilot scheme")
            ->check(CLI::IsMember({"orthogonal", "random", "learned"}));
    };

    std::map<CLI::App*, int (*)(const Options&)> handlers;
    auto add = [&](const char* name, const char* help, int (*fn)(const Options&), bool bundle) {
        CLI::App* sub = app.add_subcommand(name, help);
        common(sub, bundle);
        handlers[sub] = fn;
        return sub;
    };
    add("drop", "emit one scenario drop as JSON", cmd_drop, false);
    pilot_flag(add("eval-analytic", "analytic LMMSE sum-MSE over the test drops", cmd_eval_analytic, true));
    add("train-pilot", "pretrain the pilot generator (aware or unaware loss)", cmd_train_pilot, false);
    pilot_flag(add("train-estimator", "train the residual estimator with fixed pilots", cmd_train_estimator, true));
    add("train-joint", "end-to-end training from a pretrained pilot bundle", cmd_train_joint, true);
    CLI::App* ev = add("evaluate", "metrics and CDF CSVs of one estimator over the delta^2 grid", cmd_evaluate, true);
    pilot_flag(ev);
    ev->add_option("--baseline", o.baseline, "estimator")
        ->check(CLI::IsMember({"ls", "lmmse", "cdrn", "cdrn-local", "proposed"}));
    CLI::App* gc = add("gradcheck", "finite-difference check of every differentiable operator", cmd_gradcheck, false);
    gc->add_option("--points", o.points, "random points per case")->check(CLI::PositiveNumber);
    add("flops", "multiply-accumulate counts and asymptotic complexity", cmd_flops, false);
    add("reproduce", "run the configured evaluation pipelines", cmd_reproduce, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    for (CLI::App* sub : app.get_subcommands()) {
        if (sub->count("--seed")) o.seed = seed;
        try {
            if (o.threads > 0) kernels::set_threads(o.threads);
            return handlers.at(sub)(o);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "mce %s: error: %s\n", sub->get_name().c_str(), e.what());
            return 1;
        }
    }
    return 1;
}
