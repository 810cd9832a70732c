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


#include "mce/reproduce.hpp"

#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <tuple>

namespace mce {

namespace {

struct Splits {
    Dataset train, validation, test;
};

using Key = std::tuple<int, double, std::uint64_t>;  // tau_p, training delta^2, seed

// Datasets and trained models, built on first use and shared across pipelines.
class Workbench {
public:
    Workbench(const ExperimentConfig& config, std::ostream* log) : config_(config), log_(log) {}

    TrainConfig train_config(const Key& k) const {
        TrainConfig c = config_.train;
        c.scenario.pilot_length = std::get<0>(k);
        c.train_delta_sq = std::get<1>(k);
        c.seed = std::get<2>(k);
        return c;
    }

    const Splits& data(int tau, std::uint64_t seed) {
        auto& slot = data_[{tau, seed}];
        if (!slot) {
            const TrainConfig c = train_config({tau, 0.0, seed});
            note("data tau_p=" + std::to_string(tau) + " seed=" + std::to_string(seed));
            slot = std::make_unique<Splits>(Splits{
                generate_dataset(c.scenario, split_seed(seed, Split::train), c.train_samples),
                generate_dataset(c.scenario, split_seed(seed, Split::validation), c.validation_samples),
                generate_dataset(c.scenario, split_seed(seed, Split::test), c.test_samples)});
        }
        return *slot;
    }

    const ResidualNet& estimator(const Key& k, EstimatorMode mode) {
        auto& slot = estimators_[{k, mode}];
        if (!slot) {
            TrainConfig c = train_config(k);
            c.estimator.mode = mode;
            note("train " + to_string(mode) + " estimator " + describe(k));
            const Splits& d = data(std::get<0>(k), std::get<2>(k));
            slot = std::make_unique<ResidualNet>(
                train_estimator(c, d.train, d.validation, scheme_pilots(PilotScheme::orthogonal, c.scenario)).net);
        }
        return *slot;
    }

    const PilotNet& aware_pilots(const Key& k) {
        auto& slot = aware_[k];
        if (!slot) {
            note("pretrain aware pilots " + describe(k));
            const Splits& d = data(std::get<0>(k), std::get<2>(k));
            slot = std::make_unique<PilotNet>(pretrain_pilot(train_config(k), d.train, d.validation, true).net);
        }
        return *slot;
    }

    const JointTrainResult& joint(const Key& k) {
        auto& slot = joint_[k];
        if (!slot) {
            const TrainConfig c = train_config(k);
            const Splits& d = data(std::get<0>(k), std::get<2>(k));
            const ResidualNet& warm = estimator(k, EstimatorMode::proposed);
            note("pretrain unaware pilots " + describe(k));
            const PilotNet pre = pretrain_pilot(c, d.train, d.validation, false).net;
            note("joint training " + describe(k));
            slot = std::make_unique<JointTrainResult>(train_joint(c, d.train, d.validation, pre, &warm));
        }
        return *slot;
    }

private:
    static std::string describe(const Key& k) {
        return "tau_p=" + std::to_string(std::get<0>(k)) + " delta^2=" + std::to_string(std::get<1>(k)) +
               " seed=" + std::to_string(std::get<2>(k));
    }
    void note(const std::string& s) const {
        if (log_) *log_ << "reproduce: " << s << '\n' << std::flush;
    }

    const ExperimentConfig& config_;
    std::ostream* log_;
    std::map<std::pair<int, std::uint64_t>, std::unique_ptr<Splits>> data_;
    std::map<std::pair<Key, EstimatorMode>, std::unique_ptr<ResidualNet>> estimators_;
    std::map<Key, std::unique_ptr<PilotNet>> aware_;
    std::map<Key, std::unique_ptr<JointTrainResult>> joint_;
};

MetricsRecord labelled(MetricsRecord m, const std::string& regime, const std::string& scheme, std::uint64_t seed) {
    m.regime = regime;
    m.pilot_scheme = scheme;
    m.seed = seed;
    return m;
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("reproduce: cannot write " + path.string());
    return os;
}

void pilot_length_pipeline(Workbench& wb, const ExperimentConfig& cfg, std::ostream& os) {
    write_metrics_header(os);
    const int users = cfg.train.scenario.topology.users_per_cell;
    for (int tau : cfg.eval.pilot_lengths)
        for (std::uint64_t seed : cfg.eval.seeds) {
            const Key k{tau, 0.0, seed};
            const Dataset& test = wb.data(tau, seed).test;
            const PilotProvider orth = scheme_pilots(PilotScheme::orthogonal, wb.train_config(k).scenario);
            write_metrics_row(os, labelled(evaluate(test, orth, lmmse_estimator(), 0.0), "lmmse", "orthogonal", seed));
            write_metrics_row(os, labelled(evaluate(test, learned_pilots(wb.aware_pilots(k)), lmmse_estimator(), 0.0),
                                           "lmmse", "learned-aware", seed));
            // LS preprocessing needs tau_p >= K
            if (tau < users) continue;
            write_metrics_row(os, labelled(evaluate(test, orth, ls_estimator(), 0.0), "ls", "orthogonal", seed));
            for (EstimatorMode mode : {EstimatorMode::proposed, EstimatorMode::cdrn, EstimatorMode::cdrn_local})
                write_metrics_row(os, labelled(evaluate(test, orth, network_estimator(wb.estimator(k, mode)), 0.0),
                                               to_string(mode), "orthogonal", seed));
            const JointTrainResult& j = wb.joint(k);
            write_metrics_row(os, labelled(evaluate(test, learned_pilots(j.pilot), network_estimator(j.estimator), 0.0),
                                           "joint", "learned", seed));
        }
}

void impairment_pipeline(Workbench& wb, const ExperimentConfig& cfg, std::ostream& os, bool matched) {
    write_metrics_header(os);
    const int tau = cfg.train.scenario.pilot_length;
    for (std::uint64_t seed : cfg.eval.seeds)
        for (double d2 : cfg.eval.delta_sq_grid) {
            const Key k{tau, matched ? d2 : cfg.eval.mismatch_train_delta_sq, seed};
            const Dataset& test = wb.data(tau, seed).test;
            const PilotProvider orth = scheme_pilots(PilotScheme::orthogonal, wb.train_config(k).scenario);
            write_metrics_row(os, labelled(evaluate(test, orth, ls_estimator(), d2), "ls", "orthogonal", seed));
            write_metrics_row(os, labelled(evaluate(test, orth, lmmse_estimator(), d2), "lmmse", "orthogonal", seed));
            write_metrics_row(
                os, labelled(evaluate(test, orth, network_estimator(wb.estimator(k, EstimatorMode::proposed)), d2),
                             matched ? "proposed" : "proposed-mismatched", "orthogonal", seed));
        }
}

std::vector<std::filesystem::path> cdf_pipeline(Workbench& wb, const ExperimentConfig& cfg,
                                                const std::filesystem::path& dir) {
    const int tau = cfg.train.scenario.pilot_length;
    const std::uint64_t seed = cfg.eval.seeds.front();
    const Key k{tau, 0.0, seed};
    const Dataset& test = wb.data(tau, seed).test;
    const PilotProvider orth = scheme_pilots(PilotScheme::orthogonal, wb.train_config(k).scenario);
    std::vector<std::pair<std::string, MetricsRecord>> curves;
    curves.emplace_back("lmmse", evaluate(test, orth, lmmse_estimator(), 0.0));
    if (tau >= cfg.train.scenario.topology.users_per_cell) {
        curves.emplace_back("ls", evaluate(test, orth, ls_estimator(), 0.0));
        curves.emplace_back("proposed", evaluate(test, orth, network_estimator(wb.estimator(k, EstimatorMode::proposed)), 0.0));
        const JointTrainResult& j = wb.joint(k);
        curves.emplace_back("joint", evaluate(test, learned_pilots(j.pilot), network_estimator(j.estimator), 0.0));
    }
    std::vector<std::filesystem::path> files;
    for (const auto& [name, m] : curves) {
        files.push_back(dir / ("cdf_" + name + ".csv"));
        std::ofstream os = open_csv(files.back());
        write_cdf(os, m);
    }
    return files;
}

}  // namespace

std::vector<std::filesystem::path> reproduce(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                             std::ostream* log) {
    std::filesystem::create_directories(out_dir);
    Workbench wb(config, log);
    std::vector<std::filesystem::path> files;
    for (const std::string& p : config.eval.pipelines) {
        if (p == "cdf") {
            for (auto& f : cdf_pipeline(wb, config, out_dir)) files.push_back(std::move(f));
            continue;
        }
        const std::filesystem::path path = out_dir / ((p == "pilot-length" ? std::string("pilot_length") : p) + ".csv");
        std::ofstream os = open_csv(path);
        if (p == "pilot-length") pilot_length_pipeline(wb, config, os);
        else if (p == "impairment") impairment_pipeline(wb, config, os, true);
        else if (p == "mismatch") impairment_pipeline(wb, config, os, false);
        else throw std::invalid_argument("reproduce: unknown pipeline '" + p + "'");
        files.push_back(path);
    }
    return files;
}

}  // namespace mce
