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

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mce/estimators.hpp"
#include "mce/pilot_net.hpp"
#include "mce/pilots.hpp"
#include "mce/residual_net.hpp"
#include "mce/scenario.hpp"

namespace mce {

struct DivergedLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Regime { pretrain_aware, pretrain_unaware, estimator_only, joint };

Regime parse_regime(const std::string& s);
std::string to_string(Regime r);

/// L = 3, N = 16, K = 4, tau_p = 4.
ScenarioConfig desk_scenario();

struct TrainConfig {
    ScenarioConfig scenario = desk_scenario();
    double train_delta_sq = 0.0;   ///< delta_UE^2 = delta_BS^2 of the training data
    int train_samples = 2000;      ///< N_T scenario draws
    int validation_samples = 500;
    int test_samples = 500;        ///< N_V
    int epochs = 200;
    int patience = 20;             ///< epochs without validation improvement; 0 disables
    int batch = 64;                ///< (sample, cell) items per step
    double lr = 1e-3;
    double lr_decay_at = 0.8;      ///< fraction of the epochs after which lr *= lr_decay
    double lr_decay = 0.1;
    int pilot_epochs = 15;
    int pilot_batch = 256;
    double pilot_lr = 1e-3;
    std::uint64_t seed = 1;
    Regime regime = Regime::estimator_only;
    PilotScheme pilot_scheme = PilotScheme::orthogonal;
    int pilot_hidden_layers = 2;
    int pilot_width_factor = 4;
    double pilot_dropout = 0.0;
    ResidualNetConfig estimator{.layers = 7, .filters = 16};
    bool reparameterized_distortion = false;  ///< joint mode: differentiate through eta
    bool column_normalized_loss = false;      ///< estimator mode: weight column k's error by 1 / beta_k

    void validate() const;
    PilotNetConfig pilot_net() const;
};

enum class Split { train, validation, test };

/// Data seed of one split, derived from the root seed.
std::uint64_t split_seed(std::uint64_t root, Split split);

/// One scenario draw with its channel and unit-variance impairment draws. Received
/// blocks are synthesised on demand so one sample serves any pilots and any delta.
struct Sample {
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
    Scenario scenario;
    ChannelRealization channels;
    DistortionDraws draws;
    std::vector<ComplexMatrix> noise;  ///< [cell] N x tau_p, CN(0, 1)
};

struct Dataset {
    ScenarioConfig config;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;
};

Dataset generate_dataset(const ScenarioConfig& config, std::uint64_t seed, int count);

/// The sample's scenario with delta_UE = delta_BS = sqrt(delta_sq).
Scenario with_delta(const Scenario& scenario, double delta_sq);

/// Y_i of every cell for the given pilots and impairment level.
std::vector<ComplexMatrix> received_blocks(const Sample& sample, const PilotSet& pilots, double delta_sq);

using PilotProvider = std::function<PilotSet(const Sample&)>;

/// Orthogonal or random pilots drawn per sample from the sample's seed.
PilotProvider scheme_pilots(PilotScheme scheme, const ScenarioConfig& config);
/// Pilots generated from each cell's local beta.
PilotProvider learned_pilots(const PilotNet& net);

/// LS-preprocessed input of one (sample, cell) pair and its target H_ii.
struct EstimatorItem {
    ComplexMatrix yhat;
    ComplexMatrix truth;
    std::vector<double> beta;
};

std::vector<EstimatorItem> estimator_items(const Dataset& data, const PilotProvider& pilots, double delta_sq);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;       ///< epoch-mean training objective
    double validation = 0.0;       ///< validation objective of the epoch's parameters
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;           ///< -1: initial parameters kept
    double best_validation = std::numeric_limits<double>::infinity();
    bool early_stopped = false;
    double max_pilot_power = 0.0;  ///< largest emitted ||xbar||^2 over all steps
    double first_pilot_grad_norm = 0.0;  ///< joint mode: pilot-parameter gradient norm at step 1
};

struct PilotTrainResult {
    PilotNet net;
    TrainHistory history;
};

/// Aware or local-only (unaware) pilot training over the beta rows
/// of `train`; the validation objective is the same loss on `validation`.
PilotTrainResult pretrain_pilot(const TrainConfig& config, const Dataset& train, const Dataset& validation,
                                bool aware);

/// Mean unaware loss per (sample, cell) and mean aware loss per sample.
double mean_unaware_loss(const Dataset& data, const PilotProvider& pilots);
double mean_aware_loss(const Dataset& data, const PilotProvider& pilots, double delta_sq);

struct EstimatorTrainResult {
    ResidualNet net;
    TrainHistory history;
};

/// Fixed pilots; the validation objective is the per-sample sum-MSE of the estimator.
EstimatorTrainResult train_estimator(const TrainConfig& config, const Dataset& train, const Dataset& validation,
                                     const PilotProvider& pilots);

struct JointTrainResult {
    PilotNet pilot;
    ResidualNet estimator;
    TrainHistory history;
};

/// Summed ||H_ii - Hhat_ii||^2 over the cells of `batch` for the end-to-end graph:
/// local beta -> pilots -> received blocks -> LS -> estimator. Impairment draws are
/// constants scaled with the current pilot powers unless `reparameterized`.
ad::Var joint_batch_loss(ad::Tape& tape, PilotNet& pilot, ResidualNet& estimator, std::span<const Sample* const> batch,
                         double delta_sq, bool reparameterized, RngStream* dropout_rng = nullptr,
                         double* max_power = nullptr);

/// End-to-end training of the pilot generator and the estimator from a pretrained
/// pilot net; `estimator` seeds the estimator weights when given.
JointTrainResult train_joint(const TrainConfig& config, const Dataset& train, const Dataset& validation,
                             const PilotNet& pretrained, const ResidualNet* estimator = nullptr);

enum class Baseline { ls, lmmse, cdrn, cdrn_local, proposed };

Baseline parse_baseline(const std::string& s);
std::string to_string(Baseline b);

struct MetricsRecord {
    std::string regime;
    std::string pilot_scheme;
    int pilot_length = 0;
    double delta_sq = 0.0;
    std::uint64_t seed = 0;
    double sum_mse = 0.0;                 ///< mean over samples of sum_i ||H_ii - Hhat_ii||^2
    std::vector<double> cell_mse;         ///< per-cell mean
    std::vector<double> sample_sum_mse;   ///< per-sample sum, for the CDF
};

/// Channel estimates of all cells of one sample from its received blocks.
using Estimator = std::function<std::vector<ComplexMatrix>(const Sample&, const PilotSet&,
                                                           const std::vector<ComplexMatrix>&, double delta_sq)>;

Estimator ls_estimator();
/// Genie LMMSE with the true beta and delta of the evaluated data.
Estimator lmmse_estimator();
Estimator network_estimator(const ResidualNet& net);

MetricsRecord evaluate(const Dataset& data, const PilotProvider& pilots, const Estimator& estimator,
                       double delta_sq);

/// Per-sample analytic LMMSE sum-MSE, averaged.
MetricsRecord evaluate_analytic(const Dataset& data, const PilotProvider& pilots, double delta_sq);

/// Sorted values with cdf = rank / n.
std::vector<std::pair<double, double>> empirical_cdf(std::vector<double> values);

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRecord& m);
void write_cdf(std::ostream& os, const MetricsRecord& m);

}  // namespace mce
