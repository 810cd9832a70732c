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

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mce/scenario.hpp"
#include "mce/training.hpp"

namespace mce {

/// Parse or validation failure, with the offending line or field in the message.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvalConfig {
    std::vector<double> delta_sq_grid{0.0, 0.01, 0.02, 0.03, 0.04};
    std::vector<int> pilot_lengths{2, 4, 6, 8};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<std::string> pipelines{"pilot-length", "impairment", "cdf", "mismatch"};
    double mismatch_train_delta_sq = 0.02;
};

/// One experiment: scenario, training and evaluation sections plus the root seed.
struct ExperimentConfig {
    TrainConfig train;
    EvalConfig eval;
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// Scenario JSON: positions in metres, beta in dB, sigma^2 in dBm.
nlohmann::json scenario_to_json(const Scenario& scenario);

}  // namespace mce
