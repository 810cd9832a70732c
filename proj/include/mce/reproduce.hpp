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
#include <iosfwd>
#include <vector>

#include "mce/config.hpp"

namespace mce {

/// Runs the pipelines listed in config.eval and writes their CSVs to `out_dir`:
///   pilot-length  pilot_length.csv   every baseline over eval.pilot_lengths at delta^2 = 0
///   impairment    impairment.csv     LS, LMMSE and the estimator trained at each delta^2 of the grid
///   cdf           cdf_<name>.csv     per-sample sum-MSE distribution at delta^2 = 0, first seed
///   mismatch      mismatch.csv       the estimator trained at mismatch_train_delta_sq, over the grid
/// Output depends only on the config. Progress lines go to `log` when given.
std::vector<std::filesystem::path> reproduce(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                             std::ostream* log = nullptr);

}  // namespace mce
