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
#include <string>
#include <vector>

namespace mce {

struct GradCheckCase {
    std::string name;
    double max_rel_error = 0.0;  ///< worst over all points and components
    std::size_t components = 0;
    int points = 0;
};

/// Finite-difference check of every differentiable operator and of the pilot,
/// estimator and end-to-end losses, at `points` random points each.
std::vector<GradCheckCase> gradcheck_suite(int points, std::uint64_t seed);

}  // namespace mce
