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
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mce/autodiff.hpp"
#include "mce/pilot_net.hpp"
#include "mce/residual_net.hpp"

namespace mce {

struct BundleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SchemaVersionMismatch : BundleError {
    using BundleError::BundleError;
};
struct PayloadLengthMismatch : BundleError {
    using BundleError::BundleError;
};

inline constexpr int kBundleSchemaVersion = 1;

/// Named tensors plus free-form metadata. On disk: <dir>/manifest.json and
/// <dir>/payload.bin (little-endian float64 blobs in manifest order).
struct ModelBundle {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<ad::Parameter> tensors;

    const ad::Parameter* find(const std::string& name) const;
};

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);

/// Bundle holding whichever networks are given; the metadata records their configs.
ModelBundle make_bundle(const PilotNet* pilot, const ResidualNet* estimator, nlohmann::json extra = {});

/// Networks rebuilt from a bundle, or nullopt when the bundle has none.
std::optional<PilotNet> bundle_pilot_net(const ModelBundle& bundle);
std::optional<ResidualNet> bundle_residual_net(const ModelBundle& bundle);

}  // namespace mce
