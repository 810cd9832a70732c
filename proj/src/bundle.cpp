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

#include "mce/bundle.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mce {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

const ad::Parameter* ModelBundle::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw BundleError("save_bundle: cannot create " + dir.string() + ": " + ec.message());
    json manifest;
    manifest["schema_version"] = kBundleSchemaVersion;
    manifest["format"] = "mce-bundle";
    manifest["metadata"] = bundle.metadata;
    json list = json::array();
    std::size_t offset = 0;
    for (const auto& t : bundle.tensors) {
        if (t.value.size() != ad::shape_size(t.value.shape))
            throw BundleError("save_bundle: tensor '" + t.name + "' has inconsistent shape");
        list.push_back({{"name", t.name}, {"shape", t.value.shape}, {"offset", offset}, {"count", t.value.size()}});
        offset += t.value.size();
    }
    manifest["tensors"] = list;
    {
        std::ofstream m(dir / "manifest.json");
        if (!m) throw BundleError("save_bundle: cannot write manifest in " + dir.string());
        m << manifest.dump(2) << '\n';
    }
    std::ofstream p(dir / "payload.bin", std::ios::binary);
    if (!p) throw BundleError("save_bundle: cannot write payload in " + dir.string());
    for (const auto& t : bundle.tensors)
        p.write(reinterpret_cast<const char*>(t.value.data.data()),
                static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!p) throw BundleError("save_bundle: payload write failed");
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
    std::ifstream m(dir / "manifest.json");
    if (!m) throw BundleError("load_bundle: missing manifest.json in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(m);
    } catch (const json::parse_error& e) {
        throw BundleError(std::string("load_bundle: bad manifest: ") + e.what());
    }
    const int version = manifest.value("schema_version", -1);
    if (version != kBundleSchemaVersion) {
        std::ostringstream os;
        os << "load_bundle: schema version " << version << ", expected " << kBundleSchemaVersion;
        throw SchemaVersionMismatch(os.str());
    }
    std::ifstream p(dir / "payload.bin", std::ios::binary);
    if (!p) throw BundleError("load_bundle: missing payload.bin in " + dir.string());
    const std::string payload((std::istreambuf_iterator<char>(p)), std::istreambuf_iterator<char>());

    ModelBundle b;
    b.metadata = manifest.value("metadata", json::object());
    std::size_t expected = 0;
    for (const auto& e : manifest.at("tensors")) {
        ad::Tensor t(e.at("shape").get<std::vector<int>>());
        const auto offset = e.at("offset").get<std::size_t>();
        const auto count = e.at("count").get<std::size_t>();
        if (count != t.size() || offset != expected)
            throw BundleError("load_bundle: tensor '" + e.at("name").get<std::string>() + "' has inconsistent layout");
        expected += count;
        if (payload.size() < expected * sizeof(double)) break;
        std::memcpy(t.data.data(), payload.data() + offset * sizeof(double), count * sizeof(double));
        b.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    if (payload.size() != expected * sizeof(double)) {
        std::ostringstream os;
        os << "load_bundle: payload has " << payload.size() << " bytes, manifest needs " << expected * sizeof(double);
        throw PayloadLengthMismatch(os.str());
    }
    return b;
}

namespace {

json pilot_config_json(const PilotNetConfig& c) {
    return {{"pilot_length", c.pilot_length}, {"users", c.users},       {"hidden_layers", c.hidden_layers},
            {"width_factor", c.width_factor}, {"dropout", c.dropout},   {"power_cap_mw", c.power_cap_mw}};
}

json estimator_config_json(const ResidualNetConfig& c) {
    return {{"layers", c.layers},
            {"filters", c.filters},
            {"mode", to_string(c.mode)},
            {"zero_init_heads", c.zero_init_heads}};
}

template <class Net>
void copy_params(const ModelBundle& b, Net& net) {
    for (auto& p : net.params()) {
        const ad::Parameter* t = b.find(p.name);
        if (!t) throw BundleError("bundle lacks tensor '" + p.name + "'");
        if (t->value.shape != p.value.shape)
            throw DimensionMismatch("bundle tensor '" + p.name + "' has shape " + ad::shape_string(t->value.shape) +
                                    ", network expects " + ad::shape_string(p.value.shape));
        p.value = t->value;
    }
}

}  // namespace

ModelBundle make_bundle(const PilotNet* pilot, const ResidualNet* estimator, json extra) {
    ModelBundle b;
    b.metadata = extra.is_object() ? std::move(extra) : json::object();
    if (pilot) {
        b.metadata["pilot_net"] = pilot_config_json(pilot->config());
        for (const auto& p : pilot->params()) b.tensors.emplace_back(p.name, p.value);
    }
    if (estimator) {
        b.metadata["residual_net"] = estimator_config_json(estimator->config());
        for (const auto& p : estimator->params()) b.tensors.emplace_back(p.name, p.value);
    }
    return b;
}

std::optional<PilotNet> bundle_pilot_net(const ModelBundle& b) {
    if (!b.metadata.contains("pilot_net")) return std::nullopt;
    const json& j = b.metadata["pilot_net"];
    PilotNetConfig c;
    c.pilot_length = j.at("pilot_length").get<int>();
    c.users = j.at("users").get<int>();
    c.hidden_layers = j.at("hidden_layers").get<int>();
    c.width_factor = j.at("width_factor").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.power_cap_mw = j.at("power_cap_mw").get<double>();
    PilotNet net(c, 0);
    copy_params(b, net);
    return net;
}

std::optional<ResidualNet> bundle_residual_net(const ModelBundle& b) {
    if (!b.metadata.contains("residual_net")) return std::nullopt;
    const json& j = b.metadata["residual_net"];
    ResidualNetConfig c;
    c.layers = j.at("layers").get<int>();
    c.filters = j.at("filters").get<int>();
    c.mode = parse_estimator_mode(j.at("mode").get<std::string>());
    c.zero_init_heads = j.at("zero_init_heads").get<bool>();
    ResidualNet net(c, 0);
    copy_params(b, net);
    return net;
}

}  // namespace mce
