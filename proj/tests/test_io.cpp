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


#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mce/bundle.hpp"
#include "mce/config.hpp"
#include "mce/reproduce.hpp"
#include "support.hpp"

using namespace mce;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mce_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("bundle round-trip is bit-identical") {
    PilotNetConfig pc;
    PilotNet pilot(pc, 3);
    ResidualNet est({.layers = 2, .filters = 4, .zero_init_heads = false}, 4);
    // values that do not survive a decimal round-trip
    pilot.params()[1].value.data[0] = 0.1 + 1e-17;
    pilot.params()[1].value.data[1] = -std::numeric_limits<double>::denorm_min();
    const ModelBundle b = make_bundle(&pilot, &est, {{"note", "unit"}});
    const fs::path dir = scratch("roundtrip");
    save_bundle(b, dir);
    const ModelBundle r = load_bundle(dir);
    REQUIRE(r.tensors.size() == b.tensors.size());
    for (std::size_t i = 0; i < b.tensors.size(); ++i) {
        CHECK(r.tensors[i].name == b.tensors[i].name);
        CHECK(r.tensors[i].value == b.tensors[i].value);
    }
    CHECK(r.metadata == b.metadata);
    const auto p2 = bundle_pilot_net(r);
    const auto e2 = bundle_residual_net(r);
    REQUIRE(p2.has_value());
    REQUIRE(e2.has_value());
    CHECK(e2->config().filters == 4);
    for (std::size_t i = 0; i < pilot.params().size(); ++i) CHECK(p2->params()[i].value == pilot.params()[i].value);
    for (std::size_t i = 0; i < est.params().size(); ++i) CHECK(e2->params()[i].value == est.params()[i].value);
    fs::remove_all(dir);
}

TEST_CASE("manifest lists every tensor of both networks") {
    PilotNet pilot(PilotNetConfig{}, 1);
    ResidualNet est({.layers = 3, .filters = 4}, 1);
    const fs::path dir = scratch("manifest");
    save_bundle(make_bundle(&pilot, &est), dir);
    const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    std::vector<std::string> names;
    for (const auto& t : manifest.at("tensors")) names.push_back(t.at("name").get<std::string>());
    for (const auto& p : pilot.params()) CHECK(std::count(names.begin(), names.end(), p.name) == 1);
    for (const auto& p : est.params()) CHECK(std::count(names.begin(), names.end(), p.name) == 1);
    CHECK(names.size() == pilot.params().size() + est.params().size());
    CHECK(fs::file_size(dir / "payload.bin") % 8 == 0);
    fs::remove_all(dir);
}

TEST_CASE("bundle with one network") {
    ResidualNet est({.layers = 1, .filters = 2}, 1);
    const ModelBundle b = make_bundle(nullptr, &est);
    CHECK_FALSE(bundle_pilot_net(b).has_value());
    CHECK(bundle_residual_net(b).has_value());
}

TEST_CASE("truncated payload and wrong schema are rejected") {
    ResidualNet est({.layers = 1, .filters = 2}, 1);
    const fs::path dir = scratch("broken");
    save_bundle(make_bundle(nullptr, &est), dir);
    const auto size = fs::file_size(dir / "payload.bin");
    fs::resize_file(dir / "payload.bin", size - 8);
    CHECK_THROWS_AS(load_bundle(dir), PayloadLengthMismatch);
    fs::resize_file(dir / "payload.bin", size + 8);
    CHECK_THROWS_AS(load_bundle(dir), PayloadLengthMismatch);

    save_bundle(make_bundle(nullptr, &est), dir);
    auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    manifest["schema_version"] = 99;
    std::ofstream(dir / "manifest.json") << manifest.dump();
    CHECK_THROWS_AS(load_bundle(dir), SchemaVersionMismatch);
    CHECK_THROWS_AS(load_bundle(dir / "missing"), BundleError);
    fs::remove_all(dir);
}

TEST_CASE("config parsing: defaults, overrides and echo") {
    const ExperimentConfig d = parse_config("{}");
    CHECK(d.train.scenario.topology.cells == 3);
    CHECK(d.eval.pipelines.size() == 4);
    const ExperimentConfig c = parse_config(R"({"seed": 9, "scenario": {"antennas": 8, "pilot_length": 2},
        "train": {"epochs": 5, "estimator_mode": "cdrn-local", "pilot_scheme": "random"},
        "eval": {"delta_sq_grid": [0, 0.04], "pipelines": ["cdf"]}})");
    CHECK(c.train.seed == 9);
    CHECK(c.train.scenario.topology.antennas == 8);
    CHECK(c.train.estimator.mode == EstimatorMode::cdrn_local);
    CHECK(c.train.pilot_scheme == PilotScheme::random);
    CHECK(c.eval.delta_sq_grid == std::vector<double>{0.0, 0.04});
    const ExperimentConfig again = parse_config(to_json(c).dump());
    CHECK(to_json(again) == to_json(c));
}

TEST_CASE("config errors name the line or field") {
    auto message = [](const std::string& text) {
        try {
            parse_config(text, "cfg.json");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("{\n\"seed\": 1,\n\"train\": {\n}}}").find("cfg.json:4") != std::string::npos);
    CHECK(message(R"({"train": {"epochs": "ten"}})").find("train.epochs") != std::string::npos);
    CHECK(message(R"({"scenario": {"antenas": 4}})").find("scenario.antenas") != std::string::npos);
    CHECK(message(R"({"train": {"estimator_mode": "dncnn"}})").find("train.estimator_mode") != std::string::npos);
    CHECK(message(R"({"eval": {"delta_sq_grid": [0.5]}})").find("eval.delta_sq_grid") != std::string::npos);
    CHECK(message(R"({"eval": {"pipelines": ["fig9"]}})").find("fig9") != std::string::npos);
    CHECK(message(R"({"seed": -1})").find("seed") != std::string::npos);
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("scenario JSON carries positions and beta in dB") {
    const Scenario sc = make_scenario(test::small_config(2, 2, 4, 2), 1, 0);
    const auto j = scenario_to_json(sc);
    CHECK(j.at("cells") == 2);
    CHECK(j.at("beta_db")[1][0][1].get<double>() == doctest::Approx(linear_to_db(sc.beta(1, 0, 1))));
    CHECK(j.at("ue_positions_m").size() == 2);
    CHECK(j.at("noise_power_dbm").get<double>() == doctest::Approx(-96.0));
}

TEST_CASE("reproduce writes byte-identical CSVs on reruns") {
    ExperimentConfig c = parse_config(R"({"seed": 4,
        "scenario": {"antennas": 4, "users_per_cell": 2, "pilot_length": 2},
        "train": {"samples": 12, "validation_samples": 6, "epochs": 1, "pilot_epochs": 1, "batch": 8,
                  "layers": 1, "filters": 2},
        "eval": {"test_samples": 6, "delta_sq_grid": [0, 0.02], "pilot_lengths": [1, 2], "seeds": [4, 5],
                 "mismatch_train_delta_sq": 0.01}})");
    const fs::path a = scratch("repro_a");
    const fs::path b = scratch("repro_b");
    const auto fa = reproduce(c, a);
    const auto fb = reproduce(c, b);
    REQUIRE(fa.size() == fb.size());
    CHECK(fa.size() >= 4);
    for (std::size_t i = 0; i < fa.size(); ++i) {
        CHECK(fa[i].filename() == fb[i].filename());
        const std::string sa = slurp(fa[i]);
        CHECK(!sa.empty());
        CHECK(sa == slurp(fb[i]));
    }
    const std::string pl = slurp(a / "pilot_length.csv");
    CHECK(pl.find("joint") != std::string::npos);
    CHECK(pl.find("learned-aware") != std::string::npos);
    fs::remove_all(a);
    fs::remove_all(b);
}
