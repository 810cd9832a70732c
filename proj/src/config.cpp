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

#include "mce/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace mce {

using nlohmann::json;

namespace {

// Reads fields of one JSON object, reporting type errors and unknown keys by path.
class Section {
public:
    Section(const json& obj, std::string path, std::string source)
        : obj_(obj), path_(std::move(path)), source_(std::move(source)) {
        if (!obj_.is_object()) fail(path_, "expected an object");
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    template <class T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        if (!obj_.contains(key)) return;
        const json& v = obj_.at(key);
        try {
            check_type<T>(v);
            out = v.get<T>();
        } catch (const json::exception&) {
            fail(field(key), std::string("expected ") + type_name<T>() + ", got " + v.dump());
        }
    }

    Section sub(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(obj_.contains(key) ? obj_.at(key) : empty, field(key), source_);
    }

    void finish() const {
        for (const auto& [k, v] : obj_.items())
            if (!seen_.count(k)) fail(field(k), "unknown field");
    }

    [[noreturn]] void fail(const std::string& where, const std::string& what) const {
        throw ConfigError(source_ + ": field '" + where + "': " + what);
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    template <class T>
    static void check_type(const json& v) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw json::type_error::create(302, "bool", nullptr);
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw json::type_error::create(302, "integer", nullptr);
            if constexpr (std::is_unsigned_v<T>)
                if (v.is_number_integer() && !v.is_number_unsigned())
                    throw json::type_error::create(302, "unsigned", nullptr);
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw json::type_error::create(302, "number", nullptr);
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw json::type_error::create(302, "string", nullptr);
        } else {
            if (!v.is_array()) throw json::type_error::create(302, "array", nullptr);
            for (const auto& e : v) check_type<typename T::value_type>(e);
        }
    }

    template <class T>
    static const char* type_name() {
        if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else if constexpr (std::is_same_v<T, std::string>) return "a string";
        else return "an array";
    }

    const json& obj_;
    std::string path_;
    std::string source_;
    std::set<std::string> seen_;
};

template <class Parse>
auto parse_enum(Section& s, const std::string& key, Parse parse, decltype(parse(std::string())) fallback) {
    std::string text;
    s.read(key, text);
    if (text.empty()) return fallback;
    try {
        return parse(text);
    } catch (const std::invalid_argument& e) {
        s.fail(s.field(key), e.what());
    }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // byte offset -> line number
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const long line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        std::ostringstream os;
        os << source << ":" << line << ": JSON syntax error: " << e.what();
        throw ConfigError(os.str());
    }

    ExperimentConfig c;
    TrainConfig& t = c.train;
    Section root(doc, "", source);
    root.read("seed", t.seed);

    Section sc = root.sub("scenario");
    ScenarioConfig& s = t.scenario;
    sc.read("cells", s.topology.cells);
    sc.read("users_per_cell", s.topology.users_per_cell);
    sc.read("antennas", s.topology.antennas);
    sc.read("isd_m", s.topology.isd_m);
    sc.read("min_ue_distance_m", s.topology.min_ue_distance_m);
    sc.read("shadowing_stddev_db", s.topology.shadowing_stddev_db);
    sc.read("pilot_length", s.pilot_length);
    sc.read("noise_power_dbm", s.noise_power_dbm);
    sc.read("ue_power_cap_dbm", s.ue_power_cap_dbm);
    sc.read("delta_ue", s.delta_ue);
    sc.read("delta_bs", s.delta_bs);
    sc.finish();

    Section tr = root.sub("train");
    tr.read("delta_sq", t.train_delta_sq);
    tr.read("samples", t.train_samples);
    tr.read("validation_samples", t.validation_samples);
    tr.read("epochs", t.epochs);
    tr.read("patience", t.patience);
    tr.read("batch", t.batch);
    tr.read("lr", t.lr);
    tr.read("lr_decay_at", t.lr_decay_at);
    tr.read("lr_decay", t.lr_decay);
    tr.read("pilot_epochs", t.pilot_epochs);
    tr.read("pilot_batch", t.pilot_batch);
    tr.read("pilot_lr", t.pilot_lr);
    tr.read("pilot_hidden_layers", t.pilot_hidden_layers);
    tr.read("pilot_width_factor", t.pilot_width_factor);
    tr.read("pilot_dropout", t.pilot_dropout);
    tr.read("layers", t.estimator.layers);
    tr.read("filters", t.estimator.filters);
    tr.read("zero_init_heads", t.estimator.zero_init_heads);
    tr.read("reparameterized_distortion", t.reparameterized_distortion);
    t.regime = parse_enum(tr, "regime", parse_regime, t.regime);
    t.pilot_scheme = parse_enum(tr, "pilot_scheme", parse_pilot_scheme, t.pilot_scheme);
    t.estimator.mode = parse_enum(tr, "estimator_mode", parse_estimator_mode, t.estimator.mode);
    tr.finish();

    Section ev = root.sub("eval");
    ev.read("test_samples", t.test_samples);
    ev.read("delta_sq_grid", c.eval.delta_sq_grid);
    ev.read("pilot_lengths", c.eval.pilot_lengths);
    ev.read("seeds", c.eval.seeds);
    ev.read("pipelines", c.eval.pipelines);
    ev.read("mismatch_train_delta_sq", c.eval.mismatch_train_delta_sq);
    ev.finish();
    root.finish();

    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(source + ": " + e.what());
    }
    for (double d : c.eval.delta_sq_grid)
        if (!(d >= 0.0 && d <= 0.04)) root.fail("eval.delta_sq_grid", "entries must be in [0, 0.04]");
    for (int p : c.eval.pilot_lengths)
        if (p < 1) root.fail("eval.pilot_lengths", "entries must be >= 1");
    if (c.eval.seeds.empty()) root.fail("eval.seeds", "need at least one seed");
    for (const auto& p : c.eval.pipelines)
        if (p != "pilot-length" && p != "impairment" && p != "cdf" && p != "mismatch")
            root.fail("eval.pipelines", "unknown pipeline '" + p + "' (pilot-length|impairment|cdf|mismatch)");
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

json to_json(const ExperimentConfig& c) {
    const TrainConfig& t = c.train;
    const ScenarioConfig& s = t.scenario;
    return {
        {"seed", t.seed},
        {"scenario",
         {{"cells", s.topology.cells},
          {"users_per_cell", s.topology.users_per_cell},
          {"antennas", s.topology.antennas},
          {"isd_m", s.topology.isd_m},
          {"min_ue_distance_m", s.topology.min_ue_distance_m},
          {"shadowing_stddev_db", s.topology.shadowing_stddev_db},
          {"pilot_length", s.pilot_length},
          {"noise_power_dbm", s.noise_power_dbm},
          {"ue_power_cap_dbm", s.ue_power_cap_dbm},
          {"delta_ue", s.delta_ue},
          {"delta_bs", s.delta_bs}}},
        {"train",
         {{"delta_sq", t.train_delta_sq},
          {"samples", t.train_samples},
          {"validation_samples", t.validation_samples},
          {"epochs", t.epochs},
          {"patience", t.patience},
          {"batch", t.batch},
          {"lr", t.lr},
          {"lr_decay_at", t.lr_decay_at},
          {"lr_decay", t.lr_decay},
          {"pilot_epochs", t.pilot_epochs},
          {"pilot_batch", t.pilot_batch},
          {"pilot_lr", t.pilot_lr},
          {"pilot_hidden_layers", t.pilot_hidden_layers},
          {"pilot_width_factor", t.pilot_width_factor},
          {"pilot_dropout", t.pilot_dropout},
          {"layers", t.estimator.layers},
          {"filters", t.estimator.filters},
          {"zero_init_heads", t.estimator.zero_init_heads},
          {"reparameterized_distortion", t.reparameterized_distortion},
          {"regime", to_string(t.regime)},
          {"pilot_scheme", to_string(t.pilot_scheme)},
          {"estimator_mode", to_string(t.estimator.mode)}}},
        {"eval",
         {{"test_samples", t.test_samples},
          {"delta_sq_grid", c.eval.delta_sq_grid},
          {"pilot_lengths", c.eval.pilot_lengths},
          {"seeds", c.eval.seeds},
          {"pipelines", c.eval.pipelines},
          {"mismatch_train_delta_sq", c.eval.mismatch_train_delta_sq}}},
    };
}

json scenario_to_json(const Scenario& sc) {
    json j;
    j["cells"] = sc.cells();
    j["users_per_cell"] = sc.users();
    j["antennas"] = sc.antennas();
    j["pilot_length"] = sc.pilot_length;
    j["noise_power_dbm"] = mw_to_dbm(sc.noise_power_mw);
    j["ue_power_cap_dbm"] = mw_to_dbm(sc.ue_power_cap_mw);
    j["delta_ue"] = sc.delta_ue;
    j["delta_bs"] = sc.delta_bs;
    if (sc.positions) {
        j["bs_positions_m"] = sc.positions->bs;
        j["ue_positions_m"] = sc.positions->ue;
    }
    // beta_db[i][j][k]: BS i to UE k of cell j
    json beta = json::array();
    for (int i = 0; i < sc.cells(); ++i) {
        json per_bs = json::array();
        for (int c = 0; c < sc.cells(); ++c) {
            json row = json::array();
            for (int k = 0; k < sc.users(); ++k) row.push_back(linear_to_db(sc.beta(i, c, k)));
            per_bs.push_back(row);
        }
        beta.push_back(per_bs);
    }
    j["beta_db"] = beta;
    return j;
}

}  // namespace mce
