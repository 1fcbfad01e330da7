#include "gpuhammer/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace gpuhammer {

using nlohmann::json;

std::uint32_t RunConfig::bank_of(const std::string& label) const {
    for (const auto& [bank, l] : bank_labels)
        if (l == label) return bank;
    throw ConfigError("no bank labelled " + label);
}

namespace {

struct CellSeed {
    const char* name;
    char label;
    std::uint32_t row_a6000, row_desk;
    std::uint32_t byte_off;
    std::uint8_t bit;
    FlipDirection dir;
    std::uint64_t trh;
    std::vector<int> deltas;
    DataRule rule;
};

constexpr auto z2o = FlipDirection::zero_to_one;
constexpr auto o2z = FlipDirection::one_to_zero;

const std::vector<CellSeed>& cell_seeds() {
    static const std::vector<CellSeed> cells = {
        {"A1", 'A', 21018, 328, 452, 4, o2z, 12300, {-2}, DataRule::adjacent_inverse},
        {"B1", 'B', 9034, 141, 1302, 0, z2o, 12350, {-2, -1}, DataRule::adjacent_or_diagonal},
        {"B2", 'B', 33371, 521, 723, 6, z2o, 12800, {2, 3}, DataRule::adjacent_or_diagonal},
        {"B3", 'B', 50467, 788, 1880, 7, o2z, 15900, {2}, DataRule::adjacent_inverse},
        {"C1", 'C', 40120, 626, 86, 0, z2o, 15200, {-2, -1}, DataRule::adjacent_or_diagonal},
        {"D1", 'D', 7745, 121, 1037, 6, z2o, 15500, {-2, -1}, DataRule::adjacent_or_diagonal},
        {"D2", 'D', 28902, 451, 618, 0, z2o, 15800, {2}, DataRule::adjacent_or_diagonal},
        {"D3", 'D', 61013, 953, 1461, 6, z2o, 16000, {1, 2}, DataRule::adjacent_or_diagonal},
    };
    return cells;
}

// Labelled banks sit on channel 0.
std::map<std::uint32_t, std::string> default_labels() {
    return {{1, "A"}, {5, "B"}, {9, "C"}, {13, "D"}};
}

}  // namespace

VulnerabilityProfile reference_profile(const DramGeometry& geom, bool desk_scale) {
    const auto labels = default_labels();
    VulnerabilityProfile p;
    for (const auto& s : cell_seeds()) {
        CellVulnerability c;
        c.name = s.name;
        for (const auto& [bank, l] : labels)
            if (l[0] == s.label) c.bank = bank;
        c.row = desk_scale ? s.row_desk : s.row_a6000;
        c.byte_off = s.byte_off;
        c.bit = s.bit;
        c.direction = s.dir;
        // Desk banks refresh every row 16x as often, so thresholds shrink with them.
        c.trh = desk_scale ? (s.trh + 8) / 16 : s.trh;
        c.critical_deltas = s.deltas;
        c.data_rule = s.rule;
        c.validate(geom);
        p.push_back(c);
    }
    return p;
}

RunConfig make_preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    auto& e = c.engine;
    e.map_mode = MapMode::mixed;
    e.map_seed = 1767;
    if (name == "desk") {
        e.geometry = {2, 16, 1024, 2048, 256};
        e.profile = reference_profile(e.geometry, true);
        c.bank_labels = default_labels();
    } else if (name == "a6000") {
        e.geometry = {16, 16, 65536, 2048, 256};
        e.profile = reference_profile(e.geometry, false);
        c.bank_labels = default_labels();
    } else if (name == "a100") {
        e.geometry = {16, 16, 32768, 1024, 256};
        c.bank_labels = default_labels();
    } else if (name == "rtx3080") {
        e.geometry = {8, 16, 32768, 2048, 256};
        c.bank_labels = default_labels();
    } else {
        throw ConfigError("unknown preset: " + name);
    }
    c.validate();
    return c;
}

namespace {

template <typename F>
void each_key(const json& obj, const char* section, F&& on_key) {
    if (!obj.is_object()) throw ConfigError(std::string(section) + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!on_key(it.key(), it.value()))
            throw ConfigError(std::string(section) + ": unknown key '" + it.key() + "'");
}

template <typename T>
T as(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + key + "'");
    }
}

CellVulnerability parse_cell(const json& j) {
    CellVulnerability c;
    each_key(j, "profile", [&](const std::string& k, const json& v) {
        if (k == "name") c.name = as<std::string>(v, k);
        else if (k == "bank") c.bank = as<std::uint32_t>(v, k);
        else if (k == "row") c.row = as<std::uint32_t>(v, k);
        else if (k == "byte_off") c.byte_off = as<std::uint32_t>(v, k);
        else if (k == "bit") c.bit = as<std::uint8_t>(v, k);
        else if (k == "direction") c.direction = parse_direction(as<std::string>(v, k));
        else if (k == "trh") c.trh = as<std::uint64_t>(v, k);
        else if (k == "critical_deltas") c.critical_deltas = as<std::vector<int>>(v, k);
        else if (k == "data_rule") c.data_rule = parse_data_rule(as<std::string>(v, k));
        else return false;
        return true;
    });
    return c;
}

}  // namespace

void apply_json(RunConfig& cfg, const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    auto& e = cfg.engine;
    each_key(doc, "config", [&](const std::string& k, const json& v) {
        if (k == "preset") {
            if (as<std::string>(v, k) != cfg.preset)
                throw ConfigError("preset must be applied before the rest of the file");
        } else if (k == "seed") {
            cfg.seed = as<std::uint64_t>(v, k);
        } else if (k == "out_dir") {
            cfg.out_dir = as<std::string>(v, k);
        } else if (k == "fill") {
            e.fill = as<std::uint8_t>(v, k);
        } else if (k == "timing") {
            each_key(v, "timing", [&](const std::string& t, const json& x) {
                auto& tm = e.timing;
                if (t == "trc_ns") tm.trc_ns = as<std::int64_t>(x, t);
                else if (t == "trefi_ns") tm.trefi_ns = as<std::int64_t>(x, t);
                else if (t == "refs_per_window") tm.refs_per_window = as<std::int64_t>(x, t);
                else if (t == "trfc_ns") tm.trfc_ns = as<std::int64_t>(x, t);
                else if (t == "conflict_extra_ns") tm.conflict_extra_ns = as<std::int64_t>(x, t);
                else return false;
                return true;
            });
        } else if (k == "geometry") {
            each_key(v, "geometry", [&](const std::string& t, const json& x) {
                auto& g = e.geometry;
                if (t == "channels") g.channels = as<std::uint32_t>(x, t);
                else if (t == "banks_per_channel") g.banks_per_channel = as<std::uint32_t>(x, t);
                else if (t == "rows_per_bank") g.rows_per_bank = as<std::uint32_t>(x, t);
                else if (t == "row_bytes") g.row_bytes = as<std::uint32_t>(x, t);
                else if (t == "chunk_bytes") g.chunk_bytes = as<std::uint32_t>(x, t);
                else return false;
                return true;
            });
        } else if (k == "map") {
            each_key(v, "map", [&](const std::string& t, const json& x) {
                if (t == "mode") e.map_mode = parse_map_mode(as<std::string>(x, t));
                else if (t == "seed") e.map_seed = as<std::uint64_t>(x, t);
                else if (t == "salt") e.map_salt = as<std::uint64_t>(x, t);
                else if (t == "randomize_per_run") cfg.randomize_per_run = as<bool>(x, t);
                else return false;
                return true;
            });
        } else if (k == "trr") {
            each_key(v, "trr", [&](const std::string& t, const json& x) {
                if (t == "policy") e.trr.policy = parse_trr_policy(as<std::string>(x, t));
                else if (t == "capacity") e.trr.capacity = as<std::uint32_t>(x, t);
                else if (t == "blast_radius") e.trr.blast_radius = as<std::uint32_t>(x, t);
                else return false;
                return true;
            });
        } else if (k == "ecc") {
            each_key(v, "ecc", [&](const std::string& t, const json& x) {
                if (t != "enabled") return false;
                e.ecc.enabled = as<bool>(x, t);
                return true;
            });
        } else if (k == "engine") {
            each_key(v, "engine", [&](const std::string& t, const json& x) {
                auto& p = e.params;
                if (t == "unit_delay_ns") p.unit_delay_ns = as<Time>(x, t);
                else if (t == "issue_epsilon_ns") p.issue_epsilon_ns = as<Time>(x, t);
                else if (t == "lockstep_lane_ns") p.lockstep_lane_ns = as<Time>(x, t);
                else if (t == "sm_delay_slots") p.sm_delay_slots = as<std::uint32_t>(x, t);
                else if (t == "ref_pullin_ns") p.ref_pullin_ns = as<Time>(x, t);
                else if (t == "warmup_stagger_ns") p.warmup_stagger_ns = as<Time>(x, t);
                else if (t == "jitter_sigma_ns") p.jitter_sigma_ns = as<double>(x, t);
                else if (t == "jitter_seed") p.jitter_seed = as<std::uint64_t>(x, t);
                else return false;
                return true;
            });
        } else if (k == "profile") {
            if (!v.is_array()) throw ConfigError("profile: expected an array");
            e.profile.clear();
            for (const auto& c : v) e.profile.push_back(parse_cell(c));
        } else if (k == "banks") {
            cfg.bank_labels.clear();
            each_key(v, "banks", [&](const std::string& t, const json& x) {
                cfg.bank_labels[as<std::uint32_t>(x, t)] = t;
                return true;
            });
        } else {
            return false;
        }
        return true;
    });
    cfg.validate();
}

RunConfig load_config_file(const std::string& path, const std::string& fallback_preset) {
    std::ifstream in(path);
    if (!in) throw MissingInput("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    std::string preset = fallback_preset;
    try {
        const auto doc = json::parse(text);
        if (doc.is_object() && doc.contains("preset")) preset = as<std::string>(doc["preset"], "preset");
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg = make_preset(preset);
    apply_json(cfg, text);
    return cfg;
}

std::string to_json(const RunConfig& cfg) {
    const auto& e = cfg.engine;
    json j;
    j["preset"] = cfg.preset;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["fill"] = e.fill;
    j["timing"] = {{"trc_ns", e.timing.trc_ns},
                   {"trefi_ns", e.timing.trefi_ns},
                   {"refs_per_window", e.timing.refs_per_window},
                   {"trfc_ns", e.timing.trfc_ns},
                   {"conflict_extra_ns", e.timing.conflict_extra_ns}};
    j["geometry"] = {{"channels", e.geometry.channels},
                     {"banks_per_channel", e.geometry.banks_per_channel},
                     {"rows_per_bank", e.geometry.rows_per_bank},
                     {"row_bytes", e.geometry.row_bytes},
                     {"chunk_bytes", e.geometry.chunk_bytes}};
    j["map"] = {{"mode", to_string(e.map_mode)},
                {"seed", e.map_seed},
                {"salt", e.map_salt},
                {"randomize_per_run", cfg.randomize_per_run}};
    j["trr"] = {{"policy", to_string(e.trr.policy)},
                {"capacity", e.trr.capacity},
                {"blast_radius", e.trr.blast_radius}};
    j["ecc"] = {{"enabled", e.ecc.enabled}};
    const auto& p = e.params;
    j["engine"] = {{"unit_delay_ns", p.unit_delay_ns},
                   {"issue_epsilon_ns", p.issue_epsilon_ns},
                   {"lockstep_lane_ns", p.lockstep_lane_ns},
                   {"sm_delay_slots", p.sm_delay_slots},
                   {"ref_pullin_ns", p.ref_pullin_ns},
                   {"warmup_stagger_ns", p.warmup_stagger_ns},
                   {"jitter_sigma_ns", p.jitter_sigma_ns},
                   {"jitter_seed", p.jitter_seed}};
    j["profile"] = json::array();
    for (const auto& c : e.profile)
        j["profile"].push_back({{"name", c.name},
                                {"bank", c.bank},
                                {"row", c.row},
                                {"byte_off", c.byte_off},
                                {"bit", c.bit},
                                {"direction", to_string(c.direction)},
                                {"trh", c.trh},
                                {"critical_deltas", c.critical_deltas},
                                {"data_rule", to_string(c.data_rule)}});
    j["banks"] = json::object();
    for (const auto& [bank, l] : cfg.bank_labels) j["banks"][l] = bank;
    return j.dump(2);
}

}  // namespace gpuhammer
