#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "gpuhammer/access_engine.hpp"

namespace gpuhammer {

struct RunConfig {
    std::string preset = "desk";
    EngineConfig engine;
    std::map<std::uint32_t, std::string> bank_labels;  // global bank -> "A".."D"
    bool randomize_per_run = false;
    std::uint64_t seed = 1;
    std::string out_dir = ".";

    void validate() const { engine.validate(); }
    // Bank carrying a label, e.g. "B".
    std::uint32_t bank_of(const std::string& label) const;
};

// a6000, desk, a100, rtx3080.
RunConfig make_preset(const std::string& name);

// The a6000 profile: 8 cells across banks A-D, scaled to the given geometry.
VulnerabilityProfile reference_profile(const DramGeometry& geom, bool desk_scale);

// Applies a JSON document on top of `cfg`; unknown keys are a ConfigError.
void apply_json(RunConfig& cfg, const std::string& json_text);
// Preset named in the file (or `fallback`), then the file's overrides.
RunConfig load_config_file(const std::string& path, const std::string& fallback_preset);

std::string to_json(const RunConfig& cfg);

}  // namespace gpuhammer
