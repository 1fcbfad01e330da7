#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gpuhammer/config.hpp"

namespace testsupport {

inline gpuhammer::EngineConfig desk_engine() { return gpuhammer::make_preset("desk").engine; }

inline gpuhammer::EngineConfig quiet_engine(const std::string& preset = "desk") {
    auto c = gpuhammer::make_preset(preset).engine;
    c.profile.clear();
    return c;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("gpuhammer_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testsupport
