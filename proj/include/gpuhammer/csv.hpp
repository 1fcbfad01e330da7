#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "gpuhammer/errors.hpp"

namespace gpuhammer {

// Comma-separated, '\n' line endings, header first.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& header)
        : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw ConfigError("cannot write " + path);
        out_ << header << '\n';
    }

    template <typename... Ts>
    void row(const Ts&... cols) {
        std::ostringstream line;
        bool first = true;
        ((line << (first ? "" : ",") << cols, first = false), ...);
        out_ << line.str() << '\n';
    }

private:
    std::ofstream out_;
};

std::string hex_byte(unsigned v);

}  // namespace gpuhammer
