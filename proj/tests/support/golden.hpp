// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "xsyn/tensor.hpp"
#include "xsyn/xten.hpp"

// Frozen expected values under tests/golden. Set XSYN_REGOLDEN=1 to rewrite
// them from the current build; otherwise a missing or different file fails.
namespace xsyn::golden {

inline std::filesystem::path path(const std::string& name) {
    return std::filesystem::path(XSYN_GOLDEN_DIR) / name;
}

inline bool regenerating() {
    const char* v = std::getenv("XSYN_REGOLDEN");
    return v && std::string(v) == "1";
}

/// Empty string when `actual` equals the frozen tensor bit for bit, else a description.
inline std::string check_tensor(const std::string& name, const Tensor& actual) {
    const auto p = path(name);
    if (regenerating()) {
        std::filesystem::create_directories(p.parent_path());
        xten::write_file(p, actual);
        return {};
    }
    if (!std::filesystem::exists(p))
        return "missing golden file " + p.string() + " (run with XSYN_REGOLDEN=1)";
    const Tensor expected = xten::read_file(p);
    if (expected.dims() != actual.dims())
        return "dims " + dims_to_string(actual.dims()) + " != golden " + dims_to_string(expected.dims());
    if (!bit_equal(expected, actual))
        return "values differ from golden " + name;
    return {};
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Same contract for text files.
inline std::string check_text(const std::string& name, const std::string& actual) {
    const auto p = path(name);
    if (regenerating()) {
        std::filesystem::create_directories(p.parent_path());
        std::ofstream(p, std::ios::binary) << actual;
        return {};
    }
    if (!std::filesystem::exists(p))
        return "missing golden file " + p.string() + " (run with XSYN_REGOLDEN=1)";
    return read_text(p) == actual ? std::string() : "text differs from golden " + name;
}

}  // namespace xsyn::golden
