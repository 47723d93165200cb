#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace testsupport {

inline std::filesystem::path data_dir() { return COREFLOW_DATA_DIR; }
inline std::filesystem::path test_data_dir() { return COREFLOW_TEST_DATA_DIR; }
inline std::filesystem::path golden_dir() { return COREFLOW_GOLDEN_DIR; }

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline nlohmann::json load_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

// The listing exactly as it is printed, including the wrapped Step 5 line.
inline const char* kListing =
    "Step 1:::Process:::Identify the input data type based on the objective.:::next::Step 2\n"
    "Step 2:::Process:::Identify the output data type based on the objective.:::next::Step 3\n"
    "Step 3:::Process:::Select tools in the provided tool list to generate a plan.:::next::Step 4\n"
    "Step 4:::Decision:::Check whether every tool in the plan is in the provided tool list.:::Yes::Step 5::No::Step 3\n"
    "Step 5:::Decision:::Check whether the output data type of the previous tool is the input data type\n"
    "of the next tool.:::Yes::Step 6::No::Step 3\n"
    "Step 6:::Terminal:::Output the plan by listing the tool names.:::\n";

}  // namespace testsupport
