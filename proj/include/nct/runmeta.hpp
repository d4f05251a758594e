#pragma once

#include <map>
#include <string>
#include <vector>

namespace nct {

inline const char* kToolVersion = "nct 1.0.0";

// Every artifact directory gets a run-manifest recording the resolved
// config, seeds, and input/output hashes; re-running the same command
// reproduces the outputs bit-exactly.
struct RunMeta {
    std::string command;                          // argv, space-joined
    std::string config_json;                      // fully resolved config
    std::map<std::string, std::string> inputs;    // path -> fnv1a64
    std::map<std::string, std::string> outputs;
};

void write_run_manifest(const std::string& dir, const RunMeta& meta);

}  // namespace nct
