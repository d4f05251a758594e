#include "nct/runmeta.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "nct/common.hpp"
#include "nct/rng.hpp"

namespace nct {

void write_run_manifest(const std::string& dir, const RunMeta& meta) {
    nlohmann::json j;
    j["tool"] = kToolVersion;
    j["rng_algo"] = kRngAlgoId;
    j["command"] = meta.command;
    j["config"] = nlohmann::json::parse(meta.config_json);
    j["inputs"] = meta.inputs;
    j["outputs"] = meta.outputs;
    std::string path = dir + "/run-manifest.json";
    std::ofstream f(path);
    if (!f) throw IoError("cannot write run manifest: " + path);
    f << j.dump(2) << "\n";
}

}  // namespace nct
