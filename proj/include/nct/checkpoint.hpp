#pragma once

#include <string>

#include "nct/adam.hpp"
#include "nct/param_store.hpp"

namespace nct {

// Binary checkpoint: magic "NCT1", format version, RNG algorithm id, a JSON
// config snapshot, then (name, trainable, dims, float32 little-endian
// payload) for every parameter and optimizer moment. Round trip is lossless.
struct Checkpoint {
    std::string rng_algo;
    std::string config_json;
    ParamStore params;
    AdamState opt;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a 64 over the file bytes, hex encoded; recorded in run manifests.
std::string file_hash_hex(const std::string& path);

}  // namespace nct
