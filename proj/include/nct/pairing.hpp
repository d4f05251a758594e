#pragma once

#include <string>

#include "nct/rng.hpp"
#include "nct/synthworld.hpp"

namespace nct {

inline constexpr int kDefaultCrossPairK = 4;

// Cross-pairing synthesis: every person gets k garments drawn uniformly
// without replacement from the full catalog, breaking the one-to-one link of
// the paired manifest. Images stay lazy; the renderer is the fitting oracle.
// Split tags carry over from each person's source record.
DatasetManifest cross_pair(const DatasetManifest& paired, int k, RngStream& rng);

}  // namespace nct
