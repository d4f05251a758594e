#include "nct/pairing.hpp"

#include <algorithm>
#include <map>

#include "nct/common.hpp"

namespace nct {

DatasetManifest cross_pair(const DatasetManifest& paired, int k, RngStream& rng) {
    check(k >= 0, "cross_pair: k must be non-negative");
    check(paired.mode == "paired_one_to_one", "cross_pair: source manifest must be paired");
    int catalog = static_cast<int>(paired.garments.size());
    check(k <= catalog, "cross_pair: k=" + std::to_string(k) + " exceeds catalog size " +
                            std::to_string(catalog));
    DatasetManifest out;
    out.mode = "cross_paired";
    out.persons = paired.persons;
    out.garments = paired.garments;
    if (k == 0) return out;
    // Persons inherit the split tag of their paired record; persons without a
    // record do not appear in the output.
    for (const auto& rec : paired.records) {
        // k distinct garments per person via a partial Fisher-Yates draw
        std::vector<int> pool(static_cast<size_t>(catalog));
        for (int i = 0; i < catalog; ++i) pool[static_cast<size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(catalog - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            out.records.push_back({rec.person, pool[static_cast<size_t>(i)], rec.split});
        }
    }
    return out;
}

}  // namespace nct
