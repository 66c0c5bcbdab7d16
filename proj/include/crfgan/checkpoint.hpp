#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "crfgan/netspec.hpp"

namespace crfgan {

// Checkpoint = text metadata entries + named float64 tensors, written as
// length-prefixed binary records with a human-readable `.manifest.txt`
// sidecar listing name, shape, and byte offset plus the graph fingerprint.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<NamedTensor> tensors;
    std::uint64_t graph_fingerprint = 0;

    const Tensor* find(const std::string& name) const;
};

// Atomic: writes to a temp file in the same directory, then renames.
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace crfgan
