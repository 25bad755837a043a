#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sled/tensor.hpp"

namespace sled {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Flat binary tensor archive.
///
/// Layout: magic "SLED1", u64 entry count, entry table (u32 name length,
/// name bytes, u32 rank, u64 dims..., u64 absolute payload offset), then
/// contiguous little-endian float64 payloads. Offsets are non-overlapping
/// and names unique; save -> load round-trips bit-exactly.
void save_archive(const std::string& path, const NamedTensors& entries);
NamedTensors load_archive(const std::string& path);

/// Name-keyed view over loaded entries.
class ArchiveIndex {
public:
    explicit ArchiveIndex(const NamedTensors& entries) : entries_(entries) {}

    bool contains(const std::string& name) const;
    /// Throws ArchiveError when the name is missing.
    const Tensor& get(const std::string& name) const;

private:
    const NamedTensors& entries_;
};

} // namespace sled
