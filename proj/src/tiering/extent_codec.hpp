#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kvdrive/tiering.hpp"

namespace kvdrive::detail {

// Checks an extent's on-disk header against the plan, then appends the
// entries at `slots` (positions within the extent) to `out`.
void decode_extent(std::span<const std::byte> bytes, const Extent& extent, std::size_t dim,
                   std::span<const std::uint32_t> slots, std::vector<KVEntry>& out);

// Groups each stream's wanted tokens by extent: [stream] -> (extent -> slots).
std::vector<std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>>> group_by_extent(
    const TieredStore& store, const std::vector<TokenSet>& wanted);

void sort_entries(std::vector<KVEntry>& entries);

}  // namespace kvdrive::detail
