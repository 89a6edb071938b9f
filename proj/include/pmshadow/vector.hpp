#pragma once

#include <cstdint>
#include <vector>

#include "pmshadow/arena.hpp"
#include "pmshadow/reclaim.hpp"

namespace pmshadow {

// Persistent vector over a strict radix-balanced tree: all leaves sit at
// the same depth and every index resolves by digit extraction alone.
// radix_bits sets the fanout (1 << radix_bits, at most 32).
class PVector {
 public:
  PVector(Arena& arena, RefTable& refs, std::uint8_t radix_bits = 5);

  ArenaOffset push_back(ArenaOffset droot, std::uint64_t value);
  ArenaOffset update(ArenaOffset droot, std::uint64_t index,
                     std::uint64_t value);
  std::uint64_t get(ArenaOffset droot, std::uint64_t index) const;
  std::uint64_t size(ArenaOffset droot) const;
  std::vector<std::uint64_t> items(ArenaOffset droot) const;

 private:
  Arena* arena_;
  RefTable* refs_;
  std::uint8_t radix_bits_;
};

}  // namespace pmshadow
