#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pmshadow/arena.hpp"
#include "pmshadow/reclaim.hpp"

namespace pmshadow {

// Persistent queue over two cons lists. Enqueue always prepends to the
// back list; a dequeue that finds the front list empty reverses the whole
// back list first, allocating one node per element carried over.
class PQueue {
 public:
  PQueue(Arena& arena, RefTable& refs) : arena_(&arena), refs_(&refs) {}

  ArenaOffset enqueue(ArenaOffset droot, std::uint64_t value);
  std::pair<ArenaOffset, std::uint64_t> dequeue(ArenaOffset droot);
  std::uint64_t front(ArenaOffset droot) const;
  std::uint64_t size(ArenaOffset droot) const;
  // Front first.
  std::vector<std::uint64_t> items(ArenaOffset droot) const;

 private:
  Arena* arena_;
  RefTable* refs_;
};

}  // namespace pmshadow
