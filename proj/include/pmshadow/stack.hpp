#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pmshadow/arena.hpp"
#include "pmshadow/reclaim.hpp"

namespace pmshadow {

// Persistent stack over a shared cons list. Push allocates one list node;
// pop shares the tail outright.
class PStack {
 public:
  PStack(Arena& arena, RefTable& refs) : arena_(&arena), refs_(&refs) {}

  ArenaOffset push(ArenaOffset droot, std::uint64_t value);
  std::pair<ArenaOffset, std::uint64_t> pop(ArenaOffset droot);
  std::uint64_t peek(ArenaOffset droot) const;
  std::uint64_t size(ArenaOffset droot) const;
  // Top first.
  std::vector<std::uint64_t> items(ArenaOffset droot) const;

 private:
  Arena* arena_;
  RefTable* refs_;
};

}  // namespace pmshadow
