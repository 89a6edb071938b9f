#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pmshadow/arena.hpp"
#include "pmshadow/reclaim.hpp"

namespace pmshadow {

// Hash map over a compressed bitmap trie. Updates are out of place and
// return a new structure root; the old root stays valid until reclaimed.
// Values are either exactly 8 bytes stored inline or arbitrary byte spans
// stored in referenced blocks, fixed per handle.
class PMap {
 public:
  PMap(Arena& arena, RefTable& refs, bool indirect_values)
      : arena_(&arena), refs_(&refs), indirect_(indirect_values) {}

  ArenaOffset insert(ArenaOffset droot, std::uint64_t key,
                     std::span<const std::uint8_t> value);
  ArenaOffset insert_u64(ArenaOffset droot, std::uint64_t key,
                         std::uint64_t value);
  // Returns the input root unchanged when the key is absent.
  ArenaOffset erase(ArenaOffset droot, std::uint64_t key);
  bool contains(ArenaOffset droot, std::uint64_t key) const;
  std::optional<std::vector<std::uint8_t>> get(ArenaOffset droot,
                                               std::uint64_t key) const;
  std::uint64_t size(ArenaOffset droot) const;
  // Trie order, not key order.
  std::vector<std::pair<std::uint64_t, std::vector<std::uint8_t>>> items(
      ArenaOffset droot) const;

 private:
  Arena* arena_;
  RefTable* refs_;
  bool indirect_;
};

// Hash set sharing the map's trie shape, with key-only entries.
class PSet {
 public:
  PSet(Arena& arena, RefTable& refs) : arena_(&arena), refs_(&refs) {}

  ArenaOffset insert(ArenaOffset droot, std::uint64_t key);
  ArenaOffset erase(ArenaOffset droot, std::uint64_t key);
  bool contains(ArenaOffset droot, std::uint64_t key) const;
  std::uint64_t size(ArenaOffset droot) const;
  std::vector<std::uint64_t> items(ArenaOffset droot) const;

 private:
  Arena* arena_;
  RefTable* refs_;
};

}  // namespace pmshadow
