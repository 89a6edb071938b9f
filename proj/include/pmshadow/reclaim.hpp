#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pmshadow/arena.hpp"

namespace pmshadow {

// Transient in-edge counts for arena nodes. Rebuilt from reachability on
// recovery, never stored durably.
class RefTable {
 public:
  void incref(ArenaOffset offset) {
    if (offset != kNullOffset) {
      counts_[offset]++;
    }
  }

  // Returns the remaining count. Dropping below zero is a logic bug.
  std::uint64_t decref(ArenaOffset offset);

  std::uint64_t count(ArenaOffset offset) const {
    auto it = counts_.find(offset);
    return it == counts_.end() ? 0 : it->second;
  }

  void clear() { counts_.clear(); }
  std::size_t tracked() const { return counts_.size(); }
  const std::unordered_map<ArenaOffset, std::uint64_t>& all() const {
    return counts_;
  }

 private:
  std::unordered_map<ArenaOffset, std::uint64_t> counts_;
};

// Removes one in-edge from root; nodes whose count reaches zero are freed
// and their out-edges removed in turn.
void decref_recursive(Arena& arena, RefTable& refs, ArenaOffset root);

// Brings an arena opened after a crash back to a consistent state: rolls
// back or clears the undo log, reinstates allocation records for reachable
// nodes that lost theirs, sweeps unreachable allocations, and rebuilds the
// reference table. Returns the named roots that survived.
std::vector<std::pair<std::string, ArenaOffset>> recover(Arena& arena,
                                                         RefTable& refs);

// Bytes of live allocations not reachable from any named root.
std::uint64_t leak_check(const Arena& arena);

}  // namespace pmshadow
