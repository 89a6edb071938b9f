#include "pmshadow/reclaim.hpp"

#include <sys/stat.h>

#include <unordered_map>
#include <vector>

#include "pmshadow/errors.hpp"
#include "pmshadow/nodes.hpp"

namespace pmshadow {

std::uint64_t RefTable::decref(ArenaOffset offset) {
  if (offset == kNullOffset) {
    return 0;
  }
  auto it = counts_.find(offset);
  if (it == counts_.end() || it->second == 0) {
    throw RefCountError("refs: count dropped below zero");
  }
  if (--it->second == 0) {
    counts_.erase(it);
    return 0;
  }
  return it->second;
}

void decref_recursive(Arena& arena, RefTable& refs, ArenaOffset root) {
  if (root == kNullOffset) {
    return;
  }
  std::vector<ArenaOffset> pending{root};
  while (!pending.empty()) {
    const ArenaOffset off = pending.back();
    pending.pop_back();
    if (refs.decref(off) > 0) {
      continue;
    }
    for_each_child(arena, off,
                   [&](ArenaOffset child) { pending.push_back(child); });
    arena.free(off);
  }
}

namespace {

enum class Color : std::uint8_t { Gray, Black };

std::uint64_t validate_node(const Arena& a, ArenaOffset off) {
  if (off % 8 != 0 || off < a.data_start() || off + 16 > a.size()) {
    throw CorruptionError("recover: reference outside the data area");
  }
  if (!valid_node_tag(a.data()[off])) {
    throw CorruptionError("recover: reference to an invalid node");
  }
  const std::uint64_t size = node_size_from_header(a, off);
  if (off + size > a.size()) {
    throw CorruptionError("recover: node extends past the arena");
  }
  return size;
}

// Depth-first walk over every node reachable from the named roots.
// per_edge fires once per reference, on_visit once per distinct node.
template <typename PerEdge, typename OnVisit>
void traverse(const Arena& a,
              const std::vector<std::pair<std::string, ArenaOffset>>& roots,
              std::unordered_map<ArenaOffset, Color>& colors, PerEdge per_edge,
              OnVisit on_visit) {
  struct Frame {
    ArenaOffset off;
    std::vector<ArenaOffset> children;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;

  auto enter = [&](ArenaOffset off) {
    validate_node(a, off);
    on_visit(off);
    colors[off] = Color::Gray;
    Frame f;
    f.off = off;
    for_each_child(a, off,
                   [&](ArenaOffset child) { f.children.push_back(child); });
    stack.push_back(std::move(f));
  };

  for (const auto& [name, root] : roots) {
    if (root == kNullOffset) {
      continue;
    }
    per_edge(root);
    auto it = colors.find(root);
    if (it != colors.end()) {
      continue;  // already reached from another name
    }
    enter(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next == f.children.size()) {
        colors[f.off] = Color::Black;
        stack.pop_back();
        continue;
      }
      const ArenaOffset child = f.children[f.next++];
      per_edge(child);
      auto cit = colors.find(child);
      if (cit == colors.end()) {
        enter(child);
      } else if (cit->second == Color::Gray) {
        throw CorruptionError("recover: reference cycle");
      }
    }
  }
}

bool root_entry_field_valid(ArenaOffset addr) {
  const ArenaOffset first = kRootDirBase + kRootNameSize;
  if (addr < first) {
    return false;
  }
  const ArenaOffset rel = addr - first;
  return rel % kRootEntrySize == 0 && rel / kRootEntrySize < kRootDirEntries;
}

void settle_undo_log(Arena& a) {
  const std::uint64_t count = a.undo_count();
  const std::uint64_t committed = a.undo_committed();
  if (count == 0 && committed == 0) {
    return;
  }
  if (count > kUndoCapacity) {
    throw CorruptionError("recover: undo record count out of range");
  }
  if (committed == 0) {
    // interrupted before the committed mark: restore every recorded root
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto [addr, old_value] = a.undo_record(i);
      if (addr == kNullOffset) {
        continue;  // record line lost before it was written
      }
      if (!root_entry_field_valid(addr)) {
        throw CorruptionError("recover: undo record names a bad root field");
      }
      a.unchecked_write_u64(addr, old_value);
      a.flush(addr);
    }
  }
  a.unchecked_write_u64(kUndoCountOffset, 0);
  a.unchecked_write_u64(kUndoCommittedOffset, 0);
  a.flush(kUndoCountOffset);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t rec = kUndoRecordsBase + 16 * i;
    a.unchecked_write_u64(rec, 0);
    a.unchecked_write_u64(rec + 8, 0);
    a.flush(rec);
  }
  a.fence();
}

}  // namespace

std::vector<std::pair<std::string, ArenaOffset>> recover(Arena& arena,
                                                         RefTable& refs) {
  settle_undo_log(arena);
  refs.clear();

  const auto roots = arena.roots();
  std::unordered_map<ArenaOffset, Color> colors;
  traverse(
      arena, roots, colors,
      [&](ArenaOffset child) { refs.incref(child); },
      [&](ArenaOffset off) {
        if (arena.is_live(off)) {
          if (arena.allocation_size(off) != node_size_from_header(arena, off)) {
            throw CorruptionError("recover: allocation record size mismatch");
          }
          return;
        }
        // reachable but deallocated: the free outran the root switch
        arena.resurrect_record(off, node_size_from_header(arena, off));
      });

  std::vector<ArenaOffset> unreachable;
  for (const auto& [off, info] : arena.allocations()) {
    if (colors.find(off) == colors.end()) {
      unreachable.push_back(off);
    }
  }
  for (ArenaOffset off : unreachable) {
    arena.free(off);
  }
  arena.fence();
  return roots;
}

std::uint64_t leak_check(const Arena& arena) {
  const auto roots = arena.roots();
  std::unordered_map<ArenaOffset, Color> colors;
  traverse(
      arena, roots, colors, [](ArenaOffset) {}, [](ArenaOffset) {});
  std::uint64_t leaked = 0;
  for (const auto& [off, info] : arena.allocations()) {
    if (colors.find(off) == colors.end()) {
      leaked += info.size;
    }
  }
  return leaked;
}

std::unique_ptr<Arena> create_arena(const std::string& path,
                                    const ArenaOptions& options) {
  struct stat st;
  if (::stat(path.c_str(), &st) == 0) {
    auto arena = Arena::open_existing(path, options.flush_model);
    RefTable refs;
    recover(*arena, refs);
    return arena;
  }
  return Arena::create(path, options);
}

}  // namespace pmshadow
