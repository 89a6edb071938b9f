#include "pmshadow/commit.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "pmshadow/errors.hpp"
#include "pmshadow/nodes.hpp"

namespace pmshadow {

namespace {

ArenaOffset stored_root(const Arena& arena, std::string_view name) {
  auto current = arena.find_root(name);
  return current ? *current : kNullOffset;
}

void require_base(const Arena& arena, std::string_view name,
                  ArenaOffset old_droot) {
  if (stored_root(arena, name) != old_droot) {
    throw MisuseError("commit: stale base for '" + std::string(name) + "'");
  }
}

// Claiming directory entries mid-protocol must not be the first point of
// failure, so room is checked before anything starts.
void require_directory_room(const Arena& arena, std::uint64_t new_names) {
  if (arena.roots().size() + new_names > kRootDirEntries) {
    throw CapacityError("commit: root directory full");
  }
}

void publish_root(Arena& arena, std::string_view name, ArenaOffset new_droot,
                  bool torn) {
  if (!torn) {
    arena.set_root(name, new_droot);
    return;
  }
  // fault injection: the 8-byte pointer swing done as two half-words
  const ArenaOffset field = arena.root_entry_claim(name);
  std::uint8_t bytes[8];
  std::memcpy(bytes, &new_droot, 8);
  arena.unchecked_write(field, bytes, 4);
  arena.unchecked_write(field + 4, bytes + 4, 4);
  arena.flush(field);
}

}  // namespace

void commit_single(Arena& arena, RefTable& refs, std::string_view name,
                   ArenaOffset old_droot, ArenaOffset new_droot,
                   const CommitFaults& faults) {
  if (arena.in_commit()) {
    throw MisuseError("commit: already inside a commit");
  }
  require_base(arena, name, old_droot);
  require_directory_room(arena, arena.find_root(name) ? 0 : 1);
  arena.commit_begin();
  if (!faults.skip_fence) {
    arena.fence();  // everything the new version references is now durable
  }
  refs.incref(new_droot);
  publish_root(arena, name, new_droot, faults.torn_root_write);
  arena.commit_end();
  decref_recursive(arena, refs, old_droot);
}

ArenaOffset commit_siblings(Arena& arena, RefTable& refs,
                            std::string_view parent_name,
                            ArenaOffset old_parent,
                            std::span<const SlotUpdate> updates,
                            const CommitFaults& faults) {
  if (arena.in_commit()) {
    throw MisuseError("commit: already inside a commit");
  }
  if (updates.empty()) {
    throw MisuseError("commit: no slot updates");
  }
  require_base(arena, parent_name, old_parent);

  std::vector<ArenaOffset> slots;
  if (old_parent != kNullOffset) {
    if (node_tag(arena, old_parent) != NodeTag::Parent) {
      throw MisuseError("commit: named root is not a parent object");
    }
    const std::uint32_t nslots = detail::load_u32(arena.data() + old_parent + 4);
    slots.resize(nslots);
    for (std::uint32_t i = 0; i < nslots; ++i) {
      slots[i] = detail::load_u64(arena.data() + old_parent + 8 + 8 * i);
    }
  } else {
    std::uint64_t high = 0;
    for (const auto& u : updates) {
      high = std::max(high, u.index + 1);
    }
    if (high > 1024) {
      throw MisuseError("commit: parent slot index out of range");
    }
    slots.assign(high, kNullOffset);
  }

  std::set<std::uint64_t> seen;
  for (const auto& u : updates) {
    if (u.index >= slots.size()) {
      throw MisuseError("commit: parent slot index out of range");
    }
    if (!seen.insert(u.index).second) {
      throw MisuseError("commit: duplicate slot index");
    }
    if (slots[u.index] != u.old_child) {
      throw MisuseError("commit: stale base for parent slot");
    }
    slots[u.index] = u.new_child;
  }

  NodeJournal j(arena, refs);
  NodeBuf buf(8 + 8 * slots.size());
  buf.set_u8(0, static_cast<std::uint8_t>(NodeTag::Parent));
  buf.set_u32(4, static_cast<std::uint32_t>(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    buf.set_u64(8 + 8 * i, slots[i]);
  }
  const ArenaOffset new_parent = j.put(buf);
  j.done();

  commit_single(arena, refs, parent_name, old_parent, new_parent, faults);
  return new_parent;
}

void commit_unrelated(Arena& arena, RefTable& refs,
                      std::span<const RootUpdate> updates,
                      const CommitFaults& faults) {
  if (arena.in_commit()) {
    throw MisuseError("commit: already inside a commit");
  }
  if (updates.size() < 2) {
    throw MisuseError("commit: multi-root commit needs at least two roots");
  }
  if (updates.size() > kUndoCapacity) {
    throw CapacityError("commit: too many roots for the undo log");
  }
  std::set<std::string_view> names;
  std::uint64_t new_names = 0;
  for (const auto& u : updates) {
    if (!names.insert(u.name).second) {
      throw MisuseError("commit: duplicate root name");
    }
    require_base(arena, u.name, u.old_droot);
    if (!arena.find_root(u.name)) {
      ++new_names;
    }
  }
  require_directory_room(arena, new_names);

  arena.commit_begin();
  if (!faults.skip_fence) {
    arena.fence();  // shadow phase durable before the log references it
  }

  // log the restore values, then make the log itself durable
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const ArenaOffset field = arena.root_entry_claim(updates[i].name);
    const std::uint64_t rec = kUndoRecordsBase + 16 * i;
    arena.write_u64(rec, field);
    arena.write_u64(rec + 8, updates[i].old_droot);
    arena.flush(rec);
  }
  arena.write_u64(kUndoCountOffset, updates.size());
  arena.flush(kUndoCountOffset);
  arena.fence();

  // publish every root; until the committed mark lands, recovery undoes this
  for (std::size_t i = 0; i < updates.size(); ++i) {
    publish_root(arena, updates[i].name, updates[i].new_droot,
                 faults.torn_root_write && i == 0);
    refs.incref(updates[i].new_droot);
  }
  arena.fence();

  arena.write_u64(kUndoCommittedOffset, 1);
  arena.flush(kUndoCommittedOffset);
  arena.fence();

  // retire the log; durability can ride on the next episode's fence
  arena.write_u64(kUndoCountOffset, 0);
  arena.write_u64(kUndoCommittedOffset, 0);
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const std::uint64_t rec = kUndoRecordsBase + 16 * i;
    arena.write_u64(rec, 0);
    arena.write_u64(rec + 8, 0);
    arena.flush(rec);
  }
  arena.flush(kUndoCountOffset);
  arena.commit_end();

  for (const auto& u : updates) {
    decref_recursive(arena, refs, u.old_droot);
  }
}

FaseScope::FaseScope(Arena& arena, RefTable& refs)
    : arena_(arena), refs_(refs) {
  arena_.set_fase_open(true);
}

FaseScope::~FaseScope() {
  if (!committed_) {
    try {
      for (auto& p : pending_) {
        decref_recursive(arena_, refs_, p.current);
        for (ArenaOffset mid : p.superseded) {
          decref_recursive(arena_, refs_, mid);
        }
      }
      arena_.set_fase_open(false);
    } catch (...) {
      // destruction must not throw; the arena stays recoverable regardless
    }
  }
}

FaseScope::Pending* FaseScope::find(std::string_view name) {
  for (auto& p : pending_) {
    if (p.name == name) {
      return &p;
    }
  }
  return nullptr;
}

void FaseScope::record_create(std::string_view name, ArenaOffset new_droot) {
  record_update(name, kNullOffset, new_droot);
}

void FaseScope::record_update(std::string_view name, ArenaOffset old_droot,
                              ArenaOffset new_droot) {
  if (committed_) {
    throw MisuseError("commit: scope already committed");
  }
  if (Pending* p = find(name)) {
    if (p->current != old_droot) {
      throw MisuseError("commit: update chain mismatch for '" +
                        std::string(name) + "'");
    }
    p->superseded.push_back(p->current);
    p->current = new_droot;
  } else {
    require_base(arena_, name, old_droot);
    pending_.push_back(
        Pending{std::string(name), old_droot, new_droot, {}});
  }
  refs_.incref(new_droot);  // held by the scope until commit or abandon
}

void FaseScope::commit(const CommitFaults& faults) {
  if (committed_) {
    throw MisuseError("commit: scope already committed");
  }
  if (pending_.empty()) {
    throw MisuseError("commit: nothing recorded");
  }
  if (pending_.size() == 1) {
    commit_single(arena_, refs_, pending_[0].name, pending_[0].old_droot,
                  pending_[0].current, faults);
  } else {
    std::vector<RootUpdate> updates;
    updates.reserve(pending_.size());
    for (const auto& p : pending_) {
      updates.push_back(RootUpdate{p.name, p.old_droot, p.current});
    }
    commit_unrelated(arena_, refs_, updates, faults);
  }
  committed_ = true;
  // drop the scope's temporary holds; the directory edge keeps each
  // committed version alive
  for (auto& p : pending_) {
    decref_recursive(arena_, refs_, p.current);
    for (ArenaOffset mid : p.superseded) {
      decref_recursive(arena_, refs_, mid);
    }
  }
  arena_.set_fase_open(false);
}

}  // namespace pmshadow
