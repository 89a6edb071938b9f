#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pmshadow/arena.hpp"
#include "pmshadow/reclaim.hpp"

namespace pmshadow {

// Deliberate protocol damage, for validating the detectors.
struct CommitFaults {
  bool skip_fence = false;       // omit the pre-publication fence
  bool torn_root_write = false;  // publish the root as two half-words
};

// Publishes new_droot under name with a single fence. The caller passes the
// droot it based its update on; a mismatch with the stored root means a
// concurrent update slipped in. Drops the in-edge on old_droot afterwards,
// reclaiming whatever the new version no longer shares.
void commit_single(Arena& arena, RefTable& refs, std::string_view name,
                   ArenaOffset old_droot, ArenaOffset new_droot,
                   const CommitFaults& faults = {});

// One slot replacement inside a parent object.
struct SlotUpdate {
  std::uint64_t index;
  ArenaOffset old_child;
  ArenaOffset new_child;
};

// Atomically switches several structures that hang off one named parent
// object: builds a fresh parent with the updated slots and publishes it with
// commit_single. Passing old_parent == 0 creates the parent; every update
// must then carry old_child == 0 and the slot count becomes the highest
// index + 1. Returns the new parent's offset.
ArenaOffset commit_siblings(Arena& arena, RefTable& refs,
                            std::string_view parent_name,
                            ArenaOffset old_parent,
                            std::span<const SlotUpdate> updates,
                            const CommitFaults& faults = {});

// One named root changed by a multi-root commit.
struct RootUpdate {
  std::string name;
  ArenaOffset old_droot;
  ArenaOffset new_droot;
};

// Atomically switches unrelated named roots using the undo log. Costs four
// fences. Interrupted runs are rolled back (or their log cleared) the next
// time the arena is recovered.
void commit_unrelated(Arena& arena, RefTable& refs,
                      std::span<const RootUpdate> updates,
                      const CommitFaults& faults = {});

// Collects the root switches of one update episode and commits them together:
// one update through commit_single, several through commit_unrelated.
// Destruction without commit() abandons every recorded version.
class FaseScope {
 public:
  FaseScope(Arena& arena, RefTable& refs);
  ~FaseScope();
  FaseScope(const FaseScope&) = delete;
  FaseScope& operator=(const FaseScope&) = delete;

  void record_create(std::string_view name, ArenaOffset new_droot);
  void record_update(std::string_view name, ArenaOffset old_droot,
                     ArenaOffset new_droot);
  void commit(const CommitFaults& faults = {});

 private:
  struct Pending {
    std::string name;
    ArenaOffset old_droot;
    ArenaOffset current;
    std::vector<ArenaOffset> superseded;
  };

  Pending* find(std::string_view name);

  Arena& arena_;
  RefTable& refs_;
  std::vector<Pending> pending_;
  bool committed_ = false;
};

}  // namespace pmshadow
