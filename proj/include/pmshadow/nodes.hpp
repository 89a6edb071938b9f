#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "pmshadow/arena.hpp"
#include "pmshadow/errors.hpp"
#include "pmshadow/reclaim.hpp"

namespace pmshadow {

// Every node starts with an 8-byte header whose first byte is the tag.
// A node's size and its outgoing references are derivable from the first
// 16 bytes alone, which is what recovery relies on.
enum class NodeTag : std::uint8_t {
  DsRoot = 1,
  ChampBitmap = 2,
  ChampCollision = 3,
  RrbInner = 4,
  RrbLeaf = 5,
  ListNode = 6,
  QueueRep = 7,
  ValueBlock = 8,
  Parent = 9,
};

enum class StructureKind : std::uint8_t {
  Map = 1,
  Set = 2,
  Vector = 3,
  Stack = 4,
  Queue = 5,
};

inline constexpr std::uint8_t kFlagWide = 1;      // entries carry value words
inline constexpr std::uint8_t kFlagIndirect = 2;  // value words reference blocks

inline constexpr std::uint64_t kHashBits = 5;
inline constexpr std::uint64_t kHashFanout = 32;
inline constexpr std::uint64_t kCollisionDepth = 7;

namespace detail {

inline std::uint64_t load_u64(const std::uint8_t* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return v;
}

inline std::uint32_t load_u32(const std::uint8_t* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace detail

inline std::uint64_t mix_hash(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline bool valid_node_tag(std::uint8_t tag) {
  return tag >= static_cast<std::uint8_t>(NodeTag::DsRoot) &&
         tag <= static_cast<std::uint8_t>(NodeTag::Parent);
}

inline NodeTag node_tag(const Arena& a, ArenaOffset off) {
  const std::uint8_t tag = a.data()[off];
  if (!valid_node_tag(tag)) {
    throw CorruptionError("node: invalid tag");
  }
  return static_cast<NodeTag>(tag);
}

// Structure handle stored behind every named root. Offset 0 stands for the
// empty structure; a non-empty one points here first.
struct DsRootView {
  StructureKind kind;
  std::uint8_t flags;
  std::uint8_t radix_bits;
  ArenaOffset root;
  std::uint64_t size;
};

inline constexpr std::uint64_t kDsRootSize = 24;

inline DsRootView read_ds_root(const Arena& a, ArenaOffset off) {
  const std::uint8_t* p = a.data() + off;
  if (static_cast<NodeTag>(p[0]) != NodeTag::DsRoot) {
    throw CorruptionError("node: expected a structure root");
  }
  DsRootView v;
  v.kind = static_cast<StructureKind>(p[1]);
  v.flags = p[2];
  v.radix_bits = p[3];
  v.root = detail::load_u64(p + 8);
  v.size = detail::load_u64(p + 16);
  return v;
}

std::uint64_t node_size_from_header(const Arena& a, ArenaOffset off);

// Calls fn once per outgoing reference of the node at off.
template <typename F>
void for_each_child(const Arena& a, ArenaOffset off, F&& fn) {
  const std::uint8_t* p = a.data() + off;
  switch (static_cast<NodeTag>(p[0])) {
    case NodeTag::DsRoot: {
      const std::uint64_t root = detail::load_u64(p + 8);
      if (root != kNullOffset) fn(root);
      return;
    }
    case NodeTag::ChampBitmap: {
      const std::uint8_t flags = p[2];
      const std::uint64_t maps = detail::load_u64(p + 8);
      const std::uint32_t datamap = static_cast<std::uint32_t>(maps);
      const std::uint32_t nodemap = static_cast<std::uint32_t>(maps >> 32);
      const std::uint64_t entry_size = (flags & kFlagWide) ? 16 : 8;
      const std::uint64_t entries = std::popcount(datamap);
      const std::uint64_t children = std::popcount(nodemap);
      if (flags & kFlagIndirect) {
        for (std::uint64_t i = 0; i < entries; ++i) {
          fn(detail::load_u64(p + 16 + i * entry_size + 8));
        }
      }
      const std::uint64_t child_base = 16 + entries * entry_size;
      for (std::uint64_t i = 0; i < children; ++i) {
        fn(detail::load_u64(p + child_base + i * 8));
      }
      return;
    }
    case NodeTag::ChampCollision: {
      const std::uint8_t flags = p[2];
      if (flags & kFlagIndirect) {
        const std::uint32_t count = detail::load_u32(p + 4);
        for (std::uint32_t i = 0; i < count; ++i) {
          fn(detail::load_u64(p + 8 + i * 16 + 8));
        }
      }
      return;
    }
    case NodeTag::RrbInner: {
      const std::uint8_t nslots = p[1];
      for (std::uint8_t i = 0; i < nslots; ++i) {
        fn(detail::load_u64(p + 16 + i * 8));
      }
      return;
    }
    case NodeTag::RrbLeaf:
    case NodeTag::ValueBlock:
      return;
    case NodeTag::ListNode: {
      const std::uint64_t next = detail::load_u64(p + 16);
      if (next != kNullOffset) fn(next);
      return;
    }
    case NodeTag::QueueRep: {
      const std::uint64_t front = detail::load_u64(p + 8);
      const std::uint64_t back = detail::load_u64(p + 16);
      if (front != kNullOffset) fn(front);
      if (back != kNullOffset) fn(back);
      return;
    }
    case NodeTag::Parent: {
      const std::uint32_t nslots = detail::load_u32(p + 4);
      for (std::uint32_t i = 0; i < nslots; ++i) {
        const std::uint64_t slot = detail::load_u64(p + 8 + i * 8);
        if (slot != kNullOffset) fn(slot);
      }
      return;
    }
  }
  throw CorruptionError("node: invalid tag");
}

// Fixed-size scratch image of a node under construction.
class NodeBuf {
 public:
  explicit NodeBuf(std::uint64_t size) : bytes_(size, 0) {}

  void set_u8(std::uint64_t at, std::uint8_t v) { bytes_[at] = v; }
  void set_u32(std::uint64_t at, std::uint32_t v) {
    std::memcpy(bytes_.data() + at, &v, 4);
  }
  void set_u64(std::uint64_t at, std::uint64_t v) {
    std::memcpy(bytes_.data() + at, &v, 8);
  }
  void set_bytes(std::uint64_t at, const void* src, std::uint64_t n) {
    std::memcpy(bytes_.data() + at, src, n);
  }
  std::span<const std::uint8_t> view() const { return bytes_; }
  std::uint64_t size() const { return bytes_.size(); }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Collects the fresh nodes of one out-of-place update. If the update
// completes, done() charges one in-edge per reference leaving a fresh
// node; if it unwinds first, the destructor frees everything allocated.
class NodeJournal {
 public:
  NodeJournal(Arena& a, RefTable& refs) : arena_(&a), refs_(&refs) {}

  NodeJournal(const NodeJournal&) = delete;
  NodeJournal& operator=(const NodeJournal&) = delete;

  ~NodeJournal() {
    if (done_) {
      return;
    }
    for (auto it = fresh_.rbegin(); it != fresh_.rend(); ++it) {
      try {
        arena_->free(*it);
      } catch (...) {
      }
    }
  }

  ArenaOffset put(const NodeBuf& buf) {
    const auto bytes = buf.view();
    const ArenaOffset off = arena_->alloc(bytes.size());
    arena_->write(off, bytes.data(), bytes.size());
    arena_->flush_range(off, bytes.size());
    fresh_.push_back(off);
    return off;
  }

  void done() {
    for (ArenaOffset off : fresh_) {
      for_each_child(*arena_, off,
                     [this](ArenaOffset child) { refs_->incref(child); });
    }
    done_ = true;
  }

  // Frees a fresh node the update decided against keeping.
  void forget(ArenaOffset off) {
    for (auto it = fresh_.rbegin(); it != fresh_.rend(); ++it) {
      if (*it == off) {
        fresh_.erase(std::next(it).base());
        arena_->free(off);
        return;
      }
    }
    throw MisuseError("journal: offset is not a fresh node");
  }

  const std::vector<ArenaOffset>& fresh() const { return fresh_; }

 private:
  Arena* arena_;
  RefTable* refs_;
  std::vector<ArenaOffset> fresh_;
  bool done_ = false;
};

ArenaOffset put_ds_root(NodeJournal& j, StructureKind kind, std::uint8_t flags,
                        std::uint8_t radix_bits, ArenaOffset root,
                        std::uint64_t size);

}  // namespace pmshadow
