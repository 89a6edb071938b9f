#include "pmshadow/map.hpp"

#include <algorithm>
#include <bit>

#include "pmshadow/errors.hpp"
#include "pmshadow/nodes.hpp"

namespace pmshadow {

namespace {

std::uint64_t round8(std::uint64_t n) { return (n + 7) & ~std::uint64_t{7}; }

std::uint32_t slice(std::uint64_t h, std::uint8_t level) {
  return static_cast<std::uint32_t>(h >> (kHashBits * level)) &
         (kHashFanout - 1);
}

struct Entry {
  std::uint64_t key;
  std::uint64_t vword;
};

std::uint64_t entry_size(std::uint8_t flags) {
  return (flags & kFlagWide) ? 16 : 8;
}

struct BitmapNode {
  std::uint8_t level;
  std::uint32_t datamap;
  std::uint32_t nodemap;
  std::vector<Entry> entries;
  std::vector<ArenaOffset> children;
};

BitmapNode read_bitmap(const Arena& a, ArenaOffset off, std::uint8_t flags) {
  const std::uint8_t* p = a.data() + off;
  if (static_cast<NodeTag>(p[0]) != NodeTag::ChampBitmap) {
    throw CorruptionError("map: expected a bitmap node");
  }
  BitmapNode n;
  n.level = p[1];
  const std::uint64_t maps = detail::load_u64(p + 8);
  n.datamap = static_cast<std::uint32_t>(maps);
  n.nodemap = static_cast<std::uint32_t>(maps >> 32);
  const std::uint64_t esz = entry_size(flags);
  const std::uint32_t pcount = std::popcount(n.datamap);
  const std::uint32_t qcount = std::popcount(n.nodemap);
  n.entries.reserve(pcount);
  for (std::uint32_t i = 0; i < pcount; ++i) {
    Entry e{detail::load_u64(p + 16 + i * esz), 0};
    if (flags & kFlagWide) {
      e.vword = detail::load_u64(p + 16 + i * esz + 8);
    }
    n.entries.push_back(e);
  }
  const std::uint64_t child_base = 16 + pcount * esz;
  n.children.reserve(qcount);
  for (std::uint32_t i = 0; i < qcount; ++i) {
    n.children.push_back(detail::load_u64(p + child_base + i * 8));
  }
  return n;
}

ArenaOffset put_bitmap(NodeJournal& j, std::uint8_t flags, const BitmapNode& n) {
  const std::uint64_t esz = entry_size(flags);
  NodeBuf b(16 + n.entries.size() * esz + n.children.size() * 8);
  b.set_u8(0, static_cast<std::uint8_t>(NodeTag::ChampBitmap));
  b.set_u8(1, n.level);
  b.set_u8(2, flags);
  b.set_u64(8, n.datamap | (std::uint64_t{n.nodemap} << 32));
  for (std::size_t i = 0; i < n.entries.size(); ++i) {
    b.set_u64(16 + i * esz, n.entries[i].key);
    if (flags & kFlagWide) {
      b.set_u64(16 + i * esz + 8, n.entries[i].vword);
    }
  }
  const std::uint64_t child_base = 16 + n.entries.size() * esz;
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    b.set_u64(child_base + i * 8, n.children[i]);
  }
  return j.put(b);
}

std::vector<Entry> read_collision(const Arena& a, ArenaOffset off,
                                  std::uint8_t flags) {
  const std::uint8_t* p = a.data() + off;
  if (static_cast<NodeTag>(p[0]) != NodeTag::ChampCollision) {
    throw CorruptionError("map: expected a collision node");
  }
  const std::uint32_t count = detail::load_u32(p + 4);
  const std::uint64_t esz = entry_size(flags);
  std::vector<Entry> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e{detail::load_u64(p + 8 + i * esz), 0};
    if (flags & kFlagWide) {
      e.vword = detail::load_u64(p + 8 + i * esz + 8);
    }
    out.push_back(e);
  }
  return out;
}

ArenaOffset put_collision(NodeJournal& j, std::uint8_t flags,
                          const std::vector<Entry>& entries) {
  const std::uint64_t esz = entry_size(flags);
  NodeBuf b(8 + entries.size() * esz);
  b.set_u8(0, static_cast<std::uint8_t>(NodeTag::ChampCollision));
  b.set_u8(1, kCollisionDepth);
  b.set_u8(2, flags);
  b.set_u32(4, static_cast<std::uint32_t>(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    b.set_u64(8 + i * esz, entries[i].key);
    if (flags & kFlagWide) {
      b.set_u64(8 + i * esz + 8, entries[i].vword);
    }
  }
  return j.put(b);
}

// Collision entries stay sorted by key so the tree shape is a function of
// the contents alone, independent of insertion order.
ArenaOffset merge_entries(NodeJournal& j, std::uint8_t flags,
                          std::uint8_t level, const Entry& e1, std::uint64_t h1,
                          const Entry& e2, std::uint64_t h2) {
  if (level >= kCollisionDepth) {
    std::vector<Entry> es{e1, e2};
    if (es[1].key < es[0].key) {
      std::swap(es[0], es[1]);
    }
    return put_collision(j, flags, es);
  }
  const std::uint32_t i1 = slice(h1, level);
  const std::uint32_t i2 = slice(h2, level);
  BitmapNode n;
  n.level = level;
  if (i1 == i2) {
    n.datamap = 0;
    n.nodemap = 1u << i1;
    n.children.push_back(merge_entries(j, flags, level + 1, e1, h1, e2, h2));
  } else {
    n.datamap = (1u << i1) | (1u << i2);
    n.nodemap = 0;
    if (i1 < i2) {
      n.entries = {e1, e2};
    } else {
      n.entries = {e2, e1};
    }
  }
  return put_bitmap(j, flags, n);
}

struct InsertResult {
  ArenaOffset node;
  bool replaced;
};

InsertResult champ_insert(Arena& a, NodeJournal& j, std::uint8_t flags,
                          ArenaOffset node, std::uint8_t level, std::uint64_t h,
                          std::uint64_t key, std::uint64_t vword) {
  if (level >= kCollisionDepth) {
    auto entries = read_collision(a, node, flags);
    auto it = std::lower_bound(
        entries.begin(), entries.end(), key,
        [](const Entry& e, std::uint64_t k) { return e.key < k; });
    bool replaced = it != entries.end() && it->key == key;
    if (replaced) {
      it->vword = vword;
    } else {
      entries.insert(it, Entry{key, vword});
    }
    return {put_collision(j, flags, entries), replaced};
  }

  BitmapNode n = read_bitmap(a, node, flags);
  const std::uint32_t idx = slice(h, level);
  const std::uint32_t bit = 1u << idx;
  if (n.datamap & bit) {
    const std::uint32_t pos = std::popcount(n.datamap & (bit - 1));
    if (n.entries[pos].key == key) {
      n.entries[pos].vword = vword;
      return {put_bitmap(j, flags, n), true};
    }
    const Entry old = n.entries[pos];
    const ArenaOffset sub = merge_entries(j, flags, level + 1, old,
                                          mix_hash(old.key), Entry{key, vword}, h);
    n.datamap &= ~bit;
    n.entries.erase(n.entries.begin() + pos);
    n.nodemap |= bit;
    const std::uint32_t cpos = std::popcount(n.nodemap & (bit - 1));
    n.children.insert(n.children.begin() + cpos, sub);
    return {put_bitmap(j, flags, n), false};
  }
  if (n.nodemap & bit) {
    const std::uint32_t cpos = std::popcount(n.nodemap & (bit - 1));
    const InsertResult r = champ_insert(a, j, flags, n.children[cpos],
                                        level + 1, h, key, vword);
    n.children[cpos] = r.node;
    return {put_bitmap(j, flags, n), r.replaced};
  }
  const std::uint32_t pos = std::popcount(n.datamap & (bit - 1));
  n.datamap |= bit;
  n.entries.insert(n.entries.begin() + pos, Entry{key, vword});
  return {put_bitmap(j, flags, n), false};
}

struct EraseResult {
  enum Kind { NotFound, Sub, InlineEntry } kind;
  ArenaOffset node;
  Entry entry;
};

EraseResult champ_erase(Arena& a, NodeJournal& j, std::uint8_t flags,
                        ArenaOffset node, std::uint8_t level, std::uint64_t h,
                        std::uint64_t key) {
  if (level >= kCollisionDepth) {
    auto entries = read_collision(a, node, flags);
    auto it = std::lower_bound(
        entries.begin(), entries.end(), key,
        [](const Entry& e, std::uint64_t k) { return e.key < k; });
    if (it == entries.end() || it->key != key) {
      return {EraseResult::NotFound, kNullOffset, {}};
    }
    entries.erase(it);
    if (entries.size() == 1) {
      return {EraseResult::InlineEntry, kNullOffset, entries[0]};
    }
    return {EraseResult::Sub, put_collision(j, flags, entries), {}};
  }

  BitmapNode n = read_bitmap(a, node, flags);
  const std::uint32_t idx = slice(h, level);
  const std::uint32_t bit = 1u << idx;
  if (n.datamap & bit) {
    const std::uint32_t pos = std::popcount(n.datamap & (bit - 1));
    if (n.entries[pos].key != key) {
      return {EraseResult::NotFound, kNullOffset, {}};
    }
    n.datamap &= ~bit;
    n.entries.erase(n.entries.begin() + pos);
    if (level > 0 && n.entries.size() == 1 && n.children.empty()) {
      return {EraseResult::InlineEntry, kNullOffset, n.entries[0]};
    }
    if (n.entries.empty() && n.children.empty()) {
      return {EraseResult::Sub, kNullOffset, {}};
    }
    return {EraseResult::Sub, put_bitmap(j, flags, n), {}};
  }
  if (n.nodemap & bit) {
    const std::uint32_t cpos = std::popcount(n.nodemap & (bit - 1));
    const EraseResult r =
        champ_erase(a, j, flags, n.children[cpos], level + 1, h, key);
    if (r.kind == EraseResult::NotFound) {
      return r;
    }
    if (r.kind == EraseResult::Sub) {
      n.children[cpos] = r.node;
      return {EraseResult::Sub, put_bitmap(j, flags, n), {}};
    }
    n.nodemap &= ~bit;
    n.children.erase(n.children.begin() + cpos);
    n.datamap |= bit;
    const std::uint32_t pos = std::popcount(n.datamap & (bit - 1));
    n.entries.insert(n.entries.begin() + pos, r.entry);
    if (level > 0 && n.entries.size() == 1 && n.children.empty()) {
      return {EraseResult::InlineEntry, kNullOffset, n.entries[0]};
    }
    return {EraseResult::Sub, put_bitmap(j, flags, n), {}};
  }
  return {EraseResult::NotFound, kNullOffset, {}};
}

const std::uint8_t* champ_find(const Arena& a, std::uint8_t flags,
                               ArenaOffset root, std::uint64_t key) {
  const std::uint64_t h = mix_hash(key);
  const std::uint64_t esz = entry_size(flags);
  ArenaOffset node = root;
  for (std::uint8_t level = 0; level < kCollisionDepth; ++level) {
    const std::uint8_t* p = a.data() + node;
    const std::uint64_t maps = detail::load_u64(p + 8);
    const std::uint32_t datamap = static_cast<std::uint32_t>(maps);
    const std::uint32_t nodemap = static_cast<std::uint32_t>(maps >> 32);
    const std::uint32_t bit = 1u << slice(h, level);
    if (datamap & bit) {
      const std::uint32_t pos = std::popcount(datamap & (bit - 1));
      const std::uint8_t* entry = p + 16 + pos * esz;
      return detail::load_u64(entry) == key ? entry : nullptr;
    }
    if (!(nodemap & bit)) {
      return nullptr;
    }
    const std::uint32_t cpos = std::popcount(nodemap & (bit - 1));
    node = detail::load_u64(p + 16 + std::popcount(datamap) * esz + cpos * 8);
  }
  const std::uint8_t* p = a.data() + node;
  const std::uint32_t count = detail::load_u32(p + 4);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* entry = p + 8 + i * esz;
    if (detail::load_u64(entry) == key) {
      return entry;
    }
  }
  return nullptr;
}

template <typename F>
void champ_walk(const Arena& a, std::uint8_t flags, ArenaOffset node,
                std::uint8_t level, F&& fn) {
  if (level >= kCollisionDepth) {
    for (const Entry& e : read_collision(a, node, flags)) {
      fn(e);
    }
    return;
  }
  const BitmapNode n = read_bitmap(a, node, flags);
  for (const Entry& e : n.entries) {
    fn(e);
  }
  for (ArenaOffset child : n.children) {
    champ_walk(a, flags, child, level + 1, fn);
  }
}

ArenaOffset put_value_block(NodeJournal& j, std::span<const std::uint8_t> bytes) {
  NodeBuf b(8 + round8(bytes.size()));
  b.set_u8(0, static_cast<std::uint8_t>(NodeTag::ValueBlock));
  b.set_u32(4, static_cast<std::uint32_t>(bytes.size()));
  if (!bytes.empty()) {
    b.set_bytes(8, bytes.data(), bytes.size());
  }
  return j.put(b);
}

std::vector<std::uint8_t> read_value(const Arena& a, std::uint8_t flags,
                                     std::uint64_t vword) {
  if (!(flags & kFlagIndirect)) {
    std::vector<std::uint8_t> out(8);
    std::memcpy(out.data(), &vword, 8);
    return out;
  }
  const std::uint8_t* p = a.data() + vword;
  if (static_cast<NodeTag>(p[0]) != NodeTag::ValueBlock) {
    throw CorruptionError("map: expected a value block");
  }
  const std::uint32_t len = detail::load_u32(p + 4);
  return std::vector<std::uint8_t>(p + 8, p + 8 + len);
}

DsRootView checked_root(const Arena& a, ArenaOffset droot, StructureKind kind,
                        std::uint8_t flags) {
  const DsRootView v = read_ds_root(a, droot);
  if (v.kind != kind || v.flags != flags) {
    throw MisuseError("map: structure kind mismatch at root");
  }
  return v;
}

}  // namespace

ArenaOffset PMap::insert(ArenaOffset droot, std::uint64_t key,
                         std::span<const std::uint8_t> value) {
  const std::uint8_t flags =
      kFlagWide | (indirect_ ? kFlagIndirect : std::uint8_t{0});
  if (!indirect_ && value.size() != 8) {
    throw MisuseError("map: inline values must be exactly 8 bytes");
  }
  NodeJournal j(*arena_, *refs_);
  std::uint64_t vword = 0;
  if (indirect_) {
    vword = put_value_block(j, value);
  } else {
    std::memcpy(&vword, value.data(), 8);
  }

  const std::uint64_t h = mix_hash(key);
  ArenaOffset new_root;
  std::uint64_t new_size;
  if (droot == kNullOffset) {
    BitmapNode n;
    n.level = 0;
    n.datamap = 1u << slice(h, 0);
    n.nodemap = 0;
    n.entries.push_back(Entry{key, vword});
    new_root = put_bitmap(j, flags, n);
    new_size = 1;
  } else {
    const DsRootView v = checked_root(*arena_, droot, StructureKind::Map, flags);
    const InsertResult r =
        champ_insert(*arena_, j, flags, v.root, 0, h, key, vword);
    new_root = r.node;
    new_size = v.size + (r.replaced ? 0 : 1);
  }
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Map, flags, 0, new_root, new_size);
  j.done();
  return out;
}

ArenaOffset PMap::insert_u64(ArenaOffset droot, std::uint64_t key,
                             std::uint64_t value) {
  std::uint8_t bytes[8];
  std::memcpy(bytes, &value, 8);
  return insert(droot, key, bytes);
}

ArenaOffset PMap::erase(ArenaOffset droot, std::uint64_t key) {
  if (droot == kNullOffset) {
    return droot;
  }
  const std::uint8_t flags =
      kFlagWide | (indirect_ ? kFlagIndirect : std::uint8_t{0});
  const DsRootView v = checked_root(*arena_, droot, StructureKind::Map, flags);
  NodeJournal j(*arena_, *refs_);
  const EraseResult r =
      champ_erase(*arena_, j, flags, v.root, 0, mix_hash(key), key);
  if (r.kind == EraseResult::NotFound) {
    j.done();
    return droot;
  }
  ArenaOffset new_root = r.node;
  if (r.kind == EraseResult::InlineEntry) {
    BitmapNode n;
    n.level = 0;
    n.datamap = 1u << slice(mix_hash(r.entry.key), 0);
    n.nodemap = 0;
    n.entries.push_back(r.entry);
    new_root = put_bitmap(j, flags, n);
  }
  if (new_root == kNullOffset) {
    j.done();
    return kNullOffset;
  }
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Map, flags, 0, new_root, v.size - 1);
  j.done();
  return out;
}

bool PMap::contains(ArenaOffset droot, std::uint64_t key) const {
  if (droot == kNullOffset) {
    return false;
  }
  const std::uint8_t flags =
      kFlagWide | (indirect_ ? kFlagIndirect : std::uint8_t{0});
  const DsRootView v = checked_root(*arena_, droot, StructureKind::Map, flags);
  return champ_find(*arena_, flags, v.root, key) != nullptr;
}

std::optional<std::vector<std::uint8_t>> PMap::get(ArenaOffset droot,
                                                   std::uint64_t key) const {
  if (droot == kNullOffset) {
    return std::nullopt;
  }
  const std::uint8_t flags =
      kFlagWide | (indirect_ ? kFlagIndirect : std::uint8_t{0});
  const DsRootView v = checked_root(*arena_, droot, StructureKind::Map, flags);
  const std::uint8_t* entry = champ_find(*arena_, flags, v.root, key);
  if (entry == nullptr) {
    return std::nullopt;
  }
  return read_value(*arena_, flags, detail::load_u64(entry + 8));
}

std::uint64_t PMap::size(ArenaOffset droot) const {
  if (droot == kNullOffset) {
    return 0;
  }
  const std::uint8_t flags =
      kFlagWide | (indirect_ ? kFlagIndirect : std::uint8_t{0});
  return checked_root(*arena_, droot, StructureKind::Map, flags).size;
}

std::vector<std::pair<std::uint64_t, std::vector<std::uint8_t>>> PMap::items(
    ArenaOffset droot) const {
  std::vector<std::pair<std::uint64_t, std::vector<std::uint8_t>>> out;
  if (droot == kNullOffset) {
    return out;
  }
  const std::uint8_t flags =
      kFlagWide | (indirect_ ? kFlagIndirect : std::uint8_t{0});
  const DsRootView v = checked_root(*arena_, droot, StructureKind::Map, flags);
  champ_walk(*arena_, flags, v.root, 0, [&](const Entry& e) {
    out.emplace_back(e.key, read_value(*arena_, flags, e.vword));
  });
  return out;
}

ArenaOffset PSet::insert(ArenaOffset droot, std::uint64_t key) {
  NodeJournal j(*arena_, *refs_);
  const std::uint64_t h = mix_hash(key);
  ArenaOffset new_root;
  std::uint64_t new_size;
  if (droot == kNullOffset) {
    BitmapNode n;
    n.level = 0;
    n.datamap = 1u << slice(h, 0);
    n.nodemap = 0;
    n.entries.push_back(Entry{key, 0});
    new_root = put_bitmap(j, 0, n);
    new_size = 1;
  } else {
    const DsRootView v = checked_root(*arena_, droot, StructureKind::Set, 0);
    const InsertResult r = champ_insert(*arena_, j, 0, v.root, 0, h, key, 0);
    if (r.replaced) {
      // key already present: nothing changed, discard the rebuilt path
      return droot;
    }
    new_root = r.node;
    new_size = v.size + 1;
  }
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Set, 0, 0, new_root, new_size);
  j.done();
  return out;
}

ArenaOffset PSet::erase(ArenaOffset droot, std::uint64_t key) {
  if (droot == kNullOffset) {
    return droot;
  }
  const DsRootView v = checked_root(*arena_, droot, StructureKind::Set, 0);
  NodeJournal j(*arena_, *refs_);
  const EraseResult r = champ_erase(*arena_, j, 0, v.root, 0, mix_hash(key), key);
  if (r.kind == EraseResult::NotFound) {
    j.done();
    return droot;
  }
  ArenaOffset new_root = r.node;
  if (r.kind == EraseResult::InlineEntry) {
    BitmapNode n;
    n.level = 0;
    n.datamap = 1u << slice(mix_hash(r.entry.key), 0);
    n.nodemap = 0;
    n.entries.push_back(r.entry);
    new_root = put_bitmap(j, 0, n);
  }
  if (new_root == kNullOffset) {
    j.done();
    return kNullOffset;
  }
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Set, 0, 0, new_root, v.size - 1);
  j.done();
  return out;
}

bool PSet::contains(ArenaOffset droot, std::uint64_t key) const {
  if (droot == kNullOffset) {
    return false;
  }
  const DsRootView v = checked_root(*arena_, droot, StructureKind::Set, 0);
  return champ_find(*arena_, 0, v.root, key) != nullptr;
}

std::uint64_t PSet::size(ArenaOffset droot) const {
  if (droot == kNullOffset) {
    return 0;
  }
  return checked_root(*arena_, droot, StructureKind::Set, 0).size;
}

std::vector<std::uint64_t> PSet::items(ArenaOffset droot) const {
  std::vector<std::uint64_t> out;
  if (droot == kNullOffset) {
    return out;
  }
  const DsRootView v = checked_root(*arena_, droot, StructureKind::Set, 0);
  champ_walk(*arena_, 0, v.root, 0,
             [&](const Entry& e) { out.push_back(e.key); });
  return out;
}

}  // namespace pmshadow
