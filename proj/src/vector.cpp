#include "pmshadow/vector.hpp"

#include "pmshadow/errors.hpp"
#include "pmshadow/nodes.hpp"

namespace pmshadow {

namespace {

struct RrbNode {
  bool leaf;
  std::uint64_t count;
  std::vector<std::uint64_t> slots;  // children or elements
};

RrbNode read_rrb(const Arena& a, ArenaOffset off) {
  const std::uint8_t* p = a.data() + off;
  const NodeTag tag = static_cast<NodeTag>(p[0]);
  if (tag != NodeTag::RrbInner && tag != NodeTag::RrbLeaf) {
    throw CorruptionError("vector: expected a tree node");
  }
  RrbNode n;
  n.leaf = tag == NodeTag::RrbLeaf;
  n.count = detail::load_u64(p + 8);
  const std::uint8_t nslots = p[1];
  n.slots.reserve(nslots);
  for (std::uint8_t i = 0; i < nslots; ++i) {
    n.slots.push_back(detail::load_u64(p + 16 + i * 8));
  }
  return n;
}

ArenaOffset put_rrb(NodeJournal& j, const RrbNode& n) {
  NodeBuf b(16 + n.slots.size() * 8);
  b.set_u8(0, static_cast<std::uint8_t>(n.leaf ? NodeTag::RrbLeaf
                                               : NodeTag::RrbInner));
  b.set_u8(1, static_cast<std::uint8_t>(n.slots.size()));
  b.set_u64(8, n.count);
  for (std::size_t i = 0; i < n.slots.size(); ++i) {
    b.set_u64(16 + i * 8, n.slots[i]);
  }
  return j.put(b);
}

// Single-path subtree holding one element, level levels above the leaves.
ArenaOffset make_chain(NodeJournal& j, std::uint8_t level, std::uint64_t value) {
  RrbNode n;
  n.count = 1;
  if (level == 0) {
    n.leaf = true;
    n.slots.push_back(value);
  } else {
    n.leaf = false;
    n.slots.push_back(make_chain(j, level - 1, value));
  }
  return put_rrb(j, n);
}

std::uint8_t tree_depth(std::uint64_t size, std::uint8_t radix_bits) {
  std::uint8_t depth = 1;
  std::uint64_t cap = 1ull << radix_bits;
  while (cap < size) {
    cap <<= radix_bits;
    ++depth;
  }
  return depth;
}

std::uint64_t tree_capacity(std::uint8_t depth, std::uint8_t radix_bits) {
  return 1ull << (radix_bits * depth);
}

ArenaOffset push_rec(const Arena& a, NodeJournal& j, ArenaOffset node,
                     std::uint8_t level, std::uint64_t index,
                     std::uint64_t value, std::uint8_t radix_bits) {
  RrbNode n = read_rrb(a, node);
  n.count += 1;
  if (level == 0) {
    n.slots.push_back(value);
    return put_rrb(j, n);
  }
  const std::uint64_t mask = (1ull << radix_bits) - 1;
  const std::uint64_t ci = (index >> (radix_bits * level)) & mask;
  if (ci < n.slots.size()) {
    n.slots[ci] = push_rec(a, j, n.slots[ci], level - 1, index, value, radix_bits);
  } else {
    n.slots.push_back(make_chain(j, level - 1, value));
  }
  return put_rrb(j, n);
}

ArenaOffset update_rec(const Arena& a, NodeJournal& j, ArenaOffset node,
                       std::uint8_t level, std::uint64_t index,
                       std::uint64_t value, std::uint8_t radix_bits) {
  RrbNode n = read_rrb(a, node);
  const std::uint64_t mask = (1ull << radix_bits) - 1;
  if (level == 0) {
    n.slots[index & mask] = value;
    return put_rrb(j, n);
  }
  const std::uint64_t ci = (index >> (radix_bits * level)) & mask;
  n.slots[ci] = update_rec(a, j, n.slots[ci], level - 1, index, value, radix_bits);
  return put_rrb(j, n);
}

void items_rec(const Arena& a, ArenaOffset node,
               std::vector<std::uint64_t>& out) {
  const RrbNode n = read_rrb(a, node);
  if (n.leaf) {
    out.insert(out.end(), n.slots.begin(), n.slots.end());
    return;
  }
  for (std::uint64_t child : n.slots) {
    items_rec(a, child, out);
  }
}

}  // namespace

PVector::PVector(Arena& arena, RefTable& refs, std::uint8_t radix_bits)
    : arena_(&arena), refs_(&refs), radix_bits_(radix_bits) {
  if (radix_bits == 0 || radix_bits > 5) {
    throw MisuseError("vector: radix bits must be 1..5");
  }
}

ArenaOffset PVector::push_back(ArenaOffset droot, std::uint64_t value) {
  NodeJournal j(*arena_, *refs_);
  ArenaOffset new_root;
  std::uint64_t new_size;
  if (droot == kNullOffset) {
    new_root = make_chain(j, 0, value);
    new_size = 1;
  } else {
    const DsRootView v = read_ds_root(*arena_, droot);
    if (v.kind != StructureKind::Vector || v.radix_bits != radix_bits_) {
      throw MisuseError("vector: structure kind mismatch at root");
    }
    const std::uint8_t depth = tree_depth(v.size, radix_bits_);
    if (v.size == tree_capacity(depth, radix_bits_)) {
      RrbNode root;
      root.leaf = false;
      root.count = v.size + 1;
      root.slots = {v.root, make_chain(j, depth - 1, value)};
      new_root = put_rrb(j, root);
    } else {
      new_root = push_rec(*arena_, j, v.root, depth - 1, v.size, value,
                          radix_bits_);
    }
    new_size = v.size + 1;
  }
  const ArenaOffset out = put_ds_root(j, StructureKind::Vector, 0, radix_bits_,
                                      new_root, new_size);
  j.done();
  return out;
}

ArenaOffset PVector::update(ArenaOffset droot, std::uint64_t index,
                            std::uint64_t value) {
  if (droot == kNullOffset) {
    throw MisuseError("vector: update index out of range");
  }
  const DsRootView v = read_ds_root(*arena_, droot);
  if (v.kind != StructureKind::Vector || v.radix_bits != radix_bits_) {
    throw MisuseError("vector: structure kind mismatch at root");
  }
  if (index >= v.size) {
    throw MisuseError("vector: update index out of range");
  }
  NodeJournal j(*arena_, *refs_);
  const std::uint8_t depth = tree_depth(v.size, radix_bits_);
  const ArenaOffset new_root =
      update_rec(*arena_, j, v.root, depth - 1, index, value, radix_bits_);
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Vector, 0, radix_bits_, new_root, v.size);
  j.done();
  return out;
}

std::uint64_t PVector::get(ArenaOffset droot, std::uint64_t index) const {
  if (droot == kNullOffset) {
    throw MisuseError("vector: index out of range");
  }
  const DsRootView v = read_ds_root(*arena_, droot);
  if (v.kind != StructureKind::Vector || v.radix_bits != radix_bits_) {
    throw MisuseError("vector: structure kind mismatch at root");
  }
  if (index >= v.size) {
    throw MisuseError("vector: index out of range");
  }
  const std::uint64_t mask = (1ull << radix_bits_) - 1;
  ArenaOffset node = v.root;
  for (std::uint8_t level = tree_depth(v.size, radix_bits_); level-- > 1;) {
    node = detail::load_u64(arena_->data() + node + 16 +
                            ((index >> (radix_bits_ * level)) & mask) * 8);
  }
  return detail::load_u64(arena_->data() + node + 16 + (index & mask) * 8);
}

std::uint64_t PVector::size(ArenaOffset droot) const {
  if (droot == kNullOffset) {
    return 0;
  }
  const DsRootView v = read_ds_root(*arena_, droot);
  if (v.kind != StructureKind::Vector || v.radix_bits != radix_bits_) {
    throw MisuseError("vector: structure kind mismatch at root");
  }
  return v.size;
}

std::vector<std::uint64_t> PVector::items(ArenaOffset droot) const {
  std::vector<std::uint64_t> out;
  if (droot == kNullOffset) {
    return out;
  }
  const DsRootView v = read_ds_root(*arena_, droot);
  if (v.kind != StructureKind::Vector || v.radix_bits != radix_bits_) {
    throw MisuseError("vector: structure kind mismatch at root");
  }
  out.reserve(v.size);
  items_rec(*arena_, v.root, out);
  return out;
}

}  // namespace pmshadow
