#include "pmshadow/nodes.hpp"

namespace pmshadow {

namespace {

std::uint64_t round8(std::uint64_t n) { return (n + 7) & ~std::uint64_t{7}; }

}  // namespace

std::uint64_t node_size_from_header(const Arena& a, ArenaOffset off) {
  const std::uint8_t* p = a.data() + off;
  switch (static_cast<NodeTag>(p[0])) {
    case NodeTag::DsRoot:
      return kDsRootSize;
    case NodeTag::ChampBitmap: {
      const std::uint8_t flags = p[2];
      const std::uint64_t maps = detail::load_u64(p + 8);
      const std::uint64_t entries = std::popcount(static_cast<std::uint32_t>(maps));
      const std::uint64_t children =
          std::popcount(static_cast<std::uint32_t>(maps >> 32));
      return 16 + entries * ((flags & kFlagWide) ? 16 : 8) + children * 8;
    }
    case NodeTag::ChampCollision: {
      const std::uint8_t flags = p[2];
      const std::uint32_t count = detail::load_u32(p + 4);
      return 8 + std::uint64_t{count} * ((flags & kFlagWide) ? 16 : 8);
    }
    case NodeTag::RrbInner:
    case NodeTag::RrbLeaf:
      return 16 + std::uint64_t{p[1]} * 8;
    case NodeTag::ListNode:
      return 24;
    case NodeTag::QueueRep:
      return 40;
    case NodeTag::ValueBlock:
      return 8 + round8(detail::load_u32(p + 4));
    case NodeTag::Parent:
      return 8 + std::uint64_t{detail::load_u32(p + 4)} * 8;
  }
  throw CorruptionError("node: invalid tag");
}

ArenaOffset put_ds_root(NodeJournal& j, StructureKind kind, std::uint8_t flags,
                        std::uint8_t radix_bits, ArenaOffset root,
                        std::uint64_t size) {
  NodeBuf buf(kDsRootSize);
  buf.set_u8(0, static_cast<std::uint8_t>(NodeTag::DsRoot));
  buf.set_u8(1, static_cast<std::uint8_t>(kind));
  buf.set_u8(2, flags);
  buf.set_u8(3, radix_bits);
  buf.set_u64(8, root);
  buf.set_u64(16, size);
  return j.put(buf);
}

}  // namespace pmshadow
