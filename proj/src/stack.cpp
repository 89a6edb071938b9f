#include "pmshadow/stack.hpp"

#include "pmshadow/errors.hpp"
#include "pmshadow/nodes.hpp"

namespace pmshadow {

namespace {

constexpr std::uint64_t kListNodeSize = 24;

ArenaOffset put_list_node(NodeJournal& j, std::uint64_t value,
                          ArenaOffset next) {
  NodeBuf b(kListNodeSize);
  b.set_u8(0, static_cast<std::uint8_t>(NodeTag::ListNode));
  b.set_u64(8, value);
  b.set_u64(16, next);
  return j.put(b);
}

DsRootView stack_root(const Arena& a, ArenaOffset droot) {
  const DsRootView v = read_ds_root(a, droot);
  if (v.kind != StructureKind::Stack) {
    throw MisuseError("stack: structure kind mismatch at root");
  }
  return v;
}

}  // namespace

ArenaOffset PStack::push(ArenaOffset droot, std::uint64_t value) {
  NodeJournal j(*arena_, *refs_);
  ArenaOffset head = kNullOffset;
  std::uint64_t size = 0;
  if (droot != kNullOffset) {
    const DsRootView v = stack_root(*arena_, droot);
    head = v.root;
    size = v.size;
  }
  const ArenaOffset node = put_list_node(j, value, head);
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Stack, 0, 0, node, size + 1);
  j.done();
  return out;
}

std::pair<ArenaOffset, std::uint64_t> PStack::pop(ArenaOffset droot) {
  if (droot == kNullOffset) {
    throw MisuseError("stack: pop from empty");
  }
  const DsRootView v = stack_root(*arena_, droot);
  const std::uint8_t* node = arena_->data() + v.root;
  const std::uint64_t value = detail::load_u64(node + 8);
  const ArenaOffset next = detail::load_u64(node + 16);
  if (v.size == 1) {
    return {kNullOffset, value};
  }
  NodeJournal j(*arena_, *refs_);
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Stack, 0, 0, next, v.size - 1);
  j.done();
  return {out, value};
}

std::uint64_t PStack::peek(ArenaOffset droot) const {
  if (droot == kNullOffset) {
    throw MisuseError("stack: peek at empty");
  }
  const DsRootView v = stack_root(*arena_, droot);
  return detail::load_u64(arena_->data() + v.root + 8);
}

std::uint64_t PStack::size(ArenaOffset droot) const {
  if (droot == kNullOffset) {
    return 0;
  }
  return stack_root(*arena_, droot).size;
}

std::vector<std::uint64_t> PStack::items(ArenaOffset droot) const {
  std::vector<std::uint64_t> out;
  if (droot == kNullOffset) {
    return out;
  }
  const DsRootView v = stack_root(*arena_, droot);
  out.reserve(v.size);
  for (ArenaOffset node = v.root; node != kNullOffset;) {
    const std::uint8_t* p = arena_->data() + node;
    out.push_back(detail::load_u64(p + 8));
    node = detail::load_u64(p + 16);
  }
  return out;
}

}  // namespace pmshadow
