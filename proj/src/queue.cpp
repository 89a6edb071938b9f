#include "pmshadow/queue.hpp"

#include "pmshadow/errors.hpp"
#include "pmshadow/nodes.hpp"

namespace pmshadow {

namespace {

constexpr std::uint64_t kQueueRepSize = 40;

struct QueueView {
  ArenaOffset front;
  ArenaOffset back;
  std::uint64_t front_len;
  std::uint64_t back_len;
};

QueueView read_rep(const Arena& a, ArenaOffset off) {
  const std::uint8_t* p = a.data() + off;
  if (static_cast<NodeTag>(p[0]) != NodeTag::QueueRep) {
    throw CorruptionError("queue: expected a queue header node");
  }
  return {detail::load_u64(p + 8), detail::load_u64(p + 16),
          detail::load_u64(p + 24), detail::load_u64(p + 32)};
}

ArenaOffset put_rep(NodeJournal& j, const QueueView& q) {
  NodeBuf b(kQueueRepSize);
  b.set_u8(0, static_cast<std::uint8_t>(NodeTag::QueueRep));
  b.set_u64(8, q.front);
  b.set_u64(16, q.back);
  b.set_u64(24, q.front_len);
  b.set_u64(32, q.back_len);
  return j.put(b);
}

ArenaOffset put_list_node(NodeJournal& j, std::uint64_t value,
                          ArenaOffset next) {
  NodeBuf b(24);
  b.set_u8(0, static_cast<std::uint8_t>(NodeTag::ListNode));
  b.set_u64(8, value);
  b.set_u64(16, next);
  return j.put(b);
}

DsRootView queue_root(const Arena& a, ArenaOffset droot) {
  const DsRootView v = read_ds_root(a, droot);
  if (v.kind != StructureKind::Queue) {
    throw MisuseError("queue: structure kind mismatch at root");
  }
  return v;
}

void walk_list(const Arena& a, ArenaOffset node,
               std::vector<std::uint64_t>& out) {
  for (; node != kNullOffset;
       node = detail::load_u64(a.data() + node + 16)) {
    out.push_back(detail::load_u64(a.data() + node + 8));
  }
}

}  // namespace

ArenaOffset PQueue::enqueue(ArenaOffset droot, std::uint64_t value) {
  NodeJournal j(*arena_, *refs_);
  QueueView q{kNullOffset, kNullOffset, 0, 0};
  std::uint64_t size = 0;
  if (droot != kNullOffset) {
    const DsRootView v = queue_root(*arena_, droot);
    q = read_rep(*arena_, v.root);
    size = v.size;
  }
  q.back = put_list_node(j, value, q.back);
  q.back_len += 1;
  const ArenaOffset rep = put_rep(j, q);
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Queue, 0, 0, rep, size + 1);
  j.done();
  return out;
}

std::pair<ArenaOffset, std::uint64_t> PQueue::dequeue(ArenaOffset droot) {
  if (droot == kNullOffset) {
    throw MisuseError("queue: dequeue from empty");
  }
  const DsRootView v = queue_root(*arena_, droot);
  QueueView q = read_rep(*arena_, v.root);
  NodeJournal j(*arena_, *refs_);
  std::uint64_t value;
  if (q.front_len > 0) {
    const std::uint8_t* head = arena_->data() + q.front;
    value = detail::load_u64(head + 8);
    q.front = detail::load_u64(head + 16);
    q.front_len -= 1;
  } else {
    if (q.back_len == 0) {
      throw CorruptionError("queue: non-empty root with no elements");
    }
    // reverse the back list into a fresh front list, oldest at the head
    ArenaOffset reversed = kNullOffset;
    for (ArenaOffset node = q.back; node != kNullOffset;
         node = detail::load_u64(arena_->data() + node + 16)) {
      reversed = put_list_node(
          j, detail::load_u64(arena_->data() + node + 8), reversed);
    }
    const std::uint8_t* head = arena_->data() + reversed;
    value = detail::load_u64(head + 8);
    q.front = detail::load_u64(head + 16);
    q.front_len = q.back_len - 1;
    q.back = kNullOffset;
    q.back_len = 0;
    j.forget(reversed);
  }
  if (v.size == 1) {
    j.done();
    return {kNullOffset, value};
  }
  const ArenaOffset rep = put_rep(j, q);
  const ArenaOffset out =
      put_ds_root(j, StructureKind::Queue, 0, 0, rep, v.size - 1);
  j.done();
  return {out, value};
}

std::uint64_t PQueue::front(ArenaOffset droot) const {
  if (droot == kNullOffset) {
    throw MisuseError("queue: front of empty");
  }
  const DsRootView v = queue_root(*arena_, droot);
  const QueueView q = read_rep(*arena_, v.root);
  if (q.front_len > 0) {
    return detail::load_u64(arena_->data() + q.front + 8);
  }
  // oldest back element is the tail of the back list
  ArenaOffset node = q.back;
  std::uint64_t value = 0;
  for (; node != kNullOffset;
       node = detail::load_u64(arena_->data() + node + 16)) {
    value = detail::load_u64(arena_->data() + node + 8);
  }
  return value;
}

std::uint64_t PQueue::size(ArenaOffset droot) const {
  if (droot == kNullOffset) {
    return 0;
  }
  return queue_root(*arena_, droot).size;
}

std::vector<std::uint64_t> PQueue::items(ArenaOffset droot) const {
  std::vector<std::uint64_t> out;
  if (droot == kNullOffset) {
    return out;
  }
  const DsRootView v = queue_root(*arena_, droot);
  const QueueView q = read_rep(*arena_, v.root);
  out.reserve(v.size);
  walk_list(*arena_, q.front, out);
  std::vector<std::uint64_t> back;
  walk_list(*arena_, q.back, back);
  out.insert(out.end(), back.rbegin(), back.rend());
  return out;
}

}  // namespace pmshadow
