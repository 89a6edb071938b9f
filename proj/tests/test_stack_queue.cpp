#include <deque>
#include <random>
#include <vector>

#include "doctest.h"
#include "pmshadow/arena.hpp"
#include "pmshadow/errors.hpp"
#include "pmshadow/queue.hpp"
#include "pmshadow/reclaim.hpp"
#include "pmshadow/stack.hpp"

using namespace pmshadow;

namespace {

std::unique_ptr<Arena> small_arena() {
  ArenaOptions opt;
  opt.size = 8ull << 20;
  opt.retain_trace = false;
  return Arena::create_anonymous(opt);
}

struct RootHold {
  Arena& a;
  RefTable& refs;
  ArenaOffset root = kNullOffset;

  void swap(ArenaOffset next) {
    if (next == root) {
      return;
    }
    refs.incref(next);
    decref_recursive(a, refs, root);
    a.fence();
    root = next;
  }

  void drop() { swap(kNullOffset); }
};

}  // namespace

TEST_CASE("stack matches a reference stack across random operations") {
  auto a = small_arena();
  RefTable refs;
  PStack s(*a, refs);
  RootHold h{*a, refs};
  std::vector<std::uint64_t> oracle;  // back is the top
  std::mt19937_64 rng(31);

  for (int op = 0; op < 3000; ++op) {
    if (oracle.empty() || rng() % 100 < 55) {
      const std::uint64_t val = rng();
      h.swap(s.push(h.root, val));
      oracle.push_back(val);
    } else {
      auto [next, val] = s.pop(h.root);
      REQUIRE(val == oracle.back());
      oracle.pop_back();
      h.swap(next);
    }
    REQUIRE(s.size(h.root) == oracle.size());
    if (!oracle.empty()) {
      REQUIRE(s.peek(h.root) == oracle.back());
    }
    if (op % 250 == 249) {
      std::vector<std::uint64_t> top_first(oracle.rbegin(), oracle.rend());
      REQUIRE(s.items(h.root) == top_first);
    }
  }

  h.drop();
  CHECK(a->live_bytes() == 0);
  CHECK(refs.tracked() == 0);
}

TEST_CASE("stack pop shares the tail instead of copying it") {
  auto a = small_arena();
  RefTable refs;
  PStack s(*a, refs);
  RootHold h{*a, refs};

  const std::uint64_t base_allocs = a->counters().allocs;
  h.swap(s.push(h.root, 1));
  CHECK(a->counters().allocs - base_allocs == 2);  // list node + root

  h.swap(s.push(h.root, 2));
  h.swap(s.push(h.root, 3));
  const ArenaOffset r3 = h.root;
  refs.incref(r3);

  const std::uint64_t before_pop = a->counters().allocs;
  auto [r2, top] = s.pop(r3);
  CHECK(top == 3);
  CHECK(a->counters().allocs - before_pop == 1);  // only the new root
  refs.incref(r2);

  CHECK(s.items(r3) == std::vector<std::uint64_t>{3, 2, 1});
  CHECK(s.items(r2) == std::vector<std::uint64_t>{2, 1});

  // popping a single element stack allocates nothing at all
  RootHold single{*a, refs};
  single.swap(s.push(kNullOffset, 42));
  const std::uint64_t before_last = a->counters().allocs;
  auto [empty_root, last] = s.pop(single.root);
  CHECK(last == 42);
  CHECK(empty_root == kNullOffset);
  CHECK(a->counters().allocs == before_last);

  single.drop();
  h.drop();
  decref_recursive(*a, refs, r3);
  decref_recursive(*a, refs, r2);
  a->fence();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("stack rejects reads of an empty root") {
  auto a = small_arena();
  RefTable refs;
  PStack s(*a, refs);

  CHECK(s.size(kNullOffset) == 0);
  CHECK(s.items(kNullOffset).empty());
  CHECK_THROWS_AS(s.pop(kNullOffset), MisuseError);
  CHECK_THROWS_AS(s.peek(kNullOffset), MisuseError);
}

TEST_CASE("queue matches a reference queue across random operations") {
  auto a = small_arena();
  RefTable refs;
  PQueue q(*a, refs);
  RootHold h{*a, refs};
  std::deque<std::uint64_t> oracle;
  std::mt19937_64 rng(47);

  for (int op = 0; op < 3000; ++op) {
    if (oracle.empty() || rng() % 100 < 55) {
      const std::uint64_t val = rng();
      h.swap(q.enqueue(h.root, val));
      oracle.push_back(val);
    } else {
      auto [next, val] = q.dequeue(h.root);
      REQUIRE(val == oracle.front());
      oracle.pop_front();
      h.swap(next);
    }
    REQUIRE(q.size(h.root) == oracle.size());
    if (!oracle.empty()) {
      REQUIRE(q.front(h.root) == oracle.front());
    }
    if (op % 250 == 249) {
      REQUIRE(q.items(h.root) ==
              std::vector<std::uint64_t>(oracle.begin(), oracle.end()));
    }
  }

  h.drop();
  CHECK(a->live_bytes() == 0);
  CHECK(refs.tracked() == 0);
}

TEST_CASE("queue dequeue carries the back list over node by node") {
  auto a = small_arena();
  RefTable refs;
  PQueue q(*a, refs);
  RootHold h{*a, refs};

  const std::uint64_t k = 5;
  for (std::uint64_t i = 1; i <= k; ++i) {
    h.swap(q.enqueue(h.root, i));
  }

  // front list is empty: the whole back list is reversed, one fresh node
  // per element, and the element handed out is dropped again
  const auto before = a->counters();
  auto [r1, v1] = q.dequeue(h.root);
  CHECK(v1 == 1);
  CHECK(a->counters().allocs - before.allocs == k + 2);  // k nodes, rep, root
  CHECK(a->counters().frees - before.frees == 1);
  h.swap(r1);

  // front list still holds elements: no reversal this time
  const auto mid = a->counters();
  auto [r2, v2] = q.dequeue(h.root);
  CHECK(v2 == 2);
  CHECK(a->counters().allocs - mid.allocs == 2);  // rep and root only
  CHECK(a->counters().frees - mid.frees == 0);
  h.swap(r2);

  h.drop();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("queue of one element drains back to the null root") {
  auto a = small_arena();
  RefTable refs;
  PQueue q(*a, refs);
  RootHold h{*a, refs};

  h.swap(q.enqueue(h.root, 77));
  CHECK(q.front(h.root) == 77);
  auto [next, val] = q.dequeue(h.root);
  CHECK(val == 77);
  CHECK(next == kNullOffset);
  h.swap(next);
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("queue old versions survive a dequeue reversal") {
  auto a = small_arena();
  RefTable refs;
  PQueue q(*a, refs);
  RootHold h{*a, refs};

  for (std::uint64_t i = 1; i <= 4; ++i) {
    h.swap(q.enqueue(h.root, i));
  }
  const ArenaOffset old_root = h.root;
  refs.incref(old_root);

  auto [next, val] = q.dequeue(h.root);
  CHECK(val == 1);
  h.swap(next);

  CHECK(q.items(old_root) == std::vector<std::uint64_t>{1, 2, 3, 4});
  CHECK(q.items(h.root) == std::vector<std::uint64_t>{2, 3, 4});

  decref_recursive(*a, refs, old_root);
  h.drop();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("queue rejects reads of an empty root") {
  auto a = small_arena();
  RefTable refs;
  PQueue q(*a, refs);

  CHECK(q.size(kNullOffset) == 0);
  CHECK(q.items(kNullOffset).empty());
  CHECK_THROWS_AS(q.dequeue(kNullOffset), MisuseError);
  CHECK_THROWS_AS(q.front(kNullOffset), MisuseError);
}
