#include <unistd.h>

#include <cstdio>
#include <cstring>
#include <map>
#include <string>

#include "doctest.h"
#include "pmshadow/arena.hpp"
#include "pmshadow/commit.hpp"
#include "pmshadow/errors.hpp"
#include "pmshadow/map.hpp"
#include "pmshadow/nodes.hpp"
#include "pmshadow/reclaim.hpp"
#include "pmshadow/stack.hpp"

using namespace pmshadow;

namespace {

std::unique_ptr<Arena> small_arena(std::uint64_t size = 4ull << 20) {
  ArenaOptions opt;
  opt.size = size;
  return Arena::create_anonymous(opt);
}

struct TempPath {
  std::string path;
  explicit TempPath(const char* stem) {
    path = std::string("/tmp/") + stem + "." + std::to_string(::getpid());
    std::remove(path.c_str());
  }
  ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("reference counts decrement to zero and not below") {
  RefTable rt;
  rt.incref(100);
  rt.incref(100);
  CHECK(rt.count(100) == 2);
  CHECK(rt.decref(100) == 1);
  CHECK(rt.decref(100) == 0);
  CHECK(rt.count(100) == 0);
  CHECK_THROWS_AS(rt.decref(100), RefCountError);
  CHECK_THROWS_AS(rt.decref(12345), RefCountError);

  rt.incref(kNullOffset);  // the null offset is never tracked
  CHECK(rt.decref(kNullOffset) == 0);
  CHECK(rt.tracked() == 0);
}

TEST_CASE("recovery recounts references exactly as the journals did") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, true);
  PStack s(*a, refs);

  ArenaOffset rm = kNullOffset, rs = kNullOffset;
  for (std::uint64_t i = 0; i < 60; ++i) {
    const std::uint8_t v[16] = {static_cast<std::uint8_t>(i)};
    ArenaOffset next = m.insert(rm, i * 31, v);
    commit_single(*a, refs, "m", rm, next);
    rm = next;
    next = s.push(rs, i);
    commit_single(*a, refs, "s", rs, next);
    rs = next;
  }

  RefTable recounted;
  recover(*a, recounted);
  CHECK(recounted.all() == refs.all());
  CHECK(a->get_root("m") == rm);
  CHECK(a->get_root("s") == rs);
}

TEST_CASE("recovery resurrects nodes freed ahead of a lost root switch") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, false);

  ArenaOffset r1 = kNullOffset;
  std::map<std::uint64_t, std::uint64_t> oracle;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const ArenaOffset next = m.insert_u64(r1, i, i * 5);
    commit_single(*a, refs, "m", r1, next);
    r1 = next;
    oracle[i] = i * 5;
  }
  a->fence();

  // this update drops version one's exclusive path right after publishing;
  // losing the directory line but keeping the frees orphans version one
  const ArenaOffset r2 = m.insert_u64(r1, 99, 99);
  commit_single(*a, refs, "m", r1, r2);

  std::map<ArenaOffset, LineChoice> choices;
  for (ArenaOffset line : a->uncertain_lines()) {
    choices[line] = line == 0 ? LineChoice::KeepDurable    // directory line
                              : LineChoice::KeepVolatile;  // everything else
  }
  auto img = a->crash(choices);

  CHECK(img->find_root("m").value() == r1);
  CHECK(!img->is_live(r1));  // the free persisted while the root did not

  RefTable rt;
  recover(*img, rt);
  CHECK(img->is_live(r1));
  PMap mi(*img, rt, false);
  CHECK(mi.size(r1) == oracle.size());
  for (const auto& [k, v] : oracle) {
    std::uint64_t got;
    std::memcpy(&got, mi.get(r1, k)->data(), 8);
    CHECK(got == v);
  }
  CHECK(leak_check(*img) == 0);
}

TEST_CASE("recovery is idempotent") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, false);

  ArenaOffset r = kNullOffset;
  for (std::uint64_t i = 0; i < 25; ++i) {
    const ArenaOffset next = m.insert_u64(r, i, i);
    commit_single(*a, refs, "m", r, next);
    r = next;
  }

  auto img = a->crash_all(LineChoice::KeepVolatile);
  RefTable rt1;
  const auto roots1 = recover(*img, rt1);
  std::vector<std::pair<ArenaOffset, std::uint64_t>> allocs1;
  for (const auto& [off, info] : img->allocations()) {
    allocs1.emplace_back(off, info.size);
  }
  const std::uint64_t live1 = img->live_bytes();

  RefTable rt2;
  const auto roots2 = recover(*img, rt2);
  CHECK(roots2 == roots1);
  CHECK(rt2.all() == rt1.all());
  std::vector<std::pair<ArenaOffset, std::uint64_t>> allocs2;
  for (const auto& [off, info] : img->allocations()) {
    allocs2.emplace_back(off, info.size);
  }
  CHECK(allocs2 == allocs1);
  CHECK(img->live_bytes() == live1);
  CHECK(leak_check(*img) == 0);
}

TEST_CASE("recovery rejects corrupted node graphs") {
  SUBCASE("a reference pointing outside the data area") {
    auto a = small_arena();
    RefTable refs;
    PMap m(*a, refs, false);
    ArenaOffset r = m.insert_u64(kNullOffset, 1, 1);
    r = m.insert_u64(r, 2, 2);
    commit_single(*a, refs, "m", kNullOffset, r);
    // smash the trie root pointer inside the structure handle
    a->unchecked_write_u64(r + 8, 8);
    RefTable rt;
    CHECK_THROWS_AS(recover(*a, rt), CorruptionError);
  }

  SUBCASE("a cycle through list nodes") {
    auto a = small_arena();
    RefTable refs;
    PStack s(*a, refs);
    ArenaOffset r = s.push(kNullOffset, 1);
    r = s.push(r, 2);
    commit_single(*a, refs, "s", kNullOffset, r);
    const ArenaOffset top = detail::load_u64(a->data() + r + 8);
    a->unchecked_write_u64(top + 16, top);  // next points back at itself
    RefTable rt;
    CHECK_THROWS_AS(recover(*a, rt), CorruptionError);
  }

  SUBCASE("an allocation record disagreeing with the node header") {
    auto a = small_arena();
    RefTable refs;
    const ArenaOffset off = a->alloc(32);
    std::uint8_t node[24] = {};
    node[0] = static_cast<std::uint8_t>(NodeTag::ListNode);
    a->write(off, node, sizeof node);
    a->flush_range(off, sizeof node);
    refs.incref(off);
    a->commit_begin();
    a->fence();
    a->set_root("x", off);
    a->commit_end();
    RefTable rt;
    CHECK_THROWS_AS(recover(*a, rt), CorruptionError);
  }
}

TEST_CASE("leak check totals live bytes no root can reach") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, false);

  const ArenaOffset r = m.insert_u64(kNullOffset, 1, 1);
  commit_single(*a, refs, "m", kNullOffset, r);
  CHECK(leak_check(*a) == 0);

  const ArenaOffset stray = a->alloc(48);
  CHECK(leak_check(*a) == 48);
  a->free(stray);
  CHECK(leak_check(*a) == 0);
}

TEST_CASE("opening an arena file runs recovery first") {
  TempPath tmp("pmshadow_reopen");
  std::map<std::uint64_t, std::uint64_t> oracle;
  ArenaOffset r = kNullOffset;

  {
    ArenaOptions opt;
    opt.size = 2ull << 20;
    auto a = create_arena(tmp.path, opt);
    RefTable refs;
    PMap m(*a, refs, false);
    for (std::uint64_t i = 0; i < 40; ++i) {
      const ArenaOffset next = m.insert_u64(r, i, i ^ 42);
      commit_single(*a, refs, "m", r, next);
      r = next;
      oracle[i] = i ^ 42;
    }
  }  // clean close

  {
    auto a = create_arena(tmp.path, ArenaOptions{});
    RefTable refs;
    const auto roots = recover(*a, refs);
    REQUIRE(roots.size() == 1);
    CHECK(roots[0].first == "m");
    CHECK(roots[0].second == r);
    PMap m(*a, refs, false);
    CHECK(m.size(r) == oracle.size());
    for (const auto& [k, v] : oracle) {
      std::uint64_t got;
      std::memcpy(&got, m.get(r, k)->data(), 8);
      CHECK(got == v);
    }
    CHECK(leak_check(*a) == 0);
  }
}
