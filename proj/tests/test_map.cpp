#include <algorithm>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pmshadow/arena.hpp"
#include "pmshadow/errors.hpp"
#include "pmshadow/map.hpp"
#include "pmshadow/nodes.hpp"
#include "pmshadow/reclaim.hpp"

using namespace pmshadow;

namespace {

std::unique_ptr<Arena> small_arena() {
  ArenaOptions opt;
  opt.size = 8ull << 20;
  opt.retain_trace = false;
  return Arena::create_anonymous(opt);
}

// Commit-shaped root switch: hold the new version, drop the old one, let
// the fence retire whatever the drop freed.
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

std::vector<std::uint8_t> value_bytes(std::uint64_t seed, std::size_t len) {
  std::vector<std::uint8_t> out(len);
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ull + 1;
  for (auto& b : out) {
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    b = static_cast<std::uint8_t>(x);
  }
  return out;
}

// Content-only rendering of a trie: node identity and placement drop out,
// so equal renderings mean structurally identical trees. Indirect value
// words are resolved to the referenced bytes for the same reason.
void canon_value(const Arena& a, std::uint8_t flags, std::uint64_t vword,
                 std::ostringstream& out) {
  if (!(flags & kFlagIndirect)) {
    out << vword << ";";
    return;
  }
  const std::uint8_t* b = a.data() + vword;
  const std::uint32_t len = detail::load_u32(b + 4);
  out << "v";
  for (std::uint32_t i = 0; i < len; ++i) {
    out << int(b[8 + i]) << ".";
  }
  out << ";";
}

void canon_rec(const Arena& a, std::uint8_t flags, ArenaOffset off,
               std::ostringstream& out) {
  const std::uint8_t* p = a.data() + off;
  const std::uint64_t esz = (flags & kFlagWide) ? 16 : 8;
  if (static_cast<NodeTag>(p[0]) == NodeTag::ChampCollision) {
    const std::uint32_t count = detail::load_u32(p + 4);
    out << "C" << count << "(";
    for (std::uint32_t i = 0; i < count; ++i) {
      out << detail::load_u64(p + 8 + i * esz) << ",";
      if (flags & kFlagWide) {
        canon_value(a, flags, detail::load_u64(p + 8 + i * esz + 8), out);
      }
    }
    out << ")";
    return;
  }
  const std::uint64_t maps = detail::load_u64(p + 8);
  const auto datamap = static_cast<std::uint32_t>(maps);
  const auto nodemap = static_cast<std::uint32_t>(maps >> 32);
  out << "B" << int(p[1]) << ":" << datamap << ":" << nodemap << "(";
  const std::uint32_t pcount = std::popcount(datamap);
  for (std::uint32_t i = 0; i < pcount; ++i) {
    out << detail::load_u64(p + 16 + i * esz) << ",";
    if (flags & kFlagWide) {
      canon_value(a, flags, detail::load_u64(p + 16 + i * esz + 8), out);
    }
  }
  const std::uint64_t child_base = 16 + pcount * esz;
  const std::uint32_t qcount = std::popcount(nodemap);
  for (std::uint32_t i = 0; i < qcount; ++i) {
    canon_rec(a, flags, detail::load_u64(p + child_base + i * 8), out);
  }
  out << ")";
}

std::string canon(const Arena& a, ArenaOffset droot) {
  if (droot == kNullOffset) {
    return "empty";
  }
  const DsRootView v = read_ds_root(a, droot);
  std::ostringstream out;
  out << "R" << v.size << "[";
  canon_rec(a, v.flags, v.root, out);
  out << "]";
  return out.str();
}

std::uint64_t mul_inverse_pow64(std::uint64_t a) {
  std::uint64_t x = a;  // Newton iteration doubles correct low bits
  for (int i = 0; i < 6; ++i) {
    x *= 2 - a * x;
  }
  return x;
}

std::uint64_t unshift_xor(std::uint64_t y, unsigned s) {
  std::uint64_t x = y;
  for (unsigned done = s; done < 64; done += s) {
    x = y ^ (x >> s);
  }
  return x;
}

// Exact preimage of the hash mixer, used to manufacture keys that collide
// on any chosen low-bit pattern.
std::uint64_t unmix_hash(std::uint64_t h) {
  h = unshift_xor(h, 31);
  h *= mul_inverse_pow64(0x94d049bb133111ebull);
  h = unshift_xor(h, 27);
  h *= mul_inverse_pow64(0xbf58476d1ce4e5b9ull);
  h = unshift_xor(h, 30);
  return h;
}

// Keys whose hashes agree on the low 35 bits, which is every slice the
// trie consumes before it gives up and builds a collision bucket.
std::uint64_t collider(std::uint64_t pattern35, std::uint64_t j) {
  return unmix_hash((pattern35 & ((1ull << 35) - 1)) | (j << 35));
}

}  // namespace

TEST_CASE("map matches the reference map across random operations") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, true);
  RootHold h{*a, refs};
  std::map<std::uint64_t, std::vector<std::uint8_t>> oracle;
  std::mt19937_64 rng(2024);

  for (int op = 0; op < 3000; ++op) {
    const std::uint64_t key = rng() % 400;
    if (rng() % 100 < 60) {
      auto v = value_bytes(rng(), rng() % 41);
      h.swap(m.insert(h.root, key, v));
      oracle[key] = std::move(v);
    } else {
      h.swap(m.erase(h.root, key));
      oracle.erase(key);
    }
    REQUIRE(m.size(h.root) == oracle.size());
    const std::uint64_t probe = rng() % 400;
    auto got = m.get(h.root, probe);
    auto it = oracle.find(probe);
    if (it == oracle.end()) {
      REQUIRE(!got.has_value());
      REQUIRE(!m.contains(h.root, probe));
    } else {
      REQUIRE(got.has_value());
      REQUIRE(*got == it->second);
      REQUIRE(m.contains(h.root, probe));
    }
    if (op % 250 == 249) {
      auto items = m.items(h.root);
      REQUIRE(items.size() == oracle.size());
      std::map<std::uint64_t, std::vector<std::uint8_t>> seen(items.begin(),
                                                              items.end());
      REQUIRE(seen == oracle);
    }
  }

  h.drop();
  CHECK(a->live_bytes() == 0);
  CHECK(refs.tracked() == 0);
}

TEST_CASE("map inline mode stores exactly eight byte values") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, false);
  RootHold h{*a, refs};

  h.swap(m.insert_u64(h.root, 10, 0xdeadbeefcafef00dull));
  auto got = m.get(h.root, 10);
  REQUIRE(got.has_value());
  REQUIRE(got->size() == 8);
  std::uint64_t v;
  std::memcpy(&v, got->data(), 8);
  CHECK(v == 0xdeadbeefcafef00dull);

  const std::uint8_t seven[7] = {};
  const std::uint8_t nine[9] = {};
  CHECK_THROWS_AS(m.insert(h.root, 11, seven), MisuseError);
  CHECK_THROWS_AS(m.insert(h.root, 11, nine), MisuseError);
  CHECK_THROWS_AS(m.insert(h.root, 11, std::span<const std::uint8_t>{}),
                  MisuseError);

  h.drop();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("map insert replaces the value of an existing key") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, true);

  const auto v1 = value_bytes(1, 20);
  const auto v2 = value_bytes(2, 33);
  const ArenaOffset r1 = m.insert(kNullOffset, 5, v1);
  refs.incref(r1);
  const ArenaOffset r2 = m.insert(r1, 5, v2);
  refs.incref(r2);

  CHECK(m.size(r2) == 1);
  CHECK(*m.get(r2, 5) == v2);
  CHECK(*m.get(r1, 5) == v1);  // the old version is untouched

  decref_recursive(*a, refs, r1);
  decref_recursive(*a, refs, r2);
  a->fence();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("map erase of an absent key returns the root unchanged") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, true);
  RootHold h{*a, refs};

  h.swap(m.insert_u64(h.root, 1, 7));
  h.swap(m.insert_u64(h.root, 2, 8));
  const std::uint64_t live_before = a->live_bytes();
  const ArenaOffset same = m.erase(h.root, 999);
  CHECK(same == h.root);
  CHECK(a->live_bytes() == live_before);
  CHECK(m.erase(kNullOffset, 1) == kNullOffset);

  h.drop();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("map tree shape depends only on the contents") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, false);

  std::vector<std::uint64_t> keys;
  for (std::uint64_t k = 0; k < 200; ++k) {
    keys.push_back(k * 977 + 13);
  }

  RootHold fwd{*a, refs};
  for (std::uint64_t k : keys) {
    fwd.swap(m.insert_u64(fwd.root, k, k * 3));
  }

  std::mt19937_64 rng(99);
  std::shuffle(keys.begin(), keys.end(), rng);
  RootHold shuffled{*a, refs};
  for (std::uint64_t k : keys) {
    shuffled.swap(m.insert_u64(shuffled.root, k, k * 3));
  }

  CHECK(canon(*a, fwd.root) == canon(*a, shuffled.root));

  // erasing down to a subset leaves the tree the subset would have built
  RootHold pruned{*a, refs};
  pruned.swap(shuffled.root);
  RootHold direct{*a, refs};
  std::set<std::uint64_t> survivors(keys.begin(), keys.end());
  for (std::size_t i = 0; i < keys.size(); i += 2) {
    pruned.swap(m.erase(pruned.root, keys[i]));
    survivors.erase(keys[i]);
  }
  for (std::uint64_t k : survivors) {
    direct.swap(m.insert_u64(direct.root, k, k * 3));
  }
  CHECK(canon(*a, pruned.root) == canon(*a, direct.root));

  fwd.drop();
  shuffled.drop();
  pruned.drop();
  direct.drop();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("keys colliding on every slice share a collision bucket") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, true);
  RootHold h{*a, refs};

  const std::uint64_t pattern = 0x5a5a5a5a5ull;
  std::vector<std::uint64_t> keys;
  for (std::uint64_t j = 1; j <= 4; ++j) {
    keys.push_back(collider(pattern, j));
  }
  for (std::uint64_t k : keys) {
    REQUIRE((mix_hash(k) & ((1ull << 35) - 1)) == pattern);
  }

  for (std::size_t i = 0; i < keys.size(); ++i) {
    h.swap(m.insert(h.root, keys[i], value_bytes(i, 24)));
  }
  REQUIRE(m.size(h.root) == keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    REQUIRE(*m.get(h.root, keys[i]) == value_bytes(i, 24));
  }
  CHECK(!m.contains(h.root, collider(pattern, 9)));

  // the bucket sits below a full chain of one-child levels
  {
    DsRootView v = read_ds_root(*a, h.root);
    ArenaOffset node = v.root;
    for (int level = 0; level < 7; ++level) {
      REQUIRE(node_tag(*a, node) == NodeTag::ChampBitmap);
      const std::uint64_t maps = detail::load_u64(a->data() + node + 8);
      REQUIRE(static_cast<std::uint32_t>(maps) == 0);
      REQUIRE(std::popcount(static_cast<std::uint32_t>(maps >> 32)) == 1);
      node = detail::load_u64(a->data() + node + 16);
    }
    REQUIRE(node_tag(*a, node) == NodeTag::ChampCollision);
    const std::uint32_t count = detail::load_u32(a->data() + node + 4);
    CHECK(count == keys.size());
  }

  // erasing back to one collapses the chain into a plain top entry
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    h.swap(m.erase(h.root, keys[i]));
  }
  RootHold lone{*a, refs};
  lone.swap(m.insert(kNullOffset, keys.back(), value_bytes(keys.size() - 1, 24)));
  CHECK(canon(*a, h.root) == canon(*a, lone.root));

  h.drop();
  lone.drop();
  CHECK(a->live_bytes() == 0);
  CHECK(refs.tracked() == 0);
}

TEST_CASE("set insert of a present key hands back the same root") {
  auto a = small_arena();
  RefTable refs;
  PSet s(*a, refs);
  RootHold h{*a, refs};

  h.swap(s.insert(h.root, 7));
  h.swap(s.insert(h.root, 8));
  const std::uint64_t live_before = a->live_bytes();
  const std::uint64_t frees_before = a->counters().frees;
  const ArenaOffset again = s.insert(h.root, 7);
  CHECK(again == h.root);
  CHECK(a->live_bytes() == live_before);
  CHECK(a->counters().frees > frees_before);  // the speculative path unwound

  h.drop();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("set matches the reference set across random operations") {
  auto a = small_arena();
  RefTable refs;
  PSet s(*a, refs);
  RootHold h{*a, refs};
  std::set<std::uint64_t> oracle;
  std::mt19937_64 rng(7);

  for (int op = 0; op < 3000; ++op) {
    const std::uint64_t key = rng() % 300;
    if (rng() % 100 < 55) {
      h.swap(s.insert(h.root, key));
      oracle.insert(key);
    } else {
      h.swap(s.erase(h.root, key));
      oracle.erase(key);
    }
    REQUIRE(s.size(h.root) == oracle.size());
    const std::uint64_t probe = rng() % 300;
    REQUIRE(s.contains(h.root, probe) == (oracle.count(probe) != 0));
    if (op % 250 == 249) {
      auto items = s.items(h.root);
      REQUIRE(std::set<std::uint64_t>(items.begin(), items.end()) == oracle);
      REQUIRE(items.size() == oracle.size());
    }
  }

  h.drop();
  CHECK(a->live_bytes() == 0);
  CHECK(refs.tracked() == 0);
}

TEST_CASE("structure roots of the wrong kind are rejected") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, true);
  PMap inline_m(*a, refs, false);
  PSet s(*a, refs);
  RootHold h{*a, refs};

  h.swap(m.insert(h.root, 1, value_bytes(0, 16)));
  CHECK_THROWS_AS(s.contains(h.root, 1), MisuseError);
  CHECK_THROWS_AS(s.insert(h.root, 2), MisuseError);
  CHECK_THROWS_AS(inline_m.get(h.root, 1), MisuseError);  // flag mismatch

  h.drop();
  CHECK(a->live_bytes() == 0);
}

TEST_CASE("the null root reads as an empty structure") {
  auto a = small_arena();
  RefTable refs;
  PMap m(*a, refs, true);
  PSet s(*a, refs);

  CHECK(m.size(kNullOffset) == 0);
  CHECK(!m.contains(kNullOffset, 4));
  CHECK(!m.get(kNullOffset, 4).has_value());
  CHECK(m.items(kNullOffset).empty());
  CHECK(s.size(kNullOffset) == 0);
  CHECK(s.items(kNullOffset).empty());

  // filling and emptying lands back on the null root
  RootHold h{*a, refs};
  for (std::uint64_t k = 0; k < 40; ++k) {
    h.swap(m.insert_u64(h.root, k, k));
  }
  for (std::uint64_t k = 0; k < 40; ++k) {
    h.swap(m.erase(h.root, k));
  }
  CHECK(h.root == kNullOffset);
  CHECK(a->live_bytes() == 0);
}
