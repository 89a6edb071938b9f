#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pmshadow/arena.hpp"

namespace pmshadow {

// Order-canonical structure contents: (position or key, value word). Two
// equal snapshots mean the structures hold the same data.
using Snapshot = std::vector<std::pair<std::uint64_t, std::uint64_t>>;

using EnumerateFn = std::function<Snapshot(Arena&, ArenaOffset)>;

std::uint64_t snapshot_value_hash(std::span<const std::uint8_t> bytes);

Snapshot snapshot_map(Arena& a, ArenaOffset droot, bool indirect);
Snapshot snapshot_set(Arena& a, ArenaOffset droot);
Snapshot snapshot_vector(Arena& a, ArenaOffset droot,
                         std::uint8_t radix_bits = 5);
Snapshot snapshot_stack(Arena& a, ArenaOffset droot);
Snapshot snapshot_queue(Arena& a, ArenaOffset droot);

struct FuzzConfig {
  std::uint64_t exhaustive_limit = 10;  // enumerate all images up to this
  std::uint64_t samples = 256;          // beyond it, sample this many
  std::uint64_t seed = 1;
  bool group_tuples = false;  // watched roots must switch atomically
};

struct FuzzPointRow {
  std::uint64_t seq;
  std::uint64_t images;
  std::uint64_t violations;
};

struct FuzzReport {
  std::uint64_t points = 0;
  std::uint64_t images = 0;
  std::uint64_t breaches = 0;
  std::vector<std::string> notes;  // first breach descriptions
  std::vector<FuzzPointRow> rows;
};

// Crash-consistency prober. While armed, every simulated memory event
// becomes a crash point: the uncertain lines are resolved into whole-line
// images (all of them when few, a seeded sample when many), each image is
// recovered, and the surviving roots must be versions the workload
// declared, hold exactly their declared contents, and leak nothing.
//
// The workload declares versions by calling set_pending with the contents
// a structure will hold right before committing it; the root directory
// write itself registers the new version.
class CrashFuzzer {
 public:
  explicit CrashFuzzer(Arena& arena, FuzzConfig cfg = {});
  ~CrashFuzzer();
  CrashFuzzer(const CrashFuzzer&) = delete;
  CrashFuzzer& operator=(const CrashFuzzer&) = delete;

  // Register a named root before arming. The name must already be
  // committed (possibly empty) and settled.
  void watch(const std::string& name, EnumerateFn enumerate);

  void begin();
  void end();

  void set_pending(const std::string& name, Snapshot after);
  // Group mode: declare the coordinated switch of all watched roots,
  // then acknowledge it once the commit returns.
  void set_pending_group(
      const std::vector<std::pair<std::string, Snapshot>>& after);
  void group_committed();

  const FuzzReport& report() const { return report_; }
  void write_csv(const std::string& path) const;

 private:
  struct Watched {
    std::string name;
    ArenaOffset field;
    EnumerateFn enumerate;
    // recent versions, oldest first; only this window can resurface
    std::vector<std::pair<ArenaOffset, Snapshot>> known;
    Snapshot pending;
    bool has_pending = false;
  };

  void on_event(const Event& e);
  void fuzz_point(std::uint64_t seq);
  bool test_image(const std::map<ArenaOffset, LineChoice>& choices,
                  std::uint64_t seq);
  void breach(std::uint64_t seq, const std::string& what);

  Arena* arena_;
  FuzzConfig cfg_;
  std::vector<Watched> watched_;
  std::vector<ArenaOffset> committed_tuple_;
  std::vector<ArenaOffset> pending_tuple_;
  bool tuple_in_flight_ = false;
  bool armed_ = false;
  std::mt19937_64 rng_;
  FuzzReport report_;
};

}  // namespace pmshadow
